#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "circuitscope/patchengine.hpp"
#include "circuitscope/statkit.hpp"

// Circuit extraction and cross-model comparison. Per component, the normalized
// indirect effects of Correct and Hallucinating runs are compared with Welch's
// t-test; Benjamini-Hochberg runs over exactly the 2*depth per-component tests
// of one model (never pooled across models). A component joins the circuit iff
// p_adjusted < alpha AND |Cohen's d| > d_min, both strict; the sign of d fixes
// the pathway (positive = Grounding, negative = Hallucination).

namespace circuitscope::circuits {

using patchengine::SampleTrace;
using toyvlm::ComponentId;

enum class Pathway : int { Grounding = 0, Hallucination = 1 };

std::string to_string(Pathway p);

struct ComponentStat {
  ComponentId component;
  double cohens_d = 0.0;  // (mean correct - mean halluc) / pooled SD; 0 when
                          // both group variances vanish (never a member then)
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  double mean_ie_correct = 0.0;  // means of normalized IE per outcome group
  double mean_ie_halluc = 0.0;
  int n_correct = 0;  // samples entering each group after the |TE| exclusion
  int n_halluc = 0;
};

struct Circuit {
  std::string model_id;
  int model_depth = 0;  // inferred from the trace component set (2 per layer)
  std::vector<ComponentStat> components;    // significant members, ordered
  std::map<ComponentId, Pathway> pathway;   // one entry per member
  double alpha = 0.05;
  double d_min = 0.3;
  int n_te_excluded = 0;  // traces dropped because |TE| <= epsilon
};

struct SensitivityEntry {
  double d_min = 0.0;
  Circuit circuit;
  // Jaccard similarity of each pathway's membership against the d_min = 0.3
  // reference circuit; two empty sets count as identical (1.0)
  double jaccard_grounding = 1.0;
  double jaccard_hallucination = 1.0;
};

struct SensitivityReport {
  std::string model_id;
  std::vector<SensitivityEntry> entries;  // one per grid value, input order
  // both pathways keep >= 5 members at every grid threshold
  bool both_pathways_retain_five = false;
};

struct DepthPoint {
  ComponentId component;
  double depth = 0.0;   // layer / (model_depth - 1)
  double effect = 0.0;  // Cohen's d
};

struct DepthProfile {
  std::string model_id;
  int n_grid = 50;
  std::vector<DepthPoint> members;  // circuit members only, ordered
  // effect sizes resampled onto n_grid uniform points in [0, 1] by
  // nearest-neighbor assignment, averaging on collisions, zeros elsewhere.
  // grid_all covers every component (non-members contribute zeros to their
  // grid cell); grid_members resamples circuit members only. Both variants
  // are kept because the profile definition does not pin down which one the
  // comparison protocol intends.
  std::vector<double> grid_all;
  std::vector<double> grid_members;
};

struct MacroResult {
  bool skipped = false;  // hallucination pathway empty on either side
  std::string notice;    // reason when skipped; construction caveat otherwise
  // counts of hallucination-pathway components: rows model A / model B,
  // columns early (depth <= 0.5) / late
  std::array<long long, 4> table{{0, 0, 0, 0}};
  statkit::TestResult test;  // Fisher's exact on the table
  bool consistent_with_shared_pattern = false;  // p > 0.05, strict
};

enum class MicroVerdict : int { Negligible = 0, Inconclusive = 1, Correlated = 2 };

std::string to_string(MicroVerdict v);

struct MicroResult {
  std::optional<double> r;  // nullopt when a profile has zero variance
  statkit::TestResult tost;  // equivalence test of r against the bound
  double p_nonzero = 1.0;    // two-sided t-test of r against zero
  MicroVerdict verdict = MicroVerdict::Inconclusive;
  std::string notice;  // set when the correlation is undefined
};

// Welch + BH statistics for every component present in the traces, in
// ComponentId order. Requires identical component sets across traces and
// >= 2 Correct and >= 2 Hallucinating group members after dropping Miss
// traces and |TE| <= epsilon traces (ConfigError naming the deficient group
// otherwise). epsilon is the normalized-IE exclusion threshold.
struct StatScan {
  std::vector<ComponentStat> stats;  // all 2*depth components
  int model_depth = 0;
  int n_te_excluded = 0;
};
StatScan component_stats(const std::vector<SampleTrace>& traces,
                         double epsilon = 1e-3);

Circuit extract_circuit(const std::string& model_id,
                        const std::vector<SampleTrace>& traces,
                        double alpha = 0.05, double d_min = 0.3);

SensitivityReport threshold_sensitivity(
    const std::string& model_id, const std::vector<SampleTrace>& traces,
    double alpha = 0.05,
    const std::vector<double>& d_grid = {0.25, 0.30, 0.35});

// |A intersect B| / |A union B|; 1.0 for two empty sets
double jaccard(const std::vector<ComponentId>& a,
               const std::vector<ComponentId>& b);

// members assigned to one pathway, in ComponentId order
std::vector<ComponentId> pathway_members(const Circuit& c, Pathway p);

// model_depth >= 2 (ConfigError otherwise)
DepthProfile depth_normalize(const Circuit& circuit, int model_depth);

// both circuits must be non-empty (ConfigError otherwise); an empty
// hallucination pathway skips the comparison with a notice instead
MacroResult macro_compare(const Circuit& a, const Circuit& b);

// Pearson r over grid_all plus a TOST equivalence test against `bound`.
// Verdict: TOST p < 0.05 -> Negligible; else |r| >= bound with the
// zero-correlation test significant -> Correlated; else Inconclusive.
MicroResult micro_compare(const DepthProfile& a, const DepthProfile& b,
                          double bound = 0.3);

}  // namespace circuitscope::circuits
