#pragma once

#include <array>
#include <string>
#include <vector>

#include "circuitscope/circuits.hpp"
#include "circuitscope/patchengine.hpp"
#include "circuitscope/statkit.hpp"

// Conditional pathway analysis: restore a whole pathway at once and compare
// the joint effect against the sum of its members' individual effects.
// Interaction and magnitude-deficit are exact identities over stored values;
// pathways are always analyzed one at a time (grounding and hallucination
// components are never pooled into one computation, which would mix
// interactions of opposite sign).

namespace circuitscope::cpa {

using circuits::Pathway;
using patchengine::JointTrace;
using patchengine::SampleTrace;
using toyvlm::ComponentId;

enum class Subset : int { Correct = 0, Hallucinating = 1 };

std::string to_string(Subset s);

struct CpaSampleRow {
  long long sample_id = 0;
  Subset subset = Subset::Correct;  // clean-pass outcome of the sample
  Pathway pathway = Pathway::Grounding;
  double joint_ie = 0.0;               // delta_joint - delta_corrupt
  std::vector<double> individual_ies;  // one per member, membership order
  double interaction = 0.0;  // joint_ie - sum(individual_ies), exact
  double mag_diff = 0.0;     // |joint_ie| - sum(|individual_ies|), exact
};

// The caller guarantees trace and joint come from the same corruption spec
// (one noise realization per sample, shared across both). Checked here:
// matching sample_id, matching membership, non-Miss outcome, and a trace
// that actually carries every member. Violations raise ConfigError.
CpaSampleRow cpa_per_sample(const SampleTrace& trace, const JointTrace& joint,
                            const std::vector<ComponentId>& pathway_members,
                            Pathway pathway);

struct CpaCell {
  bool available = false;  // >= 2 rows landed in this (pathway, subset) cell
  int n = 0;
  // mean over all (sample, component) individual IEs; equals the mean of
  // per-sample means because membership is fixed within a pathway
  double mean_individual_ie = 0.0;
  double fraction_positive = 0.0;  // strictly positive (sample, component) IEs
  // per-sample |joint| / sum|individual|, then averaged (primary), plus the
  // median of the same ratios and the ratio-of-averages variant — the
  // reporting convention is not pinned down, so all three are emitted
  double magnitude_ratio = 0.0;
  double magnitude_ratio_median = 0.0;
  double magnitude_ratio_of_means = 0.0;
  int n_ratio_undefined = 0;  // rows with sum|individual| == 0, ratios skip them
  double mean_mag_diff = 0.0;
  statkit::TestResult magdiff_vs_zero;  // one-sample t against 0
};

struct PathwayReport {
  Pathway pathway = Pathway::Grounding;
  std::array<CpaCell, 2> cells;  // indexed by Subset
  bool cross_available = false;  // both cells available
  // Welch across subsets: per-sample mean individual IE, and mag_diff
  statkit::TestResult cross_subset_mean_ie;
  statkit::TestResult cross_subset_magdiff;
  // mean individual IE changes sign between subsets with cross p < 0.05
  bool polarity_flip = false;
};

struct PathwayDiagnostics {
  std::array<PathwayReport, 2> pathways;  // indexed by Pathway
};

// Cells with fewer than 2 rows are marked unavailable rather than erroring;
// cross-subset tests and the flip flag require both cells of a pathway.
// Aggregation runs over sample_id-ordered rows regardless of input order.
PathwayDiagnostics cpa_aggregate(const std::vector<CpaSampleRow>& rows);

}  // namespace circuitscope::cpa
