#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <vector>

#include "circuitscope/toyvlm.hpp"

// Clean / corrupt / patch protocol. One Gaussian-noise realization per sample
// corrupts the layer-0 visual rows; patch passes restore component outputs at
// the final token position to their clean values and measure the recovered
// logit difference.
//
// Patch passes do not rerun the whole model: under the causal mask a
// final-position patch never changes any other row, so the engine replays only
// the final row from the patched layer onward, against the corrupt pass's
// cached K/V projections. The replay uses the same row primitives as
// forward(), so slow (hooked full forward) and fast paths agree bit-exactly —
// a property the test suite checks directly.

namespace circuitscope::patchengine {

using toyvlm::ComponentId;
using toyvlm::ForwardRecord;
using toyvlm::Outcome;
using toyvlm::TaskSample;
using toyvlm::ToyModel;

struct CorruptionSpec {
  double noise_multiplier = 3.0;
  std::uint64_t noise_seed = 0;
};

struct SampleTrace {
  long long sample_id = 0;
  Outcome outcome = Outcome::Correct;  // clean-pass outcome
  double delta_clean = 0.0;
  double delta_corrupt = 0.0;
  double total_effect = 0.0;  // delta_clean - delta_corrupt, exact
  std::map<ComponentId, double> delta_patched;
};

struct JointTrace {
  long long sample_id = 0;
  std::vector<ComponentId> pathway_components;
  double delta_joint = 0.0;
};

struct CalibrationReport {
  int n_samples = 0;
  double clean_accuracy = 0.0;
  double corrupt_accuracy = 0.0;
  double corrupt_yes_fraction = 0.0;
  bool constant_answer_collapse = false;  // every corrupt answer identical
  bool passed = false;                    // corrupt accuracy in [0.45, 0.55]
};

// noise matrix (visual_count x width): i.i.d. N(0, (multiplier * sigma)^2)
// where sigma is the per-sample empirical std over all entries of the clean
// layer-0 visual rows (token embedding + positional embedding)
Eigen::MatrixXd corruption_noise(const ToyModel& model, const TaskSample& s,
                                 const CorruptionSpec& spec);
double visual_embedding_std(const ToyModel& model, const TaskSample& s);

// clean pass (component outputs captured) + corrupt pass (replay cache
// captured) sharing one noise realization
struct TracePack {
  Eigen::MatrixXd noise;
  ForwardRecord clean;
  ForwardRecord corrupt;
};
TracePack prepare_passes(const ToyModel& model, const TaskSample& s,
                         const CorruptionSpec& spec);

// final-row replay of the corrupt pass with component outputs replaced;
// returns the resulting yes/no logit difference oriented by ground truth
double replay_with_patches(
    const ToyModel& model, const TaskSample& s, const TracePack& pack,
    const std::map<ComponentId, Eigen::VectorXd>& restore);

SampleTrace run_trace(const ToyModel& model, const TaskSample& s,
                      const CorruptionSpec& spec,
                      const std::vector<ComponentId>& components);
SampleTrace run_trace(const ToyModel& model, const TaskSample& s,
                      const TracePack& pack,
                      const std::vector<ComponentId>& components);

JointTrace run_joint(const ToyModel& model, const TaskSample& s,
                     const CorruptionSpec& spec,
                     const std::vector<ComponentId>& pathway);
JointTrace run_joint(const ToyModel& model, const TaskSample& s,
                     const TracePack& pack,
                     const std::vector<ComponentId>& pathway);

double indirect_effect(const SampleTrace& t, const ComponentId& c);

// IE / TE; nullopt flags |TE| <= epsilon samples for exclusion from group
// statistics (never an error)
std::optional<double> normalized_ie(const SampleTrace& t, const ComponentId& c,
                                    double epsilon = 1e-3);

CalibrationReport calibrate_noise(const ToyModel& model,
                                  const std::vector<TaskSample>& samples,
                                  const CorruptionSpec& spec);

}  // namespace circuitscope::patchengine
