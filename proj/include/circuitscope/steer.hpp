#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "circuitscope/circuits.hpp"
#include "circuitscope/toyvlm.hpp"

// Intervention suite: output scaling (uniform / top-k / grounding-suppression /
// random-control), mean-difference projection, and probe-based head steering,
// all selected on a held-out selection set and reported on a disjoint
// evaluation set. Scaling and projection hooks act on component outputs at
// every position (unlike the patch engine's final-position restores); the
// head-steering vector is added at the final position only.

namespace circuitscope::steer {

using toyvlm::ComponentId;
using toyvlm::ForwardRecord;
using toyvlm::TaskSample;
using toyvlm::ToyModel;

enum class PlanMode : int {
  UniformScale = 0,
  TopKScale = 1,
  MeanDiffProjection = 2,
  ProbeIti = 3,
  RandomControl = 4,
  GroundingSuppression = 5,
};

std::string to_string(PlanMode m);

struct InterventionPlan {
  PlanMode mode = PlanMode::UniformScale;
  std::vector<ComponentId> targets;  // scaling and projection modes
  double s = 1.0;                    // scaling modes
  int k = 0;                         // TopKScale: requested k (pre-truncation)
  double alpha = 0.0;                // projection / head steering
  int K = 0;                         // head count for ProbeIti
  std::uint64_t seed = 0;            // RandomControl draw seed
  std::string label;                 // deterministic report id
};

// default grids
std::vector<double> scale_grid();        // {0, 0.25, 0.5, 0.75}
std::vector<int> topk_grid();            // {3, 5, 8, 10, 15, 20, 30}
std::vector<double> projection_alphas(); // {+-0.5, +-1.0, +-1.5}
std::vector<double> iti_alphas();        // {+-5, +-10, +-15, +-20}
std::vector<int> iti_head_counts();      // {12, 24, 48, 96}

std::vector<InterventionPlan> uniform_scale_plans(
    const std::vector<ComponentId>& targets);
// ranks hallucination-pathway members by |d| descending; k values that
// saturate the pathway collapse to one plan per distinct target set
std::vector<InterventionPlan> topk_scale_plans(const circuits::Circuit& circuit);
std::vector<InterventionPlan> projection_plans(
    const std::vector<ComponentId>& targets);
std::vector<InterventionPlan> iti_plans(const ToyModel& model);
InterventionPlan grounding_suppression_plan(
    const std::vector<ComponentId>& grounding_targets);

struct SteerDirection {
  ComponentId component;
  Eigen::VectorXd direction;  // unit norm within 1e-9
  double sigma = 0.0;         // unused for mean-difference directions
};

// final-position component outputs from clean passes, split by clean outcome
struct ActivationSets {
  std::map<ComponentId, std::vector<Eigen::VectorXd>> correct;
  std::map<ComponentId, std::vector<Eigen::VectorXd>> halluc;
};
ActivationSets collect_activations(const ToyModel& model,
                                   const std::vector<TaskSample>& samples);

// d_hat = normalize(mean_halluc - mean_correct) per target; components whose
// class means coincide get no direction (absent from the result). Requires
// >= 2 activations per class per target (ConfigError otherwise).
std::map<ComponentId, SteerDirection> fit_mean_diff_directions(
    const ActivationSets& acts, const std::vector<ComponentId>& targets);

struct ItiProbe {
  int layer = 0;
  int head = 0;
  Eigen::VectorXd w_hat;  // unit probe direction over the head slice
  double bias = 0.0;
  double validation_accuracy = 0.0;
  double sigma = 0.0;  // std of w_hat . x over the probe split
};

struct ProbeSet {
  std::vector<ItiProbe> ranked;  // validation accuracy desc, (layer, head) asc
  std::vector<std::string> notices;  // skipped heads etc.
};

// One class-weighted logistic probe per (layer, head) on pre-output-projection
// activations at the final position; labels 1 = Hallucinating, 0 = Correct,
// Miss samples excluded. Probe seeds derive from `seed` per head.
ProbeSet train_iti_probes(const ToyModel& model,
                          const std::vector<TaskSample>& probe_samples,
                          std::uint64_t seed);

// `capture` switches on component-output capture (used by the invariant
// checks on hooked outputs, e.g. projection completeness)
ForwardRecord apply_scaling(const ToyModel& model, const InterventionPlan& plan,
                            const TaskSample& sample, bool capture = false);
ForwardRecord apply_projection(
    const ToyModel& model, const InterventionPlan& plan,
    const std::map<ComponentId, SteerDirection>& directions,
    const TaskSample& sample, bool capture = false);
ForwardRecord apply_iti(const ToyModel& model, const InterventionPlan& plan,
                        const ProbeSet& probes, const TaskSample& sample,
                        bool capture = false);

struct SteerContext {
  const std::map<ComponentId, SteerDirection>* directions = nullptr;
  const ProbeSet* probes = nullptr;
};
ForwardRecord run_plan(const ToyModel& model, const InterventionPlan& plan,
                       const SteerContext& ctx, const TaskSample& sample);

struct Confusion {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
};

struct EvalOutcome {
  double accuracy = 0.0;
  double hallucination_rate = 0.0;  // fp / (fp + tn), No-ground-truth samples
  double delta_accuracy_pp = 0.0;
  double delta_hallucination_pp = 0.0;
  double relative_reduction = 0.0;  // (base_h - h) / base_h when base_h > 0
  Confusion confusion;              // rates recompute from these exactly
  bool degenerate_constant_answer = false;  // every answer identical
};

// no plan -> unhooked baseline; deltas are vs `baseline` when given
EvalOutcome evaluate_plan(const ToyModel& model,
                          const InterventionPlan* plan, const SteerContext& ctx,
                          const std::vector<TaskSample>& samples,
                          const EvalOutcome* baseline = nullptr);

struct SelectionResult {
  bool feasible = false;  // some plan met the accuracy budget on selection
  InterventionPlan selected;  // meaningful only when feasible
  double baseline_selection_accuracy = 0.0;
  double baseline_selection_halluc = 0.0;
  double selection_accuracy = 0.0;  // selected plan, selection set
  double selection_halluc = 0.0;
  EvalOutcome baseline_eval;  // evaluation set, no hooks
  EvalOutcome selected_eval;  // evaluation set under the selected plan
  std::string notice;
};

// Grid search on the selection set: minimize selection hallucination rate
// subject to accuracy drop <= budget_pp; ties broken by max selection
// accuracy, then least intervention (smallest |alpha| / largest s), then plan
// order. The winner alone is scored on the evaluation set.
SelectionResult select_and_evaluate(const ToyModel& model,
                                    const std::vector<InterventionPlan>& plans,
                                    const std::vector<TaskSample>& selection,
                                    const std::vector<TaskSample>& evaluation,
                                    const SteerContext& ctx,
                                    double budget_pp = 2.0);

struct RandomControlResult {
  std::vector<InterventionPlan> plans;    // drawn target sets, audit log
  std::vector<EvalOutcome> per_seed;      // deltas vs the shared baseline
  double mean_delta_h_pp = 0.0;
  double min_delta_h_pp = 0.0;
  double max_delta_h_pp = 0.0;
  double mean_relative_reduction = 0.0;
};

// n_seeds random target draws of the given cardinality at the same s,
// evaluated on the evaluation set against the unhooked baseline
RandomControlResult random_control(const ToyModel& model, double s,
                                   int cardinality,
                                   const std::vector<TaskSample>& evaluation,
                                   std::uint64_t master_seed, int n_seeds = 5);

}  // namespace circuitscope::steer
