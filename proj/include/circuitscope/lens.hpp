#pragma once

#include <string>
#include <vector>

#include "circuitscope/circuits.hpp"
#include "circuitscope/statkit.hpp"
#include "circuitscope/toyvlm.hpp"

// Logit lens: read the final-position hidden state after every layer through
// the model's final normalization and unembedding, giving an oriented logit
// difference per depth and a per-layer delta (the change each layer causes).
// The differential report groups per-layer deltas by circuit pathway and
// compares them across layer groups within one outcome subset.

namespace circuitscope::lens {

using toyvlm::TaskSample;
using toyvlm::ToyModel;

struct LensTrajectory {
  long long sample_id = 0;
  toyvlm::Outcome outcome = toyvlm::Outcome::Correct;  // clean-pass outcome
  toyvlm::GroundTruth ground_truth = toyvlm::GroundTruth::Yes;
  // oriented logit difference (positive = toward the correct answer) after
  // the embedding (index 0) and after each layer; length depth + 1
  std::vector<double> logit_diff;
  // per_layer_delta[l] = logit_diff[l + 1] - logit_diff[l]; length depth
  std::vector<double> per_layer_delta;
};

// clean forward pass; the last entry reproduces forward()'s delta
LensTrajectory lens_trajectory(const ToyModel& model, const TaskSample& s);

struct DifferentialReport {
  toyvlm::Outcome subset = toyvlm::Outcome::Correct;
  bool available = false;  // both pathways have at least one assigned layer
  int n = 0;               // trajectories in the subset
  // a layer joins a pathway's set iff either of its components is a member,
  // so a mixed layer contributes to both groups (any-membership rule)
  std::vector<int> grounding_layers;
  std::vector<int> hallucination_layers;
  double mean_grounding_delta = 0.0;  // mean over samples of per-sample means
  double mean_hallucination_delta = 0.0;
  // Welch across the per-sample grouped means; effect_size = Cohen's d
  statkit::TestResult test;
  std::string notice;
};

// subset must be Correct or Hallucinating with >= 2 matching trajectories
// (ConfigError otherwise); an empty pathway layer set yields an unavailable
// report instead of an error
DifferentialReport lens_differential(
    const std::vector<LensTrajectory>& trajectories,
    const circuits::Circuit& circuit, toyvlm::Outcome subset);

}  // namespace circuitscope::lens
