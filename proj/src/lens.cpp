#include "circuitscope/lens.hpp"

#include <algorithm>
#include <set>

#include "circuitscope/errors.hpp"

namespace circuitscope::lens {

namespace sk = statkit;
using toyvlm::ComponentId;
using toyvlm::GroundTruth;
using toyvlm::Outcome;

LensTrajectory lens_trajectory(const ToyModel& model, const TaskSample& s) {
  toyvlm::PatchSpec ps;
  ps.capture_hidden = true;
  ps.capture_components = false;
  toyvlm::ForwardRecord rec = toyvlm::forward(model, s, &ps);

  LensTrajectory t;
  t.sample_id = s.sample_id;
  t.outcome = rec.outcome;
  t.ground_truth = s.ground_truth;
  const int fp = model.final_pos();
  for (const auto& h : rec.hidden_states) {
    Eigen::RowVectorXd xn = toyvlm::rowops::rmsnorm(h.row(fp));
    double yes = xn.dot(model.unembed.row(toyvlm::kYesToken));
    double no = xn.dot(model.unembed.row(toyvlm::kNoToken));
    t.logit_diff.push_back(s.ground_truth == GroundTruth::Yes ? yes - no
                                                              : no - yes);
  }
  for (std::size_t l = 0; l + 1 < t.logit_diff.size(); ++l)
    t.per_layer_delta.push_back(t.logit_diff[l + 1] - t.logit_diff[l]);
  return t;
}

DifferentialReport lens_differential(
    const std::vector<LensTrajectory>& trajectories,
    const circuits::Circuit& circuit, Outcome subset) {
  if (subset == Outcome::Miss)
    throw ConfigError("lens_differential: subset must be Correct or Hallucinating");

  DifferentialReport rep;
  rep.subset = subset;
  std::set<int> grounding, halluc;
  for (const auto& [c, p] : circuit.pathway)
    (p == circuits::Pathway::Grounding ? grounding : halluc).insert(c.layer);
  rep.grounding_layers.assign(grounding.begin(), grounding.end());
  rep.hallucination_layers.assign(halluc.begin(), halluc.end());
  if (grounding.empty() || halluc.empty()) {
    rep.notice = "a pathway has no assigned layers; differential unavailable";
    return rep;
  }

  std::vector<double> g_means, h_means;
  for (const auto& t : trajectories) {
    if (t.outcome != subset) continue;
    auto group_mean = [&](const std::set<int>& layers) {
      double sum = 0.0;
      for (int l : layers) {
        if (l < 0 || l >= static_cast<int>(t.per_layer_delta.size()))
          throw ConfigError("lens_differential: circuit layer outside the trajectory");
        sum += t.per_layer_delta[l];
      }
      return sum / static_cast<double>(layers.size());
    };
    g_means.push_back(group_mean(grounding));
    h_means.push_back(group_mean(halluc));
  }
  if (g_means.size() < 2)
    throw ConfigError("lens_differential: subset has " +
                      std::to_string(g_means.size()) + " trajectories; need >= 2");

  rep.available = true;
  rep.n = static_cast<int>(g_means.size());
  rep.mean_grounding_delta = sk::mean(g_means);
  rep.mean_hallucination_delta = sk::mean(h_means);
  rep.test = sk::welch_t(g_means, h_means);
  rep.notice =
      "layers holding components of both pathways contribute to both groups "
      "(any-membership rule)";
  return rep;
}

}  // namespace circuitscope::lens
