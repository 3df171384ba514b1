#include "circuitscope/steer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "circuitscope/errors.hpp"
#include "circuitscope/rng.hpp"
#include "circuitscope/statkit.hpp"

namespace circuitscope::steer {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return std::string(buf);
}

// empty target sets are legal (the plan is then a bit-exact no-op)
void require_targets(const ToyModel& model,
                     const std::vector<ComponentId>& targets,
                     const char* where) {
  for (const auto& c : targets)
    if (!model.valid_component(c))
      throw ConfigError(std::string(where) + ": component " +
                        toyvlm::to_string(c) + " outside this model");
}

// least-intervention preference used by the tie ladder: smaller is gentler
double intervention_magnitude(const InterventionPlan& p) {
  switch (p.mode) {
    case PlanMode::MeanDiffProjection:
    case PlanMode::ProbeIti:
      return std::abs(p.alpha);
    default:
      return 1.0 - p.s;
  }
}

}  // namespace

std::string to_string(PlanMode m) {
  switch (m) {
    case PlanMode::UniformScale: return "uniform-scale";
    case PlanMode::TopKScale: return "topk-scale";
    case PlanMode::MeanDiffProjection: return "mean-diff-projection";
    case PlanMode::ProbeIti: return "probe-iti";
    case PlanMode::RandomControl: return "random-control";
    case PlanMode::GroundingSuppression: return "grounding-suppression";
  }
  return "?";
}

std::vector<double> scale_grid() { return {0.0, 0.25, 0.5, 0.75}; }
std::vector<int> topk_grid() { return {3, 5, 8, 10, 15, 20, 30}; }
std::vector<double> projection_alphas() {
  return {-1.5, -1.0, -0.5, 0.5, 1.0, 1.5};
}
std::vector<double> iti_alphas() {
  return {-20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0};
}
std::vector<int> iti_head_counts() { return {12, 24, 48, 96}; }

std::vector<InterventionPlan> uniform_scale_plans(
    const std::vector<ComponentId>& targets) {
  std::vector<InterventionPlan> out;
  for (double s : scale_grid()) {
    InterventionPlan p;
    p.mode = PlanMode::UniformScale;
    p.targets = targets;
    p.s = s;
    p.label = "uniform s=" + fmt("%g", s);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<InterventionPlan> topk_scale_plans(
    const circuits::Circuit& circuit) {
  auto members =
      circuits::pathway_members(circuit, circuits::Pathway::Hallucination);
  // rank by |d| descending, stable in circuit order
  std::vector<std::pair<double, ComponentId>> ranked;
  for (const auto& c : members) {
    double d = 0.0;
    for (const auto& st : circuit.components)
      if (st.component == c) d = std::abs(st.cohens_d);
    ranked.push_back({d, c});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<InterventionPlan> out;
  std::set<std::pair<std::vector<ComponentId>, double>> seen;
  for (int k : topk_grid()) {
    int take = std::min<int>(k, static_cast<int>(ranked.size()));
    if (take == 0) continue;
    std::vector<ComponentId> targets;
    for (int i = 0; i < take; ++i) targets.push_back(ranked[i].second);
    for (double s : scale_grid()) {
      if (!seen.insert({targets, s}).second) continue;  // saturated k repeats
      InterventionPlan p;
      p.mode = PlanMode::TopKScale;
      p.targets = targets;
      p.s = s;
      p.k = k;
      p.label = "topk k=" + std::to_string(k) + " s=" + fmt("%g", s);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<InterventionPlan> projection_plans(
    const std::vector<ComponentId>& targets) {
  std::vector<InterventionPlan> out;
  for (double a : projection_alphas()) {
    InterventionPlan p;
    p.mode = PlanMode::MeanDiffProjection;
    p.targets = targets;
    p.alpha = a;
    p.label = "proj a=" + fmt("%g", a);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<InterventionPlan> iti_plans(const ToyModel& model) {
  const int total_heads = model.cfg.depth * model.cfg.heads;
  std::vector<InterventionPlan> out;
  std::set<int> used_counts;
  for (int K : iti_head_counts()) {
    int take = std::min(K, total_heads);
    if (!used_counts.insert(take).second) continue;
    for (double a : iti_alphas()) {
      InterventionPlan p;
      p.mode = PlanMode::ProbeIti;
      p.alpha = a;
      p.K = take;
      p.label = "iti K=" + std::to_string(take) + " a=" + fmt("%g", a);
      out.push_back(std::move(p));
    }
  }
  return out;
}

InterventionPlan grounding_suppression_plan(
    const std::vector<ComponentId>& grounding_targets) {
  InterventionPlan p;
  p.mode = PlanMode::GroundingSuppression;
  p.targets = grounding_targets;
  p.s = 0.0;
  p.label = "grounding-suppression s=0";
  return p;
}

ActivationSets collect_activations(const ToyModel& model,
                                   const std::vector<TaskSample>& samples) {
  ActivationSets out;
  for (const auto& s : samples) {
    auto rec = toyvlm::forward(model, s);
    if (rec.outcome == toyvlm::Outcome::Miss) continue;
    auto& bucket =
        rec.outcome == toyvlm::Outcome::Correct ? out.correct : out.halluc;
    for (const auto& [c, v] : rec.component_outputs) bucket[c].push_back(v);
  }
  return out;
}

std::map<ComponentId, SteerDirection> fit_mean_diff_directions(
    const ActivationSets& acts, const std::vector<ComponentId>& targets) {
  std::map<ComponentId, SteerDirection> out;
  for (const auto& c : targets) {
    auto ic = acts.correct.find(c);
    auto ih = acts.halluc.find(c);
    std::size_t nc = ic == acts.correct.end() ? 0 : ic->second.size();
    std::size_t nh = ih == acts.halluc.end() ? 0 : ih->second.size();
    if (nc < 2 || nh < 2)
      throw ConfigError("fit_mean_diff_directions: component " +
                        toyvlm::to_string(c) + " has " + std::to_string(nc) +
                        " correct and " + std::to_string(nh) +
                        " hallucinating activations; need >= 2 in each");
    Eigen::VectorXd mu_c = Eigen::VectorXd::Zero(ic->second[0].size());
    for (const auto& v : ic->second) mu_c += v;
    mu_c /= static_cast<double>(nc);
    Eigen::VectorXd mu_h = Eigen::VectorXd::Zero(ih->second[0].size());
    for (const auto& v : ih->second) mu_h += v;
    mu_h /= static_cast<double>(nh);
    Eigen::VectorXd diff = mu_h - mu_c;
    double n = diff.norm();
    if (n == 0.0) continue;  // coinciding class means: direction unavailable
    SteerDirection d;
    d.component = c;
    d.direction = diff / n;
    out.emplace(c, std::move(d));
  }
  return out;
}

ProbeSet train_iti_probes(const ToyModel& model,
                          const std::vector<TaskSample>& probe_samples,
                          std::uint64_t seed) {
  if (probe_samples.size() < 10)
    throw ConfigError("train_iti_probes: need >= 10 probe samples");
  const int heads = model.cfg.heads;
  const int dh = model.head_dim();
  // gather per-head final-position activations and hallucination labels
  std::map<std::pair<int, int>, std::vector<std::vector<double>>> feats;
  std::vector<int> labels;
  for (const auto& s : probe_samples) {
    toyvlm::PatchSpec ps;
    ps.capture_components = false;
    ps.capture_head_inputs = true;
    auto rec = toyvlm::forward(model, s, &ps);
    if (rec.outcome == toyvlm::Outcome::Miss) continue;
    labels.push_back(rec.outcome == toyvlm::Outcome::Hallucinating ? 1 : 0);
    for (const auto& [lh, v] : rec.head_pre_wo) {
      std::vector<double> row(v.data(), v.data() + v.size());
      feats[lh].push_back(std::move(row));
    }
  }
  ProbeSet out;
  int n_pos_class = 0;
  for (int y : labels) n_pos_class += y;
  for (int l = 0; l < model.cfg.depth; ++l) {
    for (int h = 0; h < heads; ++h) {
      auto key = std::make_pair(l, h);
      if (n_pos_class == 0 || n_pos_class == static_cast<int>(labels.size())) {
        out.notices.push_back("probe L" + std::to_string(l) + ".h" +
                              std::to_string(h) +
                              " skipped: single-class labels");
        continue;
      }
      const auto& X = feats.at(key);
      auto fit = statkit::fit_logistic(
          X, labels, /*l2=*/1e-3, /*class_weighted=*/true,
          /*holdout_fraction=*/0.2,
          derive_seed(seed, "iti-probe",
                      static_cast<std::uint64_t>(l * heads + h)));
      Eigen::VectorXd w(dh);
      for (int i = 0; i < dh; ++i) w[i] = fit.weights[i];
      double nrm = w.norm();
      if (nrm == 0.0) {
        out.notices.push_back("probe L" + std::to_string(l) + ".h" +
                              std::to_string(h) +
                              " skipped: zero probe direction");
        continue;
      }
      ItiProbe p;
      p.layer = l;
      p.head = h;
      p.w_hat = w / nrm;
      p.bias = fit.bias;
      p.validation_accuracy = fit.validation_accuracy;
      std::vector<double> proj;
      proj.reserve(X.size());
      for (const auto& row : X) {
        double dot = 0.0;
        for (int i = 0; i < dh; ++i) dot += p.w_hat[i] * row[i];
        proj.push_back(dot);
      }
      p.sigma = std::sqrt(statkit::sample_variance(proj));
      out.ranked.push_back(std::move(p));
    }
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const ItiProbe& a, const ItiProbe& b) {
                     if (a.validation_accuracy != b.validation_accuracy)
                       return a.validation_accuracy > b.validation_accuracy;
                     if (a.layer != b.layer) return a.layer < b.layer;
                     return a.head < b.head;
                   });
  return out;
}

ForwardRecord apply_scaling(const ToyModel& model, const InterventionPlan& plan,
                            const TaskSample& sample, bool capture) {
  require_targets(model, plan.targets, "apply_scaling");
  toyvlm::PatchSpec ps;
  ps.capture_components = capture;
  for (const auto& c : plan.targets) ps.scale[c] = plan.s;
  return toyvlm::forward(model, sample, &ps);
}

ForwardRecord apply_projection(
    const ToyModel& model, const InterventionPlan& plan,
    const std::map<ComponentId, SteerDirection>& directions,
    const TaskSample& sample, bool capture) {
  require_targets(model, plan.targets, "apply_projection");
  toyvlm::PatchSpec ps;
  ps.capture_components = capture;
  for (const auto& c : plan.targets) {
    auto it = directions.find(c);
    if (it == directions.end())
      throw ConfigError("apply_projection: no direction fitted for " +
                        toyvlm::to_string(c));
    toyvlm::PatchSpec::Projection pr;
    pr.dir = it->second.direction;
    pr.alpha = plan.alpha;
    ps.project[c] = std::move(pr);
  }
  return toyvlm::forward(model, sample, &ps);
}

ForwardRecord apply_iti(const ToyModel& model, const InterventionPlan& plan,
                        const ProbeSet& probes, const TaskSample& sample,
                        bool capture) {
  if (plan.K < 0 || plan.K > static_cast<int>(probes.ranked.size()))
    throw ConfigError("apply_iti: K = " + std::to_string(plan.K) + " but " +
                      std::to_string(probes.ranked.size()) +
                      " probes are available");
  toyvlm::PatchSpec ps;
  ps.capture_components = capture;
  for (int i = 0; i < plan.K; ++i) {
    const auto& p = probes.ranked[static_cast<std::size_t>(i)];
    ps.head_add[{p.layer, p.head}] = plan.alpha * p.sigma * p.w_hat;
  }
  return toyvlm::forward(model, sample, &ps);
}

ForwardRecord run_plan(const ToyModel& model, const InterventionPlan& plan,
                       const SteerContext& ctx, const TaskSample& sample) {
  switch (plan.mode) {
    case PlanMode::MeanDiffProjection:
      if (ctx.directions == nullptr)
        throw ConfigError("run_plan: projection plan without directions");
      return apply_projection(model, plan, *ctx.directions, sample);
    case PlanMode::ProbeIti:
      if (ctx.probes == nullptr)
        throw ConfigError("run_plan: head-steering plan without probes");
      return apply_iti(model, plan, *ctx.probes, sample);
    default:
      return apply_scaling(model, plan, sample);
  }
}

EvalOutcome evaluate_plan(const ToyModel& model, const InterventionPlan* plan,
                          const SteerContext& ctx,
                          const std::vector<TaskSample>& samples,
                          const EvalOutcome* baseline) {
  if (samples.empty()) throw ConfigError("evaluate_plan: empty sample set");
  EvalOutcome out;
  long long yes_count = 0;
  for (const auto& s : samples) {
    ForwardRecord rec;
    if (plan != nullptr) {
      rec = run_plan(model, *plan, ctx, s);
    } else {
      toyvlm::PatchSpec ps;  // no hooks: bit-identical to the bare forward
      ps.capture_components = false;
      rec = toyvlm::forward(model, s, &ps);
    }
    if (rec.answered_yes) ++yes_count;
    bool truth_yes = s.ground_truth == toyvlm::GroundTruth::Yes;
    if (truth_yes && rec.answered_yes) ++out.confusion.tp;
    else if (truth_yes && !rec.answered_yes) ++out.confusion.fn;
    else if (!truth_yes && rec.answered_yes) ++out.confusion.fp;
    else ++out.confusion.tn;
  }
  const auto& cm = out.confusion;
  double n = static_cast<double>(samples.size());
  out.accuracy = static_cast<double>(cm.tp + cm.tn) / n;
  long long neg = cm.fp + cm.tn;
  out.hallucination_rate =
      neg > 0 ? static_cast<double>(cm.fp) / static_cast<double>(neg) : 0.0;
  out.degenerate_constant_answer =
      yes_count == 0 || yes_count == static_cast<long long>(samples.size());
  if (baseline != nullptr) {
    out.delta_accuracy_pp = (out.accuracy - baseline->accuracy) * 100.0;
    out.delta_hallucination_pp =
        (out.hallucination_rate - baseline->hallucination_rate) * 100.0;
    out.relative_reduction =
        baseline->hallucination_rate > 0.0
            ? (baseline->hallucination_rate - out.hallucination_rate) /
                  baseline->hallucination_rate
            : 0.0;
  }
  return out;
}

SelectionResult select_and_evaluate(const ToyModel& model,
                                    const std::vector<InterventionPlan>& plans,
                                    const std::vector<TaskSample>& selection,
                                    const std::vector<TaskSample>& evaluation,
                                    const SteerContext& ctx, double budget_pp) {
  if (plans.empty())
    throw ConfigError("select_and_evaluate: empty plan grid");
  SelectionResult out;
  // stage 1: every plan is scored on the selection set only
  EvalOutcome base_sel = evaluate_plan(model, nullptr, ctx, selection);
  out.baseline_selection_accuracy = base_sel.accuracy;
  out.baseline_selection_halluc = base_sel.hallucination_rate;
  int best = -1;
  EvalOutcome best_eval;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    EvalOutcome e = evaluate_plan(model, &plans[i], ctx, selection, &base_sel);
    double drop_pp = (base_sel.accuracy - e.accuracy) * 100.0;
    if (drop_pp > budget_pp + 1e-9) continue;  // over the accuracy budget
    if (best >= 0) {
      if (e.hallucination_rate > best_eval.hallucination_rate) continue;
      if (e.hallucination_rate == best_eval.hallucination_rate) {
        if (e.accuracy < best_eval.accuracy) continue;
        if (e.accuracy == best_eval.accuracy &&
            intervention_magnitude(plans[i]) >=
                intervention_magnitude(plans[static_cast<std::size_t>(best)]))
          continue;  // enumeration order keeps the earlier plan on full ties
      }
    }
    best = static_cast<int>(i);
    best_eval = e;
  }
  // stage 2: only the winner touches the evaluation set
  out.baseline_eval = evaluate_plan(model, nullptr, ctx, evaluation);
  if (best < 0) {
    out.feasible = false;
    out.selected_eval = out.baseline_eval;
    out.notice =
        "no plan met the accuracy budget on the selection set; "
        "reporting baseline only";
    return out;
  }
  out.feasible = true;
  out.selected = plans[static_cast<std::size_t>(best)];
  out.selection_accuracy = best_eval.accuracy;
  out.selection_halluc = best_eval.hallucination_rate;
  out.selected_eval = evaluate_plan(model, &out.selected, ctx, evaluation,
                                    &out.baseline_eval);
  return out;
}

RandomControlResult random_control(const ToyModel& model, double s,
                                   int cardinality,
                                   const std::vector<TaskSample>& evaluation,
                                   std::uint64_t master_seed, int n_seeds) {
  auto all = model.all_components();
  if (cardinality < 1 || cardinality > static_cast<int>(all.size()))
    throw ConfigError("random_control: cardinality " +
                      std::to_string(cardinality) + " outside [1, " +
                      std::to_string(all.size()) + "]");
  if (n_seeds < 1) throw ConfigError("random_control: need >= 1 seed");
  RandomControlResult out;
  EvalOutcome base = evaluate_plan(model, nullptr, SteerContext{}, evaluation);
  double sum_dh = 0.0, sum_rr = 0.0;
  for (int i = 0; i < n_seeds; ++i) {
    std::uint64_t seed_i =
        derive_seed(master_seed, "random-control", static_cast<std::uint64_t>(i));
    SplitMix64 g(seed_i);
    std::vector<ComponentId> pool = all;
    for (int j = 0; j < cardinality; ++j) {  // partial Fisher-Yates draw
      std::size_t pick =
          static_cast<std::size_t>(j) +
          static_cast<std::size_t>(g.below(pool.size() - static_cast<std::size_t>(j)));
      std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
    }
    pool.resize(static_cast<std::size_t>(cardinality));
    std::sort(pool.begin(), pool.end());
    InterventionPlan p;
    p.mode = PlanMode::RandomControl;
    p.targets = std::move(pool);
    p.s = s;
    p.seed = seed_i;
    p.label = "random s=" + fmt("%g", s) + " draw=" + std::to_string(i);
    EvalOutcome e = evaluate_plan(model, &p, SteerContext{}, evaluation, &base);
    sum_dh += e.delta_hallucination_pp;
    sum_rr += e.relative_reduction;
    if (i == 0) {
      out.min_delta_h_pp = e.delta_hallucination_pp;
      out.max_delta_h_pp = e.delta_hallucination_pp;
    } else {
      out.min_delta_h_pp = std::min(out.min_delta_h_pp, e.delta_hallucination_pp);
      out.max_delta_h_pp = std::max(out.max_delta_h_pp, e.delta_hallucination_pp);
    }
    out.plans.push_back(std::move(p));
    out.per_seed.push_back(e);
  }
  out.mean_delta_h_pp = sum_dh / n_seeds;
  out.mean_relative_reduction = sum_rr / n_seeds;
  return out;
}

}  // namespace circuitscope::steer
