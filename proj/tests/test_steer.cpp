#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "circuitscope/errors.hpp"
#include "circuitscope/rng.hpp"
#include "circuitscope/statkit.hpp"
#include "circuitscope/steer.hpp"
#include "circuitscope/toyvlm.hpp"

using namespace circuitscope;
using toyvlm::ComponentId;
using toyvlm::ComponentKind;

namespace {

ComponentId cid(int layer, ComponentKind k) { return {layer, k}; }

const toyvlm::ToyModel& reference_model() {
  static toyvlm::ToyModel m = toyvlm::build_model(toyvlm::ToyModelConfig{});
  return m;
}

const std::vector<toyvlm::TaskSample>& discovery_set() {
  static auto s = toyvlm::generate_task(7, 1000, toyvlm::Split::Discovery,
                                        reference_model().bc);
  return s;
}

const std::vector<toyvlm::TaskSample>& selection_set() {
  static auto s = toyvlm::generate_task(7, 100, toyvlm::Split::Selection,
                                        reference_model().bc);
  return s;
}

const std::vector<toyvlm::TaskSample>& evaluation_set() {
  static auto s = toyvlm::generate_task(7, 400, toyvlm::Split::Evaluation,
                                        reference_model().bc);
  return s;
}

// circuit with the reference model's known pathway structure; the extraction
// pipeline that reproduces it live is exercised in the circuit test suite
circuits::Circuit reference_circuit() {
  circuits::Circuit c;
  c.model_id = "d8-s1";
  c.model_depth = 8;
  auto add = [&](ComponentId comp, double d) {
    circuits::ComponentStat st;
    st.component = comp;
    st.cohens_d = d;
    st.p_raw = 1e-4;
    st.p_adjusted = 1e-3;
    c.components.push_back(st);
    c.pathway[comp] = d > 0 ? circuits::Pathway::Grounding
                            : circuits::Pathway::Hallucination;
  };
  add(cid(3, ComponentKind::Mlp), 1.07);
  add(cid(4, ComponentKind::Mlp), -0.78);
  add(cid(5, ComponentKind::Attention), -0.40);
  add(cid(7, ComponentKind::Mlp), -0.76);
  return c;
}

std::vector<ComponentId> halluc_targets() {
  return circuits::pathway_members(reference_circuit(),
                                   circuits::Pathway::Hallucination);
}

const steer::ProbeSet& live_probes() {
  static steer::ProbeSet p =
      steer::train_iti_probes(reference_model(), discovery_set(), 2026);
  return p;
}

const steer::ActivationSets& live_activations() {
  static steer::ActivationSets a =
      steer::collect_activations(reference_model(), discovery_set());
  return a;
}

const std::map<ComponentId, steer::SteerDirection>& live_directions() {
  static auto d =
      steer::fit_mean_diff_directions(live_activations(), halluc_targets());
  return d;
}

bool logits_equal(const toyvlm::ForwardRecord& a,
                  const toyvlm::ForwardRecord& b) {
  return std::memcmp(a.logits.data(), b.logits.data(),
                     sizeof(double) * 2) == 0;
}

void check_rates_from_confusion(const steer::EvalOutcome& e, long long n) {
  const auto& cm = e.confusion;
  CHECK(cm.tp + cm.fp + cm.tn + cm.fn == n);
  CHECK(e.accuracy ==
        static_cast<double>(cm.tp + cm.tn) / static_cast<double>(n));
  long long neg = cm.fp + cm.tn;
  if (neg > 0)
    CHECK(e.hallucination_rate ==
          static_cast<double>(cm.fp) / static_cast<double>(neg));
}

}  // namespace

TEST_CASE("identity configurations leave the forward pass bit-exact") {
  const auto& m = reference_model();
  for (int i = 0; i < 10; ++i) {
    const auto& s = evaluation_set()[static_cast<std::size_t>(i)];
    auto base = toyvlm::forward(m, s);

    steer::InterventionPlan unit;
    unit.mode = steer::PlanMode::UniformScale;
    unit.targets = halluc_targets();
    unit.s = 1.0;
    CHECK(logits_equal(steer::apply_scaling(m, unit, s), base));

    steer::InterventionPlan empty_targets;
    empty_targets.mode = steer::PlanMode::UniformScale;
    empty_targets.s = 0.0;
    CHECK(logits_equal(steer::apply_scaling(m, empty_targets, s), base));

    steer::InterventionPlan zero_alpha;
    zero_alpha.mode = steer::PlanMode::MeanDiffProjection;
    zero_alpha.targets = halluc_targets();
    zero_alpha.alpha = 0.0;
    CHECK(logits_equal(
        steer::apply_projection(m, zero_alpha, live_directions(), s), base));

    steer::InterventionPlan no_heads;
    no_heads.mode = steer::PlanMode::ProbeIti;
    no_heads.alpha = 5.0;
    no_heads.K = 0;
    CHECK(logits_equal(steer::apply_iti(m, no_heads, live_probes(), s), base));

    steer::InterventionPlan iti_zero_alpha;
    iti_zero_alpha.mode = steer::PlanMode::ProbeIti;
    iti_zero_alpha.alpha = 0.0;
    iti_zero_alpha.K = static_cast<int>(live_probes().ranked.size());
    CHECK(logits_equal(
        steer::apply_iti(m, iti_zero_alpha, live_probes(), s), base));
  }

  steer::InterventionPlan bad;
  bad.mode = steer::PlanMode::UniformScale;
  bad.targets = {cid(99, ComponentKind::Mlp)};
  CHECK_THROWS_AS(steer::apply_scaling(reference_model(), bad,
                                       evaluation_set()[0]),
                  ConfigError);
}

TEST_CASE("zeroing every component collapses to the flagged constant answer") {
  const auto& m = reference_model();
  steer::InterventionPlan p;
  p.mode = steer::PlanMode::UniformScale;
  p.targets = m.all_components();
  p.s = 0.0;
  auto e = steer::evaluate_plan(m, &p, {}, evaluation_set());
  CHECK(e.degenerate_constant_answer);
  CHECK(e.accuracy == 0.5);
  CHECK(e.confusion.tp == 0);  // everything answers No
  CHECK(e.confusion.fp == 0);
  check_rates_from_confusion(e, 400);
}

TEST_CASE("suppressing the hallucination pathway wins selection and transfers") {
  const auto& m = reference_model();
  steer::SteerContext ctx;
  auto res = steer::select_and_evaluate(m, steer::uniform_scale_plans(halluc_targets()),
                                        selection_set(), evaluation_set(), ctx);
  REQUIRE(res.feasible);
  // every s in the grid reaches zero selection hallucinations at full accuracy;
  // the least-intervention rung must then pick the largest s
  CHECK(res.selected.label == "uniform s=0.75");
  CHECK(res.selected.s == 0.75);
  CHECK(res.selection_halluc == 0.0);
  CHECK(res.selection_accuracy == 1.0);
  CHECK(res.baseline_selection_accuracy == 0.94);
  CHECK(res.baseline_selection_halluc == 0.12);

  CHECK(res.baseline_eval.accuracy == 0.9375);
  CHECK(res.baseline_eval.hallucination_rate == 0.125);
  CHECK(res.baseline_eval.confusion.tp == 200);
  CHECK(res.baseline_eval.confusion.fp == 25);
  CHECK(res.baseline_eval.confusion.tn == 175);
  CHECK(res.baseline_eval.confusion.fn == 0);
  check_rates_from_confusion(res.baseline_eval, 400);

  CHECK(res.selected_eval.accuracy == 1.0);
  CHECK(res.selected_eval.hallucination_rate == 0.0);
  CHECK(res.selected_eval.delta_accuracy_pp == 6.25);
  CHECK(res.selected_eval.delta_hallucination_pp == -12.5);
  CHECK(res.selected_eval.relative_reduction == 1.0);
  check_rates_from_confusion(res.selected_eval, 400);
}

TEST_CASE("grounding suppression drives accuracy to chance without the flag") {
  const auto& m = reference_model();
  auto gmem = circuits::pathway_members(reference_circuit(),
                                        circuits::Pathway::Grounding);
  REQUIRE(gmem == std::vector<ComponentId>{cid(3, ComponentKind::Mlp)});
  auto plan = steer::grounding_suppression_plan(gmem);
  CHECK(plan.s == 0.0);
  auto base = steer::evaluate_plan(m, nullptr, {}, evaluation_set());
  auto e = steer::evaluate_plan(m, &plan, {}, evaluation_set(), &base);
  CHECK(e.accuracy >= 0.45);
  CHECK(e.accuracy <= 0.55);
  CHECK(e.accuracy == doctest::Approx(0.5425).epsilon(1e-12));
  CHECK(e.hallucination_rate == doctest::Approx(0.19).epsilon(1e-12));
  CHECK_FALSE(e.degenerate_constant_answer);
  check_rates_from_confusion(e, 400);
}

TEST_CASE("top-k plans rank hallucination components by effect magnitude") {
  auto plans = steer::topk_scale_plans(reference_circuit());
  // three-member pathway: every k saturates at 3, deduplicating to one target
  // set per grid scale
  REQUIRE(plans.size() == 4);
  std::vector<ComponentId> expect = {cid(4, ComponentKind::Mlp),
                                     cid(7, ComponentKind::Mlp),
                                     cid(5, ComponentKind::Attention)};
  for (const auto& p : plans) {
    CHECK(p.mode == steer::PlanMode::TopKScale);
    CHECK(p.k == 3);
    CHECK(p.targets == expect);
  }
  CHECK(plans[0].s == 0.0);
  CHECK(plans[3].s == 0.75);

  // five-member pathway: k = 3 and k = 5 give distinct prefixes, the rest
  // saturate onto the k = 5 set
  circuits::Circuit big;
  big.model_id = "synthetic";
  big.model_depth = 12;
  auto add = [&](int layer, ComponentKind kind, double d) {
    circuits::ComponentStat st;
    st.component = cid(layer, kind);
    st.cohens_d = d;
    st.p_adjusted = 1e-3;
    big.components.push_back(st);
    big.pathway[st.component] = d > 0 ? circuits::Pathway::Grounding
                                      : circuits::Pathway::Hallucination;
  };
  add(1, ComponentKind::Mlp, 2.0);  // grounding, never targeted
  add(2, ComponentKind::Mlp, -0.9);
  add(3, ComponentKind::Attention, -0.8);
  add(4, ComponentKind::Mlp, -0.7);
  add(5, ComponentKind::Attention, -0.6);
  add(6, ComponentKind::Mlp, -0.5);
  auto bplans = steer::topk_scale_plans(big);
  REQUIRE(bplans.size() == 8);
  std::vector<ComponentId> top3 = {cid(2, ComponentKind::Mlp),
                                   cid(3, ComponentKind::Attention),
                                   cid(4, ComponentKind::Mlp)};
  std::vector<ComponentId> top5 = top3;
  top5.push_back(cid(5, ComponentKind::Attention));
  top5.push_back(cid(6, ComponentKind::Mlp));
  for (int i = 0; i < 4; ++i) {
    CHECK(bplans[static_cast<std::size_t>(i)].targets == top3);
    CHECK(bplans[static_cast<std::size_t>(i)].k == 3);
    CHECK(bplans[static_cast<std::size_t>(i + 4)].targets == top5);
    CHECK(bplans[static_cast<std::size_t>(i + 4)].k == 5);
  }
  // empty hallucination pathway yields no plans
  circuits::Circuit gonly;
  gonly.model_depth = 8;
  circuits::ComponentStat lone;
  lone.component = cid(3, ComponentKind::Mlp);
  lone.cohens_d = 1.0;
  gonly.components.push_back(lone);
  gonly.pathway[lone.component] = circuits::Pathway::Grounding;
  CHECK(steer::topk_scale_plans(gonly).empty());
}

TEST_CASE("mean-difference directions match their defining construction") {
  // e1 shift: mu_halluc = mu_correct + e1
  steer::ActivationSets acts;
  ComponentId c = cid(0, ComponentKind::Attention);
  Eigen::VectorXd base = Eigen::VectorXd::Zero(8);
  base[3] = 2.0;
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(8);
  e1[0] = 1.0;
  acts.correct[c] = {base, base};
  acts.halluc[c] = {base + e1, base + e1};
  auto dirs = steer::fit_mean_diff_directions(acts, {c});
  REQUIRE(dirs.count(c) == 1);
  CHECK((dirs.at(c).direction - e1).cwiseAbs().maxCoeff() == 0.0);

  // scaling every activation by 2 leaves the unit direction unchanged
  steer::ActivationSets acts2;
  acts2.correct[c] = {2.0 * base, 2.0 * base};
  acts2.halluc[c] = {2.0 * (base + e1), 2.0 * (base + e1)};
  auto dirs2 = steer::fit_mean_diff_directions(acts2, {c});
  CHECK((dirs2.at(c).direction - e1).cwiseAbs().maxCoeff() == 0.0);

  // coinciding class means: no direction for that component
  steer::ActivationSets flat;
  flat.correct[c] = {base, base};
  flat.halluc[c] = {base, base};
  CHECK(steer::fit_mean_diff_directions(flat, {c}).empty());

  // deficient class counts are rejected
  steer::ActivationSets thin;
  thin.correct[c] = {base, base};
  thin.halluc[c] = {base + e1};
  CHECK_THROWS_AS(steer::fit_mean_diff_directions(thin, {c}), ConfigError);

  // live fit: unit norm, and a two-pass recomputation of the L4 MLP direction
  // reproduces it exactly
  const auto& live = live_directions();
  REQUIRE(live.size() == 3);
  for (const auto& [comp, d] : live)
    CHECK(std::abs(d.direction.norm() - 1.0) <= 1e-9);
  const auto& m = reference_model();
  ComponentId probe = cid(4, ComponentKind::Mlp);
  Eigen::VectorXd mc = Eigen::VectorXd::Zero(m.cfg.width);
  Eigen::VectorXd mh = Eigen::VectorXd::Zero(m.cfg.width);
  double nc = 0, nh = 0;
  for (const auto& s : discovery_set()) {
    auto r = toyvlm::forward(m, s);
    if (r.outcome == toyvlm::Outcome::Miss) continue;
    const auto& v = r.component_outputs.at(probe);
    if (r.outcome == toyvlm::Outcome::Correct) {
      mc += v;
      nc += 1.0;
    } else {
      mh += v;
      nh += 1.0;
    }
  }
  Eigen::VectorXd expect = mh / nh - mc / nc;
  expect.normalize();
  CHECK((expect - live.at(probe).direction).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("projection removes the steered direction and spares orthogonal output") {
  const auto& m = reference_model();
  const auto& dirs = live_directions();

  steer::InterventionPlan full;
  full.mode = steer::PlanMode::MeanDiffProjection;
  full.targets = halluc_targets();
  full.alpha = 1.0;
  for (int i = 0; i < 20; ++i) {
    auto r = steer::apply_projection(m, full, dirs,
                                     evaluation_set()[static_cast<std::size_t>(i)],
                                     /*capture=*/true);
    for (const auto& c : full.targets)
      CHECK(std::abs(r.component_outputs.at(c).dot(dirs.at(c).direction)) <=
            1e-9);
  }

  // hooked output obeys h' = h - alpha (h . d) d at the final position
  const auto& s0 = evaluation_set()[0];
  auto clean = toyvlm::forward(m, s0);
  ComponentId c4 = cid(4, ComponentKind::Mlp);
  for (double alpha : {0.5, 1.0, -1.5}) {
    steer::InterventionPlan p;
    p.mode = steer::PlanMode::MeanDiffProjection;
    p.targets = {c4};
    p.alpha = alpha;
    auto r = steer::apply_projection(m, p, dirs, s0, true);
    const Eigen::VectorXd& d = dirs.at(c4).direction;
    Eigen::VectorXd h = clean.component_outputs.at(c4);
    Eigen::VectorXd want = h - (alpha * h.dot(d)) * d;
    CHECK((r.component_outputs.at(c4) - want).cwiseAbs().maxCoeff() <= 1e-12);
  }

  // direction orthogonalized against the clean output leaves it unchanged
  {
    Eigen::VectorXd h = clean.component_outputs.at(c4);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(m.cfg.width);
    q[toyvlm::coord::kDecoy] = 1.0;
    q -= (q.dot(h) / h.squaredNorm()) * h;
    q.normalize();
    std::map<ComponentId, steer::SteerDirection> od;
    od[c4] = {c4, q, 0.0};
    steer::InterventionPlan p;
    p.mode = steer::PlanMode::MeanDiffProjection;
    p.targets = {c4};
    p.alpha = 1.5;
    auto r = steer::apply_projection(m, p, od, s0, true);
    CHECK((r.component_outputs.at(c4) - h).cwiseAbs().maxCoeff() <= 1e-12);
  }

  // missing direction is a plan error
  steer::InterventionPlan orphan;
  orphan.mode = steer::PlanMode::MeanDiffProjection;
  orphan.targets = {cid(0, ComponentKind::Mlp)};
  orphan.alpha = 1.0;
  CHECK_THROWS_AS(steer::apply_projection(m, orphan, dirs, s0), ConfigError);
}

TEST_CASE("projection grid selects the gentlest effective alpha") {
  const auto& m = reference_model();
  steer::SteerContext ctx;
  ctx.directions = &live_directions();
  auto res = steer::select_and_evaluate(m, steer::projection_plans(halluc_targets()),
                                        selection_set(), evaluation_set(), ctx);
  REQUIRE(res.feasible);
  CHECK(res.selected.alpha == 0.5);  // all positive alphas tie at zero halluc
  CHECK(res.selected_eval.accuracy == 1.0);
  CHECK(res.selected_eval.hallucination_rate == 0.0);
  CHECK(res.selected_eval.relative_reduction == 1.0);
}

TEST_CASE("head probes recover the evidence monitor and rank deterministically") {
  const auto& m = reference_model();
  const auto& probes = live_probes();
  REQUIRE(probes.ranked.size() ==
          static_cast<std::size_t>(m.cfg.depth * m.cfg.heads));
  CHECK(probes.notices.empty());

  // ranking is sorted by validation accuracy with (layer, head) tie order
  for (std::size_t i = 1; i < probes.ranked.size(); ++i) {
    const auto& a = probes.ranked[i - 1];
    const auto& b = probes.ranked[i];
    bool ordered = a.validation_accuracy > b.validation_accuracy ||
                   (a.validation_accuracy == b.validation_accuracy &&
                    (a.layer < b.layer ||
                     (a.layer == b.layer && a.head < b.head)));
    CHECK(ordered);
  }
  for (const auto& p : probes.ranked) {
    CHECK(std::abs(p.w_hat.norm() - 1.0) <= 1e-9);
    CHECK(p.sigma > 0.0);
  }

  CHECK(probes.ranked[0].layer == 3);
  CHECK(probes.ranked[0].head == 1);
  CHECK(probes.ranked[0].validation_accuracy == doctest::Approx(0.925).epsilon(1e-12));

  // the monitor head reads the evidence coordinate the prior writes into; its
  // probe must beat 0.6 and carries by far the largest activation spread
  const steer::ItiProbe* monitor = nullptr;
  double max_other_sigma = 0.0;
  for (const auto& p : probes.ranked) {
    if (p.layer == m.monitor_layer && p.head == 0)
      monitor = &p;
    else if (p.layer != 0)  // layer-0 copy heads also carry scene signal
      max_other_sigma = std::max(max_other_sigma, p.sigma);
  }
  REQUIRE(monitor != nullptr);
  CHECK(monitor->validation_accuracy > 0.6);
  CHECK(monitor->validation_accuracy == doctest::Approx(0.67).epsilon(1e-12));
  CHECK(monitor->sigma == doctest::Approx(0.6360389).epsilon(1e-6));
  CHECK(monitor->sigma > 100.0 * max_other_sigma);

  // training twice with the same seed reproduces every field bit-exactly
  auto again = steer::train_iti_probes(m, discovery_set(), 2026);
  REQUIRE(again.ranked.size() == probes.ranked.size());
  for (std::size_t i = 0; i < probes.ranked.size(); ++i) {
    CHECK(again.ranked[i].layer == probes.ranked[i].layer);
    CHECK(again.ranked[i].head == probes.ranked[i].head);
    CHECK(again.ranked[i].validation_accuracy ==
          probes.ranked[i].validation_accuracy);
    CHECK(again.ranked[i].sigma == probes.ranked[i].sigma);
    CHECK((again.ranked[i].w_hat - probes.ranked[i].w_hat)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("class-independent features probe out at chance under the protocol") {
  SplitMix64 rng(17);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (int i = 0; i < 400; ++i) {
    std::vector<double> row(16);
    for (auto& v : row) v = rng.gaussian();
    X.push_back(std::move(row));
    y.push_back(static_cast<int>(rng.next() & 1));  // label independent of X
  }
  auto fit = statkit::fit_logistic(X, y, 1e-3, true, 0.2, 5);
  CHECK(fit.validation_accuracy >= 0.35);
  CHECK(fit.validation_accuracy <= 0.65);
}

TEST_CASE("head steering is additive and an aligned head pushes toward yes") {
  const auto& m = reference_model();
  const int dh = m.head_dim();
  const int last = m.cfg.depth - 1;

  // hand-built probe whose direction maps through W_O onto the yes-minus-no
  // unembedding direction
  Eigen::VectorXd u = (m.unembed.row(toyvlm::kYesToken) -
                       m.unembed.row(toyvlm::kNoToken))
                          .transpose();
  Eigen::VectorXd what = m.layers[static_cast<std::size_t>(last)]
                             .wo.middleRows(0, dh) *
                         u;
  what.normalize();
  steer::ProbeSet hand;
  steer::ItiProbe hp;
  hp.layer = last;
  hp.head = 0;
  hp.w_hat = what;
  hp.sigma = 1.0;
  hp.validation_accuracy = 1.0;
  hand.ranked.push_back(hp);

  for (int si = 0; si < 2; ++si) {  // one Yes-truth and one No-truth sample
    const auto& s = evaluation_set()[static_cast<std::size_t>(si)];
    double prev_yes = -1e300, prev_margin = -1e300;
    for (double alpha : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      steer::InterventionPlan p;
      p.mode = steer::PlanMode::ProbeIti;
      p.alpha = alpha;
      p.K = 1;
      auto r = steer::apply_iti(m, p, hand, s);
      CHECK(r.logits[0] >= prev_yes);
      CHECK(r.logits[0] - r.logits[1] >= prev_margin);
      prev_yes = r.logits[0];
      prev_margin = r.logits[0] - r.logits[1];
      if (alpha == 0.0) {  // the additive hook at zero strength is removable
        CHECK(logits_equal(r, toyvlm::forward(m, s)));
      }
    }
  }

  steer::InterventionPlan over;
  over.mode = steer::PlanMode::ProbeIti;
  over.K = static_cast<int>(live_probes().ranked.size()) + 1;
  CHECK_THROWS_AS(steer::apply_iti(reference_model(), over, live_probes(),
                                   evaluation_set()[0]),
                  ConfigError);
}

TEST_CASE("selection minimizes hallucination inside the accuracy budget") {
  const auto& m = reference_model();
  steer::SteerContext ctx;

  // a grid holding only the identity scale must select it with zero deltas
  steer::InterventionPlan ident;
  ident.mode = steer::PlanMode::UniformScale;
  ident.targets = halluc_targets();
  ident.s = 1.0;
  ident.label = "uniform s=1";
  auto only = steer::select_and_evaluate(m, {ident}, selection_set(),
                                         evaluation_set(), ctx);
  REQUIRE(only.feasible);
  CHECK(only.selected.label == "uniform s=1");
  CHECK(only.selected_eval.delta_accuracy_pp == 0.0);
  CHECK(only.selected_eval.delta_hallucination_pp == 0.0);
  CHECK(only.selected_eval.accuracy == only.baseline_eval.accuracy);
  CHECK(only.selected_eval.hallucination_rate ==
        only.baseline_eval.hallucination_rate);

  // the head-steering grid breaks the sanitizer certificates and never meets
  // the accuracy budget; the result must fall back to baseline with a notice
  steer::SteerContext ictx;
  ictx.probes = &live_probes();
  auto iti = steer::select_and_evaluate(m, steer::iti_plans(m), selection_set(),
                                        evaluation_set(), ictx);
  CHECK_FALSE(iti.feasible);
  CHECK(iti.notice ==
        "no plan met the accuracy budget on the selection set; "
        "reporting baseline only");
  CHECK(iti.selected_eval.accuracy == iti.baseline_eval.accuracy);
  CHECK(iti.selected_eval.hallucination_rate ==
        iti.baseline_eval.hallucination_rate);

  // a lone over-budget plan is also infeasible (39.8 pp accuracy drop)
  auto gplan = steer::grounding_suppression_plan(
      circuits::pathway_members(reference_circuit(),
                                circuits::Pathway::Grounding));
  auto gres = steer::select_and_evaluate(m, {gplan}, selection_set(),
                                         evaluation_set(), ctx);
  CHECK_FALSE(gres.feasible);

  CHECK_THROWS_AS(steer::select_and_evaluate(m, {}, selection_set(),
                                             evaluation_set(), ctx),
                  ConfigError);
}

TEST_CASE("random component draws remove far less hallucination than targets") {
  const auto& m = reference_model();
  auto rc = steer::random_control(m, 0.75, 3, evaluation_set(), 2026);
  REQUIRE(rc.plans.size() == 5);
  REQUIRE(rc.per_seed.size() == 5);

  std::set<std::vector<ComponentId>> distinct;
  for (int i = 0; i < 5; ++i) {
    const auto& p = rc.plans[static_cast<std::size_t>(i)];
    CHECK(p.mode == steer::PlanMode::RandomControl);
    CHECK(p.s == 0.75);
    REQUIRE(p.targets.size() == 3);
    std::set<ComponentId> uniq(p.targets.begin(), p.targets.end());
    CHECK(uniq.size() == 3);  // drawn without replacement
    for (const auto& c : p.targets) CHECK(m.valid_component(c));
    CHECK(p.seed == derive_seed(2026, "random-control",
                                static_cast<std::uint64_t>(i)));
    distinct.insert(p.targets);
  }
  CHECK(distinct.size() >= 4);  // draws differ across seeds

  CHECK(rc.mean_delta_h_pp == doctest::Approx(-4.6).epsilon(1e-9));
  CHECK(rc.min_delta_h_pp == -12.5);  // (0 - 0.125) * 100 is exact
  CHECK(rc.max_delta_h_pp == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rc.mean_relative_reduction == doctest::Approx(0.368).epsilon(1e-9));

  // the targeted suppression removes 12.5 pp on the same evaluation set; the
  // random-draw mean must sit below half of that
  CHECK(std::abs(rc.mean_delta_h_pp) < 0.5 * 12.5);

  // reruns with the same master seed reproduce the draw exactly
  auto rc2 = steer::random_control(m, 0.75, 3, evaluation_set(), 2026);
  for (int i = 0; i < 5; ++i)
    CHECK(rc2.plans[static_cast<std::size_t>(i)].targets ==
          rc.plans[static_cast<std::size_t>(i)].targets);
  CHECK(rc2.mean_delta_h_pp == rc.mean_delta_h_pp);

  CHECK_THROWS_AS(steer::random_control(m, 0.75, 0, evaluation_set(), 1),
                  ConfigError);
  CHECK_THROWS_AS(steer::random_control(m, 0.75, 99, evaluation_set(), 1),
                  ConfigError);
}

TEST_CASE("plan mode labels render") {
  CHECK(steer::to_string(steer::PlanMode::UniformScale) == "uniform-scale");
  CHECK(steer::to_string(steer::PlanMode::TopKScale) == "topk-scale");
  CHECK(steer::to_string(steer::PlanMode::MeanDiffProjection) ==
        "mean-diff-projection");
  CHECK(steer::to_string(steer::PlanMode::ProbeIti) == "probe-iti");
  CHECK(steer::to_string(steer::PlanMode::RandomControl) == "random-control");
  CHECK(steer::to_string(steer::PlanMode::GroundingSuppression) ==
        "grounding-suppression");
}
