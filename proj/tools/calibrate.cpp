// Behavioral calibration harness for the hand-constructed weights.
//
// Measures every quantity the test suite freezes: hallucination rates over
// the prior-strength grid, corrupt-pass accuracy under noise, per-component
// normalized-IE separation between correct and hallucinating samples, the
// per-layer delta trajectory, the duplicated-pathway magnitude ratio, and
// suppression previews. Run after any change to BuildConstants.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <vector>

#include "circuitscope/patchengine.hpp"
#include "circuitscope/statkit.hpp"
#include "circuitscope/toyvlm.hpp"

using namespace circuitscope;
using namespace circuitscope::toyvlm;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace {

struct Rates {
  double accuracy = 0.0, halluc = 0.0, miss = 0.0;
};

Rates measure_rates(const ToyModel& m, const std::vector<TaskSample>& samples,
                    const PatchSpec* hooks = nullptr) {
  int correct = 0, fp = 0, tn = 0, fn = 0, tp = 0;
  for (const auto& s : samples) {
    ForwardRecord r = forward(m, s, hooks);
    bool truth_yes = s.ground_truth == GroundTruth::Yes;
    correct += r.answered_yes == truth_yes;
    if (truth_yes) {
      (r.answered_yes ? tp : fn) += 1;
    } else {
      (r.answered_yes ? fp : tn) += 1;
    }
  }
  Rates out;
  out.accuracy = double(correct) / samples.size();
  out.halluc = fp + tn ? double(fp) / (fp + tn) : 0.0;
  out.miss = tp + fn ? double(fn) / (tp + fn) : 0.0;
  return out;
}

double lens_delta(const ToyModel& m, const MatrixXd& hidden,
                  const TaskSample& s) {
  RowVectorXd xr = hidden.row(m.final_pos());
  RowVectorXd xf = rowops::rmsnorm(xr);
  double d = xf.dot(m.unembed.row(kYesToken)) - xf.dot(m.unembed.row(kNoToken));
  return s.ground_truth == GroundTruth::Yes ? d : -d;
}

}  // namespace

int main() {
  const std::uint64_t task_seed = 7;
  BuildConstants bc;

  ToyModelConfig cfg;
  cfg.seed = 1;

  auto discovery = generate_task(task_seed, 1000, Split::Discovery, bc);
  auto evaluation = generate_task(task_seed, 400, Split::Evaluation, bc);

  std::printf("== co-occurrence score quantiles by ground truth ==\n");
  {
    std::vector<double> cy, cn;
    for (const auto& s : discovery)
      (s.ground_truth == GroundTruth::Yes ? cy : cn)
          .push_back(s.co_occurrence_score);
    auto q = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      auto at = [&](double f) { return v[size_t(f * (v.size() - 1))]; };
      std::printf("min %.3f p10 %.3f p25 %.3f p50 %.3f p75 %.3f p90 %.3f max %.3f\n",
                  v.front(), at(.10), at(.25), at(.50), at(.75), at(.90),
                  v.back());
    };
    std::printf("  yes (n=%zu): ", cy.size());
    q(cy);
    std::printf("  no  (n=%zu): ", cn.size());
    q(cn);
  }

  std::printf("== certificate statistics at sanitizer input (post-norm) ==\n");
  {
    ToyModel probe_model = build_model(cfg, bc);
    struct CertStats {
      double sq, sid, sctx, flag;
      bool fires;
    };
    auto stat = [&](const TaskSample& s, double mult,
                    std::uint64_t nseed) -> CertStats {
      PatchSpec ps;
      ps.capture_hidden = true;
      ps.capture_components = false;
      MatrixXd noise;
      if (mult > 0) {
        patchengine::CorruptionSpec cs;
        cs.noise_multiplier = mult;
        cs.noise_seed = nseed;
        noise = patchengine::corruption_noise(probe_model, s, cs);
        ps.visual_noise = &noise;
      }
      ForwardRecord r = forward(probe_model, s, &ps);
      RowVectorXd xr =
          r.hidden_states[probe_model.sanitizer_layer].row(probe_model.final_pos());
      RowVectorXd xn = rowops::rmsnorm(xr);
      CertStats cs{};
      cs.sq = xn[coord::kSqBag];
      for (int c = 0; c < kObjectCount; ++c) cs.sid += xn[coord::kBagId + c];
      for (int c = 0; c < kContextCount; ++c) cs.sctx += xn[coord::kBagCtx + c];
      cs.flag = xn[coord::kBagFlag];
      const double d2 = 2 * bc.delta_cert;
      auto in_band = [&](double v, double lo, double hi) {
        return v >= lo + d2 && v < hi;
      };
      cs.fires = in_band(cs.sq, bc.cert_sq_lo, bc.cert_sq_hi) &&
                 in_band(cs.sid, bc.cert_id_lo, bc.cert_id_hi) &&
                 in_band(cs.sctx, bc.cert_ctx_lo, bc.cert_ctx_hi) &&
                 in_band(cs.flag, bc.cert_flag_lo, bc.cert_flag_hi);
      return cs;
    };
    for (double mult : {0.0, 3.0, 100.0}) {
      const int n = mult == 0.0 ? 1000 : 300;
      std::vector<double> vq, vi, vc, vf;
      int fires = 0;
      for (int i = 0; i < n; ++i) {
        CertStats cs = stat(discovery[i], mult, 11);
        vq.push_back(cs.sq);
        vi.push_back(cs.sid);
        vc.push_back(cs.sctx);
        vf.push_back(cs.flag);
        fires += cs.fires;
      }
      auto q = [&](std::vector<double>& v, const char* name) {
        std::sort(v.begin(), v.end());
        auto at = [&](double f) { return v[size_t(f * (v.size() - 1))]; };
        std::printf("    %-5s min %+7.3f p05 %+7.3f p50 %+7.3f p90 %+7.3f max %+7.3f\n",
                    name, v.front(), at(.05), at(.50), at(.90), v.back());
      };
      std::printf("  mult %5.1f (gate fires %d/%d):\n", mult, fires, n);
      q(vq, "sq");
      q(vi, "sid");
      q(vc, "sctx");
      q(vf, "flag");
    }
  }

  std::printf("== prior threshold sweep (coocc c*) ==\n");
  {
    std::vector<double> ys, ns;
    for (const auto& s : discovery)
      (s.ground_truth == GroundTruth::Yes ? ys : ns)
          .push_back(s.co_occurrence_score);
    auto frac_above = [](const std::vector<double>& v, double t) {
      int c = 0;
      for (double x : v) c += x > t;
      return double(c) / v.size();
    };
    for (double cstar = 0.82; cstar <= 0.955; cstar += 0.01) {
      double ry = frac_above(ys, cstar), rn = frac_above(ns, cstar);
      std::printf(
          "  c* %.2f: r_yes %.3f r_no(halluc) %.3f prior-only acc %.3f g_p %.4f\n",
          cstar, ry, rn, 0.5 * (1.0 - rn + ry),
          0.30 / (0.8 * 1.816 * cstar));
    }
  }

  std::printf("== microscope: final-row coordinates by layer ==\n");
  {
    ToyModel m = build_model(cfg, bc);
    auto count_q = [](const TaskSample& s) {
      int c = 0;
      for (int t : s.visual_tokens) c += t == s.query_object;
      return c;
    };
    const TaskSample* picks[4] = {nullptr, nullptr, nullptr, nullptr};
    for (const auto& s : discovery) {
      if (s.ground_truth == GroundTruth::Yes && count_q(s) == 1 && !picks[0])
        picks[0] = &s;
      if (s.ground_truth == GroundTruth::Yes && count_q(s) >= 4 && !picks[1])
        picks[1] = &s;
      if (s.ground_truth == GroundTruth::No && s.co_occurrence_score > 0.85 &&
          !picks[2])
        picks[2] = &s;
      if (s.ground_truth == GroundTruth::No && s.co_occurrence_score < 0.65 &&
          !picks[3])
        picks[3] = &s;
    }
    const char* names[4] = {"yes c=1", "yes c>=4", "no hi-co", "no lo-co"};
    for (int k = 0; k < 4; ++k) {
      if (!picks[k]) continue;
      const TaskSample& s = *picks[k];
      PatchSpec ps;
      ps.capture_hidden = true;
      ps.capture_components = false;
      ForwardRecord r = forward(m, s, &ps);
      int q = s.query_object - kFirstObject;
      std::printf("  %s (id %lld, coocc %.3f, cnt %d, clean %s):\n", names[k],
                  s.sample_id, s.co_occurrence_score, count_q(s),
                  outcome_name(r.outcome));
      std::printf("    %-5s %8s %8s %8s %8s %8s %6s %8s\n", "layer", "evid",
                  "gate", "bias", "bag_q", "Sbagctx", "r", "yes-no");
      for (int l = 0; l <= cfg.depth; ++l) {
        RowVectorXd xr = r.hidden_states[l].row(m.final_pos());
        double rms = std::sqrt(xr.squaredNorm() / xr.size() + 1e-12);
        RowVectorXd xf = rowops::rmsnorm(xr);
        double yn = xf.dot(m.unembed.row(kYesToken)) -
                    xf.dot(m.unembed.row(kNoToken));
        double sb = 0;
        for (int c = 0; c < kContextCount; ++c) sb += xr[coord::kBagCtx + c];
        std::printf("    %-5d %+8.3f %+8.3f %+8.3f %+8.3f %+8.3f %6.3f %+8.3f\n",
                    l, xr[coord::kEvid], xr[coord::kGate], xr[coord::kBias],
                    xr[coord::kBagId + q], sb, rms, yn);
      }
    }
  }

  std::printf("== prior-strength grid (discovery n=1000) ==\n");
  for (double s : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    ToyModelConfig c = cfg;
    c.prior_bias_strength = s;
    ToyModel m = build_model(c, bc);
    Rates r = measure_rates(m, discovery);
    std::printf("  strength %.1f: acc %.3f halluc %.3f miss %.3f\n", s,
                r.accuracy, r.halluc, r.miss);
  }

  std::printf("== g_p operating point (halluc on discovery-No, prior-only acc on eval) ==\n");
  for (double gp : {0.206, 0.209, 0.212, 0.215, 0.218, 0.221, 0.225}) {
    BuildConstants b2 = bc;
    b2.g_p = gp;
    ToyModel m = build_model(cfg, b2);
    Rates clean = measure_rates(m, discovery);
    PatchSpec sup;
    sup.scale[{m.integrator_layer, ComponentKind::Mlp}] = 0.0;
    Rates pr = measure_rates(m, evaluation, &sup);
    std::printf(
        "  g_p %.3f: halluc %.3f miss %.3f | prior-only eval acc %.3f halluc %.3f miss %.3f\n",
        gp, clean.halluc, clean.miss, pr.accuracy, pr.halluc, pr.miss);
  }

  ToyModel ref = build_model(cfg, bc);
  std::printf("landmarks: sanitizer L%d integrator L%d prior L%d monitor L%d\n",
              ref.sanitizer_layer, ref.integrator_layer, ref.prior_layer,
              ref.monitor_layer);

  {
    double smin = 1e9, smax = -1e9, ssum = 0;
    for (int i = 0; i < 50; ++i) {
      double sd = patchengine::visual_embedding_std(ref, discovery[i]);
      smin = std::min(smin, sd);
      smax = std::max(smax, sd);
      ssum += sd;
    }
    std::printf("sigma_visual over 50 samples: mean %.4f min %.4f max %.4f\n",
                ssum / 50, smin, smax);
  }

  std::printf("== corrupt accuracy (first 400 discovery) ==\n");
  std::vector<TaskSample> first400(discovery.begin(), discovery.begin() + 400);
  for (double mult : {0.0, 1.0, 2.0, 3.0, 5.0, 100.0}) {
    patchengine::CorruptionSpec spec;
    spec.noise_multiplier = mult;
    spec.noise_seed = 11;
    auto rep = patchengine::calibrate_noise(ref, first400, spec);
    std::printf(
        "  mult %5.1f: corrupt acc %.3f yes-frac %.3f collapse %d passed %d\n",
        mult, rep.corrupt_accuracy, rep.corrupt_yes_fraction,
        int(rep.constant_answer_collapse), int(rep.passed));
  }

  std::printf("== corrupt-yes microscope (mult 3) ==\n");
  {
    patchengine::CorruptionSpec cs;
    cs.noise_multiplier = 3.0;
    cs.noise_seed = 11;
    int shown = 0;
    for (const auto& s : first400) {
      auto noise = patchengine::corruption_noise(ref, s, cs);
      PatchSpec ps;
      ps.visual_noise = &noise;
      ps.capture_hidden = true;
      auto rec = forward(ref, s, &ps);
      if (!rec.answered_yes) continue;
      std::printf("  sample %lld gt %s margin %+0.3f\n", s.sample_id,
                  s.ground_truth == GroundTruth::Yes ? "yes" : "no",
                  rec.logits[0] - rec.logits[1]);
      std::printf("    row     evid     gate       sq     bagq        r\n");
      for (int l = 0; l <= cfg.depth; ++l) {
        const auto& H = rec.hidden_states[l];
        Eigen::VectorXd x = H.row(H.rows() - 1);
        double r = std::sqrt(x.squaredNorm() / cfg.width);
        std::printf("    %-3d %+8.3f %+8.3f %+8.3f %+8.3f %8.3f\n", l,
                    x[coord::kEvid], x[coord::kGate], x[coord::kSqBag],
                    x[coord::kBagId + s.query_object], r);
      }
      if (++shown >= 3) break;
    }
    if (shown == 0) std::printf("  (none in first 400)\n");
  }

  std::printf("== normalized IE by outcome (discovery n=1000, mult 3) ==\n");
  patchengine::CorruptionSpec spec;
  spec.noise_multiplier = 3.0;
  spec.noise_seed = 11;
  auto comps = ref.all_components();
  std::map<ComponentId, std::vector<double>> by_correct, by_halluc;
  int n_corr = 0, n_hall = 0, n_miss = 0, n_flag = 0;
  std::vector<double> te_store;
  for (const auto& s : discovery) {
    auto pack = patchengine::prepare_passes(ref, s, spec);
    auto tr = patchengine::run_trace(ref, s, pack, comps);
    te_store.push_back(tr.total_effect);
    if (tr.outcome == Outcome::Miss) {
      ++n_miss;
      continue;
    }
    bool flagged = false;
    for (const auto& c : comps) {
      auto nie = patchengine::normalized_ie(tr, c);
      if (!nie) {
        flagged = true;
        break;
      }
      (tr.outcome == Outcome::Correct ? by_correct : by_halluc)[c].push_back(
          *nie);
    }
    if (flagged) {
      ++n_flag;
      continue;
    }
    (tr.outcome == Outcome::Correct ? n_corr : n_hall) += 1;
  }
  std::printf("  groups: correct %d halluc %d miss %d te-flagged %d\n", n_corr,
              n_hall, n_miss, n_flag);
  {
    double tmin = 1e9, tmax = -1e9;
    int neg = 0;
    for (double t : te_store) {
      tmin = std::min(tmin, t);
      tmax = std::max(tmax, t);
      neg += t < 0;
    }
    std::printf("  TE: min %.3f max %.3f negative %d/%zu\n", tmin, tmax, neg,
                te_store.size());
  }
  {
    std::vector<std::string> rows;
    std::vector<double> pvals, dvals;
    for (const auto& c : comps) {
      auto& a = by_correct[c];
      auto& b = by_halluc[c];
      if (a.size() < 2 || b.size() < 2) continue;
      double ma = statkit::mean(a), mb = statkit::mean(b);
      double va = statkit::sample_variance(a), vb = statkit::sample_variance(b);
      double pooled = std::sqrt(((a.size() - 1) * va + (b.size() - 1) * vb) /
                                (a.size() + b.size() - 2));
      double d = pooled > 0 ? (ma - mb) / pooled : 0.0;
      auto t = statkit::welch_t(a, b);
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "  %-8s corr %+7.4f (sd %.4f) hall %+7.4f (sd %.4f) d %+6.2f p %.2e",
                    to_string(c).c_str(), ma, std::sqrt(va), mb, std::sqrt(vb),
                    d, t.p_value);
      rows.push_back(buf);
      pvals.push_back(t.p_value);
      dvals.push_back(d);
    }
    auto fdr = statkit::bh_adjust(pvals, 0.05);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const char* verdict = "";
      if (fdr.adjusted_p[i] <= 0.05 && std::fabs(dvals[i]) > 0.3)
        verdict = dvals[i] > 0 ? "  <- GROUNDING" : "  <- HALLUC";
      std::printf("%s p_adj %.2e%s\n", rows[i].c_str(), fdr.adjusted_p[i],
                  verdict);
    }
  }
  {
    // ratio-outlier diagnostic for the prior component
    ComponentId prior{ref.prior_layer, ComponentKind::Mlp};
    struct Ext { double nie, te; int idx; Outcome out; };
    std::vector<Ext> ex;
    int idx = 0;
    for (const auto& s : discovery) {
      auto pack = patchengine::prepare_passes(ref, s, spec);
      auto tr = patchengine::run_trace(ref, s, pack, {prior});
      auto nie = patchengine::normalized_ie(tr, prior);
      if (tr.outcome != Outcome::Miss && nie)
        ex.push_back({*nie, tr.total_effect, idx, tr.outcome});
      ++idx;
      if (idx >= 1000) break;
    }
    std::sort(ex.begin(), ex.end(), [](const Ext& a, const Ext& b) {
      return std::fabs(a.nie) > std::fabs(b.nie);
    });
    std::printf("  prior-mlp |nIE| extremes:\n");
    for (std::size_t i = 0; i < ex.size() && i < 8; ++i) {
      const auto& s = discovery[ex[i].idx];
      std::printf("    nie %+9.3f te %+8.3f gt %s out %s coocc %.3f\n",
                  ex[i].nie, ex[i].te,
                  s.ground_truth == GroundTruth::Yes ? "yes" : "no ",
                  ex[i].out == Outcome::Correct ? "corr" : "hall",
                  s.co_occurrence_score);
    }
  }

  std::printf("== lens trajectory: mean delta by layer ==\n");
  {
    std::vector<double> sum_h(size_t(cfg.depth) + 1, 0.0);
    std::vector<double> sum_c(size_t(cfg.depth) + 1, 0.0);
    int nh = 0, nc = 0;
    for (const auto& s : evaluation) {
      PatchSpec ps;
      ps.capture_hidden = true;
      ps.capture_components = false;
      ForwardRecord r = forward(ref, s, &ps);
      if (s.ground_truth == GroundTruth::No && r.outcome == Outcome::Hallucinating) {
        for (int l = 0; l <= cfg.depth; ++l)
          sum_h[l] += lens_delta(ref, r.hidden_states[l], s);
        ++nh;
      } else if (r.outcome == Outcome::Correct) {
        for (int l = 0; l <= cfg.depth; ++l)
          sum_c[l] += lens_delta(ref, r.hidden_states[l], s);
        ++nc;
      }
    }
    std::printf("  halluc n=%d:", nh);
    for (int l = 0; l <= cfg.depth; ++l) std::printf(" %+.3f", sum_h[l] / nh);
    std::printf("\n  correct n=%d:", nc);
    for (int l = 0; l <= cfg.depth; ++l) std::printf(" %+.3f", sum_c[l] / nc);
    std::printf("\n");
  }

  std::printf("== suppression previews (evaluation n=400) ==\n");
  {
    Rates base = measure_rates(ref, evaluation);
    std::printf("  baseline: acc %.3f halluc %.3f\n", base.accuracy, base.halluc);
    PatchSpec sp;
    sp.scale[{ref.prior_layer, ComponentKind::Mlp}] = 0.0;
    Rates r = measure_rates(ref, evaluation, &sp);
    std::printf("  prior mlp x0: acc %.3f halluc %.3f\n", r.accuracy, r.halluc);
    PatchSpec sg;
    sg.scale[{ref.integrator_layer, ComponentKind::Mlp}] = 0.0;
    r = measure_rates(ref, evaluation, &sg);
    std::printf("  integrator mlp x0: acc %.3f halluc %.3f\n", r.accuracy,
                r.halluc);
    PatchSpec sb;
    sb.scale[{ref.integrator_layer, ComponentKind::Mlp}] = 0.0;
    sb.scale[{0, ComponentKind::Attention}] = 0.0;
    r = measure_rates(ref, evaluation, &sb);
    std::printf("  integrator+copy x0: acc %.3f halluc %.3f\n", r.accuracy,
                r.halluc);
  }

  std::printf("== monitor-head probe signal (evaluation, No-gt) ==\n");
  {
    std::vector<VectorXd> xs;
    std::vector<int> ys;
    for (const auto& s : evaluation) {
      if (s.ground_truth != GroundTruth::No) continue;
      PatchSpec ps;
      ps.capture_head_inputs = true;
      ps.capture_components = false;
      ForwardRecord r = forward(ref, s, &ps);
      xs.push_back(r.head_pre_wo.at({ref.monitor_layer, 0}));
      ys.push_back(r.outcome == Outcome::Hallucinating ? 1 : 0);
    }
    double m1 = 0, m0 = 0;
    int c1 = 0, c0 = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (ys[i]) {
        m1 += xs[i][0];
        ++c1;
      } else {
        m0 += xs[i][0];
        ++c0;
      }
    }
    std::printf("  pre-Wo dim0: halluc %+0.4f (n=%d) correct %+0.4f (n=%d)\n",
                c1 ? m1 / c1 : 0.0, c1, c0 ? m0 / c0 : 0.0, c0);
    bool both = c0 > 0 && c1 > 0;
    if (both) {
      std::vector<std::vector<double>> X(xs.size());
      for (size_t i = 0; i < xs.size(); ++i)
        X[i].assign(xs[i].data(), xs[i].data() + xs[i].size());
      auto probe = statkit::fit_logistic(X, ys, /*l2=*/1e-3,
                                         /*class_weighted=*/true,
                                         /*holdout_fraction=*/0.2, /*seed=*/3);
      std::printf("  monitor-head logistic val acc: %.3f\n",
                  probe.validation_accuracy);
    } else {
      std::printf("  probe skipped: single outcome class\n");
    }
  }

  std::printf("== duplicated-pathway variant ==\n");
  {
    ToyModel dup = build_duplicate_pathway_model(cfg, bc);
    std::printf("  layers: int1 L%d int2 L%d saturator L%d\n",
                dup.integrator_layer, dup.integrator2_layer,
                dup.saturator_layer);
    auto cpa_samples = generate_task(task_seed, 400, Split::Cpa, bc);
    Rates base = measure_rates(dup, cpa_samples);
    std::printf("  clean: acc %.3f halluc %.3f miss %.3f\n", base.accuracy,
                base.halluc, base.miss);
    std::vector<TaskSample> yes;
    for (const auto& s : cpa_samples)
      if (s.ground_truth == GroundTruth::Yes) yes.push_back(s);
    std::printf("  yes samples: %zu\n", yes.size());
    ComponentId i1{dup.integrator_layer, ComponentKind::Mlp};
    ComponentId i2{dup.integrator2_layer, ComponentKind::Mlp};
    double rsum = 0, rmin = 1e9, rmax = -1e9;
    int used = 0;
    for (const auto& s : yes) {
      if (used == 200) break;
      auto pack = patchengine::prepare_passes(dup, s, spec);
      auto tr = patchengine::run_trace(dup, s, pack, {i1, i2});
      auto jt = patchengine::run_joint(dup, s, pack, {i1, i2});
      double ie1 = patchengine::indirect_effect(tr, i1);
      double ie2 = patchengine::indirect_effect(tr, i2);
      double joint_ie = jt.delta_joint - tr.delta_corrupt;
      double denom = std::fabs(ie1) + std::fabs(ie2);
      if (denom == 0) continue;
      double ratio = std::fabs(joint_ie) / denom;
      rsum += ratio;
      rmin = std::min(rmin, ratio);
      rmax = std::max(rmax, ratio);
      ++used;
    }
    std::printf("  magnitude ratio over %d yes samples: mean %.4f min %.4f max %.4f\n",
                used, rsum / used, rmin, rmax);
  }
  return 0;
}
