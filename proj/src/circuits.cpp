#include "circuitscope/circuits.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "circuitscope/errors.hpp"

namespace circuitscope::circuits {

namespace pe = patchengine;
namespace sk = statkit;

std::string to_string(Pathway p) {
  return p == Pathway::Grounding ? "grounding" : "hallucination";
}

std::string to_string(MicroVerdict v) {
  switch (v) {
    case MicroVerdict::Negligible: return "negligible";
    case MicroVerdict::Correlated: return "correlated";
    default: return "inconclusive";
  }
}

StatScan component_stats(const std::vector<SampleTrace>& traces,
                         double epsilon) {
  if (traces.empty()) throw ConfigError("component_stats: no traces");

  std::vector<ComponentId> comps;
  for (const auto& [c, v] : traces.front().delta_patched) comps.push_back(c);
  if (comps.empty()) throw ConfigError("component_stats: traces carry no components");
  for (const auto& t : traces) {
    if (t.delta_patched.size() != comps.size())
      throw ConfigError("component_stats: component set differs across traces");
    for (const auto& c : comps)
      if (!t.delta_patched.count(c))
        throw ConfigError("component_stats: component set differs across traces");
  }

  int depth = 0;
  for (const auto& c : comps) depth = std::max(depth, c.layer + 1);

  // one normalized-IE vector pair per component; a trace contributes to all
  // components or to none (the |TE| exclusion is a per-sample property)
  std::vector<std::vector<double>> correct(comps.size()), halluc(comps.size());
  int n_excluded = 0;
  for (const auto& t : traces) {
    if (t.outcome == toyvlm::Outcome::Miss) continue;
    if (!pe::normalized_ie(t, comps.front(), epsilon)) {
      ++n_excluded;
      continue;
    }
    bool is_correct = t.outcome == toyvlm::Outcome::Correct;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      double nie = *pe::normalized_ie(t, comps[i], epsilon);
      (is_correct ? correct[i] : halluc[i]).push_back(nie);
    }
  }

  std::ostringstream deficient;
  if (correct.front().size() < 2)
    deficient << "Correct group has " << correct.front().size() << " trace(s)";
  if (halluc.front().size() < 2) {
    if (deficient.tellp() > 0) deficient << "; ";
    deficient << "Hallucinating group has " << halluc.front().size() << " trace(s)";
  }
  if (deficient.tellp() > 0)
    throw ConfigError("component_stats: " + deficient.str() + "; need >= 2 in each");

  StatScan scan;
  scan.model_depth = depth;
  scan.n_te_excluded = n_excluded;
  std::vector<double> p_raw(comps.size());
  for (std::size_t i = 0; i < comps.size(); ++i) {
    sk::TestResult w = sk::welch_t(correct[i], halluc[i]);
    ComponentStat s;
    s.component = comps[i];
    s.cohens_d = w.effect_size.value_or(0.0);
    s.p_raw = w.p_value;
    s.mean_ie_correct = sk::mean(correct[i]);
    s.mean_ie_halluc = sk::mean(halluc[i]);
    s.n_correct = static_cast<int>(correct[i].size());
    s.n_halluc = static_cast<int>(halluc[i].size());
    p_raw[i] = w.p_value;
    scan.stats.push_back(s);
  }
  // correction scope: the 2*depth tests of this one model, nothing else
  sk::FdrResult fdr = sk::bh_adjust(p_raw, 0.05);
  for (std::size_t i = 0; i < comps.size(); ++i)
    scan.stats[i].p_adjusted = fdr.adjusted_p[i];
  return scan;
}

namespace {

Circuit apply_thresholds(const StatScan& scan, const std::string& model_id,
                         double alpha, double d_min) {
  Circuit c;
  c.model_id = model_id;
  c.model_depth = scan.model_depth;
  c.alpha = alpha;
  c.d_min = d_min;
  c.n_te_excluded = scan.n_te_excluded;
  for (const auto& s : scan.stats) {
    if (s.p_adjusted < alpha && std::abs(s.cohens_d) > d_min) {
      c.components.push_back(s);
      c.pathway[s.component] =
          s.cohens_d > 0.0 ? Pathway::Grounding : Pathway::Hallucination;
    }
  }
  return c;
}

}  // namespace

std::vector<ComponentId> pathway_members(const Circuit& c, Pathway p) {
  std::vector<ComponentId> out;
  for (const auto& [id, path] : c.pathway)
    if (path == p) out.push_back(id);
  return out;
}

Circuit extract_circuit(const std::string& model_id,
                        const std::vector<SampleTrace>& traces, double alpha,
                        double d_min) {
  return apply_thresholds(component_stats(traces), model_id, alpha, d_min);
}

double jaccard(const std::vector<ComponentId>& a,
               const std::vector<ComponentId>& b) {
  std::set<ComponentId> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::set<ComponentId> uni = sa;
  uni.insert(sb.begin(), sb.end());
  if (uni.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& c : sa) inter += sb.count(c);
  return static_cast<double>(inter) / static_cast<double>(uni.size());
}

SensitivityReport threshold_sensitivity(const std::string& model_id,
                                        const std::vector<SampleTrace>& traces,
                                        double alpha,
                                        const std::vector<double>& d_grid) {
  StatScan scan = component_stats(traces);
  Circuit ref = apply_thresholds(scan, model_id, alpha, 0.3);
  auto ref_g = pathway_members(ref, Pathway::Grounding);
  auto ref_h = pathway_members(ref, Pathway::Hallucination);

  SensitivityReport rep;
  rep.model_id = model_id;
  rep.both_pathways_retain_five = !d_grid.empty();
  for (double d_min : d_grid) {
    SensitivityEntry e;
    e.d_min = d_min;
    e.circuit = apply_thresholds(scan, model_id, alpha, d_min);
    auto g = pathway_members(e.circuit, Pathway::Grounding);
    auto h = pathway_members(e.circuit, Pathway::Hallucination);
    e.jaccard_grounding = jaccard(g, ref_g);
    e.jaccard_hallucination = jaccard(h, ref_h);
    if (g.size() < 5 || h.size() < 5) rep.both_pathways_retain_five = false;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

DepthProfile depth_normalize(const Circuit& circuit, int model_depth) {
  if (model_depth < 2)
    throw ConfigError("depth_normalize: model_depth must be >= 2");
  for (const auto& s : circuit.components)
    if (s.component.layer < 0 || s.component.layer >= model_depth)
      throw ConfigError("depth_normalize: member layer outside the model");

  DepthProfile prof;
  prof.model_id = circuit.model_id;
  const int n = prof.n_grid;
  auto grid_index = [&](double depth) {
    auto i = static_cast<int>(std::llround(depth * (n - 1)));
    return std::clamp(i, 0, n - 1);
  };

  std::map<ComponentId, double> member_d;
  for (const auto& s : circuit.components) {
    double depth = static_cast<double>(s.component.layer) / (model_depth - 1);
    prof.members.push_back({s.component, depth, s.cohens_d});
    member_d[s.component] = s.cohens_d;
  }

  // nearest-neighbor accumulation; cells hit by several components average
  auto resample = [&](bool members_only) {
    std::vector<double> sum(n, 0.0);
    std::vector<int> count(n, 0);
    for (int layer = 0; layer < model_depth; ++layer) {
      for (auto kind : {toyvlm::ComponentKind::Attention, toyvlm::ComponentKind::Mlp}) {
        ComponentId c{layer, kind};
        auto it = member_d.find(c);
        if (members_only && it == member_d.end()) continue;
        double effect = it == member_d.end() ? 0.0 : it->second;
        int i = grid_index(static_cast<double>(layer) / (model_depth - 1));
        sum[i] += effect;
        count[i] += 1;
      }
    }
    std::vector<double> grid(n, 0.0);
    for (int i = 0; i < n; ++i)
      if (count[i] > 0) grid[i] = sum[i] / count[i];
    return grid;
  };
  prof.grid_all = resample(false);
  prof.grid_members = resample(true);
  return prof;
}

MacroResult macro_compare(const Circuit& a, const Circuit& b) {
  if (a.components.empty() || b.components.empty())
    throw ConfigError("macro_compare: both circuits must be non-empty");
  if (a.model_depth < 2 || b.model_depth < 2)
    throw ConfigError("macro_compare: circuits need model_depth >= 2");

  MacroResult r;
  auto ha = pathway_members(a, Pathway::Hallucination);
  auto hb = pathway_members(b, Pathway::Hallucination);
  if (ha.empty() || hb.empty()) {
    r.skipped = true;
    r.notice = "hallucination pathway empty for " +
               (ha.empty() ? a.model_id : b.model_id) + "; comparison skipped";
    return r;
  }

  auto split = [](const std::vector<ComponentId>& members, int depth_total,
                  long long& early, long long& late) {
    for (const auto& c : members) {
      double depth = static_cast<double>(c.layer) / (depth_total - 1);
      (depth <= 0.5 ? early : late) += 1;
    }
  };
  split(ha, a.model_depth, r.table[0], r.table[1]);
  split(hb, b.model_depth, r.table[2], r.table[3]);
  r.test = sk::fisher_exact(r.table[0], r.table[1], r.table[2], r.table[3]);
  r.consistent_with_shared_pattern = r.test.p_value > 0.05;
  r.notice =
      "2x2 cells = model x early/late hallucination components with the split "
      "at relative depth 0.5; other cell constructions are plausible";
  return r;
}

MicroResult micro_compare(const DepthProfile& a, const DepthProfile& b,
                          double bound) {
  if (a.n_grid != b.n_grid || a.grid_all.size() != b.grid_all.size() ||
      static_cast<int>(a.grid_all.size()) != a.n_grid)
    throw ConfigError("micro_compare: profiles are not on the same grid");

  MicroResult r;
  if (sk::sample_variance(a.grid_all) == 0.0 ||
      sk::sample_variance(b.grid_all) == 0.0) {
    r.notice = "zero-variance profile: correlation undefined";
    return r;
  }
  int n = a.n_grid;
  double rho = sk::pearson_r(a.grid_all, b.grid_all);
  r.r = rho;
  r.tost = sk::tost_equivalence(rho, n, bound);
  if (std::abs(rho) >= 1.0) {
    r.p_nonzero = 0.0;
  } else {
    double t = rho * std::sqrt((n - 2) / (1.0 - rho * rho));
    r.p_nonzero = sk::student_t_two_sided_p(t, n - 2);
  }
  if (r.tost.p_value < 0.05)
    r.verdict = MicroVerdict::Negligible;
  else if (std::abs(rho) >= bound && r.p_nonzero < 0.05)
    r.verdict = MicroVerdict::Correlated;
  else
    r.verdict = MicroVerdict::Inconclusive;
  return r;
}

}  // namespace circuitscope::circuits
