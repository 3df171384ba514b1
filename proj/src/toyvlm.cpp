#include "circuitscope/toyvlm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "circuitscope/errors.hpp"
#include "circuitscope/rng.hpp"

namespace circuitscope::toyvlm {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// names

std::string to_string(const ComponentId& c) {
  return "L" + std::to_string(c.layer) +
         (c.kind == ComponentKind::Attention ? ".attn" : ".mlp");
}

ComponentId component_from_string(const std::string& s) {
  auto dot = s.find('.');
  if (s.size() < 4 || s[0] != 'L' || dot == std::string::npos)
    throw ConfigError("bad component name: " + s);
  ComponentId c;
  c.layer = std::stoi(s.substr(1, dot - 1));
  std::string kind = s.substr(dot + 1);
  if (kind == "attn")
    c.kind = ComponentKind::Attention;
  else if (kind == "mlp")
    c.kind = ComponentKind::Mlp;
  else
    throw ConfigError("bad component kind: " + s);
  return c;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Discovery: return "discovery";
    case Split::Cpa: return "cpa";
    case Split::Lens: return "lens";
    case Split::Selection: return "selection";
    case Split::Evaluation: return "evaluation";
  }
  return "?";
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Correct: return "correct";
    case Outcome::Hallucinating: return "hallucinating";
    case Outcome::Miss: return "miss";
  }
  return "?";
}

Outcome classify_outcome(GroundTruth gt, bool answered_yes) {
  bool truth_yes = gt == GroundTruth::Yes;
  if (answered_yes == truth_yes) return Outcome::Correct;
  return truth_yes ? Outcome::Miss : Outcome::Hallucinating;
}

std::vector<ComponentId> ToyModel::all_components() const {
  std::vector<ComponentId> out;
  for (int l = 0; l < cfg.depth; ++l) {
    out.push_back({l, ComponentKind::Attention});
    out.push_back({l, ComponentKind::Mlp});
  }
  return out;
}

// ---------------------------------------------------------------------------
// shared context codes

namespace {
// fixed internal seed: the task generator and every model builder must agree
// on the co-occurrence geometry, independently of task and model seeds
constexpr std::uint64_t kContextSeed = 0x0c0c0a5eedf00dull;
}  // namespace

Eigen::MatrixXd context_codes(double leak) {
  MatrixXd g(kObjectCount, kContextCount);
  for (int obj = 0; obj < kObjectCount; ++obj) {
    SplitMix64 rng(derive_seed(kContextSeed, "context-codes", obj));
    VectorXd v = VectorXd::Zero(kContextCount);
    v[obj / kContextCount] = 1.0;
    for (int k = 0; k < kContextCount; ++k)
      v[k] += leak * std::fabs(rng.gaussian());
    v /= v.norm();
    g.row(obj) = v.transpose();
  }
  return g;
}

// ---------------------------------------------------------------------------
// task generation

namespace {
constexpr int kVisualSlots = 16;
constexpr long long kSplitBase = 10'000'000;
}  // namespace

std::vector<TaskSample> generate_task(std::uint64_t seed, int n, Split split) {
  return generate_task(seed, n, split, BuildConstants{});
}

std::vector<TaskSample> generate_task(std::uint64_t seed, int n, Split split,
                                      const BuildConstants& bc) {
  if (n < 1) throw ConfigError("generate_task: n >= 1 required");
  const MatrixXd gamma = context_codes(bc.ctx_leak);
  std::vector<TaskSample> out;
  out.reserve(n);
  const long long base = static_cast<long long>(split) * kSplitBase;

  for (int i = 0; i < n; ++i) {
    const long long id = base + i;
    SplitMix64 rng(derive_seed(seed, "task", static_cast<std::uint64_t>(id)));
    const bool want_yes = (id % 2 == 0);

    int ctx = static_cast<int>(rng.below(kContextCount));
    int absent_sibling = static_cast<int>(rng.below(4));
    std::vector<int> distinct;  // object indices 0..15, in-context first
    for (int j = 0; j < 4; ++j)
      if (j != absent_sibling) distinct.push_back(ctx * 4 + j);
    int ctx2 = (ctx + 1 + static_cast<int>(rng.below(kContextCount - 1))) %
               kContextCount;
    distinct.push_back(ctx2 * 4 + static_cast<int>(rng.below(4)));

    // multiplicities: every distinct object at least once, remaining slots
    // uniform with at most 5 instances per object (keeps any single object
    // from dominating the scene average)
    std::vector<int> objs = distinct;
    std::vector<int> mult(distinct.size(), 1);
    for (int k = static_cast<int>(objs.size()); k < kVisualSlots; ++k) {
      std::size_t pick;
      do {
        pick = rng.below(distinct.size());
      } while (mult[pick] >= 5);
      ++mult[pick];
      objs.push_back(distinct[pick]);
    }
    for (std::size_t k = objs.size(); k-- > 1;) {
      std::size_t j = rng.below(k + 1);
      std::swap(objs[k], objs[j]);
    }

    RowVectorXd mean_gamma = RowVectorXd::Zero(kContextCount);
    for (int o : objs) mean_gamma += gamma.row(o);
    mean_gamma /= static_cast<double>(kVisualSlots);

    int query;
    if (want_yes) {
      query = distinct[rng.below(3)];  // a present in-context object
    } else {
      // adversarial negative: absent object drawn from the top co-occurrence
      // tail of this scene's absent candidates
      std::vector<int> absent;
      for (int o = 0; o < kObjectCount; ++o)
        if (std::find(distinct.begin(), distinct.end(), o) == distinct.end())
          absent.push_back(o);
      std::stable_sort(absent.begin(), absent.end(), [&](int a, int b) {
        double sa = gamma.row(a).dot(mean_gamma);
        double sb = gamma.row(b).dot(mean_gamma);
        if (sa != sb) return sa > sb;
        return a < b;
      });
      std::size_t tail = std::max<std::size_t>(
          1, static_cast<std::size_t>((1.0 - bc.adversarial_percentile) *
                                          static_cast<double>(absent.size()) +
                                      1e-9));
      query = absent[rng.below(tail)];
    }

    TaskSample s;
    s.sample_id = id;
    s.visual_tokens.reserve(kVisualSlots);
    for (int o : objs) s.visual_tokens.push_back(kFirstObject + o);
    s.query_object = kFirstObject + query;
    s.ground_truth = want_yes ? GroundTruth::Yes : GroundTruth::No;
    s.co_occurrence_score = gamma.row(query).dot(mean_gamma);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// weight construction

namespace {

void fill_noise(MatrixXd& m, SplitMix64& rng, double scale) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.gaussian();
}

void fill_noise(VectorXd& v, SplitMix64& rng, double scale) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.gaussian();
}

// Gadget units need exact input rows: the step/bilinear identities divide by
// delta^2-scale coefficients, so any per-unit discrepancy in w1 or b1 would
// be amplified by orders of magnitude. Structure therefore replaces the
// random base in the rows it occupies (w2 keeps its base columns — output
// cross-talk scales with activations, not with 1/delta).
void claim_unit(LayerWeights& L, int unit) {
  L.w1.row(unit).setZero();
  L.b1[unit] = 0.0;
  // Step units far outside their band have unbounded quadratic activations;
  // leaving base noise in this unit's output column would turn that into
  // O(1) junk writes on corrupted runs, so the column is claimed as well.
  L.w2.col(unit).setZero();
}

// Four squared-relu units computing scale * x[a] * x[b] into out_coord.
// Each unit also reads w_gate * (GATE - g_on * BIAS): on a certified-clean
// run the gate carries g_on and the bias coordinate carries 1, both divided
// by the same rms, so the term vanishes exactly and the bilinear is exact;
// without the certificate the term is a large negative shift that holds all
// four units at zero.
int add_bilinear_pair(LayerWeights& L, int unit, int a, int b, double g_in,
                      double scale, int out_coord, double w_gate, double g_on) {
  static constexpr double sa[4] = {+1, -1, +1, -1};
  static constexpr double sb[4] = {+1, -1, -1, +1};
  static constexpr double so[4] = {+1, +1, -1, -1};
  for (int k = 0; k < 4; ++k) {
    claim_unit(L, unit + k);
    L.w1(unit + k, a) += g_in * sa[k];
    L.w1(unit + k, b) += g_in * sb[k];
    if (w_gate != 0.0) {
      L.w1(unit + k, coord::kGate) += w_gate;
      L.w1(unit + k, coord::kBias) += -w_gate * g_on;
    }
    L.w2(out_coord, unit + k) += so[k] * scale / (4.0 * g_in * g_in);
  }
  return unit + 4;
}

// three units forming an exact flat 0/1 indicator of sum(x[cs]) >= t
// (fully on past t + 2 delta); firing adds out_scale to out_coord
int add_step01(LayerWeights& L, int unit,
               const std::vector<std::pair<int, double>>& cs, double t,
               double delta, double out_scale, int out_coord) {
  static constexpr double co[3] = {1.0, -2.0, 1.0};
  for (int k = 0; k < 3; ++k) {
    claim_unit(L, unit + k);
    for (auto [c, w] : cs) L.w1(unit + k, c) += w;
    L.b1(unit + k) += -(t + k * delta);
    L.w2(out_coord, unit + k) += co[k] * out_scale / (2.0 * delta * delta);
  }
  return unit + 3;
}

// four units: 0 below lo, exactly out_scale * (hi - lo) above hi + delta
int add_saturating_plateau(LayerWeights& L, int unit, int c, double lo,
                           double hi, double delta, double out_scale,
                           int out_coord) {
  const double w = out_scale / (2.0 * delta);
  const double offs[4] = {lo, lo + delta, hi, hi + delta};
  const double sgn[4] = {+1, -1, -1, +1};
  for (int k = 0; k < 4; ++k) {
    claim_unit(L, unit + k);
    L.w1(unit + k, c) += 1.0;
    L.b1(unit + k) += -offs[k];
    L.w2(out_coord, unit + k) += sgn[k] * w;
  }
  return unit + 4;
}

void validate_config(const ToyModelConfig& cfg) {
  if (cfg.depth < 6) throw ConfigError("toy model: depth >= 6 required");
  if (cfg.width < coord::kDecoyEnd)
    throw ConfigError("toy model: width >= 64 required");
  if (cfg.heads < 3 || cfg.width % cfg.heads != 0)
    throw ConfigError("toy model: >= 3 heads dividing width required");
  if (cfg.width / cfg.heads < kObjectCount)
    throw ConfigError("toy model: head dim >= 16 required");
  if (cfg.vocab_size < kFirstObject + kObjectCount)
    throw ConfigError("toy model: vocab must cover answer + object tokens");
  if (cfg.visual_token_count != kVisualSlots)
    throw ConfigError("toy model: generator produces 16-slot scenes");
  if (cfg.prior_bias_strength < 0.0 || cfg.prior_bias_strength > 1.0)
    throw ConfigError("toy model: prior_bias_strength in [0, 1]");
}

ToyModel build_base(const ToyModelConfig& cfg, const BuildConstants& bc) {
  validate_config(cfg);
  ToyModel m;
  m.cfg = cfg;
  m.bc = bc;

  const int w = cfg.width;
  const int hidden = 4 * w;
  const int n_pos = cfg.visual_token_count + 1;

  {
    SplitMix64 rng(derive_seed(cfg.seed, "embed"));
    m.embed.resize(cfg.vocab_size, w);
    fill_noise(m.embed, rng, bc.eps_base);
  }
  {
    SplitMix64 rng(derive_seed(cfg.seed, "pos"));
    m.pos.resize(n_pos, w);
    fill_noise(m.pos, rng, bc.eps_base);
  }
  {
    SplitMix64 rng(derive_seed(cfg.seed, "unembed"));
    m.unembed.resize(cfg.vocab_size, w);
    fill_noise(m.unembed, rng, bc.eps_unembed);
  }
  m.layers.resize(cfg.depth);
  for (int l = 0; l < cfg.depth; ++l) {
    SplitMix64 rng(derive_seed(cfg.seed, "layer", l));
    LayerWeights& L = m.layers[l];
    L.wq.resize(w, w);
    L.wk.resize(w, w);
    L.wv.resize(w, w);
    L.wo.resize(w, w);
    L.w1.resize(hidden, w);
    L.b1.resize(hidden);
    L.w2.resize(w, hidden);
    fill_noise(L.wq, rng, bc.eps_base);
    fill_noise(L.wk, rng, bc.eps_base);
    fill_noise(L.wv, rng, bc.eps_base);
    fill_noise(L.wo, rng, bc.eps_base);
    fill_noise(L.w1, rng, bc.eps_base);
    fill_noise(L.b1, rng, bc.eps_base);
    fill_noise(L.w2, rng, bc.eps_base);
  }

  // token embeddings: identity one-hot + context code + decoy pattern
  const MatrixXd gamma = context_codes(bc.ctx_leak);
  SplitMix64 decoy_rng(derive_seed(kContextSeed, "decoys"));
  for (int obj = 0; obj < kObjectCount; ++obj) {
    int tok = kFirstObject + obj;
    m.embed(tok, coord::kId + obj) += bc.s_id;
    for (int c = 0; c < kContextCount; ++c)
      m.embed(tok, coord::kCtx + c) += bc.s_ctx * gamma(obj, c);
    for (int c = coord::kDecoy; c < coord::kDecoyEnd; ++c)
      m.embed(tok, c) += (decoy_rng.next() & 1 ? bc.d_scale : -bc.d_scale);
  }

  // positions: constant bias everywhere, flags by role
  for (int p = 0; p < n_pos; ++p) m.pos(p, coord::kBias) += 1.0;
  for (int p = 0; p < n_pos - 1; ++p) m.pos(p, coord::kFlagVis) += bc.f_vis;
  m.pos(n_pos - 1, coord::kFlagQry) += bc.f_qry;

  // layer 0 attention: visual-copy heads (identity bag, context bag)
  {
    LayerWeights& L = m.layers[0];
    const int dh = m.head_dim();
    // head 0: identity copy
    L.wq(coord::kBias, 0 * dh + 0) += bc.rho_q;
    L.wk(coord::kFlagVis, 0 * dh + 0) += bc.rho_k;
    for (int c = 0; c < kObjectCount; ++c) {
      L.wv(coord::kId + c, 0 * dh + c) += bc.s_v;
      L.wo(0 * dh + c, coord::kBagId + c) += bc.s_o;
    }
    // head 1: context copy
    L.wq(coord::kBias, 1 * dh + 0) += bc.rho_q;
    L.wk(coord::kFlagVis, 1 * dh + 0) += bc.rho_k;
    for (int c = 0; c < kContextCount; ++c) {
      L.wv(coord::kCtx + c, 1 * dh + c) += bc.s_v;
      L.wo(1 * dh + c, coord::kBagCtx + c) += bc.s_o;
    }
    // head 2: visual-flag import (cleanness witness)
    L.wq(coord::kBias, 2 * dh + 0) += bc.rho_q;
    L.wk(coord::kFlagVis, 2 * dh + 0) += bc.rho_k;
    L.wv(coord::kFlagVis, 2 * dh + 0) += bc.s_v;
    L.wo(2 * dh + 0, coord::kBagFlag) += bc.s_o;
  }

  // squared-magnitude stage: one unit per identity-bag coordinate writes its
  // squared post-norm value into the scratch coordinate. Clean scenes give a
  // small bounded sum (counts total 16); corruption junk gives a chi-square
  // scale value an order of magnitude larger.
  {
    LayerWeights& L = m.layers[1];
    for (int c = 0; c < kObjectCount; ++c) {
      claim_unit(L, c);
      L.w1(c, coord::kBagId + c) += 1.0;
      L.w2(coord::kSqBag, c) += bc.g_sq;
    }
  }

  // sanitizer MLP: band certificates. Each imported statistic lives in a
  // tight band on clean scenes (averages of unit-norm positive codes / exact
  // position flags) and is thrown out of its band by corruption noise. Each
  // band contributes a quarter of the gate; the gadget dead-zone downstream
  // only cancels when all four fire, so partial certification still leaves
  // the evidence circuits silent.
  {
    m.sanitizer_layer = 2;
    LayerWeights& L = m.layers[m.sanitizer_layer];
    std::vector<std::pair<int, double>> bagctx, bagid;
    for (int c = 0; c < kContextCount; ++c)
      bagctx.push_back({coord::kBagCtx + c, 1.0});
    for (int c = 0; c < kObjectCount; ++c)
      bagid.push_back({coord::kBagId + c, 1.0});
    const double q = bc.g_on / 4.0;
    int unit = 0;
    auto band = [&](const std::vector<std::pair<int, double>>& cs, double lo,
                    double hi) {
      unit = add_step01(L, unit, cs, lo, bc.delta_cert, q, coord::kGate);
      unit = add_step01(L, unit, cs, hi, bc.delta_cert, -q, coord::kGate);
    };
    band({{coord::kSqBag, 1.0}}, bc.cert_sq_lo, bc.cert_sq_hi);
    band(bagid, bc.cert_id_lo, bc.cert_id_hi);
    band(bagctx, bc.cert_ctx_lo, bc.cert_ctx_hi);
    band({{coord::kBagFlag, 1.0}}, bc.cert_flag_lo, bc.cert_flag_hi);
  }
  return m;
}

void add_monitor_head(ToyModel& m, int layer) {
  const BuildConstants& bc = m.bc;
  LayerWeights& L = m.layers[layer];
  const int dh = m.head_dim();
  L.wq(coord::kBias, 0 * dh + 0) += bc.rho_mq;
  L.wk(coord::kFlagQry, 0 * dh + 0) += bc.rho_mk;
  L.wv(coord::kEvid, 0 * dh + 0) += bc.v_evid;
  // Junk guard: the visual-flag coordinate is ~0 at the final position but
  // 1 + noise on visual rows, so any noise-selected visual import lands on a
  // large positive constant and the (negative-gain) echo pushes toward the
  // default answer instead of flipping it.
  L.wv(coord::kFlagVis, 0 * dh + 0) += bc.v_flag;
  for (int c = 0; c < kContextCount; ++c)
    L.wv(coord::kBagCtx + c, 0 * dh + 1 + c) += bc.v_ctx;
  L.wo(0 * dh + 0, coord::kEvid) += bc.delta_echo;
}

// Junk-mass dampers in the given layer's MLP. Six step detectors fire when
// an imported bag statistic leaves its clean range (either side) and each
// subtracts a fixed amount of evidence. Exactly zero on clean scenes; on
// corrupted runs they force the default-No margin below every clean one.
void add_junk_dampers(ToyModel& m, int layer) {
  const BuildConstants& bc = m.bc;
  LayerWeights& L = m.layers[layer];
  std::vector<std::pair<int, double>> sid;
  for (int c = 0; c < kObjectCount; ++c) sid.push_back({coord::kBagId + c, 1.0});
  int unit = static_cast<int>(L.w1.rows()) - 18;
  auto lo_hi = [&](std::vector<std::pair<int, double>> cs, double lo,
                   double hi) {
    std::vector<std::pair<int, double>> neg;
    for (auto [c, w] : cs) neg.push_back({c, -w});
    unit = add_step01(L, unit, neg, -lo, bc.damp_delta, -bc.damp_write,
                      coord::kEvid);
    unit = add_step01(L, unit, cs, hi, bc.damp_delta, -bc.damp_write,
                      coord::kEvid);
  };
  lo_hi({{coord::kSqBag, 1.0}}, bc.damp_sq_lo, bc.damp_sq_hi);
  lo_hi(sid, bc.damp_sid_lo, bc.damp_sid_hi);
  lo_hi({{coord::kBagFlag, 1.0}}, bc.damp_flag_lo, bc.damp_flag_hi);
}

}  // namespace

ToyModel build_model(const ToyModelConfig& cfg) {
  return build_model(cfg, BuildConstants{});
}

ToyModel build_model(const ToyModelConfig& cfg, const BuildConstants& bc) {
  ToyModel m = build_base(cfg, bc);
  m.model_id = "d" + std::to_string(cfg.depth) + "-s" + std::to_string(cfg.seed);

  // depth-scaled landmark layers (copy L0, squared stage L1, sanitizer L2)
  m.integrator_layer = std::max(
      3, static_cast<int>(std::llround(0.4 * (cfg.depth - 1))));
  m.prior_layer = m.integrator_layer + 1;
  m.monitor_layer = std::min(cfg.depth - 1, m.prior_layer + 1);

  // integrator: gated evidence bilinear <own identity, identity bag>
  {
    LayerWeights& L = m.layers[m.integrator_layer];
    int unit = 0;
    for (int c = 0; c < kObjectCount; ++c)
      unit = add_bilinear_pair(L, unit, coord::kId + c, coord::kBagId + c,
                               bc.g_in, bc.kappa_e, coord::kEvid, bc.w_gate,
                               bc.g_on);
  }
  // prior: gated co-occurrence bilinear <own context, context bag>
  {
    LayerWeights& L = m.layers[m.prior_layer];
    const double scale = cfg.prior_bias_strength * bc.g_p;
    int unit = 0;
    for (int c = 0; c < kContextCount; ++c)
      unit = add_bilinear_pair(L, unit, coord::kCtx + c, coord::kBagCtx + c,
                               bc.g_in, scale, coord::kEvid, bc.w_gate,
                               bc.g_on);
  }
  add_monitor_head(m, m.monitor_layer);
  add_junk_dampers(m, cfg.depth - 1);

  // default-No bias and output head on the evidence coordinate
  m.pos(m.n_pos() - 1, coord::kEvid) += -bc.b0;
  m.unembed(kYesToken, coord::kEvid) += bc.g_u;
  m.unembed(kNoToken, coord::kEvid) += -bc.g_u;
  return m;
}

ToyModel build_duplicate_pathway_model(const ToyModelConfig& cfg) {
  return build_duplicate_pathway_model(cfg, BuildConstants{});
}

ToyModel build_duplicate_pathway_model(const ToyModelConfig& cfg,
                                       const BuildConstants& bc) {
  ToyModel m = build_base(cfg, bc);
  m.model_id =
      "dup-d" + std::to_string(cfg.depth) + "-s" + std::to_string(cfg.seed);

  if (cfg.depth < 8)
    throw ConfigError("duplicate-pathway model: depth >= 8 required");
  m.integrator_layer = 3;
  m.integrator2_layer = 4;
  m.saturator_layer = cfg.depth - 2;
  m.prior_layer = -1;
  m.monitor_layer = -1;

  for (int layer : {m.integrator_layer, m.integrator2_layer}) {
    LayerWeights& L = m.layers[layer];
    int unit = 0;
    for (int c = 0; c < kObjectCount; ++c)
      unit = add_bilinear_pair(L, unit, coord::kId + c, coord::kBagId + c,
                               bc.g_in, bc.kappa_dup, coord::kEvid, bc.w_gate,
                               bc.g_on);
  }
  {
    LayerWeights& L = m.layers[m.saturator_layer];
    add_saturating_plateau(L, 0, coord::kEvid, bc.sat_lo, bc.sat_hi,
                           bc.sat_delta, bc.g_sat, coord::kEvid2);
  }
  m.pos(m.n_pos() - 1, coord::kEvid2) += -bc.b0_dup;
  m.unembed(kYesToken, coord::kEvid2) += bc.g_u;
  m.unembed(kNoToken, coord::kEvid2) += -bc.g_u;
  return m;
}

// ---------------------------------------------------------------------------
// forward pass
//
// Every per-row computation lives in a helper with a single call site shape,
// so the patch engine's final-row fast path replays bit-identical arithmetic.

namespace rowops {

RowVectorXd rmsnorm(const RowVectorXd& x) {
  double ms = x.squaredNorm() / static_cast<double>(x.size());
  return x / std::sqrt(ms + 1e-12);
}

VectorXd mlp_row(const LayerWeights& L, const RowVectorXd& xn) {
  VectorXd h = L.w1 * xn.transpose() + L.b1;
  VectorXd a = h.array().max(0.0).square().matrix();
  return L.w2 * a;
}

// attention context (pre-W_O, all heads concatenated) for one row with
// `visible` attendable positions; K and V hold per-position projections
RowVectorXd attn_ctx_row(int heads, int dh, const RowVectorXd& q,
                         const MatrixXd& K, const MatrixXd& V, int visible) {
  RowVectorXd ctx = RowVectorXd::Zero(q.size());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    double mx = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd sc(visible);
    for (int p = 0; p < visible; ++p) {
      sc[p] = q.segment(off, dh).dot(K.row(p).segment(off, dh)) * inv_sqrt_dh;
      mx = std::max(mx, sc[p]);
    }
    double z = 0.0;
    for (int p = 0; p < visible; ++p) {
      sc[p] = std::exp(sc[p] - mx);
      z += sc[p];
    }
    for (int p = 0; p < visible; ++p)
      ctx.segment(off, dh) += (sc[p] / z) * V.row(p).segment(off, dh);
  }
  return ctx;
}

}  // namespace rowops

namespace {

void apply_output_hooks(MatrixXd& out, const ComponentId& c,
                        const PatchSpec* spec, int final_pos) {
  if (!spec) return;
  if (auto it = spec->restore_all.find(c); it != spec->restore_all.end()) {
    if (it->second.rows() != out.rows() || it->second.cols() != out.cols())
      throw std::out_of_range("restore_all shape mismatch at " + to_string(c));
    out = it->second;
  }
  if (auto it = spec->restore_final.find(c); it != spec->restore_final.end()) {
    if (it->second.size() != out.cols())
      throw std::out_of_range("restore_final shape mismatch at " + to_string(c));
    out.row(final_pos) = it->second.transpose();
  }
  if (auto it = spec->scale.find(c); it != spec->scale.end())
    out *= it->second;
  if (auto it = spec->project.find(c); it != spec->project.end()) {
    const auto& pr = it->second;
    if (pr.dir.size() != out.cols())
      throw std::out_of_range("projection dim mismatch at " + to_string(c));
    for (Eigen::Index p = 0; p < out.rows(); ++p) {
      double dot = out.row(p).dot(pr.dir);
      out.row(p) -= (pr.alpha * dot) * pr.dir.transpose();
    }
  }
}

void validate_hooks(const ToyModel& m, const PatchSpec* spec) {
  if (!spec) return;
  auto check = [&](const ComponentId& c) {
    if (!m.valid_component(c))
      throw std::out_of_range("hook addresses unknown component " +
                              to_string(c));
  };
  for (const auto& [c, v] : spec->restore_final) check(c);
  for (const auto& [c, v] : spec->restore_all) check(c);
  for (const auto& [c, v] : spec->scale) check(c);
  for (const auto& [c, v] : spec->project) check(c);
  for (const auto& [hk, v] : spec->head_add) {
    if (hk.first < 0 || hk.first >= m.cfg.depth || hk.second < 0 ||
        hk.second >= m.cfg.heads)
      throw std::out_of_range("hook addresses unknown head");
    if (v.size() != m.head_dim())
      throw std::out_of_range("head hook dim mismatch");
  }
  if (spec->visual_noise &&
      (spec->visual_noise->rows() != m.cfg.visual_token_count ||
       spec->visual_noise->cols() != m.cfg.width))
    throw std::out_of_range("visual noise shape mismatch");
}

}  // namespace

ForwardRecord forward(const ToyModel& model, const TaskSample& sample,
                      const PatchSpec* hooks) {
  const ToyModelConfig& cfg = model.cfg;
  if (static_cast<int>(sample.visual_tokens.size()) != cfg.visual_token_count)
    throw ConfigError("forward: sample visual token count mismatch");
  for (int t : sample.visual_tokens)
    if (t < 0 || t >= cfg.vocab_size) throw ConfigError("forward: token out of vocab");
  if (sample.query_object < 0 || sample.query_object >= cfg.vocab_size)
    throw ConfigError("forward: query token out of vocab");
  validate_hooks(model, hooks);

  const int n = model.n_pos();
  const int w = cfg.width;
  const int fin = model.final_pos();
  const int dh = model.head_dim();

  ForwardRecord rec;

  MatrixXd X(n, w);
  for (int p = 0; p < n - 1; ++p)
    X.row(p) = model.embed.row(sample.visual_tokens[p]) + model.pos.row(p);
  X.row(fin) = model.embed.row(sample.query_object) + model.pos.row(fin);
  if (hooks && hooks->visual_noise)
    X.topRows(cfg.visual_token_count) += *hooks->visual_noise;

  const bool cap_hidden = hooks ? hooks->capture_hidden : false;
  const bool cap_comp = hooks ? hooks->capture_components : true;
  const bool cap_heads = hooks ? hooks->capture_head_inputs : false;
  const bool cap_kv = hooks ? hooks->capture_kv : false;
  if (cap_hidden) {
    rec.hidden_states.reserve(cfg.depth + 1);
    rec.hidden_states.push_back(X);
  }

  // Every per-row product goes through contiguous row-vector temporaries.
  // The patch engine replays the final row from these exact expressions, so
  // storage layout must not be allowed to select a different Eigen kernel.
  MatrixXd Xn(n, w), K(n, w), V(n, w), out(n, w);
  for (int l = 0; l < cfg.depth; ++l) {
    const LayerWeights& L = model.layers[l];

    // attention sublayer
    for (int p = 0; p < n; ++p) {
      RowVectorXd xr = X.row(p);
      RowVectorXd xn = rowops::rmsnorm(xr);
      Xn.row(p) = xn;
      RowVectorXd kr = xn * L.wk;
      K.row(p) = kr;
      RowVectorXd vr = xn * L.wv;
      V.row(p) = vr;
    }
    if (cap_kv) {
      rec.layer_keys.push_back(K);
      rec.layer_values.push_back(V);
    }
    for (int p = 0; p < n; ++p) {
      RowVectorXd xn = Xn.row(p);
      RowVectorXd q = xn * L.wq;
      RowVectorXd c = rowops::attn_ctx_row(cfg.heads, dh, q, K, V, p + 1);
      if (cap_heads && p == fin)
        for (int h = 0; h < cfg.heads; ++h)
          rec.head_pre_wo[{l, h}] = c.segment(h * dh, dh).transpose();
      if (hooks && p == fin)
        for (int h = 0; h < cfg.heads; ++h)
          if (auto it = hooks->head_add.find({l, h}); it != hooks->head_add.end())
            c.segment(h * dh, dh) += it->second.transpose();
      RowVectorXd o = c * L.wo;
      out.row(p) = o;
    }
    apply_output_hooks(out, {l, ComponentKind::Attention}, hooks, fin);
    if (cap_comp)
      rec.component_outputs[{l, ComponentKind::Attention}] =
          out.row(fin).transpose();
    X += out;

    // MLP sublayer
    for (int p = 0; p < n; ++p) {
      RowVectorXd xr = X.row(p);
      RowVectorXd xn = rowops::rmsnorm(xr);
      Eigen::VectorXd mo = rowops::mlp_row(L, xn);
      out.row(p) = mo.transpose();
    }
    apply_output_hooks(out, {l, ComponentKind::Mlp}, hooks, fin);
    if (cap_comp)
      rec.component_outputs[{l, ComponentKind::Mlp}] = out.row(fin).transpose();
    X += out;

    if (cap_hidden) rec.hidden_states.push_back(X);
  }

  RowVectorXd xfr = X.row(fin);
  RowVectorXd xf = rowops::rmsnorm(xfr);
  rec.logits[0] = xf.dot(model.unembed.row(kYesToken));
  rec.logits[1] = xf.dot(model.unembed.row(kNoToken));
  rec.answered_yes = rec.logits[0] > rec.logits[1];
  double yes_minus_no = rec.logits[0] - rec.logits[1];
  rec.delta = sample.ground_truth == GroundTruth::Yes ? yes_minus_no
                                                      : -yes_minus_no;
  rec.outcome = classify_outcome(sample.ground_truth, rec.answered_yes);
  return rec;
}

}  // namespace circuitscope::toyvlm
