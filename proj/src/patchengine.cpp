#include "circuitscope/patchengine.hpp"

#include <cmath>
#include <stdexcept>

#include "circuitscope/errors.hpp"
#include "circuitscope/rng.hpp"

namespace circuitscope::patchengine {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using toyvlm::ComponentKind;
using toyvlm::GroundTruth;

double visual_embedding_std(const ToyModel& model, const TaskSample& s) {
  const int v = model.cfg.visual_token_count;
  const int w = model.cfg.width;
  double sum = 0.0, sumsq = 0.0;
  for (int p = 0; p < v; ++p) {
    RowVectorXd row = model.embed.row(s.visual_tokens[p]) + model.pos.row(p);
    sum += row.sum();
    sumsq += row.squaredNorm();
  }
  const double n = static_cast<double>(v) * w;
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  return std::sqrt(std::max(var, 0.0));
}

Eigen::MatrixXd corruption_noise(const ToyModel& model, const TaskSample& s,
                                 const CorruptionSpec& spec) {
  if (spec.noise_multiplier < 0.0)
    throw ConfigError("corruption: noise_multiplier must be >= 0");
  const double sd = spec.noise_multiplier * visual_embedding_std(model, s);
  SplitMix64 rng(derive_seed(spec.noise_seed, "corruption",
                             static_cast<std::uint64_t>(s.sample_id)));
  MatrixXd noise(model.cfg.visual_token_count, model.cfg.width);
  for (Eigen::Index i = 0; i < noise.rows(); ++i)
    for (Eigen::Index j = 0; j < noise.cols(); ++j)
      noise(i, j) = sd * rng.gaussian();
  return noise;
}

TracePack prepare_passes(const ToyModel& model, const TaskSample& s,
                         const CorruptionSpec& spec) {
  TracePack pack;
  pack.noise = corruption_noise(model, s, spec);

  toyvlm::PatchSpec clean_spec;  // defaults: component outputs captured
  pack.clean = toyvlm::forward(model, s, &clean_spec);

  toyvlm::PatchSpec corrupt_spec;
  corrupt_spec.visual_noise = &pack.noise;
  corrupt_spec.capture_hidden = true;  // final-row residual entering each layer
  corrupt_spec.capture_kv = true;
  pack.corrupt = toyvlm::forward(model, s, &corrupt_spec);
  return pack;
}

double replay_with_patches(
    const ToyModel& model, const TaskSample& s, const TracePack& pack,
    const std::map<ComponentId, Eigen::VectorXd>& restore) {
  if (restore.empty()) return pack.corrupt.delta;
  for (const auto& [c, v] : restore) {
    if (!model.valid_component(c))
      throw std::out_of_range("patch addresses unknown component " +
                              toyvlm::to_string(c));
    if (v.size() != model.cfg.width)
      throw std::out_of_range("patch value dim mismatch at " +
                              toyvlm::to_string(c));
  }

  const int fin = model.final_pos();
  const int n = model.n_pos();
  const int dh = model.head_dim();
  const int start = restore.begin()->first.layer;  // map ordered by (layer, kind)

  RowVectorXd x = pack.corrupt.hidden_states[start].row(fin);
  bool dirty = false;
  MatrixXd K2, V2;
  for (int l = start; l < model.cfg.depth; ++l) {
    const toyvlm::LayerWeights& L = model.layers[l];
    for (ComponentKind kind : {ComponentKind::Attention, ComponentKind::Mlp}) {
      const ComponentId cid{l, kind};
      auto it = restore.find(cid);
      if (it != restore.end()) {
        RowVectorXd o = it->second.transpose();
        x += o;
        dirty = true;
      } else if (!dirty) {
        RowVectorXd o = pack.corrupt.component_outputs.at(cid).transpose();
        x += o;
      } else if (kind == ComponentKind::Attention) {
        RowVectorXd xn = toyvlm::rowops::rmsnorm(x);
        RowVectorXd q = xn * L.wq;
        RowVectorXd kr = xn * L.wk;
        RowVectorXd vr = xn * L.wv;
        K2 = pack.corrupt.layer_keys[l];
        V2 = pack.corrupt.layer_values[l];
        K2.row(fin) = kr;
        V2.row(fin) = vr;
        RowVectorXd c = toyvlm::rowops::attn_ctx_row(model.cfg.heads, dh, q,
                                                     K2, V2, n);
        RowVectorXd o = c * L.wo;
        x += o;
      } else {
        RowVectorXd xn = toyvlm::rowops::rmsnorm(x);
        VectorXd mo = toyvlm::rowops::mlp_row(L, xn);
        x += mo.transpose();
      }
    }
  }

  RowVectorXd xf = toyvlm::rowops::rmsnorm(x);
  double ly = xf.dot(model.unembed.row(toyvlm::kYesToken));
  double ln = xf.dot(model.unembed.row(toyvlm::kNoToken));
  double yes_minus_no = ly - ln;
  return s.ground_truth == GroundTruth::Yes ? yes_minus_no : -yes_minus_no;
}

SampleTrace run_trace(const ToyModel& model, const TaskSample& s,
                      const CorruptionSpec& spec,
                      const std::vector<ComponentId>& components) {
  return run_trace(model, s, prepare_passes(model, s, spec), components);
}

SampleTrace run_trace(const ToyModel& model, const TaskSample& s,
                      const TracePack& pack,
                      const std::vector<ComponentId>& components) {
  SampleTrace t;
  t.sample_id = s.sample_id;
  t.outcome = pack.clean.outcome;
  t.delta_clean = pack.clean.delta;
  t.delta_corrupt = pack.corrupt.delta;
  t.total_effect = t.delta_clean - t.delta_corrupt;
  for (const ComponentId& c : components) {
    std::map<ComponentId, VectorXd> one{
        {c, pack.clean.component_outputs.at(c)}};
    t.delta_patched[c] = replay_with_patches(model, s, pack, one);
  }
  return t;
}

JointTrace run_joint(const ToyModel& model, const TaskSample& s,
                     const CorruptionSpec& spec,
                     const std::vector<ComponentId>& pathway) {
  return run_joint(model, s, prepare_passes(model, s, spec), pathway);
}

JointTrace run_joint(const ToyModel& model, const TaskSample& s,
                     const TracePack& pack,
                     const std::vector<ComponentId>& pathway) {
  if (pathway.empty()) throw ConfigError("run_joint: pathway must be non-empty");
  JointTrace j;
  j.sample_id = s.sample_id;
  j.pathway_components = pathway;
  std::map<ComponentId, VectorXd> restore;
  for (const ComponentId& c : pathway)
    restore[c] = pack.clean.component_outputs.at(c);
  j.delta_joint = replay_with_patches(model, s, pack, restore);
  return j;
}

double indirect_effect(const SampleTrace& t, const ComponentId& c) {
  auto it = t.delta_patched.find(c);
  if (it == t.delta_patched.end())
    throw std::out_of_range("indirect_effect: component not in trace: " +
                            toyvlm::to_string(c));
  return it->second - t.delta_corrupt;
}

std::optional<double> normalized_ie(const SampleTrace& t, const ComponentId& c,
                                    double epsilon) {
  if (std::fabs(t.total_effect) <= epsilon) return std::nullopt;
  return indirect_effect(t, c) / t.total_effect;
}

CalibrationReport calibrate_noise(const ToyModel& model,
                                  const std::vector<TaskSample>& samples,
                                  const CorruptionSpec& spec) {
  if (samples.size() < 100)
    throw ConfigError("calibrate_noise: >= 100 samples required");
  CalibrationReport r;
  r.n_samples = static_cast<int>(samples.size());
  int clean_ok = 0, corrupt_ok = 0, corrupt_yes = 0;
  for (const TaskSample& s : samples) {
    MatrixXd noise = corruption_noise(model, s, spec);
    ForwardRecord clean = toyvlm::forward(model, s);
    toyvlm::PatchSpec corrupt_spec;
    corrupt_spec.visual_noise = &noise;
    corrupt_spec.capture_components = false;
    ForwardRecord corrupt = toyvlm::forward(model, s, &corrupt_spec);
    bool truth_yes = s.ground_truth == GroundTruth::Yes;
    clean_ok += clean.answered_yes == truth_yes;
    corrupt_ok += corrupt.answered_yes == truth_yes;
    corrupt_yes += corrupt.answered_yes;
  }
  r.clean_accuracy = static_cast<double>(clean_ok) / r.n_samples;
  r.corrupt_accuracy = static_cast<double>(corrupt_ok) / r.n_samples;
  r.corrupt_yes_fraction = static_cast<double>(corrupt_yes) / r.n_samples;
  r.constant_answer_collapse = corrupt_yes == 0 || corrupt_yes == r.n_samples;
  r.passed = r.corrupt_accuracy >= 0.45 && r.corrupt_accuracy <= 0.55;
  return r;
}

}  // namespace circuitscope::patchengine
