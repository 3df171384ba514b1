#include "circuitscope/cpa.hpp"

#include <algorithm>
#include <cmath>

#include "circuitscope/errors.hpp"

namespace circuitscope::cpa {

namespace pe = patchengine;
namespace sk = statkit;

std::string to_string(Subset s) {
  return s == Subset::Correct ? "correct" : "hallucinating";
}

CpaSampleRow cpa_per_sample(const SampleTrace& trace, const JointTrace& joint,
                            const std::vector<ComponentId>& pathway_members,
                            Pathway pathway) {
  if (trace.sample_id != joint.sample_id)
    throw ConfigError("cpa_per_sample: trace and joint sample_id differ");
  if (joint.pathway_components != pathway_members)
    throw ConfigError("cpa_per_sample: pathway membership differs from the joint trace");
  if (pathway_members.empty())
    throw ConfigError("cpa_per_sample: empty pathway");
  if (trace.outcome == toyvlm::Outcome::Miss)
    throw ConfigError("cpa_per_sample: Miss trace has no subset");

  CpaSampleRow row;
  row.sample_id = trace.sample_id;
  row.subset = trace.outcome == toyvlm::Outcome::Correct
                   ? Subset::Correct
                   : Subset::Hallucinating;
  row.pathway = pathway;
  row.joint_ie = joint.delta_joint - trace.delta_corrupt;
  double sum = 0.0, abs_sum = 0.0;
  for (const auto& c : pathway_members) {
    if (!trace.delta_patched.count(c))
      throw ConfigError("cpa_per_sample: trace lacks component " +
                        toyvlm::to_string(c));
    double ie = pe::indirect_effect(trace, c);
    row.individual_ies.push_back(ie);
    sum += ie;
    abs_sum += std::abs(ie);
  }
  row.interaction = row.joint_ie - sum;
  row.mag_diff = std::abs(row.joint_ie) - abs_sum;
  return row;
}

namespace {

CpaCell make_cell(const std::vector<const CpaSampleRow*>& rows) {
  CpaCell cell;
  cell.n = static_cast<int>(rows.size());
  if (cell.n < 2) return cell;  // unavailable
  cell.available = true;

  double ie_sum = 0.0;
  long long ie_count = 0, positive = 0;
  std::vector<double> ratios, mag_diffs;
  double joint_abs_sum = 0.0, ind_abs_sum = 0.0;
  for (const CpaSampleRow* r : rows) {
    double abs_sum = 0.0;
    for (double ie : r->individual_ies) {
      ie_sum += ie;
      ++ie_count;
      if (ie > 0.0) ++positive;
      abs_sum += std::abs(ie);
    }
    if (abs_sum == 0.0) {
      ++cell.n_ratio_undefined;
    } else {
      ratios.push_back(std::abs(r->joint_ie) / abs_sum);
    }
    joint_abs_sum += std::abs(r->joint_ie);
    ind_abs_sum += abs_sum;
    mag_diffs.push_back(r->mag_diff);
  }
  cell.mean_individual_ie = ie_sum / static_cast<double>(ie_count);
  cell.fraction_positive =
      static_cast<double>(positive) / static_cast<double>(ie_count);
  if (!ratios.empty()) {
    cell.magnitude_ratio = sk::mean(ratios);
    std::vector<double> sorted = ratios;
    std::sort(sorted.begin(), sorted.end());
    std::size_t m = sorted.size();
    cell.magnitude_ratio_median =
        m % 2 == 1 ? sorted[m / 2]
                   : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  }
  if (ind_abs_sum > 0.0)
    cell.magnitude_ratio_of_means = joint_abs_sum / ind_abs_sum;
  cell.mean_mag_diff = sk::mean(mag_diffs);
  cell.magdiff_vs_zero = sk::one_sample_t(mag_diffs, 0.0);
  return cell;
}

}  // namespace

PathwayDiagnostics cpa_aggregate(const std::vector<CpaSampleRow>& rows) {
  std::vector<const CpaSampleRow*> ordered;
  ordered.reserve(rows.size());
  for (const auto& r : rows) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const CpaSampleRow* a, const CpaSampleRow* b) {
                     return a->sample_id < b->sample_id;
                   });

  PathwayDiagnostics diag;
  for (int p = 0; p < 2; ++p) {
    PathwayReport& rep = diag.pathways[p];
    rep.pathway = static_cast<Pathway>(p);
    std::array<std::vector<const CpaSampleRow*>, 2> cells;
    for (const CpaSampleRow* r : ordered)
      if (static_cast<int>(r->pathway) == p)
        cells[static_cast<int>(r->subset)].push_back(r);
    for (int s = 0; s < 2; ++s) rep.cells[s] = make_cell(cells[s]);

    if (!rep.cells[0].available || !rep.cells[1].available) continue;
    rep.cross_available = true;
    // unit of analysis: the sample (components within one sample share a
    // noise realization, so per-component entries are not independent)
    auto per_sample_means = [](const std::vector<const CpaSampleRow*>& rs) {
      std::vector<double> out;
      for (const CpaSampleRow* r : rs) out.push_back(sk::mean(r->individual_ies));
      return out;
    };
    auto mag_diffs = [](const std::vector<const CpaSampleRow*>& rs) {
      std::vector<double> out;
      for (const CpaSampleRow* r : rs) out.push_back(r->mag_diff);
      return out;
    };
    rep.cross_subset_mean_ie =
        sk::welch_t(per_sample_means(cells[0]), per_sample_means(cells[1]));
    rep.cross_subset_magdiff =
        sk::welch_t(mag_diffs(cells[0]), mag_diffs(cells[1]));
    bool sign_change = (rep.cells[0].mean_individual_ie > 0.0) !=
                       (rep.cells[1].mean_individual_ie > 0.0);
    bool nonzero = rep.cells[0].mean_individual_ie != 0.0 &&
                   rep.cells[1].mean_individual_ie != 0.0;
    rep.polarity_flip =
        sign_change && nonzero && rep.cross_subset_mean_ie.p_value < 0.05;
  }
  return diag;
}

}  // namespace circuitscope::cpa
