#include "circuitscope/statkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "circuitscope/rng.hpp"

namespace circuitscope::statkit {

double mean(const std::vector<double>& v) {
  if (v.empty()) throw std::domain_error("mean of empty vector");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw std::domain_error("variance needs n >= 2");
  double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size() - 1);
}

// ---------------------------------------------------------------------------
// incomplete beta (Lentz continued fraction, Numerical-Recipes style)

namespace {

double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;

  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) <= kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("incbeta: a, b > 0 required");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                 a * std::log(x) + b * std::log1p(-x);
  double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (df <= 0.0) throw std::domain_error("t distribution: df > 0 required");
  if (!std::isfinite(t)) return 0.0;
  double x = df / (df + t * t);
  return regularized_incomplete_beta(df / 2.0, 0.5, x);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// t-tests

TestResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::domain_error("welch_t: each sample needs n >= 2");
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ma = mean(a), mb = mean(b);
  double va = sample_variance(a), vb = sample_variance(b);

  TestResult r;
  // Cohen's d with pooled SD (well-defined whenever either variance is > 0)
  double pooled_var = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
  if (pooled_var > 0.0) r.effect_size = (ma - mb) / std::sqrt(pooled_var);

  if (va == 0.0 && vb == 0.0) {
    if (ma == mb) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = ma > mb ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.degenerate = true;
    }
    return r;
  }

  double sa = va / na, sb = vb / nb;
  double se = std::sqrt(sa + sb);
  r.statistic = (ma - mb) / se;
  double df = (sa + sb) * (sa + sb) /
              (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.df = df;
  r.p_value = student_t_two_sided_p(r.statistic, df);
  return r;
}

TestResult one_sample_t(const std::vector<double>& sample, double mu0) {
  if (sample.size() < 2) throw std::domain_error("one_sample_t: n >= 2 required");
  double n = static_cast<double>(sample.size());
  double m = mean(sample);
  double v = sample_variance(sample);

  TestResult r;
  if (v == 0.0) {
    if (m == mu0) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = m > mu0 ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  double sd = std::sqrt(v);
  r.statistic = (m - mu0) / (sd / std::sqrt(n));
  r.df = n - 1.0;
  r.p_value = student_t_two_sided_p(r.statistic, n - 1.0);
  r.effect_size = (m - mu0) / sd;
  return r;
}

// ---------------------------------------------------------------------------
// Benjamini–Hochberg

FdrResult bh_adjust(const std::vector<double>& p_values, double alpha) {
  const std::size_t m = p_values.size();
  FdrResult out;
  out.alpha = alpha;
  out.adjusted_p.resize(m);
  out.rejected.assign(m, false);
  if (m == 0) return out;

  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("bh_adjust: p outside [0, 1]");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });

  // step-up: walk from the largest p down, carrying the running minimum of
  // (m / rank) * p_(rank)
  double running = 1.0;
  std::vector<double> adj_sorted(m);
  for (std::size_t k = m; k-- > 0;) {
    double rank = static_cast<double>(k + 1);
    double val = static_cast<double>(m) / rank * p_values[order[k]];
    running = std::min(running, std::min(val, 1.0));
    adj_sorted[k] = running;
  }
  for (std::size_t k = 0; k < m; ++k) {
    out.adjusted_p[order[k]] = adj_sorted[k];
    out.rejected[order[k]] = adj_sorted[k] <= alpha;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fisher's exact test

namespace {

// log k! table, grown on demand (tables here are small; thread-unsafe growth
// is avoided by precomputing a generous fixed size)
double log_factorial(long long k) {
  static const std::vector<double> table = [] {
    std::vector<double> t(20001);
    t[0] = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i)
      t[i] = t[i - 1] + std::log(static_cast<double>(i));
    return t;
  }();
  if (k < static_cast<long long>(table.size())) return table[k];
  return std::lgamma(static_cast<double>(k) + 1.0);
}

}  // namespace

TestResult fisher_exact(long long a, long long b, long long c, long long d,
                        bool doubling) {
  if (a < 0 || b < 0 || c < 0 || d < 0)
    throw std::domain_error("fisher_exact: negative cell");
  long long r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d;
  long long n = r1 + r2;
  if (n <= 0) throw std::domain_error("fisher_exact: empty table");

  TestResult res;
  if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) {
    // only one table has these margins
    res.statistic = 1.0;
    res.p_value = 1.0;
    return res;
  }

  double log_norm = log_factorial(r1) + log_factorial(r2) + log_factorial(c1) +
                    log_factorial(c2) - log_factorial(n);
  auto log_p = [&](long long x) {
    return log_norm - log_factorial(x) - log_factorial(r1 - x) -
           log_factorial(c1 - x) - log_factorial(r2 - c1 + x);
  };

  long long lo = std::max(0ll, c1 - r2);
  long long hi = std::min(r1, c1);
  double lp_obs = log_p(a);
  res.statistic = std::exp(lp_obs);

  if (doubling) {
    // doubled one-sided tail containing the observed table
    double tail_low = 0.0, tail_high = 0.0;
    for (long long x = lo; x <= a; ++x) tail_low += std::exp(log_p(x));
    for (long long x = a; x <= hi; ++x) tail_high += std::exp(log_p(x));
    res.p_value = std::min(1.0, 2.0 * std::min(tail_low, tail_high));
    return res;
  }

  // minimum-likelihood two-sided: tables at most as probable as observed,
  // with 1e-7 relative slack so exact ties survive float noise
  double cutoff = lp_obs + std::log1p(1e-7);
  double p = 0.0;
  for (long long x = lo; x <= hi; ++x) {
    double lp = log_p(x);
    if (lp <= cutoff) p += std::exp(lp);
  }
  res.p_value = std::min(1.0, p);
  return res;
}

// ---------------------------------------------------------------------------
// correlations

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::domain_error("pearson_r: size mismatch");
  if (x.size() < 3) throw std::domain_error("pearson_r: n >= 3 required");
  double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::domain_error("pearson_r: zero variance");
  double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

TestResult tost_equivalence(double r, int n, double bound) {
  if (n < 4) throw std::domain_error("tost_equivalence: n >= 4 required");
  if (!(bound > 0.0 && bound < 1.0))
    throw std::domain_error("tost_equivalence: bound in (0, 1) required");
  TestResult res;
  res.effect_size = r;
  if (std::fabs(r) >= 1.0) {
    res.p_value = 1.0;
    res.degenerate = true;
    res.statistic = 0.0;
    return res;
  }
  double z = std::atanh(r);
  double zb = std::atanh(bound);
  double se = 1.0 / std::sqrt(static_cast<double>(n) - 3.0);
  // H0a: rho <= -bound (reject when z is well above -zb)
  double stat_low = (z + zb) / se;
  double p_low = 1.0 - normal_cdf(stat_low);
  // H0b: rho >= +bound (reject when z is well below +zb)
  double stat_high = (z - zb) / se;
  double p_high = normal_cdf(stat_high);
  if (p_low >= p_high) {
    res.p_value = p_low;
    res.statistic = stat_low;
  } else {
    res.p_value = p_high;
    res.statistic = stat_high;
  }
  return res;
}

// ---------------------------------------------------------------------------
// logistic regression

namespace {
double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}
}  // namespace

double logistic_loss(const std::vector<std::vector<double>>& x,
                     const std::vector<int>& y,
                     const std::vector<double>& sample_weight, double l2,
                     const std::vector<double>& w, double b) {
  double wsum = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[i][j];
    double margin = (y[i] == 1 ? z : -z);
    // log(1 + exp(-margin)), overflow-safe
    double l = margin > 0.0 ? std::log1p(std::exp(-margin))
                            : -margin + std::log1p(std::exp(margin));
    loss += sample_weight[i] * l;
    wsum += sample_weight[i];
  }
  loss /= wsum;
  double reg = 0.0;
  for (double wj : w) reg += wj * wj;
  return loss + 0.5 * l2 * reg;
}

void logistic_gradient(const std::vector<std::vector<double>>& x,
                       const std::vector<int>& y,
                       const std::vector<double>& sample_weight, double l2,
                       const std::vector<double>& w, double b,
                       std::vector<double>& grad_w, double& grad_b) {
  grad_w.assign(w.size(), 0.0);
  grad_b = 0.0;
  double wsum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[i][j];
    double target = y[i] == 1 ? 1.0 : 0.0;
    double g = sample_weight[i] * (sigmoid(z) - target);
    for (std::size_t j = 0; j < w.size(); ++j) grad_w[j] += g * x[i][j];
    grad_b += g;
    wsum += sample_weight[i];
  }
  for (std::size_t j = 0; j < w.size(); ++j)
    grad_w[j] = grad_w[j] / wsum + l2 * w[j];
  grad_b /= wsum;
}

ProbeModel fit_logistic(const std::vector<std::vector<double>>& features,
                        const std::vector<int>& labels, double l2,
                        bool class_weighted, double holdout_fraction,
                        std::uint64_t seed) {
  const std::size_t n = features.size();
  if (n != labels.size()) throw std::domain_error("fit_logistic: size mismatch");
  if (n < 4) throw std::domain_error("fit_logistic: n >= 4 required");
  if (!(holdout_fraction > 0.0 && holdout_fraction <= 0.5))
    throw std::domain_error("fit_logistic: holdout_fraction in (0, 0.5]");
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += (y == 1);
  if (n_pos == 0 || n_pos == n)
    throw std::domain_error("fit_logistic: both classes required");

  const std::size_t dim = features[0].size();

  // seed-deterministic holdout split
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    std::size_t j = rng.below(i + 1);
    std::swap(order[i], order[j]);
  }
  std::size_t n_hold = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n))));
  if (n_hold >= n) n_hold = n - 1;

  std::vector<std::vector<double>> xt;
  std::vector<int> yt;
  std::vector<std::size_t> hold_idx;
  for (std::size_t k = 0; k < n; ++k) {
    if (k < n_hold)
      hold_idx.push_back(order[k]);
    else {
      xt.push_back(features[order[k]]);
      yt.push_back(labels[order[k]]);
    }
  }

  std::size_t tp = 0;
  for (int y : yt) tp += (y == 1);
  std::vector<double> sw(xt.size(), 1.0);
  if (class_weighted && tp > 0 && tp < yt.size()) {
    double wp = static_cast<double>(yt.size()) / (2.0 * static_cast<double>(tp));
    double wn = static_cast<double>(yt.size()) /
                (2.0 * static_cast<double>(yt.size() - tp));
    for (std::size_t i = 0; i < yt.size(); ++i) sw[i] = yt[i] == 1 ? wp : wn;
  }

  std::vector<double> w(dim, 0.0), gw(dim, 0.0), w_try(dim, 0.0);
  double b = 0.0, gb = 0.0;
  double loss = logistic_loss(xt, yt, sw, l2, w, b);
  double step = 1.0;
  for (int iter = 0; iter < 500; ++iter) {
    logistic_gradient(xt, yt, sw, l2, w, b, gw, gb);
    double gnorm2 = gb * gb;
    for (double g : gw) gnorm2 += g * g;
    if (std::sqrt(gnorm2) <= 1e-6) break;

    // Armijo backtracking from the (tentatively doubled) previous step
    step = std::min(step * 2.0, 1e4);
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t j = 0; j < dim; ++j) w_try[j] = w[j] - step * gw[j];
      double b_try = b - step * gb;
      double l_try = logistic_loss(xt, yt, sw, l2, w_try, b_try);
      if (l_try <= loss - 1e-4 * step * gnorm2) {
        w = w_try;
        b = b_try;
        loss = l_try;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step underflowed; gradient is numerically flat
  }

  std::size_t correct = 0;
  for (std::size_t idx : hold_idx) {
    double z = b;
    for (std::size_t j = 0; j < dim; ++j) z += w[j] * features[idx][j];
    int pred = z > 0.0 ? 1 : 0;
    correct += (pred == labels[idx]);
  }

  ProbeModel m;
  m.weights = std::move(w);
  m.bias = b;
  m.validation_accuracy =
      static_cast<double>(correct) / static_cast<double>(hold_idx.size());
  return m;
}

// ---------------------------------------------------------------------------
// SVD (one-sided cyclic Jacobi on the thin dimension)

SvdSpectrum svd_spectrum(const std::vector<std::vector<double>>& matrix) {
  SvdSpectrum out;
  if (matrix.empty() || matrix[0].empty()) return out;
  std::size_t rows = matrix.size(), cols = matrix[0].size();

  // singular values are transpose-invariant; orthogonalize the fewer columns
  std::vector<std::vector<double>> a;  // column-major: a[j] is column j
  if (cols <= rows) {
    a.assign(cols, std::vector<double>(rows));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) a[j][i] = matrix[i][j];
  } else {
    a.assign(rows, std::vector<double>(cols));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) a[i][j] = matrix[i][j];
  }
  const std::size_t m = a.size();

  constexpr double kTol = 1e-14;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool converged = true;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t k = 0; k < a[p].size(); ++k) {
          app += a[p][k] * a[p][k];
          aqq += a[q][k] * a[q][k];
          apq += a[p][k] * a[q][k];
        }
        if (std::fabs(apq) <= kTol * std::sqrt(app * aqq) || apq == 0.0) continue;
        converged = false;
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0.0 ? 1.0 : -1.0) /
                   (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        for (std::size_t k = 0; k < a[p].size(); ++k) {
          double xp = a[p][k], xq = a[q][k];
          a[p][k] = cs * xp - sn * xq;
          a[q][k] = sn * xp + cs * xq;
        }
      }
    }
    if (converged) break;
  }

  out.singular_values.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s2 = 0.0;
    for (double v : a[j]) s2 += v * v;
    out.singular_values[j] = std::sqrt(s2);
  }
  std::sort(out.singular_values.begin(), out.singular_values.end(),
            std::greater<double>());
  return out;
}

}  // namespace circuitscope::statkit
