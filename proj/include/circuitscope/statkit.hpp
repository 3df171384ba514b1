#pragma once

#include <cstdint>
#include <optional>
#include <vector>

// Self-contained statistical kernel. No external statistics dependency by
// design: every p-value here is checked against independent oracles in the
// test suite, which is only meaningful if we own the implementation.

namespace circuitscope::statkit {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::optional<double> df;
  std::optional<double> effect_size;  // Cohen's d where applicable
  bool degenerate = false;            // zero-variance fallback was taken
};

struct FdrResult {
  std::vector<double> adjusted_p;
  std::vector<bool> rejected;
  double alpha = 0.05;
};

struct ProbeModel {
  std::vector<double> weights;
  double bias = 0.0;
  double validation_accuracy = 0.0;
};

struct SvdSpectrum {
  std::vector<double> singular_values;  // descending, each >= 0
};

// --- scalar distribution functions -----------------------------------------

// I_x(a, b), continued-fraction evaluation (Lentz). Abs error ~1e-15.
double regularized_incomplete_beta(double a, double b, double x);

// two-sided p for Student's t with df degrees of freedom
double student_t_two_sided_p(double t, double df);

// Phi(z)
double normal_cdf(double z);

// --- tests ------------------------------------------------------------------

// Welch's t with Welch–Satterthwaite df; effect_size = Cohen's d (pooled SD).
// Both variances zero: equal means -> (t=0, p=1); unequal -> (p=0, degenerate).
TestResult welch_t(const std::vector<double>& a, const std::vector<double>& b);

// two-sided one-sample t against mu0; effect_size = (mean - mu0) / sd
TestResult one_sample_t(const std::vector<double>& sample, double mu0);

// Benjamini–Hochberg step-up. adjusted_p[i] = min over j with rank >= rank(i)
// of (m / rank_j) * p_(j), clamped to 1. rejected[i] <=> adjusted_p[i] <= alpha
// (equivalent to the classical largest-k formulation).
FdrResult bh_adjust(const std::vector<double>& p_values, double alpha);

// Fisher's exact test, two-sided by the minimum-likelihood convention: sum of
// hypergeometric probabilities of all same-margin tables with probability
// <= observed, relative tolerance 1e-7 on the comparison. statistic = observed
// table probability. A zero margin gives p = 1. Set doubling = true for the
// one-sided-doubled convention instead (audit alternative).
TestResult fisher_exact(long long a, long long b, long long c, long long d,
                        bool doubling = false);

// r in [-1, 1]; throws std::domain_error on zero variance or size mismatch
double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

// TOST equivalence for a correlation via Fisher z: two one-sided z-tests
// against +-atanh(bound) with SE 1/sqrt(n-3); p = max of the two one-sided
// p-values. statistic = z-statistic of the binding (larger-p) side.
// |r| = 1 is degenerate: p = 1.
TestResult tost_equivalence(double r, int n, double bound);

// L2-regularized (weights only, never bias) logistic regression by full-batch
// gradient descent with Armijo backtracking; stops at grad norm <= 1e-6 or
// 500 iterations. Class weights n/(2*n_c) when class_weighted. Holdout split
// is seed-deterministic. labels are 0/1.
ProbeModel fit_logistic(const std::vector<std::vector<double>>& features,
                        const std::vector<int>& labels, double l2,
                        bool class_weighted, double holdout_fraction,
                        std::uint64_t seed);

// loss/gradient of the objective fit_logistic minimizes, exposed for the
// finite-difference checks in the test suite
double logistic_loss(const std::vector<std::vector<double>>& x,
                     const std::vector<int>& y,
                     const std::vector<double>& sample_weight, double l2,
                     const std::vector<double>& w, double b);
void logistic_gradient(const std::vector<std::vector<double>>& x,
                       const std::vector<int>& y,
                       const std::vector<double>& sample_weight, double l2,
                       const std::vector<double>& w, double b,
                       std::vector<double>& grad_w, double& grad_b);

// singular values by one-sided cyclic Jacobi, descending. Accurate to ~1e-10
// relative at the sizes used here (<= 1000 x 64).
SvdSpectrum svd_spectrum(const std::vector<std::vector<double>>& matrix);

// --- small helpers shared across modules ------------------------------------

double mean(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);  // n-1 denominator

}  // namespace circuitscope::statkit
