#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "circuitscope/statkit.hpp"
#include "statkit_sweeps.hpp"

using namespace circuitscope::statkit;

// Frozen reference values below were produced with an arbitrary-precision
// library (50+ digits) and are embedded as constants so the suite never
// depends on an external stats package at build or run time.

TEST_CASE("welch: identical samples give t = 0, p = 1") {
  std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  TestResult r = welch_t(a, a);
  CHECK(r.statistic == doctest::Approx(0.0));
  CHECK(r.p_value == doctest::Approx(1.0));
}

TEST_CASE("welch: frozen high-precision reference") {
  std::vector<double> a{1, 2, 3, 4, 5}, b{2, 3, 4, 5, 6};
  TestResult r = welch_t(a, b);
  CHECK(std::fabs(r.statistic - (-1.0)) < 1e-14);
  CHECK(std::fabs(*r.df - 8.0) < 1e-12);
  CHECK(std::fabs(r.p_value - 0.34659350708733424783) < 1e-12);
  // unit mean shift at pooled sd sqrt(2.5)
  CHECK(std::fabs(*r.effect_size - (-1.0 / std::sqrt(2.5))) < 1e-14);
}

TEST_CASE("welch: degenerate variances") {
  std::vector<double> a{2, 2, 2}, b{2, 2, 2}, c{3, 3, 3};
  TestResult same = welch_t(a, b);
  CHECK(same.p_value == 1.0);
  CHECK(same.statistic == 0.0);
  CHECK_FALSE(same.degenerate);
  TestResult diff = welch_t(a, c);
  CHECK(diff.p_value == 0.0);
  CHECK(diff.degenerate);
}

TEST_CASE("welch: large-n effect size approaches standardized shift") {
  circuitscope::SplitMix64 rng(7);
  std::vector<double> a(4000), b(4000);
  for (auto& v : a) v = rng.gaussian();
  for (auto& v : b) v = rng.gaussian() + 1.0;
  TestResult r = welch_t(a, b);
  CHECK(std::fabs(*r.effect_size - (-1.0)) < 0.08);
}

TEST_CASE("one-sample: frozen reference, p = 14/27 exactly-ish") {
  std::vector<double> v{1, 2, 3, 4, 5};
  TestResult r = one_sample_t(v, 2.5);
  CHECK(std::fabs(r.statistic - 0.70710678118654752440) < 1e-14);
  CHECK(std::fabs(r.p_value - 14.0 / 27.0) < 1e-12);
}

TEST_CASE("one-sample: identical to mu0") {
  std::vector<double> v{2.5, 2.5, 2.5};
  TestResult r = one_sample_t(v, 2.5);
  CHECK(r.p_value == 1.0);
  TestResult r2 = one_sample_t(v, 3.0);
  CHECK(r2.p_value == 0.0);
  CHECK(r2.degenerate);
}

TEST_CASE("bh: single p unchanged; all-ones rejected nowhere") {
  FdrResult one = bh_adjust({0.03}, 0.05);
  CHECK(one.adjusted_p[0] == 0.03);
  CHECK(one.rejected[0]);
  FdrResult ones = bh_adjust({1.0, 1.0, 1.0}, 0.05);
  for (bool r : ones.rejected) CHECK_FALSE(r);
}

TEST_CASE("bh: textbook four-value case all rejected at 0.05") {
  FdrResult r = bh_adjust({0.01, 0.02, 0.03, 0.04}, 0.05);
  for (bool rej : r.rejected) CHECK(rej);
  CHECK(r.adjusted_p[3] == doctest::Approx(0.04));
  CHECK(r.adjusted_p[0] == doctest::Approx(0.04));  // min over suffix rule
}

TEST_CASE("bh: 1000-vector brute-force sweep, exact equality") {
  std::string msg;
  bool ok = sweeps::sweep_bh(&msg);
  INFO(msg);
  CHECK(ok);
}

TEST_CASE("fisher: symmetric and degenerate tables") {
  CHECK(fisher_exact(1, 1, 1, 1).p_value == doctest::Approx(1.0));
  CHECK(fisher_exact(0, 0, 3, 4).p_value == 1.0);  // zero row margin
  CHECK(fisher_exact(3, 0, 4, 0).p_value == 1.0);  // zero column margin
}

TEST_CASE("fisher: frozen minimum-likelihood references") {
  // [[5,0],[0,5]]: two extreme tables of probability 1/252 each
  TestResult a = fisher_exact(5, 0, 0, 5);
  CHECK(std::fabs(a.p_value - 2.0 / 252.0) < 1e-15);
  // [[2,8],[10,2]]: exact rational reference 0.008284285374068655802...
  TestResult b = fisher_exact(2, 8, 10, 2);
  CHECK(std::fabs(b.p_value - 0.00828428537406865580240193243289) < 1e-14);
  CHECK(std::fabs(b.statistic - 0.00459293028952471676929881264247) < 1e-15);
}

TEST_CASE("fisher: exhaustive enumeration sweep, all totals <= 40") {
  std::string msg;
  bool ok = sweeps::sweep_fisher(&msg);
  INFO(msg);
  CHECK(ok);
}

TEST_CASE("fisher: doubling variant stays a valid p and agrees on symmetry") {
  TestResult d = fisher_exact(5, 0, 0, 5, true);
  CHECK(d.p_value > 0.0);
  CHECK(d.p_value <= 1.0);
  CHECK(std::fabs(d.p_value - 2.0 / 252.0) < 1e-15);
}

TEST_CASE("t-test p-values vs quadrature reference, 200 random cases") {
  std::string msg;
  bool ok = sweeps::sweep_t_tests(&msg);
  INFO(msg);
  CHECK(ok);
}

TEST_CASE("pearson: exact lines and affine invariance") {
  std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> y;
  for (double v : x) y.push_back(2.0 * v + 1.0);
  CHECK(pearson_r(x, y) == doctest::Approx(1.0));
  std::vector<double> yneg;
  for (double v : x) yneg.push_back(-v);
  CHECK(pearson_r(x, yneg) == doctest::Approx(-1.0));

  std::vector<double> u{0.3, -1.2, 2.2, 0.7, -0.4, 1.1};
  std::vector<double> w{1.0, 0.2, -0.5, 2.0, 0.9, -1.3};
  double base = pearson_r(u, w);
  std::vector<double> u2, w2;
  for (double v : u) u2.push_back(3.5 * v - 2.0);
  for (double v : w) w2.push_back(0.25 * v + 7.0);
  CHECK(std::fabs(pearson_r(u2, w2) - base) < 1e-12);
  CHECK_THROWS_AS(pearson_r({1, 1, 1}, {1, 2, 3}), std::domain_error);
}

TEST_CASE("tost: frozen normal-CDF references") {
  TestResult strong = tost_equivalence(0.0, 200, 0.3);
  CHECK(std::fabs(strong.p_value - 6.98555677656310161530233882001e-6) < 1e-12);
  CHECK(strong.p_value < 0.001);

  TestResult weak = tost_equivalence(0.0, 5, 0.3);
  CHECK(std::fabs(weak.p_value - 0.330792161785688137814403714231) < 1e-12);
  CHECK(weak.p_value > 0.05);

  TestResult degen = tost_equivalence(1.0, 50, 0.3);
  CHECK(degen.p_value == 1.0);
  CHECK(degen.degenerate);
}

TEST_CASE("tost: boundary r = bound gives p >= 0.5") {
  std::string msg;
  bool ok = sweeps::tost_boundary(&msg);
  INFO(msg);
  CHECK(ok);
}

TEST_CASE("logistic: separable 1-D reaches perfect holdout accuracy") {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  circuitscope::SplitMix64 rng(11);
  for (int i = 0; i < 120; ++i) {
    double cls = i % 2 == 0 ? 1.0 : -1.0;
    x.push_back({cls * (1.5 + rng.uniform())});
    y.push_back(cls > 0 ? 1 : 0);
  }
  ProbeModel m = fit_logistic(x, y, 1e-4, false, 0.2, 42);
  CHECK(m.validation_accuracy == doctest::Approx(1.0));
  CHECK(m.weights[0] > 0.0);
}

TEST_CASE("logistic: label-independent features — majority vs chance level") {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  circuitscope::SplitMix64 rng(12);
  for (int i = 0; i < 600; ++i) {
    x.push_back({rng.gaussian(), rng.gaussian()});
    y.push_back(rng.uniform() < 0.7 ? 1 : 0);
  }
  // unweighted fit converges to the majority predictor
  ProbeModel plain = fit_logistic(x, y, 1e-3, false, 0.2, 42);
  CHECK(std::fabs(plain.validation_accuracy - 0.7) < 0.1);
  // class-weighted fit has no majority shortcut: chance level ~0.5
  ProbeModel weighted = fit_logistic(x, y, 1e-3, true, 0.2, 42);
  CHECK(std::fabs(weighted.validation_accuracy - 0.5) < 0.1);
}

TEST_CASE("logistic: gradient at optimum matches finite differences") {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  circuitscope::SplitMix64 rng(13);
  for (int i = 0; i < 80; ++i) {
    double a = rng.gaussian(), b = rng.gaussian();
    x.push_back({a, b});
    y.push_back(a + 0.5 * b + 0.3 * rng.gaussian() > 0 ? 1 : 0);
  }
  ProbeModel m = fit_logistic(x, y, 0.01, false, 0.2, 7);

  // evaluate the full-data objective at the returned weights
  std::vector<double> sw(x.size(), 1.0);
  std::vector<double> gw;
  double gb = 0.0;
  logistic_gradient(x, y, sw, 0.01, m.weights, m.bias, gw, gb);

  const double h = 1e-6;
  for (std::size_t j = 0; j < m.weights.size(); ++j) {
    std::vector<double> wp = m.weights, wm = m.weights;
    wp[j] += h;
    wm[j] -= h;
    double fd = (logistic_loss(x, y, sw, 0.01, wp, m.bias) -
                 logistic_loss(x, y, sw, 0.01, wm, m.bias)) /
                (2.0 * h);
    double scale = std::max({1.0, std::fabs(fd), std::fabs(gw[j])});
    CHECK(std::fabs(fd - gw[j]) / scale < 1e-5);
  }
  double fdb = (logistic_loss(x, y, sw, 0.01, m.weights, m.bias + h) -
                logistic_loss(x, y, sw, 0.01, m.weights, m.bias - h)) /
               (2.0 * h);
  CHECK(std::fabs(fdb - gb) / std::max({1.0, std::fabs(gb)}) < 1e-5);
}

TEST_CASE("logistic: single-class input refused") {
  std::vector<std::vector<double>> x{{1}, {2}, {3}, {4}};
  std::vector<int> y{1, 1, 1, 1};
  CHECK_THROWS_AS(fit_logistic(x, y, 0.01, false, 0.25, 1), std::domain_error);
}

TEST_CASE("svd: diagonal, orthogonal, and Frobenius identities") {
  SvdSpectrum diag = svd_spectrum({{3, 0}, {0, 1}});
  REQUIRE(diag.singular_values.size() == 2);
  CHECK(diag.singular_values[0] == doctest::Approx(3.0));
  CHECK(diag.singular_values[1] == doctest::Approx(1.0));

  // rotation matrix: all singular values 1
  double th = 0.7;
  SvdSpectrum rot = svd_spectrum(
      {{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}});
  CHECK(rot.singular_values[0] == doctest::Approx(1.0));
  CHECK(rot.singular_values[1] == doctest::Approx(1.0));

  circuitscope::SplitMix64 rng(21);
  std::vector<std::vector<double>> m(50, std::vector<double>(8));
  double frob2 = 0.0;
  for (auto& row : m)
    for (auto& v : row) {
      v = rng.gaussian();
      frob2 += v * v;
    }
  SvdSpectrum s = svd_spectrum(m);
  REQUIRE(s.singular_values.size() == 8);
  double sum2 = 0.0;
  for (double sv : s.singular_values) sum2 += sv * sv;
  CHECK(std::fabs(sum2 - frob2) / frob2 < 1e-8);
  for (std::size_t i = 1; i < s.singular_values.size(); ++i)
    CHECK(s.singular_values[i - 1] >= s.singular_values[i]);

  // wide matrix goes through the transpose path
  SvdSpectrum wide = svd_spectrum({{1, 0, 0, 2}, {0, 3, 0, 0}});
  REQUIRE(wide.singular_values.size() == 2);
  CHECK(wide.singular_values[0] == doctest::Approx(3.0));
  CHECK(wide.singular_values[1] == doctest::Approx(std::sqrt(5.0)));
}

TEST_CASE("incomplete beta: endpoint and symmetry identities") {
  CHECK(regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  // I_x(a,b) + I_{1-x}(b,a) = 1
  double x = 0.37;
  double lhs = regularized_incomplete_beta(1.7, 2.9, x) +
               regularized_incomplete_beta(2.9, 1.7, 1.0 - x);
  CHECK(std::fabs(lhs - 1.0) < 1e-14);
  // I_x(1,1) = x
  CHECK(std::fabs(regularized_incomplete_beta(1.0, 1.0, 0.42) - 0.42) < 1e-14);
}

TEST_CASE("normal cdf: reference points") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(std::fabs(normal_cdf(1.959963984540054) - 0.975) < 1e-12);
  CHECK(std::fabs(normal_cdf(-1.959963984540054) - 0.025) < 1e-12);
}
