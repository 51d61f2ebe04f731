#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "rtcc/error.hpp"
#include "rtcc/metrics/metrics.hpp"

using namespace rtcc;
using namespace rtcc::metrics;

namespace {

std::vector<double> random_counts(std::mt19937_64& rng, std::size_t n, double hi) {
  std::uniform_real_distribution<double> u(0.5, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("worked examples") {
  const MetricSet m = compute_metrics(std::vector<double>{10, 20}, std::vector<double>{12, 18});
  CHECK(m.mae == 2.0);
  CHECK(m.mse == 2.0);
  REQUIRE(m.nae.has_value());
  CHECK(*m.nae == 0.15);
  CHECK(m.n == 2);

  const MetricSet same = compute_metrics(std::vector<double>{3, 7, 11}, std::vector<double>{3, 7, 11});
  CHECK(same.mae == 0.0);
  CHECK(same.mse == 0.0);
  CHECK(*same.nae == 0.0);

  const MetricSet one = compute_metrics(std::vector<double>{5}, std::vector<double>{9});
  CHECK(one.mae == 4.0);
  CHECK(one.mse == 4.0);
  CHECK(*one.nae == doctest::Approx(0.8).epsilon(1e-15));

  const MetricSet conventional =
      compute_metrics(std::vector<double>{10, 20}, std::vector<double>{12, 18}, NaeDenominator::ground_truth);
  CHECK(*conventional.nae == doctest::Approx((2.0 / 12 + 2.0 / 18) / 2).epsilon(1e-15));
  CHECK_FALSE(compute_metrics(std::vector<double>{0}, std::vector<double>{1}, NaeDenominator::none).nae);
}

TEST_CASE("metric errors") {
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{}, std::vector<double>{}), UsageError);
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{1, 2}, std::vector<double>{1}), UsageError);
  CHECK_THROWS_WITH_AS(compute_metrics(std::vector<double>{4, 0, 1}, std::vector<double>{1, 2, 3}),
                       doctest::Contains("index 1"), DomainError);
  CHECK_THROWS_WITH_AS(compute_metrics(std::vector<double>{4, 2}, std::vector<double>{1, 0}, NaeDenominator::ground_truth),
                       doctest::Contains("index 1"), DomainError);
}

TEST_CASE("metrics match a direct evaluation and obey MAE <= MSE") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> len(1, 60);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    const auto pred = random_counts(rng, n, 500.0);
    const auto gt = random_counts(rng, n, 500.0);
    double a = 0, s = 0, r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a += std::abs(pred[i] - gt[i]);
      s += (pred[i] - gt[i]) * (pred[i] - gt[i]);
      r += std::abs(pred[i] - gt[i]) / pred[i];
    }
    const MetricSet m = compute_metrics(pred, gt);
    REQUIRE(m.mae == doctest::Approx(a / n).epsilon(1e-12));
    REQUIRE(m.mse == doctest::Approx(std::sqrt(s / n)).epsilon(1e-12));
    REQUIRE(*m.nae == doctest::Approx(r / n).epsilon(1e-12));
    REQUIRE(m.mae <= m.mse);
    REQUIRE(m.mae >= 0.0);
    REQUIRE(*m.nae >= 0.0);
  }
}

TEST_CASE("metrics are permutation invariant") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto pred = random_counts(rng, 37, 100.0);
    auto gt = random_counts(rng, 37, 100.0);
    const MetricSet before = compute_metrics(pred, gt);
    std::vector<std::size_t> order(pred.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> p2, g2;
    for (auto i : order) {
      p2.push_back(pred[i]);
      g2.push_back(gt[i]);
    }
    const MetricSet after = compute_metrics(p2, g2);
    REQUIRE(after.mae == doctest::Approx(before.mae).epsilon(1e-14));
    REQUIRE(after.mse == doctest::Approx(before.mse).epsilon(1e-14));
    REQUIRE(*after.nae == doctest::Approx(*before.nae).epsilon(1e-14));
  }
}

TEST_CASE("AES reproduces the published rows") {
  CHECK(std::abs(aes(388.6, 0.15, 1.32) - 46.58) <= 0.02);
  CHECK(std::abs(aes(714.6, 0.15, 11.99) - 12.87) <= 0.02);
  CHECK(std::abs(aes(435.8, 0.24, 2.04) - 30.71) <= 0.02);

  // Direct transcription of the score.
  auto direct = [](double m, double p, double f) {
    return 1 / (1 - std::exp(-0.01 * m)) + 1 / (1 - std::exp(-p)) + 1 / (1 - std::exp(-0.02 * f));
  };
  CHECK(aes(388.6, 0.15, 1.32) == doctest::Approx(direct(388.6, 0.15, 1.32)).epsilon(1e-12));
  CHECK(aes(1.0, 1.0, 1.0, {2.0, 0.0, 0.0}) == doctest::Approx(2 / (1 - std::exp(-0.01))).epsilon(1e-12));

  const double printed = aes(388.6, 0.15, 1.32, {}, AesForm::printed);
  CHECK(printed < 0.0);
  CHECK(printed == doctest::Approx(1 / (1 - std::exp(3.886)) + 1 / (1 - std::exp(0.15)) +
                                   1 / (1 - std::exp(0.0264)))
                       .epsilon(1e-12));
}

TEST_CASE("AES is strictly decreasing in each argument") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> m(1.0, 1000.0), p(0.01, 10.0), f(0.05, 50.0), bump(1.001, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = m(rng), b = p(rng), c = f(rng), k = bump(rng);
    const double base = aes(a, b, c);
    REQUIRE(aes(a * k, b, c) < base);
    REQUIRE(aes(a, b * k, c) < base);
    REQUIRE(aes(a, b, c * k) < base);
  }
}

TEST_CASE("AES domain") {
  CHECK_THROWS_AS(aes(0.0, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(aes(1.0, -1.0, 1.0), DomainError);
  CHECK_THROWS_AS(aes(1.0, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(aes(std::nan(""), 1.0, 1.0), DomainError);
}

TEST_CASE("evaluation CSV") {
  const std::vector<EvalRow> rows{{"0000", 12, 10}, {"0001", 18, 20}};
  std::ostringstream os;
  write_eval_csv(os, rows, compute_metrics(rows));
  CHECK(os.str() ==
        "image_id,gt_count,pred_count\n"
        "0000,12,10\n"
        "0001,18,20\n"
        "#summary,mae=2,mse=2,nae=0.15,n=2\n");

  const std::vector<EvalRow> exact{{"a", 4.25, 4.25}, {"b", 7, 7}};
  std::ostringstream zero;
  write_eval_csv(zero, exact, compute_metrics(exact));
  CHECK(zero.str().ends_with("#summary,mae=0,mse=0,nae=0,n=2\n"));
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1.0 / 3.0) == "0.3333333333333333");
}
