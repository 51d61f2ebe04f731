#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rtcc::metrics {

struct MetricSet {
  double mae = 0.0;
  double mse = 0.0;  // root of the mean squared error
  std::optional<double> nae;
  std::int64_t n = 0;
};

enum class NaeDenominator {
  prediction,    // mean |p - g| / p
  ground_truth,  // the usual mean |p - g| / g
  none,          // skip NAE entirely
};

// Throws UsageError for empty or unequal lengths, DomainError naming the
// first index whose NAE denominator is zero.
MetricSet compute_metrics(std::span<const double> pred, std::span<const double> gt,
                          NaeDenominator nae = NaeDenominator::prediction);

struct AesWeights {
  double mse = 1.0;
  double params = 1.0;
  double flops = 1.0;
};

enum class AesForm {
  negated,  // w / (1 - exp(-a x)); reproduces the published scores
  printed,  // w / (1 - exp(+a x)); always negative
};

// Accuracy-efficiency score from root-MSE, parameters in millions and GFLOPs.
// Lower is better. Throws DomainError unless every argument is positive.
double aes(double mse, double params_millions, double flops_g, const AesWeights& weights = {},
           AesForm form = AesForm::negated);

struct EvalRow {
  std::string image_id;
  double gt_count = 0.0;
  double pred_count = 0.0;
};

MetricSet compute_metrics(const std::vector<EvalRow>& rows, NaeDenominator nae = NaeDenominator::prediction);

// "image_id,gt_count,pred_count" rows, then a footer line
// "#summary,mae=..,mse=..,nae=..,n=.." that CSV readers can skip as a comment.
void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows, const MetricSet& metrics);

// Shortest decimal that reads back to the same double.
std::string format_number(double v);

}  // namespace rtcc::metrics
