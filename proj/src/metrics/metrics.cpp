#include "rtcc/metrics/metrics.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <ostream>

#include "rtcc/error.hpp"

namespace rtcc::metrics {

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> gt, NaeDenominator nae) {
  if (pred.empty() || pred.size() != gt.size()) {
    throw UsageError("compute_metrics: need equal nonempty lengths, got " + std::to_string(pred.size()) + " and " +
                     std::to_string(gt.size()));
  }
  // Extended precision keeps hand-checkable examples exact in double.
  long double abs_sum = 0, sq_sum = 0, rel_sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const long double diff = static_cast<long double>(pred[i]) - gt[i];
    abs_sum += std::fabs(diff);
    sq_sum += diff * diff;
    if (nae == NaeDenominator::none) continue;
    const double denom = nae == NaeDenominator::prediction ? pred[i] : gt[i];
    if (denom == 0.0) {
      throw DomainError(std::string("NAE undefined: ") +
                        (nae == NaeDenominator::prediction ? "prediction" : "ground truth") + " at index " +
                        std::to_string(i) + " is zero");
    }
    rel_sum += std::fabs(diff) / std::fabs(static_cast<long double>(denom));
  }
  const auto n = static_cast<long double>(pred.size());
  MetricSet m;
  m.n = static_cast<std::int64_t>(pred.size());
  m.mae = static_cast<double>(abs_sum / n);
  m.mse = static_cast<double>(std::sqrt(sq_sum / n));
  if (nae != NaeDenominator::none) m.nae = static_cast<double>(rel_sum / n);
  return m;
}

MetricSet compute_metrics(const std::vector<EvalRow>& rows, NaeDenominator nae) {
  std::vector<double> pred, gt;
  for (const auto& r : rows) {
    pred.push_back(r.pred_count);
    gt.push_back(r.gt_count);
  }
  return compute_metrics(pred, gt, nae);
}

double aes(double mse, double params_millions, double flops_g, const AesWeights& weights, AesForm form) {
  if (!(mse > 0.0) || !(params_millions > 0.0) || !(flops_g > 0.0)) {
    throw DomainError("aes: mse, params and flops must all be positive (got " + format_number(mse) + ", " +
                      format_number(params_millions) + ", " + format_number(flops_g) + ")");
  }
  const double sign = form == AesForm::negated ? -1.0 : 1.0;
  auto term = [sign](double w, double x) { return w / -std::expm1(sign * x); };
  return term(weights.mse, 0.01 * mse) + term(weights.params, params_millions) + term(weights.flops, 0.02 * flops_g);
}

std::string format_number(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows, const MetricSet& metrics) {
  out << "image_id,gt_count,pred_count\n";
  for (const auto& r : rows) {
    out << r.image_id << ',' << format_number(r.gt_count) << ',' << format_number(r.pred_count) << '\n';
  }
  out << "#summary,mae=" << format_number(metrics.mae) << ",mse=" << format_number(metrics.mse)
      << ",nae=" << (metrics.nae ? format_number(*metrics.nae) : std::string("nan")) << ",n=" << metrics.n << '\n';
}

}  // namespace rtcc::metrics
