#pragma once

// Classification metrics, signed ToB error statistics, and the run report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tob/aggregation.hpp"
#include "tob/common.hpp"

namespace tob {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline ConfusionCounts confusion(std::span<const double> probs, std::span<const double> labels,
                                 double threshold = 0.5) {
  if (probs.size() != labels.size())
    throw Error(ErrorCode::shape_mismatch, "confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool truth = labels[i] >= 0.5;
    if (pred && truth) ++c.tp;
    else if (pred && !truth) ++c.fp;
    else if (!pred && truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// metric with a degenerate flag instead of dividing by zero
struct MetricValue {
  double value = 0.0;
  bool degenerate = false;
};

inline MetricValue precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return {0.0, true};
  return {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp), false};
}

inline MetricValue recall(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return {0.0, true};
  return {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn), false};
}

inline MetricValue mcc(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom <= 0.0) return {0.0, true};
  return {(tp * tn - fp * fn) / std::sqrt(denom), false};
}

// ---- ToB error ----

struct TobError {
  bool found = false;
  double err = 0.0;  // seconds; positive = late prediction
};

inline TobError tob_error(const TobEstimate& estimate, double t_birth) {
  if (!estimate.found) return {false, 0.0};
  return {true, estimate.t_hat - t_birth};
}

// type-7 quantile: linear interpolation between order statistics
inline double quantile_type7(std::vector<double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::invalid_argument, "quantile of empty set");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - std::floor(h)) * (sorted[hi] - sorted[lo]);
}

struct ErrorStats {
  double q1 = 0.0, q2 = 0.0, q3 = 0.0;  // quartiles of |err|, found estimates only
  double mean_abs = 0.0;
  double count_pct = 0.0;  // found / total * 100
  bool quartiles_defined = false;
  int total = 0;
  int found = 0;
  std::vector<double> signed_errors;  // found estimates, input order
};

inline ErrorStats error_stats(std::span<const TobError> errors) {
  if (errors.empty()) throw Error(ErrorCode::invalid_argument, "error_stats: empty corpus");
  ErrorStats s;
  s.total = static_cast<int>(errors.size());
  std::vector<double> abs_errs;
  for (const auto& e : errors) {
    if (!e.found) continue;
    ++s.found;
    s.signed_errors.push_back(e.err);
    abs_errs.push_back(std::abs(e.err));
  }
  s.count_pct = 100.0 * static_cast<double>(s.found) / static_cast<double>(s.total);
  if (!abs_errs.empty()) {
    double sum = 0.0;
    for (double a : abs_errs) sum += a;
    s.mean_abs = sum / static_cast<double>(abs_errs.size());
    std::sort(abs_errs.begin(), abs_errs.end());
    s.q1 = quantile_type7(abs_errs, 0.25);
    s.q2 = quantile_type7(abs_errs, 0.50);
    s.q3 = quantile_type7(abs_errs, 0.75);
    s.quartiles_defined = true;
  }
  return s;
}

// ---- report ----

struct ClassificationRow {
  std::string method;
  ConfusionCounts counts;
};

struct TobRow {
  std::string method;
  ErrorStats stats;
};

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Two blocks: per-method classification metrics, then per-method ToB error
// statistics. Byte-stable given identical inputs.
inline void write_report(const std::filesystem::path& path,
                         const std::vector<ClassificationRow>& classification,
                         const std::vector<TobRow>& tob_rows) {
  std::ofstream os(path, std::ios::binary);  // binary: identical bytes on every platform
  if (!os) throw Error(ErrorCode::path, "cannot open report for writing: " + path.string());
  os << "# classification\n";
  os << "method,precision,recall,mcc\n";
  for (const auto& row : classification) {
    os << row.method << "," << format_fixed(precision(row.counts).value) << ","
       << format_fixed(recall(row.counts).value) << "," << format_fixed(mcc(row.counts).value)
       << "\n";
  }
  os << "# tob_estimation\n";
  os << "method,q1_s,q2_s,q3_s,mean_abs_s,count_pct\n";
  for (const auto& row : tob_rows) {
    os << row.method << "," << format_fixed(row.stats.q1) << "," << format_fixed(row.stats.q2)
       << "," << format_fixed(row.stats.q3) << "," << format_fixed(row.stats.mean_abs) << ","
       << format_fixed(row.stats.count_pct, 1) << "\n";
  }
}

}  // namespace tob
