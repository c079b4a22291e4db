#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ttr/errors.hpp"

namespace ttr {

// Per-sample evaluation input: keypoint distances in voxel units plus the
// branch stats the OKS normalization needs.
struct EvalRecord {
  std::string sample_id;
  std::array<double, 2> d{0.0, 0.0};
  std::array<bool, 2> visible{true, true};
  double branch_volume_S = 0.0;
  double branch_mean_radius = 0.0;
};

// All values in [0,1]; nullopt marks a field whose denominator was empty
// (e.g. a size bin with no samples). Presentation multiplies by 100.
struct MetricsReport {
  std::optional<double> AP, AP50, AP75;
  std::optional<double> AP_S, AP_M, AP_L;
  std::optional<double> AP_k1, AP_k2;
  std::optional<double> E_d, E_d_k1, E_d_k2;
  std::size_t n_records = 0;
  std::size_t n_defined = 0;        // samples with >= 1 visible keypoint
  std::size_t n_S = 0, n_M = 0, n_L = 0;
};

inline constexpr double kOksLambda = 0.2;

double oks_k(double d_k, double S, double lambda = kOksLambda);
double e_d(double d_k);

// Visible-mean OKS of one sample; nullopt when no keypoint is visible.
std::optional<double> oks_sample(const EvalRecord& record, double lambda = kOksLambda);

// Fraction of defined samples whose OKS strictly exceeds tau.
double ap_tau(const std::vector<EvalRecord>& records, double tau, double lambda = kOksLambda);

// The ten thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> ap_thresholds();

// Aggregate report; record order never affects the result.
// count_invisible_as_zero folds zero-visibility samples into AP denominators
// with OKS 0 instead of excluding them (sensitivity-check mode).
MetricsReport full_report(const std::vector<EvalRecord>& records, double lambda = kOksLambda,
                          bool count_invisible_as_zero = false);

std::string report_to_json(const MetricsReport& report);
std::string report_csv_header();
std::string report_csv_row(const std::string& variant, const MetricsReport& report);

}  // namespace ttr
