#include "ttr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace ttr {

double oks_k(double d_k, double S, double lambda) {
  if (S <= 0.0) throw validation_error("branch volume S must be positive");
  return std::exp(-(d_k * d_k) / (2.0 * S * lambda * lambda));
}

double e_d(double d_k) { return std::exp(-(d_k * d_k)); }

std::optional<double> oks_sample(const EvalRecord& record, double lambda) {
  double sum = 0.0;
  int visible = 0;
  for (int k = 0; k < 2; ++k) {
    if (!record.visible[k]) continue;
    sum += oks_k(record.d[k], record.branch_volume_S, lambda);
    ++visible;
  }
  if (visible == 0) return std::nullopt;
  return sum / visible;
}

namespace {

std::vector<EvalRecord> sorted_by_id(std::vector<EvalRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const EvalRecord& a, const EvalRecord& b) { return a.sample_id < b.sample_id; });
  return records;
}

// Mean over taus of the strict-threshold pass fraction for a given per-record
// score; records scoring nullopt are excluded from the denominator.
std::optional<double> mean_ap(const std::vector<std::optional<double>>& scores) {
  std::size_t defined = 0;
  for (const auto& s : scores)
    if (s) ++defined;
  if (defined == 0) return std::nullopt;
  double total = 0.0;
  for (double tau : ap_thresholds()) {
    std::size_t pass = 0;
    for (const auto& s : scores)
      if (s && *s > tau) ++pass;
    total += static_cast<double>(pass) / defined;
  }
  return total / ap_thresholds().size();
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / values.size();
}

}  // namespace

std::array<double, 10> ap_thresholds() {
  std::array<double, 10> taus{};
  for (int i = 0; i < 10; ++i) taus[i] = 0.50 + 0.05 * i;
  return taus;
}

double ap_tau(const std::vector<EvalRecord>& records, double tau, double lambda) {
  std::size_t defined = 0, pass = 0;
  for (const auto& r : records) {
    const auto oks = oks_sample(r, lambda);
    if (!oks) continue;
    ++defined;
    if (*oks > tau) ++pass;
  }
  if (defined == 0) throw validation_error("no defined samples");
  return static_cast<double>(pass) / defined;
}

MetricsReport full_report(const std::vector<EvalRecord>& records, double lambda,
                          bool count_invisible_as_zero) {
  if (records.empty()) throw validation_error("no evaluation records");
  const auto sorted = sorted_by_id(records);

  MetricsReport rep;
  rep.n_records = sorted.size();

  std::vector<std::optional<double>> all, bin_s, bin_m, bin_l, k1, k2;
  std::vector<double> ed_all, ed_k1, ed_k2;
  for (const auto& r : sorted) {
    std::optional<double> oks = oks_sample(r, lambda);
    if (oks) ++rep.n_defined;
    if (!oks && count_invisible_as_zero) oks = 0.0;
    all.push_back(oks);
    const double radius = r.branch_mean_radius;
    if (radius <= 2.0) {
      bin_s.push_back(oks);
      if (oks) ++rep.n_S;
    } else if (radius <= 3.0) {
      bin_m.push_back(oks);
      if (oks) ++rep.n_M;
    } else {
      bin_l.push_back(oks);
      if (oks) ++rep.n_L;
    }
    for (int k = 0; k < 2; ++k) {
      std::optional<double> per_kp;
      if (r.visible[k]) per_kp = oks_k(r.d[k], r.branch_volume_S, lambda);
      (k == 0 ? k1 : k2).push_back(per_kp);
      if (r.visible[k]) {
        ed_all.push_back(e_d(r.d[k]));
        (k == 0 ? ed_k1 : ed_k2).push_back(e_d(r.d[k]));
      }
    }
  }

  rep.AP = mean_ap(all);
  rep.AP_S = mean_ap(bin_s);
  rep.AP_M = mean_ap(bin_m);
  rep.AP_L = mean_ap(bin_l);
  rep.AP_k1 = mean_ap(k1);
  rep.AP_k2 = mean_ap(k2);
  if (rep.AP) {
    std::size_t defined = 0, p50 = 0, p75 = 0;
    for (const auto& s : all) {
      if (!s) continue;
      ++defined;
      if (*s > 0.50) ++p50;
      if (*s > 0.75) ++p75;
    }
    rep.AP50 = static_cast<double>(p50) / defined;
    rep.AP75 = static_cast<double>(p75) / defined;
  }
  rep.E_d = mean_of(ed_all);
  rep.E_d_k1 = mean_of(ed_k1);
  rep.E_d_k2 = mean_of(ed_k2);
  return rep;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::string opt_csv(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << (*v * 100.0);
  return os.str();
}

}  // namespace

std::string report_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["AP"] = opt_json(rep.AP);
  j["AP50"] = opt_json(rep.AP50);
  j["AP75"] = opt_json(rep.AP75);
  j["AP_S"] = opt_json(rep.AP_S);
  j["AP_M"] = opt_json(rep.AP_M);
  j["AP_L"] = opt_json(rep.AP_L);
  j["AP_k1"] = opt_json(rep.AP_k1);
  j["AP_k2"] = opt_json(rep.AP_k2);
  j["E_d"] = opt_json(rep.E_d);
  j["E_d_k1"] = opt_json(rep.E_d_k1);
  j["E_d_k2"] = opt_json(rep.E_d_k2);
  j["counts"] = {{"records", rep.n_records}, {"defined", rep.n_defined},
                 {"bin_S", rep.n_S},         {"bin_M", rep.n_M},
                 {"bin_L", rep.n_L}};
  return j.dump(2);
}

std::string report_csv_header() {
  return "variant,AP,AP50,AP75,AP_S,AP_M,AP_L,AP_k1,AP_k2,E_d,E_d_k1,E_d_k2";
}

std::string report_csv_row(const std::string& variant, const MetricsReport& rep) {
  std::ostringstream os;
  os << variant;
  for (const auto* f : {&rep.AP, &rep.AP50, &rep.AP75, &rep.AP_S, &rep.AP_M, &rep.AP_L,
                        &rep.AP_k1, &rep.AP_k2, &rep.E_d, &rep.E_d_k1, &rep.E_d_k2})
    os << ',' << opt_csv(*f);
  return os.str();
}

}  // namespace ttr
