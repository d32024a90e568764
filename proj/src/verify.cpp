// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/verify.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "abt/common.hpp"

namespace abt {

void write_oracle_reports(const std::vector<OracleReport>& reports, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) {
    j.push_back({{"check_name", r.check_name},
                 {"max_abs_err", r.max_abs_err},
                 {"max_rel_err", r.max_rel_err},
                 {"tolerance", r.tolerance},
                 {"pass", r.pass}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot write oracle report: " + path);
  out << j.dump(2) << "\n";
}

CollapseDiagnosis collapse_probe(const std::vector<double>& series) {
  if (series.size() < 100) {
    throw std::invalid_argument("collapse_probe: need at least 100 logged steps");
  }
  CollapseDiagnosis d;

  std::vector<double> warmup(series.begin() + 10, series.begin() + 60);
  std::sort(warmup.begin(), warmup.end());
  d.baseline = warmup[warmup.size() / 2];
  d.threshold = std::max(0.1 * d.baseline, 1e-6);

  constexpr int kWindow = 50;
  int run = 0;
  for (size_t i = 60; i < series.size(); ++i) {
    if (series[i] < d.threshold) {
      if (++run >= kWindow) {
        d.collapsed = true;
        d.first_flag_step = static_cast<int>(i) - kWindow + 1;
        break;
      }
    } else {
      run = 0;
    }
  }
  return d;
}

}  // namespace abt
