// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace abt {

/// One oracle/property check outcome, serialized to the test-output
/// directory by the acceptance suite.
struct OracleReport {
  std::string check_name;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

void write_oracle_reports(const std::vector<OracleReport>& reports, const std::string& path);

struct CollapseDiagnosis {
  bool collapsed = false;
  int first_flag_step = -1;   // start of the first sustained window
  double baseline = 0.0;      // typical feature std (median over warmup)
  double threshold = 0.0;
};

/// Flags representational collapse from the per-step feature_std_min
/// series: the baseline is the median over steps [10, 60); collapse fires
/// when a window of 50 consecutive steps stays below
/// max(0.1 * baseline, 1e-6). Requires >= 100 logged steps.
CollapseDiagnosis collapse_probe(const std::vector<double>& feature_std_min_series);

}  // namespace abt
