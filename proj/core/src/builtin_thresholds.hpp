#pragma once

namespace qsid::detail {

/// Contents of data/default_thresholds.csv, embedded at configure time.
extern const char kBuiltinThresholdCsv[];

}  // namespace qsid::detail
