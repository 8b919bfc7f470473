#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bestrq/common.hpp"

namespace bestrq {

/// One training-loop log row. Wall time never reaches the CSV: runs must be
/// byte-identical given (config, seeds), and wall time is not.
struct MetricsRow {
  std::int64_t step = 0;
  double loss = 0.0;
  bool accuracy_defined = false;
  double masked_accuracy = 0.0;
  bool utilization_defined = false;
  double codes_used_fraction = 0.0;
  double normalized_entropy = 0.0;
  double learning_rate = 0.0;
  double wall_time_ms = 0.0;
  std::int64_t zero_mask_items = 0;  // batch items kept at zero loss; log-only
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline const char* metrics_csv_header() {
  return "step,loss,masked_accuracy,codes_used_fraction,normalized_entropy,learning_rate";
}

inline std::string metrics_csv_line(const MetricsRow& row) {
  std::string line = std::to_string(row.step) + "," + format_double(row.loss) + ",";
  if (row.accuracy_defined) line += format_double(row.masked_accuracy);
  line += ",";
  if (row.utilization_defined) line += format_double(row.codes_used_fraction);
  line += ",";
  if (row.utilization_defined) line += format_double(row.normalized_entropy);
  line += "," + format_double(row.learning_rate);
  return line;
}

/// Append-only CSV sink; flushed on every append so crashes keep the prefix.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::filesystem::path& path) : os_(path) {
    require(static_cast<bool>(os_), Errc::io_error, "cannot open metrics file: " + path.string());
    os_ << metrics_csv_header() << "\n";
    os_.flush();
  }

  void append(const MetricsRow& row) {
    if (!os_.is_open()) return;
    os_ << metrics_csv_line(row) << "\n";
    os_.flush();
    require(static_cast<bool>(os_), Errc::io_error, "metrics write failed");
  }

 private:
  std::ofstream os_;
};

}  // namespace bestrq
