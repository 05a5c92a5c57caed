#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sc {

// One row per epoch: phase, epoch, lr, train_loss, test_acc?, wall_ms.
struct MetricsRecord {
  std::string phase;
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_acc;
  int64_t wall_ms = 0;
};

// Append-only structured-text log (CSV with a fixed header), parseable for
// plotting. Also keeps records in memory for tests.
class MetricsLog {
 public:
  MetricsLog() = default;  // in-memory only
  MetricsLog(std::string path, bool echo_stdout);

  void append(const MetricsRecord& rec);
  const std::vector<MetricsRecord>& records() const { return records_; }

  static std::string header();
  static std::string format(const MetricsRecord& rec);
  static MetricsRecord parse_line(const std::string& line);
  static std::vector<MetricsRecord> parse_file(const std::string& path);

 private:
  std::string path_;
  bool echo_ = false;
  std::vector<MetricsRecord> records_;
};

}  // namespace sc
