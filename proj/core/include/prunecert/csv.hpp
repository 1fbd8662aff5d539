#pragma once

#include <optional>
#include <string>
#include <vector>

namespace prunecert {

/// Shortest round-trip decimal rendering for doubles (%.17g trimmed); all CSV
/// and report output funnels through this so reruns are byte-identical.
std::string format_double(double v);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  void add_row(const std::vector<std::string>& cells);
  std::string str() const;
  void write_file(const std::string& path) const;
  std::size_t row_count() const { return rows_.size(); }

  static std::string cell(double v) { return format_double(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace prunecert
