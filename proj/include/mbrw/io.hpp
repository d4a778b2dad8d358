#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mbrw {

uint64_t fnv1a64(const std::string& bytes);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// Run provenance, written to <out>/manifest.json before any computation.
/// Output files reference manifest_key = hash(command, config hash, seed) so
/// reruns with identical inputs stay byte-identical; the wall-clock timestamp
/// lives only in the manifest itself.
struct RunManifest {
  std::string command;
  std::string config_path;
  uint64_t config_hash = 0;
  uint64_t master_seed = 0;
  int threads = 0;
  std::string out_dir;
  std::string started_at;  // ISO-8601
  std::string tool_version;
  bool complete = false;

  uint64_t manifest_key() const;
  std::string to_json() const;
  void write(const std::string& path) const;
};

/// CSV writer: '.' decimal, no locale, LF line endings, %.17g doubles.
class CsvWriter {
 public:
  explicit CsvWriter(std::string header, uint64_t manifest_key);
  void row(const std::vector<std::string>& cells);
  static std::string num(double v);
  static std::string num(uint64_t v);
  const std::string& str() const { return buf_; }
  void save(const std::string& path) const { write_file(path, buf_); }

 private:
  std::string buf_;
};

std::string current_timestamp();

}  // namespace mbrw
