#include "mbrw/io.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mbrw/cone.hpp"
#include "mbrw/report.hpp"

namespace mbrw {

using nlohmann::json;

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

uint64_t RunManifest::manifest_key() const {
  return fnv1a64(command + "|" + std::to_string(config_hash) + "|" + std::to_string(master_seed));
}

std::string RunManifest::to_json() const {
  json j{{"command", command},
         {"config_path", config_path},
         {"config_hash", config_hash},
         {"master_seed", master_seed},
         {"threads", threads},
         {"out_dir", out_dir},
         {"started_at", started_at},
         {"tool_version", tool_version},
         {"manifest_key", manifest_key()},
         {"complete", complete}};
  return j.dump(2);
}

void RunManifest::write(const std::string& path) const { write_file(path, to_json() + "\n"); }

CsvWriter::CsvWriter(std::string header, uint64_t manifest_key) {
  buf_ = "# manifest_key=" + std::to_string(manifest_key) + "\n" + std::move(header) + "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += cells[i];
  }
  buf_ += '\n';
}

std::string CsvWriter::num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string CsvWriter::num(uint64_t v) { return std::to_string(v); }

std::string current_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string VerifyReport::to_json() const {
  json arr = json::array();
  for (const auto& l : lines) {
    arr.push_back(json{{"statistic", l.statistic},
                       {"lhs", l.lhs},
                       {"lhs_se", l.lhs_se},
                       {"rhs", l.rhs},
                       {"rhs_se", l.rhs_se},
                       {"pass", l.pass},
                       {"note", l.note}});
  }
  json j{{"name", name}, {"all_pass", all_pass()}, {"checks", arr}};
  return j.dump(2);
}

}  // namespace mbrw
