#pragma once

#include <string>
#include <vector>

namespace mbrw {

/// One verifier comparison: a statistic estimated two ways.
struct CheckLine {
  std::string statistic;
  double lhs = 0.0, lhs_se = 0.0;
  double rhs = 0.0, rhs_se = 0.0;
  bool pass = false;
  std::string note;
};

struct VerifyReport {
  std::string name;
  std::vector<CheckLine> lines;
  bool all_pass() const {
    for (const auto& l : lines)
      if (!l.pass) return false;
    return true;
  }
  std::string to_json() const;
};

}  // namespace mbrw
