#pragma once

// Newline-delimited metric records. Hand-rolled writer: every field is a
// number, a fixed string, or an array of numbers keyed by layer index.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace rom {

struct MetricsRecord {
  int64_t step = 0;
  int64_t tokens = 0;
  std::string split;  // "train" | "val"
  double loss = 0;
  double ppl = 0;
  double lr = 0;
  double grad_norm = 0;
  std::map<int64_t, std::vector<double>> per_layer_utilization;
};

inline std::string to_json_line(const MetricsRecord& r) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"step\":" << r.step << ",\"tokens\":" << r.tokens << ",\"split\":\"" << r.split
     << "\",\"loss\":" << r.loss << ",\"ppl\":" << r.ppl << ",\"lr\":" << r.lr
     << ",\"grad_norm\":" << r.grad_norm << ",\"per_layer_utilization\":{";
  bool first = true;
  for (const auto& [layer, util] : r.per_layer_utilization) {
    if (!first) os << ',';
    first = false;
    os << "\"" << layer << "\":[";
    for (size_t i = 0; i < util.size(); ++i) {
      if (i) os << ',';
      os << util[i];
    }
    os << ']';
  }
  os << "}}";
  return os.str();
}

}  // namespace rom
