#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfa/errors.hpp"

namespace dfa {

// One self-describing record per line, append-only. The ts field is a
// logical sequence number (the line index at append time), not wall-clock
// time, so identical runs produce byte-identical files.
struct MetricsRecord {
  std::uint64_t ts = 0;
  std::string config_hash;
  std::string kind;  // epoch | attack | ood | analysis
  nlohmann::json data;
};

class MetricsWriter {
 public:
  MetricsWriter(std::string path, std::string config_hash)
      : path_(std::move(path)), hash_(std::move(config_hash)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ++next_ts_;
  }

  const std::string& path() const { return path_; }

  void append(const std::string& kind, const nlohmann::json& data) {
    nlohmann::json rec;
    rec["ts"] = next_ts_;
    rec["hash"] = hash_;
    rec["kind"] = kind;
    rec["data"] = data;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw DataError("metrics: cannot open '" + path_ + "' for append");
    out << rec.dump() << '\n';
    if (!out) throw DataError("metrics: write failed on '" + path_ + "'");
    ++next_ts_;
  }

 private:
  std::string path_;
  std::string hash_;
  std::uint64_t next_ts_ = 0;
};

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics: cannot open '" + path + "'");
  std::vector<MetricsRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("metrics: bad record at line " + std::to_string(line_no) + ": " + e.what());
    }
    MetricsRecord r;
    r.ts = j.at("ts").get<std::uint64_t>();
    r.config_hash = j.at("hash").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.data = j.at("data");
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace dfa
