#include "cedlog/datasets.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <boost/regex.hpp>
#include <nlohmann/json.hpp>

#include "cedlog/error.hpp"

namespace cedlog::datasets {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<drain::RawLogLine> read_jsonl(const fs::path& path) {
  auto in = open_in(path);
  std::vector<drain::RawLogLine> out;
  std::string line;
  std::size_t lineno = 0;
  std::int64_t next_id = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto l = drain::raw_line_from_json(json::parse(line));
      if (l.line_id == 0) l.line_id = next_id;
      next_id = std::max(next_id, l.line_id + 1);
      out.push_back(std::move(l));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<drain::RawLogLine> read_plain_log(const fs::path& path, const std::string& source) {
  auto in = open_in(path);
  std::vector<drain::RawLogLine> out;
  std::string line;
  std::int64_t id = 0;
  while (std::getline(in, line)) {
    ++id;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.push_back({id, source, std::move(line), "", std::nullopt});
  }
  return out;
}

std::vector<drain::RawLogLine> read_lines(const fs::path& path, const std::string& source) {
  const auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json") return read_jsonl(path);
  return read_plain_log(path, source);
}

std::size_t apply_block_labels(std::span<drain::RawLogLine> lines, const fs::path& csv_path) {
  auto in = open_in(csv_path);
  std::map<std::string, int> labels;
  std::string row;
  while (std::getline(in, row)) {
    if (!row.empty() && row.back() == '\r') row.pop_back();
    const auto comma = row.find(',');
    if (comma == std::string::npos) continue;
    const std::string block = row.substr(0, comma);
    const std::string label = row.substr(comma + 1);
    if (block == "BlockId") continue;
    if (label == "Anomaly") labels[block] = 1;
    else if (label == "Normal") labels[block] = 0;
    else throw FormatError(csv_path.string() + ": unknown label '" + label + "'");
  }
  static const boost::regex kBlock(R"(blk_-?\d+)");
  std::size_t matched = 0;
  for (auto& l : lines) {
    int label = 0;
    bool any = false;
    for (boost::sregex_iterator it(l.text.begin(), l.text.end(), kBlock), end; it != end; ++it) {
      auto hit = labels.find(it->str());
      if (hit == labels.end()) continue;
      any = true;
      label = std::max(label, hit->second);
    }
    matched += any;
    l.label = label;
  }
  return matched;
}

std::vector<int> read_labels(const fs::path& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  std::vector<int> out;
  if (first != std::string::npos && text[first] == '[') {
    try {
      for (const auto& v : json::parse(text)) out.push_back(v.get<int>());
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  } else {
    std::istringstream lines(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line != "0" && line != "1") {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 0 or 1");
      }
      out.push_back(line[0] - '0');
    }
  }
  for (int v : out) {
    if (v != 0 && v != 1) throw FormatError(path.string() + ": labels must be 0 or 1");
  }
  return out;
}

void write_events_jsonl(const fs::path& path, std::span<const drain::ParsedEvent> events) {
  auto out = open_out(path);
  for (const auto& e : events) out << drain::to_json(e).dump() << '\n';
}

void write_events_csv(const fs::path& path, std::span<const drain::ParsedEvent> events) {
  auto out = open_out(path);
  out << drain::csv_header() << '\n';
  for (const auto& e : events) out << drain::to_csv_row(e) << '\n';
}

}  // namespace cedlog::datasets
