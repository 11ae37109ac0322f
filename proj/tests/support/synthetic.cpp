#include "synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace cedlog::testing {

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

}  // namespace

// Templates come in pairs that share their two leading tokens and length.
// Template A of a pair has its parameters right after the shared prefix,
// template B at the end, so a B message scores exactly 0.4 against a fully
// generalized A when L = 10 and stays below the threshold otherwise.
TemplateCorpus template_corpus(std::size_t n_templates, std::size_t per_template,
                               std::uint64_t seed) {
  TemplateCorpus out;
  out.templates = n_templates;
  std::vector<std::pair<std::string, int>> rows;
  for (std::size_t k = 0; k < n_templates; ++k) {
    const std::size_t pair = k / 2;
    const bool second = k % 2 == 1;
    const std::size_t len = 10 + pair % 5;
    std::vector<bool> is_param(len, false);
    if (second) {
      is_param[len - 1] = is_param[len - 2] = true;
    } else {
      is_param[2] = is_param[3] = true;
    }
    for (std::size_t i = 0; i < per_template; ++i) {
      std::string line = fmt("svc%zu op%zu", pair, pair);
      std::size_t slot = 0;
      for (std::size_t pos = 2; pos < len; ++pos) {
        line += ' ';
        if (!is_param[pos]) {
          line += fmt("w%zu_%zu", k, pos);
          continue;
        }
        // Three parameter shapes: a masked number, an identifier and an
        // embedded key=value pair.
        const std::size_t v = 1000 + i * 13 + k;
        switch ((k + slot++) % 3) {
          case 0: line += std::to_string(v); break;
          case 1: line += fmt("id-%zx", v * 2654435761ULL % 1000003); break;
          default: line += fmt("size=%zu", v); break;
        }
      }
      rows.emplace_back(std::move(line), static_cast<int>(k));
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::int64_t id = 1;
  for (auto& [text, t] : rows) {
    out.lines.push_back({id++, "synthetic", std::move(text), "", std::nullopt});
    out.truth.push_back(t);
  }
  return out;
}

double grouping_accuracy(std::span<const std::string> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || predicted.empty()) return 0.0;
  std::map<std::string, std::set<int>> truths_in_group;
  std::map<std::string, std::size_t> group_size;
  std::map<int, std::size_t> truth_size;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    truths_in_group[predicted[i]].insert(truth[i]);
    ++group_size[predicted[i]];
    ++truth_size[truth[i]];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& g = predicted[i];
    if (truths_in_group[g].size() == 1 && group_size[g] == truth_size[truth[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

namespace {

struct Event {
  const char* context;
  double weight;
  bool param_anomalies;     // foreign addresses may appear here
  bool template_anomalies;  // may be emitted by a foreign context
};

// Event catalog: index -> (context, share of traffic, anomaly eligibility).
constexpr Event kEvents[] = {
    {"dfs.DataNode$DataXceiver", 0.20, true, false},       // receiving
    {"dfs.DataNode$PacketResponder", 0.15, false, false},  // responder terminating
    {"dfs.DataNode$PacketResponder", 0.15, true, false},   // received
    {"dfs.FSNamesystem", 0.12, false, false},              // addStoredBlock
    {"dfs.FSNamesystem", 0.10, false, false},              // allocateBlock
    {"dfs.DataBlockScanner", 0.10, false, true},           // verification
    {"dfs.FSDataset", 0.10, false, true},                  // deleting
    {"dfs.DataNode", 0.08, false, false},                  // served
};

constexpr const char* kForeignContexts[] = {"dfs.DataNode$DataTransfer",
                                            "dfs.PendingReplicationBlocks"};

struct Vocab {
  std::mt19937_64& rng;
  int shift;

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

  // Cluster nodes: 40 addresses in one subnet per task.
  std::string node() { return fmt("10.%d.%zu.%zu", 251 - 60 * shift, 20 + pick(4), 60 + pick(10)); }
  // Foreign peers from documentation ranges, a different range per task.
  std::string foreign() {
    static const char* nets[] = {"203.0.113", "198.51.100", "192.0.2", "100.64.7"};
    return fmt("%s.%zu", nets[2 * shift + pick(2)], 1 + pick(30));
  }
  std::string eport() { return std::to_string(40000 + pick(20000)); }
  std::string size() {
    if (pick(3) == 0) return std::to_string(67108864 >> shift);
    return std::to_string(1000 * (1 + shift) + pick(60000));
  }
  std::string blk() {
    const long long v = static_cast<long long>(rng() % 9000000000000000000ULL);
    return fmt("blk_%s%lld", pick(2) ? "-" : "", v);
  }
  std::string task_path() {
    return fmt("/user/root/%s/_temporary/_task_200811%04zu_%04zu_m_%06zu_0/part-%05zu",
               shift ? "terasort" : "rand", 920 + pick(40), pick(9), pick(1000), pick(1000));
  }
  std::string data_path() {
    return fmt("/mnt/hadoop/dfs/data/current/subdir%zu/%s", pick(64), blk().c_str());
  }
};

std::string message(std::size_t e, Vocab& v, bool foreign) {
  const std::string src = foreign ? v.foreign() : v.node();
  switch (e) {
    case 0: return "Receiving block from /" + src + ":" + v.eport() + " to /" + v.node() + ":50010 id " + v.blk();
    case 1: return "PacketResponder " + std::to_string(v.pick(3)) + " for block " + v.blk() + " terminating";
    case 2: return "Received from /" + src + " block " + v.blk() + " of size " + v.size();
    case 3: return "BLOCK* NameSystem.addStoredBlock: blockMap updated: " + v.node() + ":50010 is added to " + v.blk() + " size " + v.size();
    case 4: return "BLOCK* NameSystem.allocateBlock: " + v.task_path() + " " + v.blk();
    case 5: return "Verification succeeded for " + v.blk();
    case 6: return "Deleting block " + v.blk() + " file " + v.data_path();
    default: return v.node() + ":50010 Served block " + v.blk() + " to /" + v.node();
  }
}

}  // namespace

HdfsCorpus hdfs_corpus(const HdfsConfig& config) {
  std::mt19937_64 rng(config.seed);
  Vocab v{rng, config.shift};
  std::vector<double> weights;
  double p_share = 0.0, t_share = 0.0;
  for (const auto& e : kEvents) {
    weights.push_back(e.weight);
    if (e.param_anomalies) p_share += e.weight;
    if (e.template_anomalies) t_share += e.weight;
  }
  std::discrete_distribution<std::size_t> pick_event(weights.begin(), weights.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  HdfsCorpus out;
  for (std::size_t i = 0; i < config.records; ++i) {
    const std::size_t e = pick_event(rng);
    const Event& ev = kEvents[e];
    AnomalyKind kind = AnomalyKind::None;
    const double u = unit(rng);
    if (ev.param_anomalies && u < config.param_anomaly_rate / p_share) kind = AnomalyKind::Parameter;
    if (ev.template_anomalies && u < config.template_anomaly_rate / t_share) kind = AnomalyKind::Template;

    std::string context = ev.context;
    if (kind == AnomalyKind::Template) context = kForeignContexts[v.pick(2)];
    const std::string msg = message(e, v, kind == AnomalyKind::Parameter);
    const std::size_t secs = i / 4;
    const std::string text = fmt("081109 %02zu%02zu%02zu %zu INFO ", 20 + secs / 3600 % 4,
                                 secs / 60 % 60, secs % 60, 1000 + v.pick(30000)) +
                             context + ": " + msg;
    const std::int64_t id = config.first_line_id + static_cast<std::int64_t>(i);
    out.lines.push_back({id, "hdfs-synthetic", text, "", kind == AnomalyKind::None ? 0 : 1});
    out.kinds.push_back(kind);
  }
  return out;
}

}  // namespace cedlog::testing
