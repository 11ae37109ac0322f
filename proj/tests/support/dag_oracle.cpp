#include "dag_oracle.hpp"

#include <algorithm>
#include <set>

namespace cedlog::testing {

using orchestrator::TaskDag;
using orchestrator::TaskRun;
using orchestrator::TaskState;

TaskDag random_dag(std::mt19937_64& rng, const RandomDagConfig& config, const std::string& dag_id) {
  std::uniform_int_distribution<std::size_t> size(config.min_tasks, config.max_tasks);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = size(rng);
  std::vector<orchestrator::TaskSpec> tasks;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = u(rng);
    std::string payload = "noop";
    if (r < config.fail_probability) {
      payload = "fail";
    } else if (r < config.fail_probability + config.crash_probability) {
      payload = "crash_once";
    }
    tasks.push_back({"t" + std::to_string(i), payload, nlohmann::json::object()});
  }
  std::vector<std::pair<std::string, std::string>> edges;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (u(rng) < config.edge_probability) edges.emplace_back(tasks[a].name, tasks[b].name);
    }
  }
  return orchestrator::define_dag(dag_id, std::move(tasks), std::move(edges));
}

std::map<std::string, TaskState> expected_states(const TaskDag& dag, int max_attempts) {
  const std::size_t n = dag.tasks.size();
  const auto down = dag.downstream();
  std::vector<bool> failed(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = dag.tasks[i].payload;
    failed[i] = p == "fail" || (p == "crash_once" && max_attempts < 2);
  }
  // Tasks reachable from a failed task that would have run.
  std::vector<bool> skipped(n, false);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < n; ++i) {
    if (failed[i]) stack.insert(stack.end(), down[i].begin(), down[i].end());
  }
  while (!stack.empty()) {
    const auto d = stack.back();
    stack.pop_back();
    if (skipped[d]) continue;
    skipped[d] = true;
    stack.insert(stack.end(), down[d].begin(), down[d].end());
  }
  std::map<std::string, TaskState> out;
  for (std::size_t i = 0; i < n; ++i) {
    TaskState s = TaskState::Success;
    if (skipped[i]) s = TaskState::Skipped;
    else if (failed[i]) s = TaskState::Failed;
    out[dag.tasks[i].name] = s;
  }
  return out;
}

bool respects_edges(const TaskDag& dag, const std::vector<std::size_t>& order) {
  std::vector<std::size_t> pos(dag.tasks.size(), order.size());
  for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = k;
  for (const auto& [u, d] : dag.edges) {
    if (pos[dag.index_of(u)] >= pos[dag.index_of(d)]) return false;
  }
  return order.size() == dag.tasks.size();
}

bool has_overlapping_attempts(const std::vector<TaskRun>& history) {
  struct Interval {
    std::int64_t begin, end;
  };
  std::map<std::string, std::vector<Interval>> spans;
  std::map<std::pair<std::string, int>, std::int64_t> open;
  std::map<std::pair<std::string, int>, std::size_t> runs;
  for (const auto& r : history) {
    const auto key = std::make_pair(r.task, r.attempt);
    if (r.state == TaskState::Running) {
      // A second running record for the same attempt is a double delivery.
      if (++runs[key] > 1) return true;
      open[key] = r.ts_us;
    } else if (r.state == TaskState::Success || r.state == TaskState::Failed) {
      auto it = open.find(key);
      if (it == open.end()) continue;
      spans[r.task].push_back({it->second, r.ts_us});
      open.erase(it);
    }
  }
  for (const auto& [key, begin] : open) spans[key.first].push_back({begin, INT64_MAX});
  for (auto& [task, v] : spans) {
    std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i].begin < v[i - 1].end) return true;
    }
  }
  return false;
}

}  // namespace cedlog::testing
