#pragma once

// Random DAGs and the reference outcome of running them, shared by the unit
// tests and the acceptance suite.

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cedlog/orchestrator.hpp"

namespace cedlog::testing {

struct RandomDagConfig {
  std::size_t min_tasks = 1;
  std::size_t max_tasks = 12;
  double edge_probability = 0.3;
  double fail_probability = 0.15;
  double crash_probability = 0.0;  // crash_once payloads
};

// Tasks t0..tn-1 with edges only from lower to higher index, so acyclic by
// construction. Payloads are noop, fail or crash_once.
orchestrator::TaskDag random_dag(std::mt19937_64& rng, const RandomDagConfig& config,
                                 const std::string& dag_id);

// Terminal state per task: a task whose upstreams all succeeded fails iff its
// payload is "fail" (crash_once succeeds on retry when max_attempts >= 2);
// any other task is skipped. Computed by reachability from failed tasks.
std::map<std::string, orchestrator::TaskState> expected_states(const orchestrator::TaskDag& dag,
                                                               int max_attempts);

// Every ordering constraint u -> d holds in `order` (a list of task indices).
bool respects_edges(const orchestrator::TaskDag& dag, const std::vector<std::size_t>& order);

// True when some task has two `running` intervals that overlap. An interval
// runs from a running record to the next terminal record of the same attempt.
bool has_overlapping_attempts(const std::vector<orchestrator::TaskRun>& history);

}  // namespace cedlog::testing
