#pragma once

// Task DAGs executed by a scheduler over a worker pool. Task payloads are
// names resolved through a registry, state changes go to a JSON Lines
// journal, and a schedule loop fires DAGs at fixed intervals of an
// injectable clock.

#include <any>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cedlog/error.hpp"

namespace cedlog::orchestrator {

class CycleError : public InvalidArgument {
 public:
  CycleError(std::vector<std::string> cycle);
  const std::vector<std::string>& cycle() const { return cycle_; }

 private:
  std::vector<std::string> cycle_;
};

struct TaskSpec {
  std::string name;
  std::string payload;  // registry key
  nlohmann::json params = nlohmann::json::object();
};

struct TaskDag {
  std::string dag_id;
  std::vector<TaskSpec> tasks;
  std::vector<std::pair<std::string, std::string>> edges;  // upstream -> downstream
  std::optional<double> schedule;  // interval in seconds (clock ticks / ticks_per_second)

  std::size_t index_of(const std::string& name) const;
  std::vector<std::vector<std::size_t>> downstream() const;
  std::vector<std::vector<std::size_t>> upstream() const;
  // Kahn order, ties broken by declaration order.
  std::vector<std::size_t> topological_order() const;

  nlohmann::json to_json() const;
};

// Validates names, edge endpoints and acyclicity.
TaskDag define_dag(std::string dag_id, std::vector<TaskSpec> tasks,
                   std::vector<std::pair<std::string, std::string>> edges,
                   std::optional<double> schedule = std::nullopt);
TaskDag dag_from_json(const nlohmann::json& doc);
TaskDag load_dag(const std::filesystem::path& path);

// Shared key/value space through which tasks of one run pass data.
class Blackboard {
 public:
  void put(const std::string& key, std::any value);
  bool has(const std::string& key) const;
  template <class T>
  T get(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = values_.find(key);
    if (it == values_.end()) throw NotFound("blackboard has no '" + key + "'");
    const T* v = std::any_cast<T>(&it->second);
    if (!v) throw InvalidArgument("blackboard entry '" + key + "' has another type");
    return *v;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::any> values_;
};

struct TaskContext {
  const TaskSpec& spec;
  std::string run_id;
  int attempt = 1;
  std::size_t worker_id = 0;
  Blackboard& board;
};

// Thrown by a payload to simulate the death of its worker: the worker exits
// without reporting and the pool restarts it.
class WorkerCrash : public std::exception {
 public:
  const char* what() const noexcept override { return "simulated worker crash"; }
};

using TaskFn = std::function<void(TaskContext&)>;

class TaskRegistry {
 public:
  void add(const std::string& payload, TaskFn fn);
  const TaskFn& get(const std::string& payload) const;
  bool contains(const std::string& payload) const { return fns_.contains(payload); }
  std::vector<std::string> names() const;

  // noop, sleep {ms}, fail {message}, crash_once.
  static TaskRegistry with_builtins();

 private:
  std::map<std::string, TaskFn> fns_;
};

// Fixed-size pool. A worker whose job throws WorkerCrash dies without
// reporting; the supervisor notices within one heartbeat, starts a
// replacement and calls the job's on_lost hook.
class WorkerPool {
 public:
  struct Job {
    std::function<void(std::size_t worker_id)> body;
    std::function<void()> on_lost;
  };

  explicit WorkerPool(std::size_t workers,
                      std::chrono::milliseconds heartbeat = std::chrono::milliseconds(10));
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(Job job);
  std::size_t size() const { return slots_.size(); }
  std::size_t restarts() const { return restarts_.load(); }

 private:
  struct Slot {
    std::thread thread;
    std::atomic<bool> dead{false};
    std::optional<Job> current;
  };
  void work(std::size_t id);
  void supervise();

  std::chrono::milliseconds heartbeat_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::deque<Job> queue_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable supervisor_cv_;
  bool stopping_ = false;
  std::atomic<std::size_t> restarts_{0};
  std::thread supervisor_;
};

enum class TaskState { Queued, Running, Success, Failed, Skipped };
std::string to_string(TaskState s);
TaskState task_state_from_string(const std::string& s);

struct TaskRun {
  std::string run_id;
  std::string task;
  TaskState state = TaskState::Queued;
  int attempt = 1;
  std::optional<std::size_t> worker_id;
  std::int64_t ts_us = 0;  // time of this state change, microseconds
  std::string error;

  nlohmann::json to_json() const;
  static TaskRun from_json(const nlohmann::json& doc);
};

// Serialized JSON Lines writer; one file per DAG under a directory, or memory
// only when the directory is empty.
class StatusJournal {
 public:
  explicit StatusJournal(std::filesystem::path dir = {});
  void append(const std::string& dag_id, const TaskRun& record);
  // Every record written through this journal instance, in write order.
  std::vector<TaskRun> records() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::vector<TaskRun> records_;
};

struct RunReport {
  std::string run_id;
  std::string dag_id;
  std::vector<TaskRun> tasks;    // terminal record per task, in DAG order
  std::vector<TaskRun> history;  // every state change, in journal order
  std::int64_t started_us = 0;
  std::int64_t finished_us = 0;

  bool succeeded() const;
  const TaskRun& task(const std::string& name) const;
  std::vector<std::string> failed() const;
  nlohmann::json to_json() const;
};

struct RunOptions {
  int max_attempts = 2;
  std::string run_id;  // generated when empty
};

RunReport run(const TaskDag& dag, WorkerPool& pool, const TaskRegistry& registry,
              StatusJournal& journal, Blackboard& board, const RunOptions& options = {});
RunReport run(const TaskDag& dag, WorkerPool& pool, const TaskRegistry& registry,
              StatusJournal& journal, const RunOptions& options = {});

struct RunSummary {
  std::string run_id;
  std::map<std::string, TaskRun> latest;  // last record per task
  std::int64_t first_us = 0;
  std::int64_t last_us = 0;

  bool complete() const;
  bool succeeded() const;
};

// Runs of one DAG reconstructed from a journal directory, oldest first.
std::vector<RunSummary> list_runs(const std::filesystem::path& dir, const std::string& dag_id);

// ------------------------------------------------------------- scheduling

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now() const = 0;
  virtual double ticks_per_second() const = 0;
  // Blocks until now() may have moved or the timeout passed.
  virtual void wait(std::chrono::milliseconds max_wait) = 0;
};

class SteadyClock : public Clock {
 public:
  std::int64_t now() const override;
  double ticks_per_second() const override { return 1000.0; }
  void wait(std::chrono::milliseconds max_wait) override { std::this_thread::sleep_for(max_wait); }
};

// Test clock that only moves when advanced.
class ManualClock : public Clock {
 public:
  explicit ManualClock(std::int64_t start = 0) : now_(start) {}
  std::int64_t now() const override { return now_.load(); }
  double ticks_per_second() const override { return 1.0; }
  void wait(std::chrono::milliseconds max_wait) override;
  void advance(std::int64_t ticks);

 private:
  std::atomic<std::int64_t> now_;
  std::mutex mu_;
  std::condition_variable cv_;
};

// Fires each scheduled DAG once per elapsed interval, counted from the time
// it was added. Runs of one DAG are queued and executed one at a time on a
// runner thread per DAG; different DAGs run independently.
class ScheduleLoop {
 public:
  using Runner = std::function<void(const TaskDag&)>;

  ScheduleLoop(Clock& clock, Runner runner);
  ~ScheduleLoop();
  ScheduleLoop(const ScheduleLoop&) = delete;
  ScheduleLoop& operator=(const ScheduleLoop&) = delete;

  void add(TaskDag dag);
  // Queues every firing that is due at the current clock time.
  void poll();
  // Blocks until no run is queued or executing.
  void drain();
  // poll() until stop is requested.
  void run(std::stop_token stop, std::chrono::milliseconds idle = std::chrono::milliseconds(50));

  std::size_t fired(const std::string& dag_id) const;
  std::size_t completed(const std::string& dag_id) const;
  std::size_t max_concurrent(const std::string& dag_id) const;

 private:
  struct Entry {
    TaskDag dag;
    std::int64_t interval = 0;
    std::int64_t next_fire = 0;
    std::size_t fired = 0;
    std::size_t pending = 0;
    std::size_t completed = 0;
    std::size_t active = 0;
    std::size_t max_active = 0;
    std::jthread runner;
  };
  void runner_loop(std::stop_token stop, Entry& e);

  Clock& clock_;
  Runner runner_;
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::vector<std::unique_ptr<Entry>> entries_;
};

}  // namespace cedlog::orchestrator
