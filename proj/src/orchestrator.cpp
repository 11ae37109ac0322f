#include "cedlog/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

namespace cedlog::orchestrator {

using nlohmann::json;

namespace {

std::int64_t wall_us() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

bool valid_id(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

std::string join_cycle(const std::vector<std::string>& cycle) {
  std::string out;
  for (const auto& n : cycle) out += n + " -> ";
  return out + cycle.front();
}

}  // namespace

CycleError::CycleError(std::vector<std::string> cycle)
    : InvalidArgument("dependency cycle: " + join_cycle(cycle)), cycle_(std::move(cycle)) {}

// ---------------------------------------------------------------------- DAG

std::size_t TaskDag::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].name == name) return i;
  }
  throw NotFound("no task named '" + name + "' in DAG '" + dag_id + "'");
}

std::vector<std::vector<std::size_t>> TaskDag::downstream() const {
  std::vector<std::vector<std::size_t>> out(tasks.size());
  for (const auto& [u, d] : edges) out[index_of(u)].push_back(index_of(d));
  return out;
}

std::vector<std::vector<std::size_t>> TaskDag::upstream() const {
  std::vector<std::vector<std::size_t>> out(tasks.size());
  for (const auto& [u, d] : edges) out[index_of(d)].push_back(index_of(u));
  return out;
}

std::vector<std::size_t> TaskDag::topological_order() const {
  const auto down = downstream();
  std::vector<std::size_t> indeg(tasks.size(), 0);
  for (const auto& ds : down) {
    for (auto d : ds) ++indeg[d];
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (indeg[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const auto i = ready.top();
    ready.pop();
    order.push_back(i);
    for (auto d : down[i]) {
      if (--indeg[d] == 0) ready.push(d);
    }
  }
  return order;
}

json TaskDag::to_json() const {
  json ts = json::array();
  for (const auto& t : tasks) ts.push_back({{"name", t.name}, {"payload", t.payload}, {"params", t.params}});
  json es = json::array();
  for (const auto& [u, d] : edges) es.push_back({u, d});
  return {{"dag_id", dag_id},
          {"tasks", ts},
          {"edges", es},
          {"schedule_seconds", schedule ? json(*schedule) : json()}};
}

TaskDag define_dag(std::string dag_id, std::vector<TaskSpec> tasks,
                   std::vector<std::pair<std::string, std::string>> edges,
                   std::optional<double> schedule) {
  if (!valid_id(dag_id)) throw InvalidArgument("invalid dag id '" + dag_id + "'");
  if (schedule && !(*schedule > 0.0)) throw InvalidArgument("schedule interval must be > 0");
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (t.name.empty()) throw InvalidArgument("task name must not be empty");
    if (!names.insert(t.name).second) throw InvalidArgument("duplicate task name '" + t.name + "'");
    if (t.payload.empty()) throw InvalidArgument("task '" + t.name + "' has no payload");
  }
  TaskDag dag{std::move(dag_id), std::move(tasks), std::move(edges), schedule};
  for (const auto& [u, d] : dag.edges) {
    if (!names.contains(u) || !names.contains(d)) {
      throw InvalidArgument("edge " + u + " -> " + d + " references an unknown task");
    }
  }
  // Depth-first search with colors; a back edge closes a cycle.
  const auto down = dag.downstream();
  std::vector<int> color(dag.tasks.size(), 0);
  std::vector<std::size_t> stack;
  std::function<void(std::size_t)> visit = [&](std::size_t v) {
    color[v] = 1;
    stack.push_back(v);
    for (auto w : down[v]) {
      if (color[w] == 1) {
        std::vector<std::string> cycle;
        auto it = std::find(stack.begin(), stack.end(), w);
        for (; it != stack.end(); ++it) cycle.push_back(dag.tasks[*it].name);
        throw CycleError(std::move(cycle));
      }
      if (color[w] == 0) visit(w);
    }
    stack.pop_back();
    color[v] = 2;
  };
  for (std::size_t i = 0; i < dag.tasks.size(); ++i) {
    if (color[i] == 0) visit(i);
  }
  return dag;
}

TaskDag dag_from_json(const json& doc) {
  try {
    std::vector<TaskSpec> tasks;
    for (const auto& t : doc.at("tasks")) {
      tasks.push_back({t.at("name").get<std::string>(), t.at("payload").get<std::string>(),
                       t.value("params", json::object())});
    }
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& e : doc.value("edges", json::array())) {
      if (!e.is_array() || e.size() != 2) throw FormatError("edge must be [upstream, downstream]");
      edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    std::optional<double> schedule;
    if (doc.contains("schedule_seconds") && !doc["schedule_seconds"].is_null()) {
      schedule = doc["schedule_seconds"].get<double>();
    }
    return define_dag(doc.at("dag_id").get<std::string>(), std::move(tasks), std::move(edges),
                      schedule);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed DAG definition: ") + e.what());
  }
}

TaskDag load_dag(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open DAG file " + path.string());
  try {
    return dag_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------- blackboard/registry

void Blackboard::put(const std::string& key, std::any value) {
  std::lock_guard lock(mu_);
  values_[key] = std::move(value);
}

bool Blackboard::has(const std::string& key) const {
  std::lock_guard lock(mu_);
  return values_.contains(key);
}

void TaskRegistry::add(const std::string& payload, TaskFn fn) {
  if (payload.empty() || !fn) throw InvalidArgument("registry entries need a name and a callable");
  fns_[payload] = std::move(fn);
}

const TaskFn& TaskRegistry::get(const std::string& payload) const {
  auto it = fns_.find(payload);
  if (it == fns_.end()) throw NotFound("no task payload registered as '" + payload + "'");
  return it->second;
}

std::vector<std::string> TaskRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : fns_) out.push_back(k);
  return out;
}

TaskRegistry TaskRegistry::with_builtins() {
  TaskRegistry r;
  r.add("noop", [](TaskContext&) {});
  r.add("sleep", [](TaskContext& ctx) {
    std::this_thread::sleep_for(std::chrono::milliseconds(ctx.spec.params.value("ms", 10)));
  });
  r.add("fail", [](TaskContext& ctx) {
    throw Error(ctx.spec.params.value("message", std::string("task failed")));
  });
  r.add("crash_once", [](TaskContext& ctx) {
    if (ctx.attempt == 1) throw WorkerCrash();
  });
  return r;
}

// -------------------------------------------------------------- worker pool

WorkerPool::WorkerPool(std::size_t workers, std::chrono::milliseconds heartbeat)
    : heartbeat_(heartbeat) {
  if (workers == 0) throw InvalidArgument("worker pool needs at least one worker");
  for (std::size_t i = 0; i < workers; ++i) slots_.push_back(std::make_unique<Slot>());
  for (std::size_t i = 0; i < workers; ++i) {
    slots_[i]->thread = std::thread(&WorkerPool::work, this, i);
  }
  supervisor_ = std::thread(&WorkerPool::supervise, this);
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  supervisor_cv_.notify_all();
  supervisor_.join();
  for (auto& s : slots_) {
    if (s->thread.joinable()) s->thread.join();
  }
}

void WorkerPool::submit(Job job) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) throw Error("worker pool is shutting down");
    queue_.push_back(std::move(job));
  }
  cv_.notify_one();
}

void WorkerPool::work(std::size_t id) {
  Slot& slot = *slots_[id];
  for (;;) {
    std::function<void(std::size_t)> body;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      slot.current = std::move(queue_.front());
      queue_.pop_front();
      body = slot.current->body;
    }
    try {
      body(id);
    } catch (...) {
      // The worker dies holding its job; the supervisor takes over.
      std::lock_guard lock(mu_);
      slot.dead = true;
      supervisor_cv_.notify_one();
      return;
    }
    std::lock_guard lock(mu_);
    slot.current.reset();
  }
}

void WorkerPool::supervise() {
  for (;;) {
    std::vector<Job> lost;
    {
      std::unique_lock lock(mu_);
      auto any_dead = [&] {
        return std::any_of(slots_.begin(), slots_.end(), [](const auto& s) { return s->dead.load(); });
      };
      supervisor_cv_.wait_for(lock, heartbeat_, [&] { return stopping_ || any_dead(); });
      if (stopping_) return;
      for (std::size_t i = 0; i < slots_.size(); ++i) {
        Slot& s = *slots_[i];
        if (!s.dead) continue;
        s.thread.join();
        if (s.current) lost.push_back(std::move(*s.current));
        s.current.reset();
        s.dead = false;
        s.thread = std::thread(&WorkerPool::work, this, i);
        ++restarts_;
      }
    }
    for (auto& job : lost) {
      if (job.on_lost) job.on_lost();
    }
  }
}

// ------------------------------------------------------------------ journal

std::string to_string(TaskState s) {
  switch (s) {
    case TaskState::Queued: return "queued";
    case TaskState::Running: return "running";
    case TaskState::Success: return "success";
    case TaskState::Failed: return "failed";
    case TaskState::Skipped: return "skipped";
  }
  return "unknown";
}

TaskState task_state_from_string(const std::string& s) {
  for (auto st : {TaskState::Queued, TaskState::Running, TaskState::Success, TaskState::Failed,
                  TaskState::Skipped}) {
    if (to_string(st) == s) return st;
  }
  throw FormatError("unknown task state '" + s + "'");
}

json TaskRun::to_json() const {
  json j = {{"run_id", run_id}, {"task", task}, {"state", to_string(state)},
            {"attempt", attempt}, {"ts_us", ts_us}};
  j["worker_id"] = worker_id ? json(*worker_id) : json();
  if (!error.empty()) j["error"] = error;
  return j;
}

TaskRun TaskRun::from_json(const json& doc) {
  TaskRun r;
  r.run_id = doc.at("run_id").get<std::string>();
  r.task = doc.at("task").get<std::string>();
  r.state = task_state_from_string(doc.at("state").get<std::string>());
  r.attempt = doc.at("attempt").get<int>();
  r.ts_us = doc.at("ts_us").get<std::int64_t>();
  if (doc.contains("worker_id") && !doc["worker_id"].is_null()) {
    r.worker_id = doc["worker_id"].get<std::size_t>();
  }
  r.error = doc.value("error", "");
  return r;
}

StatusJournal::StatusJournal(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

void StatusJournal::append(const std::string& dag_id, const TaskRun& record) {
  std::lock_guard lock(mu_);
  if (!dir_.empty()) {
    std::ofstream out(dir_ / (dag_id + ".jsonl"), std::ios::app);
    json line = record.to_json();
    line["dag_id"] = dag_id;
    out << line.dump() << '\n';
    if (!out.flush()) throw Error("cannot write run journal for " + dag_id);
  }
  records_.push_back(record);
}

std::vector<TaskRun> StatusJournal::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

// ---------------------------------------------------------------- execution

bool RunReport::succeeded() const {
  return std::all_of(tasks.begin(), tasks.end(),
                     [](const TaskRun& t) { return t.state == TaskState::Success; });
}

const TaskRun& RunReport::task(const std::string& name) const {
  for (const auto& t : tasks) {
    if (t.task == name) return t;
  }
  throw NotFound("no task '" + name + "' in run report");
}

std::vector<std::string> RunReport::failed() const {
  std::vector<std::string> out;
  for (const auto& t : tasks) {
    if (t.state == TaskState::Failed) out.push_back(t.task);
  }
  return out;
}

json RunReport::to_json() const {
  json ts = json::array();
  for (const auto& t : tasks) ts.push_back(t.to_json());
  return {{"run_id", run_id},       {"dag_id", dag_id},           {"succeeded", succeeded()},
          {"tasks", ts},            {"started_us", started_us},   {"finished_us", finished_us}};
}

namespace {

struct Outcome {
  enum Kind { Ok, Fail, Lost } kind;
  std::size_t task;
  int attempt;
};

struct Channel {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Outcome> events;
  std::vector<TaskRun> history;
  std::vector<std::optional<std::size_t>> worker_of;

  void push(Outcome o) {
    {
      std::lock_guard lock(mu);
      events.push_back(o);
    }
    cv.notify_one();
  }
};

}  // namespace

RunReport run(const TaskDag& dag, WorkerPool& pool, const TaskRegistry& registry,
              StatusJournal& journal, const RunOptions& options) {
  Blackboard board;
  return run(dag, pool, registry, journal, board, options);
}

RunReport run(const TaskDag& dag, WorkerPool& pool, const TaskRegistry& registry,
              StatusJournal& journal, Blackboard& board, const RunOptions& options) {
  if (options.max_attempts < 1) throw InvalidArgument("max_attempts must be >= 1");
  for (const auto& t : dag.tasks) registry.get(t.payload);

  static std::atomic<std::uint64_t> counter{0};
  RunReport report;
  report.dag_id = dag.dag_id;
  report.run_id = options.run_id.empty()
                      ? dag.dag_id + "-" + std::to_string(wall_us()) + "-" +
                            std::to_string(counter.fetch_add(1))
                      : options.run_id;
  report.started_us = wall_us();

  const std::size_t n = dag.tasks.size();
  const auto down = dag.downstream();
  std::vector<std::size_t> waiting(n, 0);
  for (const auto& ds : down) {
    for (auto d : ds) ++waiting[d];
  }
  std::vector<std::optional<TaskState>> final_state(n);
  std::vector<TaskRun> final_record(n);

  auto ch = std::make_shared<Channel>();
  ch->worker_of.assign(n, std::nullopt);

  auto record = [&journal, ch, &report, &dag](std::size_t task, TaskState st, int attempt,
                                              std::optional<std::size_t> worker,
                                              std::string error) {
    TaskRun r{report.run_id, dag.tasks[task].name, st, attempt, worker, wall_us(), std::move(error)};
    journal.append(dag.dag_id, r);
    std::lock_guard lock(ch->mu);
    ch->history.push_back(r);
    return r;
  };

  auto enqueue = [&](std::size_t task, int attempt) {
    record(task, TaskState::Queued, attempt, std::nullopt, "");
    const TaskSpec& spec = dag.tasks[task];
    const TaskFn& fn = registry.get(spec.payload);
    WorkerPool::Job job;
    job.body = [&, ch, task, attempt](std::size_t worker) {
      {
        std::lock_guard lock(ch->mu);
        ch->worker_of[task] = worker;
      }
      record(task, TaskState::Running, attempt, worker, "");
      TaskContext ctx{spec, report.run_id, attempt, worker, board};
      try {
        fn(ctx);
      } catch (const WorkerCrash&) {
        throw;
      } catch (const std::exception& e) {
        record(task, TaskState::Failed, attempt, worker, e.what());
        ch->push({Outcome::Fail, task, attempt});
        return;
      }
      record(task, TaskState::Success, attempt, worker, "");
      ch->push({Outcome::Ok, task, attempt});
    };
    job.on_lost = [ch, task, attempt] { ch->push({Outcome::Lost, task, attempt}); };
    pool.submit(std::move(job));
  };

  std::size_t terminal = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (waiting[i] == 0) enqueue(i, 1);
  }
  while (terminal < n) {
    Outcome ev;
    {
      std::unique_lock lock(ch->mu);
      ch->cv.wait(lock, [&] { return !ch->events.empty(); });
      ev = ch->events.front();
      ch->events.pop_front();
    }
    const std::size_t i = ev.task;
    if (ev.kind == Outcome::Ok) {
      final_state[i] = TaskState::Success;
      ++terminal;
      for (auto d : down[i]) {
        if (--waiting[d] == 0) enqueue(d, 1);
      }
      continue;
    }
    if (ev.kind == Outcome::Lost) {
      std::optional<std::size_t> worker;
      {
        std::lock_guard lock(ch->mu);
        worker = ch->worker_of[i];
      }
      record(i, TaskState::Failed, ev.attempt, worker, "worker lost");
    }
    if (ev.attempt < options.max_attempts) {
      enqueue(i, ev.attempt + 1);
      continue;
    }
    final_state[i] = TaskState::Failed;
    ++terminal;
    std::vector<std::size_t> stack(down[i].begin(), down[i].end());
    while (!stack.empty()) {
      const auto d = stack.back();
      stack.pop_back();
      if (final_state[d]) continue;
      final_state[d] = TaskState::Skipped;
      ++terminal;
      record(d, TaskState::Skipped, 0, std::nullopt, "upstream '" + dag.tasks[i].name + "' failed");
      stack.insert(stack.end(), down[d].begin(), down[d].end());
    }
  }

  {
    std::lock_guard lock(ch->mu);
    report.history = ch->history;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto it = report.history.rbegin(); it != report.history.rend(); ++it) {
      if (it->task == dag.tasks[i].name) {
        final_record[i] = *it;
        break;
      }
    }
  }
  report.tasks = std::move(final_record);
  report.finished_us = wall_us();
  return report;
}

bool RunSummary::complete() const {
  return std::all_of(latest.begin(), latest.end(), [](const auto& kv) {
    const auto s = kv.second.state;
    return s == TaskState::Success || s == TaskState::Failed || s == TaskState::Skipped;
  });
}

bool RunSummary::succeeded() const {
  return std::all_of(latest.begin(), latest.end(),
                     [](const auto& kv) { return kv.second.state == TaskState::Success; });
}

std::vector<RunSummary> list_runs(const std::filesystem::path& dir, const std::string& dag_id) {
  std::vector<RunSummary> out;
  const auto path = dir / (dag_id + ".jsonl");
  std::ifstream in(path);
  if (!in) return out;
  std::map<std::string, std::size_t> pos;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TaskRun r;
    try {
      r = TaskRun::from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    auto [it, inserted] = pos.try_emplace(r.run_id, out.size());
    if (inserted) {
      out.push_back({r.run_id, {}, r.ts_us, r.ts_us});
    }
    auto& s = out[it->second];
    s.last_us = std::max(s.last_us, r.ts_us);
    s.latest[r.task] = r;
  }
  return out;
}

// --------------------------------------------------------------- schedules

std::int64_t SteadyClock::now() const {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

void ManualClock::wait(std::chrono::milliseconds max_wait) {
  std::unique_lock lock(mu_);
  const auto start = now_.load();
  cv_.wait_for(lock, max_wait, [&] { return now_.load() != start; });
}

void ManualClock::advance(std::int64_t ticks) {
  if (ticks < 0) throw InvalidArgument("clock cannot move backwards");
  {
    std::lock_guard lock(mu_);
    now_ += ticks;
  }
  cv_.notify_all();
}

ScheduleLoop::ScheduleLoop(Clock& clock, Runner runner) : clock_(clock), runner_(std::move(runner)) {
  if (!runner_) throw InvalidArgument("schedule loop needs a runner");
}

ScheduleLoop::~ScheduleLoop() {
  for (auto& e : entries_) e->runner.request_stop();
  cv_.notify_all();
  for (auto& e : entries_) {
    if (e->runner.joinable()) e->runner.join();
  }
}

void ScheduleLoop::add(TaskDag dag) {
  auto e = std::make_unique<Entry>();
  e->dag = std::move(dag);
  if (e->dag.schedule) {
    e->interval = std::llround(*e->dag.schedule * clock_.ticks_per_second());
    if (e->interval < 1) throw InvalidArgument("schedule interval is below one clock tick");
    e->next_fire = clock_.now() + e->interval;
  }
  Entry& ref = *e;
  {
    std::lock_guard lock(mu_);
    for (const auto& other : entries_) {
      if (other->dag.dag_id == ref.dag.dag_id) throw Conflict("DAG '" + ref.dag.dag_id + "' already added");
    }
    entries_.push_back(std::move(e));
  }
  ref.runner = std::jthread([this, &ref](std::stop_token st) { runner_loop(st, ref); });
}

void ScheduleLoop::poll() {
  const auto now = clock_.now();
  {
    std::lock_guard lock(mu_);
    for (auto& e : entries_) {
      if (e->interval == 0) continue;
      while (e->next_fire <= now) {
        ++e->pending;
        ++e->fired;
        e->next_fire += e->interval;
      }
    }
  }
  cv_.notify_all();
}

void ScheduleLoop::runner_loop(std::stop_token stop, Entry& e) {
  for (;;) {
    {
      std::unique_lock lock(mu_);
      if (!cv_.wait(lock, stop, [&] { return e.pending > 0; })) return;
      --e.pending;
      ++e.active;
      e.max_active = std::max(e.max_active, e.active);
    }
    try {
      runner_(e.dag);
    } catch (...) {
      // A failed run is recorded by the runner; the schedule keeps going.
    }
    {
      std::lock_guard lock(mu_);
      --e.active;
      ++e.completed;
    }
    cv_.notify_all();
  }
}

void ScheduleLoop::drain() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] {
    return std::all_of(entries_.begin(), entries_.end(),
                       [](const auto& e) { return e->pending == 0 && e->active == 0; });
  });
}

void ScheduleLoop::run(std::stop_token stop, std::chrono::milliseconds idle) {
  while (!stop.stop_requested()) {
    poll();
    clock_.wait(idle);
  }
}

std::size_t ScheduleLoop::fired(const std::string& dag_id) const {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e->dag.dag_id == dag_id) return e->fired;
  }
  throw NotFound("no DAG '" + dag_id + "' in schedule");
}

std::size_t ScheduleLoop::completed(const std::string& dag_id) const {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e->dag.dag_id == dag_id) return e->completed;
  }
  throw NotFound("no DAG '" + dag_id + "' in schedule");
}

std::size_t ScheduleLoop::max_concurrent(const std::string& dag_id) const {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e->dag.dag_id == dag_id) return e->max_active;
  }
  throw NotFound("no DAG '" + dag_id + "' in schedule");
}

}  // namespace cedlog::orchestrator
