#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <set>
#include <thread>
#include <unistd.h>

#include "cedlog/error.hpp"
#include "cedlog/orchestrator.hpp"
#include "dag_oracle.hpp"

using namespace cedlog;
using namespace cedlog::orchestrator;
namespace synth = cedlog::testing;

namespace {

TaskSpec task(std::string name, std::string payload = "noop", nlohmann::json params = {}) {
  return {std::move(name), std::move(payload),
          params.is_null() ? nlohmann::json::object() : std::move(params)};
}

std::int64_t ts_of(const RunReport& r, const std::string& name, TaskState st) {
  for (const auto& h : r.history) {
    if (h.task == name && h.state == st) return h.ts_us;
  }
  return -1;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("cedlog_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

// -------------------------------------------------------------- define_dag

TEST(DefineDag, Chain) {
  const auto dag = define_dag("chain", {task("a"), task("b"), task("c")}, {{"a", "b"}, {"b", "c"}});
  EXPECT_EQ(dag.topological_order(), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(DefineDag, CycleNamed) {
  try {
    define_dag("cyc", {task("a"), task("b")}, {{"a", "b"}, {"b", "a"}});
    FAIL() << "expected a cycle error";
  } catch (const CycleError& e) {
    const std::set<std::string> members(e.cycle().begin(), e.cycle().end());
    EXPECT_EQ(members, (std::set<std::string>{"a", "b"}));
    EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
  }
  EXPECT_THROW(define_dag("self", {task("a")}, {{"a", "a"}}), CycleError);
}

TEST(DefineDag, Rejections) {
  EXPECT_THROW(define_dag("dup", {task("a"), task("a")}, {}), InvalidArgument);
  EXPECT_THROW(define_dag("edge", {task("a")}, {{"a", "zz"}}), InvalidArgument);
  EXPECT_THROW(define_dag("nopayload", {task("a", "")}, {}), InvalidArgument);
  EXPECT_THROW(define_dag("sched", {task("a")}, {}, 0.0), InvalidArgument);
}

TEST(DefineDag, DiamondOrderAgainstOracle) {
  const auto dag = define_dag("diamond", {task("a"), task("b"), task("c"), task("d")},
                              {{"a", "b"}, {"a", "c"}, {"b", "d"}, {"c", "d"}});
  // Oracle: the set of all valid orders, by enumerating permutations.
  std::vector<std::size_t> perm{0, 1, 2, 3};
  std::set<std::vector<std::size_t>> valid;
  do {
    if (synth::respects_edges(dag, perm)) valid.insert(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(valid.size(), 2u);
  EXPECT_TRUE(valid.contains(dag.topological_order()));

  WorkerPool pool(2);
  StatusJournal journal;
  const auto r = run(dag, pool, TaskRegistry::with_builtins(), journal);
  ASSERT_TRUE(r.succeeded());
  const auto d_queued = ts_of(r, "d", TaskState::Queued);
  EXPECT_GE(d_queued, ts_of(r, "b", TaskState::Success));
  EXPECT_GE(d_queued, ts_of(r, "c", TaskState::Success));
}

TEST(DefineDag, RandomDagsTopologicalOrder) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 200; ++i) {
    const auto dag = synth::random_dag(rng, {}, "rand");
    EXPECT_TRUE(synth::respects_edges(dag, dag.topological_order()));
  }
}

TEST(DefineDag, JsonRoundTrip) {
  const auto dag = define_dag("j", {task("a", "sleep", {{"ms", 5}}), task("b")}, {{"a", "b"}}, 30.0);
  const auto back = dag_from_json(dag.to_json());
  EXPECT_EQ(back.to_json(), dag.to_json());
  EXPECT_THROW(dag_from_json(nlohmann::json{{"dag_id", "x"}, {"tasks", 3}}), FormatError);
}

// --------------------------------------------------------------------- run

TEST(Run, FailurePropagatesToChain) {
  const auto dag = define_dag("chain", {task("a"), task("b", "fail"), task("c")},
                              {{"a", "b"}, {"b", "c"}});
  WorkerPool pool(2);
  StatusJournal journal;
  const auto r = run(dag, pool, TaskRegistry::with_builtins(), journal);
  EXPECT_EQ(r.task("a").state, TaskState::Success);
  EXPECT_EQ(r.task("b").state, TaskState::Failed);
  EXPECT_EQ(r.task("c").state, TaskState::Skipped);
  EXPECT_FALSE(r.succeeded());
  EXPECT_EQ(r.failed(), (std::vector<std::string>{"b"}));
  // The failing task was retried up to the default attempt limit.
  EXPECT_EQ(r.task("b").attempt, 2);
}

TEST(Run, IndependentTasksOverlap) {
  const auto dag = define_dag("pair", {task("x", "sleep", {{"ms", 150}}), task("y", "sleep", {{"ms", 150}})}, {});
  WorkerPool pool(2);
  StatusJournal journal;
  const auto r = run(dag, pool, TaskRegistry::with_builtins(), journal);
  ASSERT_TRUE(r.succeeded());
  const auto xs = ts_of(r, "x", TaskState::Running), xe = ts_of(r, "x", TaskState::Success);
  const auto ys = ts_of(r, "y", TaskState::Running), ye = ts_of(r, "y", TaskState::Success);
  EXPECT_LT(xs, ye);
  EXPECT_LT(ys, xe);
  EXPECT_NE(r.task("x").worker_id, r.task("y").worker_id);
}

TEST(Run, EmptyDag) {
  const auto dag = define_dag("empty", {}, {});
  WorkerPool pool(1);
  StatusJournal journal;
  const auto r = run(dag, pool, TaskRegistry::with_builtins(), journal);
  EXPECT_TRUE(r.succeeded());
  EXPECT_TRUE(r.tasks.empty());
  EXPECT_TRUE(r.history.empty());
}

TEST(Run, StateSequencePerTask) {
  const auto dag = define_dag("seq", {task("a"), task("b")}, {{"a", "b"}});
  WorkerPool pool(1);
  StatusJournal journal;
  const auto r = run(dag, pool, TaskRegistry::with_builtins(), journal);
  std::vector<TaskState> a;
  for (const auto& h : r.history) {
    if (h.task == "a") a.push_back(h.state);
  }
  EXPECT_EQ(a, (std::vector<TaskState>{TaskState::Queued, TaskState::Running, TaskState::Success}));
  // Everything the report lists was journaled first.
  EXPECT_EQ(journal.records().size(), r.history.size());
}

TEST(Run, UnknownPayloadRejectedBeforeStart) {
  const auto dag = define_dag("bad", {task("a", "nope")}, {});
  WorkerPool pool(1);
  StatusJournal journal;
  EXPECT_THROW(run(dag, pool, TaskRegistry::with_builtins(), journal), NotFound);
  EXPECT_TRUE(journal.records().empty());
}

TEST(Run, BlackboardPassesData) {
  TaskRegistry reg;
  reg.add("produce", [](TaskContext& ctx) { ctx.board.put("n", 41); });
  reg.add("consume", [](TaskContext& ctx) { ctx.board.put("m", ctx.board.get<int>("n") + 1); });
  const auto dag = define_dag("bb", {task("p", "produce"), task("c", "consume")}, {{"p", "c"}});
  WorkerPool pool(2);
  StatusJournal journal;
  Blackboard board;
  ASSERT_TRUE(run(dag, pool, reg, journal, board).succeeded());
  EXPECT_EQ(board.get<int>("m"), 42);
  EXPECT_THROW(board.get<std::string>("m"), InvalidArgument);
  EXPECT_THROW(board.get<int>("zz"), NotFound);
}

TEST(Run, CrashRecovery) {
  const auto dag = define_dag("crash", {task("a", "crash_once"), task("b")}, {{"a", "b"}});
  WorkerPool pool(1);
  StatusJournal journal;
  const auto r = run(dag, pool, TaskRegistry::with_builtins(), journal);
  EXPECT_TRUE(r.succeeded());
  EXPECT_EQ(r.task("a").attempt, 2);
  EXPECT_GE(pool.restarts(), 1u);
  EXPECT_FALSE(synth::has_overlapping_attempts(r.history));

  // With a single attempt the lost task fails and its downstream is skipped.
  RunOptions once;
  once.max_attempts = 1;
  const auto r1 = run(dag, pool, TaskRegistry::with_builtins(), journal, once);
  EXPECT_EQ(r1.task("a").state, TaskState::Failed);
  EXPECT_EQ(r1.task("a").error, "worker lost");
  EXPECT_EQ(r1.task("b").state, TaskState::Skipped);
}

TEST(Run, RandomDagsMatchReachabilityOracle) {
  std::mt19937_64 rng(8);
  synth::RandomDagConfig cfg;
  cfg.crash_probability = 0.1;
  WorkerPool pool(3, std::chrono::milliseconds(5));
  const auto reg = TaskRegistry::with_builtins();
  for (int i = 0; i < 60; ++i) {
    const auto dag = synth::random_dag(rng, cfg, "rand");
    StatusJournal journal;
    RunOptions opt;
    opt.max_attempts = 1 + i % 2;
    const auto r = run(dag, pool, reg, journal, opt);
    const auto want = synth::expected_states(dag, opt.max_attempts);
    ASSERT_EQ(r.tasks.size(), dag.tasks.size());
    for (const auto& t : r.tasks) EXPECT_EQ(t.state, want.at(t.task)) << "dag " << i << " " << t.task;
    EXPECT_FALSE(synth::has_overlapping_attempts(r.history));
  }
}

TEST(Run, OverlapCheckerDetectsDoubleDelivery) {
  std::vector<TaskRun> h{{"r", "a", TaskState::Running, 1, 0, 10, ""},
                         {"r", "a", TaskState::Running, 2, 1, 15, ""},
                         {"r", "a", TaskState::Success, 1, 0, 20, ""},
                         {"r", "a", TaskState::Success, 2, 1, 25, ""}};
  EXPECT_TRUE(synth::has_overlapping_attempts(h));
  h[1].ts_us = 21;
  h[3].ts_us = 30;
  std::swap(h[1], h[2]);
  EXPECT_FALSE(synth::has_overlapping_attempts(h));
}

// ----------------------------------------------------------------- journal

TEST(Journal, ListRunsFromDirectory) {
  const auto dir = temp_dir("journal");
  const auto dag = define_dag("etl", {task("a"), task("b", "fail")}, {{"a", "b"}});
  WorkerPool pool(1);
  {
    StatusJournal journal(dir);
    run(dag, pool, TaskRegistry::with_builtins(), journal);
    RunOptions opt;
    opt.run_id = "second";
    run(define_dag("etl", {task("a"), task("b")}, {{"a", "b"}}), pool,
        TaskRegistry::with_builtins(), journal, opt);
  }
  const auto runs = list_runs(dir, "etl");
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_TRUE(runs[0].complete());
  EXPECT_FALSE(runs[0].succeeded());
  EXPECT_EQ(runs[1].run_id, "second");
  EXPECT_TRUE(runs[1].succeeded());
  EXPECT_LE(runs[0].first_us, runs[0].last_us);
  EXPECT_TRUE(list_runs(dir, "other").empty());
  std::filesystem::remove_all(dir);
}

TEST(Journal, RecordRoundTrip) {
  TaskRun r{"run", "t", TaskState::Failed, 2, 3, 12345, "boom"};
  const auto back = TaskRun::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_THROW(task_state_from_string("exploded"), FormatError);
}

// ------------------------------------------------------------- scheduling

TEST(Schedule, IntervalCountsFirings) {
  ManualClock clock;
  std::atomic<int> runs{0};
  ScheduleLoop loop(clock, [&](const TaskDag&) { ++runs; });
  loop.add(define_dag("tick", {task("a")}, {}, 10.0));
  for (int t = 0; t < 35; ++t) {
    clock.advance(1);
    loop.poll();
  }
  loop.drain();
  EXPECT_EQ(loop.fired("tick"), 3u);
  EXPECT_EQ(runs.load(), 3);
}

TEST(Schedule, JumpFiresEveryElapsedInterval) {
  ManualClock clock(100);
  std::atomic<int> runs{0};
  ScheduleLoop loop(clock, [&](const TaskDag&) { ++runs; });
  loop.add(define_dag("jump", {task("a")}, {}, 10.0));
  clock.advance(35);
  loop.poll();
  loop.drain();
  EXPECT_EQ(runs.load(), 3);
}

TEST(Schedule, LongRunsDoNotOverlap) {
  ManualClock clock;
  std::atomic<int> running{0}, worst{0};
  ScheduleLoop loop(clock, [&](const TaskDag&) {
    const int now = ++running;
    worst = std::max(worst.load(), now);
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --running;
  });
  loop.add(define_dag("slow", {task("a")}, {}, 1.0));
  for (int t = 0; t < 5; ++t) {
    clock.advance(1);
    loop.poll();
  }
  loop.drain();
  EXPECT_EQ(loop.completed("slow"), 5u);
  EXPECT_EQ(loop.max_concurrent("slow"), 1u);
  EXPECT_EQ(worst.load(), 1);
}

TEST(Schedule, UnscheduledNeverFires) {
  ManualClock clock;
  std::atomic<int> runs{0};
  ScheduleLoop loop(clock, [&](const TaskDag&) { ++runs; });
  loop.add(define_dag("manual", {task("a")}, {}));
  clock.advance(1000000);
  loop.poll();
  loop.drain();
  EXPECT_EQ(loop.fired("manual"), 0u);
  EXPECT_EQ(runs.load(), 0);
  EXPECT_THROW(loop.add(define_dag("manual", {task("a")}, {})), Conflict);
  EXPECT_THROW(loop.fired("ghost"), NotFound);
}

TEST(Schedule, RunLoopStopsOnRequest) {
  ManualClock clock;
  std::atomic<int> runs{0};
  ScheduleLoop loop(clock, [&](const TaskDag&) { ++runs; });
  loop.add(define_dag("bg", {task("a")}, {}, 2.0));
  std::jthread driver([&](std::stop_token st) { loop.run(st, std::chrono::milliseconds(5)); });
  clock.advance(4);
  for (int i = 0; i < 200 && loop.fired("bg") < 2; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  driver.request_stop();
  driver.join();
  loop.drain();
  EXPECT_EQ(runs.load(), 2);
}
