#pragma once

// Partition-parallel map over contiguous slices of a sequence.

#include <cstddef>
#include <exception>
#include <iterator>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "cedlog/error.hpp"

namespace cedlog::pipeline {

class PartitionError : public Error {
 public:
  PartitionError(std::size_t partition, const std::string& what)
      : Error("partition " + std::to_string(partition) + " failed: " + what),
        partition_(partition) {}

  std::size_t partition() const { return partition_; }

 private:
  std::size_t partition_;
};

struct PartitionRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
};

// n contiguous ranges covering [0, count); the first count % n ranges are one
// element longer. Ranges may be empty when n > count.
inline std::vector<PartitionRange> split_contiguous(std::size_t count, std::size_t n) {
  if (n == 0) throw InvalidArgument("partition count must be >= 1");
  std::vector<PartitionRange> out;
  out.reserve(n);
  const std::size_t base = count / n;
  const std::size_t extra = count % n;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    out.push_back({pos, pos + len});
    pos += len;
  }
  return out;
}

// Runs fn(range, index) for every partition concurrently and returns the
// per-partition results in partition order. The first failing partition (by
// index) is rethrown as PartitionError.
template <class Fn>
auto run_partitions(std::size_t count, std::size_t n, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, PartitionRange, std::size_t>> {
  using Result = std::invoke_result_t<Fn&, PartitionRange, std::size_t>;
  const auto ranges = split_contiguous(count, n);
  std::vector<Result> results(n);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t i) {
    try {
      results[i] = fn(ranges[i], i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(n > 0 ? n - 1 : 0);
  for (std::size_t i = 1; i < n; ++i) threads.emplace_back(work, i);
  work(0);
  for (auto& t : threads) t.join();

  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw PartitionError(i, e.what());
    } catch (...) {
      throw PartitionError(i, "unknown error");
    }
  }
  return results;
}

// Splits `data` into n contiguous partitions, applies fn to each concurrently
// and concatenates the outputs in partition order. fn receives a span over its
// partition (and optionally the partition index) and returns a vector.
template <class T, class Fn>
auto map_partitions(std::span<const T> data, Fn&& fn, std::size_t n) {
  auto call = [&](PartitionRange r, std::size_t i) {
    std::span<const T> part = data.subspan(r.begin, r.size());
    if constexpr (std::is_invocable_v<Fn&, std::span<const T>, std::size_t>) {
      return fn(part, i);
    } else {
      return fn(part);
    }
  };
  auto pieces = run_partitions(data.size(), n, call);
  using Vec = typename decltype(pieces)::value_type;
  Vec out;
  std::size_t total = 0;
  for (const auto& p : pieces) total += p.size();
  out.reserve(total);
  for (auto& p : pieces) {
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

template <class T, class Fn>
auto map_partitions(const std::vector<T>& data, Fn&& fn, std::size_t n) {
  return map_partitions(std::span<const T>(data), std::forward<Fn>(fn), n);
}

}  // namespace cedlog::pipeline
