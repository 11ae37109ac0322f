#pragma once

// Synthetic corpora for tests and the acceptance suite.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cedlog/drain.hpp"

namespace cedlog::testing {

// Plain-profile corpus of known templates, each instantiated with distinct
// parameters. truth[i] is the template index of lines[i]; lines are shuffled.
struct TemplateCorpus {
  std::vector<drain::RawLogLine> lines;
  std::vector<int> truth;
  std::size_t templates = 0;
};

TemplateCorpus template_corpus(std::size_t n_templates, std::size_t per_template,
                               std::uint64_t seed);

// Fraction of messages whose predicted group has exactly the same members as
// their true group.
double grouping_accuracy(std::span<const std::string> predicted, std::span<const int> truth);

// Labeled HDFS-style lines (hdfs header profile). Two anomaly kinds:
//  - parameter-driven: normal event, context and level, but a parameter drawn
//    from an unusual vocabulary (foreign addresses, empty blocks, odd paths);
//  - template-driven: normal parameters, but the event is logged by a context
//    that never emits it in normal operation.
// `shift` > 0 moves the parameter vocabularies (addresses, sizes, paths) to a
// disjoint range, producing a second task with the same structure.
struct HdfsConfig {
  std::size_t records = 10000;
  double param_anomaly_rate = 0.05;
  double template_anomaly_rate = 0.05;
  int shift = 0;
  std::uint64_t seed = 1;
  std::int64_t first_line_id = 1;
};

enum class AnomalyKind { None, Parameter, Template };

struct HdfsCorpus {
  std::vector<drain::RawLogLine> lines;
  std::vector<AnomalyKind> kinds;
};

HdfsCorpus hdfs_corpus(const HdfsConfig& config);

}  // namespace cedlog::testing
