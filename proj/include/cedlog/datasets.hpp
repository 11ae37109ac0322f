#pragma once

// File readers and writers shared by the CLI and the test suites.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cedlog/drain.hpp"

namespace cedlog::datasets {

// JSON Lines of {line_id?, source, text, received_at?, label?}. Missing ids
// are numbered from 1 in file order. Throws FormatError naming the line.
std::vector<drain::RawLogLine> read_jsonl(const std::filesystem::path& path);

// One raw log line per text line; ids are 1-based line numbers.
std::vector<drain::RawLogLine> read_plain_log(const std::filesystem::path& path,
                                              const std::string& source);

// Either format, chosen by extension (.jsonl / .json vs anything else).
std::vector<drain::RawLogLine> read_lines(const std::filesystem::path& path,
                                          const std::string& source);

// HDFS block labels (BlockId,Label with Normal/Anomaly). A line is labeled 1
// when any block it mentions is anomalous, 0 otherwise. Returns the number of
// lines that mention a labeled block.
std::size_t apply_block_labels(std::span<drain::RawLogLine> lines,
                               const std::filesystem::path& csv_path);

// 0/1 per line, or a single JSON array.
std::vector<int> read_labels(const std::filesystem::path& path);

void write_events_jsonl(const std::filesystem::path& path,
                        std::span<const drain::ParsedEvent> events);
void write_events_csv(const std::filesystem::path& path,
                      std::span<const drain::ParsedEvent> events);

}  // namespace cedlog::datasets
