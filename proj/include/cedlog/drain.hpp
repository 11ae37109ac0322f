#pragma once

// Online log template mining with a fixed-depth prefix tree.
//
// Layout of the tree: the root's children are keyed by token count, the next
// (depth - 2) levels by the leading tokens of the message, and the node reached
// last holds a small group of templates. Matching a message therefore visits at
// most `depth` nodes no matter how many templates exist.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace cedlog::drain {

inline constexpr std::string_view kWildcard = "<*>";

struct RawLogLine {
  std::int64_t line_id = 0;
  std::string source;
  std::string text;
  std::string received_at;
  std::optional<int> label;  // 0 normal, 1 anomaly, when the producer knows it
};

struct LogTemplate {
  std::string template_id;
  std::vector<std::string> tokens;
  std::size_t match_count = 0;

  std::string str() const;
  std::size_t wildcard_count() const;
};

struct ParsedEvent {
  std::int64_t line_id = 0;
  std::optional<std::string> datetime;
  std::optional<std::string> context;
  std::optional<std::string> level;
  std::optional<std::string> record_id;
  std::string source;
  std::string event_id;
  std::string event_template;
  std::vector<std::string> parameters;
  std::optional<int> label;
  bool header_warning = false;
};

struct ParseFailure {
  std::int64_t line_id = 0;
  std::string reason;
  std::string text;
};

// A message after masking: `masked[i]` is `original[i]` with every rule match
// replaced by the wildcard.
struct TokenizedMessage {
  std::vector<std::string> masked;
  std::vector<std::string> original;
};

struct Rule {
  std::string name;
  std::string pattern;
};

// Ordered regex masking followed by whitespace tokenization. Rules are applied
// per whitespace-delimited token, so a pattern never spans a space.
class Preprocessor {
 public:
  explicit Preprocessor(std::vector<Rule> rules = {});
  ~Preprocessor();
  Preprocessor(const Preprocessor&);
  Preprocessor& operator=(const Preprocessor&);
  Preprocessor(Preprocessor&&) noexcept;
  Preprocessor& operator=(Preprocessor&&) noexcept;

  // Throws FormatError when the message has no tokens.
  TokenizedMessage apply(std::string_view text) const;
  std::vector<std::string> tokens(std::string_view text) const { return apply(text).masked; }

  const std::vector<Rule>& rules() const { return rules_; }

 private:
  struct Compiled;
  std::vector<Rule> rules_;
  std::shared_ptr<const Compiled> compiled_;
};

// Fraction of positions where the template token is the wildcard or equals the
// message token. Empty when the lengths differ.
std::optional<double> similarity(std::span<const std::string> tokens,
                                 std::span<const std::string> template_tokens);

// Values aligned with each wildcard occurrence of the template, in order.
// A token that is entirely "<*>" yields the whole original token; a token with
// embedded wildcards ("size=<*>") yields the substrings they stand for.
std::vector<std::string> extract_parameters(std::span<const std::string> template_tokens,
                                            std::span<const std::string> original_tokens);

struct TreeConfig {
  std::size_t depth = 4;
  double similarity_threshold = 0.4;
  std::size_t max_children = 100;

  void validate() const;
};

class TemplateTree {
 public:
  struct MatchResult {
    std::string template_id;
    bool is_new = false;
    std::size_t nodes_touched = 0;
  };

  struct LookupResult {
    const LogTemplate* tmpl = nullptr;
    double similarity = 0.0;
    std::size_t nodes_touched = 0;
  };

  explicit TemplateTree(TreeConfig config = {});
  TemplateTree(const TemplateTree& other);
  TemplateTree& operator=(const TemplateTree& other);
  TemplateTree(TemplateTree&&) noexcept = default;
  TemplateTree& operator=(TemplateTree&&) noexcept = default;
  ~TemplateTree() = default;

  // Finds the most similar template at the leaf reached by `tokens`; on a
  // match above the threshold the template absorbs the message (differing
  // positions become wildcards), otherwise a new template is created.
  // `weight` is added to match_count (used when merging trees).
  MatchResult insert_or_match(std::span<const std::string> tokens, std::size_t weight = 1);

  // Read-only search. Returns the best template at the reached leaf, or null.
  LookupResult lookup(std::span<const std::string> tokens) const;

  const LogTemplate& at(const std::string& template_id) const;
  const LogTemplate* find(const std::string& template_id) const;
  const std::vector<LogTemplate>& templates() const { return templates_; }
  std::size_t size() const { return templates_.size(); }
  bool empty() const { return templates_.empty(); }
  const TreeConfig& config() const { return config_; }

  nlohmann::json to_json() const;
  static TemplateTree from_json(const nlohmann::json& doc);

 private:
  struct Node {
    std::unordered_map<std::string, std::unique_ptr<Node>> children;
    std::vector<std::size_t> group;  // indices into templates_
  };

  std::string route_key(const std::string& token) const;
  const Node* search_leaf(std::span<const std::string> tokens, std::size_t& touched) const;
  Node& create_leaf(std::span<const std::string> tokens, std::vector<std::string>& path);
  std::size_t best_in_group(const Node& leaf, std::span<const std::string> tokens,
                            double& best_sim) const;
  void rebuild_index();

  TreeConfig config_;
  std::unique_ptr<Node> root_;
  std::vector<LogTemplate> templates_;
  std::vector<std::vector<std::string>> paths_;  // leaf path of each template
  std::unordered_map<std::string, std::size_t> index_;
};

// Header extraction profile: a regex with optional named groups
// `datetime`, `context`, `level`, `record_id`, `label` and `message`, plus the
// masking rules for the message body. An empty pattern treats the whole line
// as the message.
struct HeaderProfile {
  std::string name;
  std::string pattern;
  std::vector<Rule> rules;
  // Value of the `label` group that denotes a normal line; anything else is
  // an anomaly.
  std::string normal_label = "-";

  nlohmann::json to_json() const;
  static HeaderProfile from_json(const nlohmann::json& doc);
};

// Built-in profiles: "hdfs", "bgl", "plain".
HeaderProfile builtin_profile(std::string_view name);
std::vector<std::string> builtin_profile_names();

struct HeaderSplit {
  std::optional<std::string> datetime;
  std::optional<std::string> context;
  std::optional<std::string> level;
  std::optional<std::string> record_id;
  std::optional<int> label;
  std::string message;
  bool header_ok = true;
};

// Immutable, thread-safe line front end: header split + message masking.
class LineParser {
 public:
  explicit LineParser(HeaderProfile profile);
  ~LineParser();
  LineParser(const LineParser&);
  LineParser& operator=(const LineParser&);
  LineParser(LineParser&&) noexcept;
  LineParser& operator=(LineParser&&) noexcept;

  HeaderSplit split_header(std::string_view text) const;
  const Preprocessor& preprocessor() const { return preprocessor_; }
  const HeaderProfile& profile() const { return profile_; }

 private:
  struct Compiled;
  HeaderProfile profile_;
  Preprocessor preprocessor_;
  std::shared_ptr<const Compiled> compiled_;
};

// Parses and mines one line. Throws FormatError when the message body is empty.
ParsedEvent parse_line(TemplateTree& tree, const RawLogLine& line, const LineParser& parser);

struct BatchResult {
  std::vector<ParsedEvent> events;
  TemplateTree tree;
  std::vector<ParseFailure> quarantine;
};

// Partition-parallel parsing. Without a base tree each partition mines its own
// tree and the trees are merged by re-inserting templates in partition order;
// with a base tree (inference) lines are matched against a copy of it. Events
// are returned in input order and carry the final template text.
BatchResult parse_batch(std::span<const RawLogLine> lines, const LineParser& parser,
                        const TreeConfig& config, std::size_t partitions,
                        const TemplateTree* base = nullptr);

nlohmann::json to_json(const ParsedEvent& event);
ParsedEvent parsed_event_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RawLogLine& line);
RawLogLine raw_line_from_json(const nlohmann::json& doc);

// CSV row with columns LineId,Datetime,Context,Level,RecordId,EventId,
// EventTemplate,ParameterList (the list JSON-encoded).
std::string csv_header();
std::string to_csv_row(const ParsedEvent& event);

}  // namespace cedlog::drain
