#include "cedlog/drain.hpp"

#include <algorithm>
#include <cctype>

#include <boost/regex.hpp>

#include "cedlog/error.hpp"
#include "cedlog/partition.hpp"

namespace cedlog::drain {

using nlohmann::json;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::vector<std::string_view> split_ws(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

bool purely_numeric(const std::string& token) {
  if (token.empty()) return false;
  return std::all_of(token.begin(), token.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

std::size_t count_wildcards(const std::string& token) {
  std::size_t n = 0;
  for (std::size_t pos = token.find(kWildcard); pos != std::string::npos;
       pos = token.find(kWildcard, pos + kWildcard.size())) {
    ++n;
  }
  return n;
}

std::string join(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

boost::regex compile(const std::string& pattern, const std::string& what) {
  try {
    return boost::regex(pattern, boost::regex::perl | boost::regex::optimize);
  } catch (const boost::regex_error& e) {
    throw InvalidArgument("invalid " + what + " pattern '" + pattern + "': " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------- templates

std::string LogTemplate::str() const { return join(tokens); }

std::size_t LogTemplate::wildcard_count() const {
  std::size_t n = 0;
  for (const auto& t : tokens) n += count_wildcards(t);
  return n;
}

// ------------------------------------------------------------- preprocessor

struct Preprocessor::Compiled {
  std::vector<boost::regex> patterns;
};

Preprocessor::Preprocessor(std::vector<Rule> rules) : rules_(std::move(rules)) {
  auto c = std::make_shared<Compiled>();
  for (const auto& r : rules_) c->patterns.push_back(compile(r.pattern, "rule '" + r.name + "'"));
  compiled_ = std::move(c);
}

Preprocessor::~Preprocessor() = default;
Preprocessor::Preprocessor(const Preprocessor&) = default;
Preprocessor& Preprocessor::operator=(const Preprocessor&) = default;
Preprocessor::Preprocessor(Preprocessor&&) noexcept = default;
Preprocessor& Preprocessor::operator=(Preprocessor&&) noexcept = default;

TokenizedMessage Preprocessor::apply(std::string_view text) const {
  TokenizedMessage out;
  const auto pieces = split_ws(text);
  if (pieces.empty()) throw FormatError("empty message after preprocessing");
  out.original.reserve(pieces.size());
  out.masked.reserve(pieces.size());
  for (auto piece : pieces) {
    std::string token(piece);
    std::string masked = token;
    for (const auto& re : compiled_->patterns) {
      if (boost::regex_search(masked, re)) {
        masked = boost::regex_replace(masked, re, std::string(kWildcard),
                                      boost::regex_constants::format_literal);
      }
    }
    out.original.push_back(std::move(token));
    out.masked.push_back(std::move(masked));
  }
  return out;
}

// --------------------------------------------------------------- similarity

std::optional<double> similarity(std::span<const std::string> tokens,
                                 std::span<const std::string> template_tokens) {
  if (tokens.size() != template_tokens.size() || tokens.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (template_tokens[j] == kWildcard || template_tokens[j] == tokens[j]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(tokens.size());
}

std::vector<std::string> extract_parameters(std::span<const std::string> template_tokens,
                                            std::span<const std::string> original_tokens) {
  if (template_tokens.size() != original_tokens.size()) {
    throw InvalidArgument("template and message lengths differ");
  }
  std::vector<std::string> params;
  for (std::size_t j = 0; j < template_tokens.size(); ++j) {
    const std::string& t = template_tokens[j];
    const std::string& o = original_tokens[j];
    if (t == kWildcard) {
      params.push_back(o);
      continue;
    }
    const std::size_t k = count_wildcards(t);
    if (k == 0) continue;

    // Literal pieces around the wildcards: L0 <*> L1 ... <*> Lk.
    std::vector<std::string_view> lits;
    std::string_view rest(t);
    for (std::size_t pos; (pos = rest.find(kWildcard)) != std::string_view::npos;) {
      lits.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + kWildcard.size());
    }
    lits.push_back(rest);

    std::string_view src(o);
    const auto& head = lits.front();
    const auto& tail = lits.back();
    bool ok = src.size() >= head.size() + tail.size() && src.starts_with(head) &&
              src.ends_with(tail);
    std::vector<std::string> pieces;
    if (ok) {
      std::size_t pos = head.size();
      const std::size_t limit = src.size() - tail.size();
      for (std::size_t i = 1; i + 1 < lits.size(); ++i) {
        const std::size_t found = src.substr(0, limit).find(lits[i], pos);
        if (found == std::string_view::npos) {
          ok = false;
          break;
        }
        pieces.emplace_back(src.substr(pos, found - pos));
        pos = found + lits[i].size();
      }
      if (ok) pieces.emplace_back(src.substr(pos, limit - pos));
    }
    if (!ok) {
      pieces.assign(k, std::string());
      pieces[0] = o;
    }
    for (auto& p : pieces) params.push_back(std::move(p));
  }
  return params;
}

// --------------------------------------------------------------------- tree

void TreeConfig::validate() const {
  if (depth < 2) throw InvalidArgument("tree depth must be >= 2 (root and length level)");
  if (!(similarity_threshold > 0.0 && similarity_threshold <= 1.0)) {
    throw InvalidArgument("similarity threshold must lie in (0, 1]");
  }
  if (max_children < 1) throw InvalidArgument("max_children must be >= 1");
}

TemplateTree::TemplateTree(TreeConfig config)
    : config_(config), root_(std::make_unique<Node>()) {
  config_.validate();
}

TemplateTree::TemplateTree(const TemplateTree& other)
    : config_(other.config_),
      root_(std::make_unique<Node>()),
      templates_(other.templates_),
      paths_(other.paths_) {
  rebuild_index();
}

TemplateTree& TemplateTree::operator=(const TemplateTree& other) {
  if (this != &other) {
    TemplateTree copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void TemplateTree::rebuild_index() {
  root_ = std::make_unique<Node>();
  index_.clear();
  for (std::size_t i = 0; i < templates_.size(); ++i) {
    Node* node = root_.get();
    for (const auto& key : paths_[i]) {
      auto& child = node->children[key];
      if (!child) child = std::make_unique<Node>();
      node = child.get();
    }
    node->group.push_back(i);
    index_.emplace(templates_[i].template_id, i);
  }
}

std::string TemplateTree::route_key(const std::string& token) const {
  if (token == kWildcard || purely_numeric(token)) return std::string(kWildcard);
  return token;
}

const TemplateTree::Node* TemplateTree::search_leaf(std::span<const std::string> tokens,
                                                    std::size_t& touched) const {
  touched = 1;
  auto it = root_->children.find(std::to_string(tokens.size()));
  if (it == root_->children.end()) return nullptr;
  const Node* node = it->second.get();
  ++touched;
  const std::size_t layers = std::min(config_.depth - 2, tokens.size());
  for (std::size_t i = 0; i < layers; ++i) {
    auto c = node->children.find(route_key(tokens[i]));
    if (c == node->children.end()) c = node->children.find(std::string(kWildcard));
    if (c == node->children.end()) return nullptr;
    node = c->second.get();
    ++touched;
  }
  return node;
}

TemplateTree::Node& TemplateTree::create_leaf(std::span<const std::string> tokens,
                                              std::vector<std::string>& path) {
  const std::string wild(kWildcard);
  path.push_back(std::to_string(tokens.size()));
  auto& len_child = root_->children[path.back()];
  if (!len_child) len_child = std::make_unique<Node>();
  Node* node = len_child.get();
  const std::size_t layers = std::min(config_.depth - 2, tokens.size());
  for (std::size_t i = 0; i < layers; ++i) {
    std::string key = route_key(tokens[i]);
    if (!node->children.contains(key) && key != wild) {
      const std::size_t literal = node->children.size() - (node->children.contains(wild) ? 1 : 0);
      if (literal + 1 >= config_.max_children) key = wild;
    }
    auto& child = node->children[key];
    if (!child) child = std::make_unique<Node>();
    path.push_back(key);
    node = child.get();
  }
  return *node;
}

std::size_t TemplateTree::best_in_group(const Node& leaf, std::span<const std::string> tokens,
                                        double& best_sim) const {
  std::size_t best = static_cast<std::size_t>(-1);
  std::size_t best_wild = 0;
  best_sim = -1.0;
  for (std::size_t idx : leaf.group) {
    const auto& t = templates_[idx];
    const auto sim = similarity(tokens, t.tokens);
    if (!sim) continue;
    const std::size_t wild = t.wildcard_count();
    if (*sim > best_sim || (*sim == best_sim && wild > best_wild)) {
      best = idx;
      best_sim = *sim;
      best_wild = wild;
    }
  }
  return best;
}

TemplateTree::MatchResult TemplateTree::insert_or_match(std::span<const std::string> tokens,
                                                        std::size_t weight) {
  if (tokens.empty()) throw InvalidArgument("cannot mine an empty token sequence");
  MatchResult result;
  if (const Node* leaf = search_leaf(tokens, result.nodes_touched)) {
    double sim = 0.0;
    const std::size_t idx = best_in_group(*leaf, tokens, sim);
    if (idx != static_cast<std::size_t>(-1) && sim > config_.similarity_threshold) {
      auto& t = templates_[idx];
      for (std::size_t j = 0; j < tokens.size(); ++j) {
        if (t.tokens[j] != tokens[j]) t.tokens[j] = std::string(kWildcard);
      }
      t.match_count += weight;
      result.template_id = t.template_id;
      return result;
    }
  }

  std::vector<std::string> path;
  Node& leaf = create_leaf(tokens, path);
  const std::size_t idx = templates_.size();
  LogTemplate t;
  t.template_id = "E" + std::to_string(idx + 1);
  t.tokens.assign(tokens.begin(), tokens.end());
  t.match_count = std::max<std::size_t>(weight, 1);
  leaf.group.push_back(idx);
  index_.emplace(t.template_id, idx);
  result.template_id = t.template_id;
  result.is_new = true;
  templates_.push_back(std::move(t));
  paths_.push_back(std::move(path));
  return result;
}

TemplateTree::LookupResult TemplateTree::lookup(std::span<const std::string> tokens) const {
  LookupResult r;
  if (tokens.empty()) return r;
  const Node* leaf = search_leaf(tokens, r.nodes_touched);
  if (!leaf) return r;
  double sim = 0.0;
  const std::size_t idx = best_in_group(*leaf, tokens, sim);
  if (idx == static_cast<std::size_t>(-1)) return r;
  r.tmpl = &templates_[idx];
  r.similarity = sim;
  return r;
}

const LogTemplate* TemplateTree::find(const std::string& template_id) const {
  auto it = index_.find(template_id);
  return it == index_.end() ? nullptr : &templates_[it->second];
}

const LogTemplate& TemplateTree::at(const std::string& template_id) const {
  const auto* t = find(template_id);
  if (!t) throw NotFound("unknown template id " + template_id);
  return *t;
}

json TemplateTree::to_json() const {
  json templates = json::array();
  for (std::size_t i = 0; i < templates_.size(); ++i) {
    templates.push_back({{"id", templates_[i].template_id},
                         {"tokens", templates_[i].tokens},
                         {"count", templates_[i].match_count},
                         {"path", paths_[i]}});
  }
  return {{"depth", config_.depth},
          {"similarity_threshold", config_.similarity_threshold},
          {"max_children", config_.max_children},
          {"templates", std::move(templates)}};
}

TemplateTree TemplateTree::from_json(const json& doc) {
  try {
    TreeConfig cfg;
    cfg.depth = doc.at("depth").get<std::size_t>();
    cfg.similarity_threshold = doc.at("similarity_threshold").get<double>();
    cfg.max_children = doc.at("max_children").get<std::size_t>();
    TemplateTree tree(cfg);
    for (const auto& t : doc.at("templates")) {
      LogTemplate lt;
      lt.template_id = t.at("id").get<std::string>();
      lt.tokens = t.at("tokens").get<std::vector<std::string>>();
      lt.match_count = t.at("count").get<std::size_t>();
      if (lt.tokens.empty()) throw FormatError("template with no tokens");
      tree.templates_.push_back(std::move(lt));
      tree.paths_.push_back(t.at("path").get<std::vector<std::string>>());
    }
    tree.rebuild_index();
    return tree;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed template tree: ") + e.what());
  }
}

// ----------------------------------------------------------------- profiles

json HeaderProfile::to_json() const {
  json rs = json::array();
  for (const auto& r : rules) rs.push_back({{"name", r.name}, {"pattern", r.pattern}});
  return {{"name", name}, {"pattern", pattern}, {"rules", rs}, {"normal_label", normal_label}};
}

HeaderProfile HeaderProfile::from_json(const json& doc) {
  HeaderProfile p;
  p.name = doc.value("name", "custom");
  p.pattern = doc.value("pattern", "");
  p.normal_label = doc.value("normal_label", "-");
  for (const auto& r : doc.value("rules", json::array())) {
    p.rules.push_back({r.value("name", "rule"), r.at("pattern").get<std::string>()});
  }
  return p;
}

namespace {

const Rule kBlockRule{"block_id", R"(blk_-?\d+)"};
const Rule kAddressRule{"ipv4_port", R"(^/?(\d{1,3}\.){3}\d{1,3}(:\d+)?:?$)"};
const Rule kNumberRule{"number", R"(^[-+]?\d+(\.\d+)?$)"};

}  // namespace

HeaderProfile builtin_profile(std::string_view name) {
  HeaderProfile p;
  p.name = std::string(name);
  if (name == "hdfs") {
    // 081109 203615 148 INFO dfs.DataNode$PacketResponder: PacketResponder 1 ...
    p.pattern =
        R"(^(?<datetime>\d{6} \d{6}) (?<record_id>\d+) (?<level>[A-Z]+) (?<context>[^\s:]+): (?<message>.*)$)";
    p.rules = {kBlockRule, kAddressRule, kNumberRule};
  } else if (name == "bgl") {
    // - 1117838570 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.50.675872 R02-M1-N0-C:J12-U11 RAS KERNEL INFO ...
    p.pattern =
        R"(^(?<label>\S+) \d+ \S+ (?<record_id>\S+) (?<datetime>\S+) \S+ \S+ (?<context>\S+) (?<level>\S+) (?<message>.*)$)";
    p.rules = {{"core", R"(core\.\d+)"}, {"hex", R"(^0x[0-9a-fA-F]+$)"}, kAddressRule, kNumberRule};
    p.normal_label = "-";
  } else if (name == "plain") {
    p.rules = {kAddressRule, kNumberRule};
  } else {
    throw NotFound("unknown parser profile '" + std::string(name) + "'");
  }
  return p;
}

std::vector<std::string> builtin_profile_names() { return {"hdfs", "bgl", "plain"}; }

struct LineParser::Compiled {
  bool has_pattern = false;
  boost::regex header;
};

LineParser::LineParser(HeaderProfile profile)
    : profile_(std::move(profile)), preprocessor_(profile_.rules) {
  auto c = std::make_shared<Compiled>();
  if (!profile_.pattern.empty()) {
    c->has_pattern = true;
    c->header = compile(profile_.pattern, "header");
  }
  compiled_ = std::move(c);
}

LineParser::~LineParser() = default;
LineParser::LineParser(const LineParser&) = default;
LineParser& LineParser::operator=(const LineParser&) = default;
LineParser::LineParser(LineParser&&) noexcept = default;
LineParser& LineParser::operator=(LineParser&&) noexcept = default;

HeaderSplit LineParser::split_header(std::string_view text) const {
  HeaderSplit out;
  if (!compiled_->has_pattern) {
    out.message = std::string(text);
    return out;
  }
  boost::match_results<std::string_view::const_iterator> m;
  if (!boost::regex_match(text.begin(), text.end(), m, compiled_->header)) {
    out.header_ok = false;
    out.message = std::string(text);
    return out;
  }
  auto group = [&](const char* name) -> std::optional<std::string> {
    const auto& sm = m[name];
    if (!sm.matched) return std::nullopt;
    return std::string(sm.first, sm.second);
  };
  out.datetime = group("datetime");
  out.context = group("context");
  out.level = group("level");
  out.record_id = group("record_id");
  if (auto lbl = group("label")) out.label = (*lbl == profile_.normal_label) ? 0 : 1;
  auto msg = group("message");
  out.message = msg ? *msg : std::string();
  return out;
}

// ------------------------------------------------------------------ parsing

namespace {

ParsedEvent make_event(const RawLogLine& line, const HeaderSplit& hdr) {
  ParsedEvent ev;
  ev.line_id = line.line_id;
  ev.source = line.source;
  ev.datetime = hdr.datetime;
  ev.context = hdr.context;
  ev.level = hdr.level;
  ev.record_id = hdr.record_id;
  ev.label = line.label ? line.label : hdr.label;
  ev.header_warning = !hdr.header_ok;
  return ev;
}

void fill_template(ParsedEvent& ev, const LogTemplate& t, const TokenizedMessage& tok) {
  ev.event_id = t.template_id;
  ev.event_template = t.str();
  ev.parameters = extract_parameters(t.tokens, tok.original);
}

struct Prepared {
  bool ok = false;
  HeaderSplit header;
  TokenizedMessage tokens;
  std::string error;
  std::string template_id;
};

}  // namespace

ParsedEvent parse_line(TemplateTree& tree, const RawLogLine& line, const LineParser& parser) {
  const HeaderSplit hdr = parser.split_header(line.text);
  const TokenizedMessage tok = parser.preprocessor().apply(hdr.message);
  const auto res = tree.insert_or_match(tok.masked);
  ParsedEvent ev = make_event(line, hdr);
  fill_template(ev, tree.at(res.template_id), tok);
  return ev;
}

BatchResult parse_batch(std::span<const RawLogLine> lines, const LineParser& parser,
                        const TreeConfig& config, std::size_t partitions,
                        const TemplateTree* base) {
  if (partitions < 1) throw InvalidArgument("partition count must be >= 1");
  config.validate();

  struct PartitionOut {
    std::vector<Prepared> items;
    std::optional<TemplateTree> tree;
  };

  // Front end and, for training batches, per-partition mining.
  auto mined = pipeline::run_partitions(
      lines.size(), partitions, [&](pipeline::PartitionRange r, std::size_t) {
        PartitionOut out;
        out.items.resize(r.size());
        if (!base) out.tree.emplace(config);
        for (std::size_t i = 0; i < r.size(); ++i) {
          const RawLogLine& line = lines[r.begin + i];
          Prepared& p = out.items[i];
          p.header = parser.split_header(line.text);
          try {
            p.tokens = parser.preprocessor().apply(p.header.message);
            p.ok = true;
          } catch (const FormatError& e) {
            p.error = e.what();
            continue;
          }
          if (out.tree) out.tree->insert_or_match(p.tokens.masked);
        }
        return out;
      });

  BatchResult result{{}, base ? TemplateTree(*base) : TemplateTree(config), {}};
  TemplateTree& global = result.tree;
  if (!base) {
    for (const auto& part : mined) {
      for (const auto& t : part.tree->templates()) global.insert_or_match(t.tokens, t.match_count);
    }
  }

  // Read-only relabel against the merged tree; only exact fits are accepted.
  const auto ranges = pipeline::split_contiguous(lines.size(), partitions);
  pipeline::run_partitions(lines.size(), partitions,
                           [&](pipeline::PartitionRange r, std::size_t pi) {
                             for (auto& p : mined[pi].items) {
                               if (!p.ok) continue;
                               const auto hit = global.lookup(p.tokens.masked);
                               if (hit.tmpl && hit.similarity == 1.0) {
                                 p.template_id = hit.tmpl->template_id;
                               }
                             }
                             (void)r;
                             return 0;
                           });

  // Misses are mined sequentially, in input order.
  for (auto& part : mined) {
    for (auto& p : part.items) {
      if (p.ok && p.template_id.empty()) {
        p.template_id = global.insert_or_match(p.tokens.masked, base ? 1 : 0).template_id;
      }
    }
  }

  auto events = pipeline::run_partitions(
      lines.size(), partitions, [&](pipeline::PartitionRange r, std::size_t pi) {
        std::vector<ParsedEvent> evs;
        evs.reserve(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
          const Prepared& p = mined[pi].items[i];
          if (!p.ok) continue;
          ParsedEvent ev = make_event(lines[r.begin + i], p.header);
          fill_template(ev, global.at(p.template_id), p.tokens);
          evs.push_back(std::move(ev));
        }
        return evs;
      });

  for (std::size_t pi = 0; pi < partitions; ++pi) {
    for (auto& ev : events[pi]) result.events.push_back(std::move(ev));
    const auto& r = ranges[pi];
    for (std::size_t i = 0; i < r.size(); ++i) {
      const Prepared& p = mined[pi].items[i];
      if (!p.ok) result.quarantine.push_back({lines[r.begin + i].line_id, p.error, lines[r.begin + i].text});
    }
  }
  return result;
}

// --------------------------------------------------------------------- json

namespace {

json opt(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> opt_str(const json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return doc.at(key).get<std::string>();
}

std::optional<int> parse_label(const json& v) {
  if (v.is_null()) return std::nullopt;
  if (v.is_number_integer()) {
    const int x = v.get<int>();
    if (x != 0 && x != 1) throw FormatError("label must be 0 or 1");
    return x;
  }
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "normal" || s == "0" || s == "-") return 0;
    if (s == "anomaly" || s == "1") return 1;
  }
  throw FormatError("unrecognized label value " + v.dump());
}

}  // namespace

json to_json(const ParsedEvent& e) {
  return {{"line_id", e.line_id},
          {"datetime", opt(e.datetime)},
          {"context", opt(e.context)},
          {"level", opt(e.level)},
          {"record_id", opt(e.record_id)},
          {"source", e.source},
          {"event_id", e.event_id},
          {"event_template", e.event_template},
          {"parameter_list", e.parameters},
          {"label", e.label ? json(*e.label) : json(nullptr)},
          {"header_warning", e.header_warning}};
}

ParsedEvent parsed_event_from_json(const json& doc) {
  try {
    ParsedEvent e;
    e.line_id = doc.at("line_id").get<std::int64_t>();
    e.datetime = opt_str(doc, "datetime");
    e.context = opt_str(doc, "context");
    e.level = opt_str(doc, "level");
    e.record_id = opt_str(doc, "record_id");
    e.source = doc.value("source", "");
    e.event_id = doc.at("event_id").get<std::string>();
    e.event_template = doc.at("event_template").get<std::string>();
    e.parameters = doc.at("parameter_list").get<std::vector<std::string>>();
    if (doc.contains("label")) e.label = parse_label(doc.at("label"));
    e.header_warning = doc.value("header_warning", false);
    return e;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed parsed event: ") + ex.what());
  }
}

json to_json(const RawLogLine& l) {
  json doc = {{"line_id", l.line_id}, {"source", l.source}, {"text", l.text},
              {"received_at", l.received_at}};
  if (l.label) doc["label"] = *l.label;
  return doc;
}

RawLogLine raw_line_from_json(const json& doc) {
  if (!doc.is_object()) throw FormatError("log line must be a JSON object");
  try {
    RawLogLine l;
    if (doc.contains("line_id") && !doc.at("line_id").is_null()) {
      l.line_id = doc.at("line_id").get<std::int64_t>();
      if (l.line_id <= 0) throw FormatError("line_id must be positive");
    }
    l.source = doc.value("source", "");
    l.text = doc.at("text").get<std::string>();
    if (doc.contains("received_at") && doc.at("received_at").is_string()) {
      l.received_at = doc.at("received_at").get<std::string>();
    }
    if (doc.contains("label")) l.label = parse_label(doc.at("label"));
    if (split_ws(l.text).empty()) throw FormatError("text is empty");
    return l;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed log line: ") + ex.what());
  }
}

namespace {

std::string csv_field(std::string_view v) {
  if (v.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(v);
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string csv_header() {
  return "LineId,Datetime,Context,Level,RecordId,EventId,EventTemplate,ParameterList";
}

std::string to_csv_row(const ParsedEvent& e) {
  std::string row = std::to_string(e.line_id);
  for (const auto* f : {&e.datetime, &e.context, &e.level, &e.record_id}) {
    row += ',';
    row += csv_field(f->value_or(""));
  }
  row += ',' + csv_field(e.event_id);
  row += ',' + csv_field(e.event_template);
  row += ',' + csv_field(json(e.parameters).dump());
  return row;
}

}  // namespace cedlog::drain
