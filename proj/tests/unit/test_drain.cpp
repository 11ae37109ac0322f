#include <gtest/gtest.h>

#include <random>
#include <set>

#include "cedlog/drain.hpp"
#include "cedlog/error.hpp"
#include "cedlog/partition.hpp"
#include "synthetic.hpp"

using namespace cedlog;
using namespace cedlog::drain;
namespace synth = cedlog::testing;
using Tokens = std::vector<std::string>;

namespace {

Rule digits() { return {"digits", R"(\d+)"}; }

// Direct evaluation of the similarity formula, kept independent of the
// library implementation.
double similarity_oracle(const Tokens& w, const Tokens& t) {
  double hits = 0;
  for (std::size_t j = 0; j < w.size(); ++j) hits += (t[j] == "<*>" || t[j] == w[j]);
  return hits / static_cast<double>(w.size());
}

std::set<std::string> template_strings(const TemplateTree& tree) {
  std::set<std::string> out;
  for (const auto& t : tree.templates()) out.insert(t.str());
  return out;
}

}  // namespace

TEST(Preprocess, DigitsRule) {
  Preprocessor p({digits()});
  EXPECT_EQ(p.tokens("send 42 bytes"), (Tokens{"send", "<*>", "bytes"}));
}

TEST(Preprocess, NoRules) {
  Preprocessor p;
  EXPECT_EQ(p.tokens("open file"), (Tokens{"open", "file"}));
}

TEST(Preprocess, AddressRule) {
  const auto profile = builtin_profile("plain");
  Preprocessor p(profile.rules);
  EXPECT_EQ(p.tokens("src /10.0.0.1:5000"), (Tokens{"src", "<*>"}));
}

TEST(Preprocess, KeepsOriginalTokens) {
  Preprocessor p({digits()});
  const auto m = p.apply("size=42  x");
  EXPECT_EQ(m.masked, (Tokens{"size=<*>", "x"}));
  EXPECT_EQ(m.original, (Tokens{"size=42", "x"}));
}

TEST(Preprocess, EmptyMessageRejected) {
  Preprocessor p;
  EXPECT_THROW(p.apply("   \t "), FormatError);
  EXPECT_THROW(p.apply(""), FormatError);
}

TEST(Preprocess, InvalidPatternRejected) {
  EXPECT_THROW(Preprocessor(std::vector<Rule>{{"bad", "(unclosed"}}), InvalidArgument);
}

TEST(Similarity, Examples) {
  EXPECT_DOUBLE_EQ(*similarity(Tokens{"send", "42", "bytes"}, Tokens{"send", "<*>", "bytes"}), 1.0);
  EXPECT_DOUBLE_EQ(*similarity(Tokens{"send", "42", "bytes"}, Tokens{"recv", "<*>", "bytes"}),
                   2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*similarity(Tokens{"a", "b"}, Tokens{"a", "b"}), 1.0);
}

TEST(Similarity, LengthMismatchIsNotAScore) {
  EXPECT_FALSE(similarity(Tokens{"a", "b"}, Tokens{"a"}).has_value());
}

TEST(Similarity, RandomPairsMatchFormula) {
  std::mt19937_64 rng(3);
  const Tokens vocab{"a", "b", "c", "<*>"};
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t m = 1 + rng() % 12;
    Tokens w(m), t(m);
    for (std::size_t j = 0; j < m; ++j) {
      w[j] = vocab[rng() % 3];
      t[j] = vocab[rng() % 4];
    }
    const double s = *similarity(w, t);
    EXPECT_NEAR(s, similarity_oracle(w, t), 1e-12);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    EXPECT_DOUBLE_EQ(*similarity(w, Tokens(m, "<*>")), 1.0);
  }
}

TEST(Tree, EmptyTreeCreates) {
  TemplateTree tree;
  const auto r = tree.insert_or_match(Tokens{"open", "file", "A"});
  EXPECT_TRUE(r.is_new);
  EXPECT_EQ(tree.size(), 1u);
}

TEST(Tree, RepeatMatches) {
  TemplateTree tree;
  const auto a = tree.insert_or_match(Tokens{"x", "y"});
  const auto b = tree.insert_or_match(Tokens{"x", "y"});
  EXPECT_EQ(a.template_id, b.template_id);
  EXPECT_FALSE(b.is_new);
  EXPECT_EQ(tree.at(a.template_id).match_count, 2u);
}

TEST(Tree, MatchGeneralizes) {
  TemplateTree tree;
  const auto a = tree.insert_or_match(Tokens{"open", "file", "A"});
  const auto b = tree.insert_or_match(Tokens{"open", "file", "B"});
  EXPECT_EQ(a.template_id, b.template_id);
  EXPECT_EQ(tree.at(a.template_id).tokens, (Tokens{"open", "file", "<*>"}));
}

TEST(Tree, ThresholdIsStrict) {
  // 2 of 5 positions agree: similarity exactly 0.4 does not match at 0.4.
  TemplateTree tree({.depth = 3, .similarity_threshold = 0.4, .max_children = 100});
  tree.insert_or_match(Tokens{"a", "b", "c", "d", "e"});
  const auto r = tree.insert_or_match(Tokens{"a", "b", "x", "y", "z"});
  EXPECT_TRUE(r.is_new);
}

TEST(Tree, LengthsNeverMix) {
  TemplateTree tree;
  const auto a = tree.insert_or_match(Tokens{"a", "b"});
  const auto b = tree.insert_or_match(Tokens{"a", "b", "c"});
  EXPECT_NE(a.template_id, b.template_id);
}

TEST(Tree, OverflowRoutesThroughWildcardChild) {
  TemplateTree tree({.depth = 3, .similarity_threshold = 0.4, .max_children = 3});
  for (int i = 0; i < 10; ++i) {
    tree.insert_or_match(Tokens{"t" + std::to_string(i), "q" + std::to_string(i), "r"});
  }
  // Every line still lands in some template, and lookups stay bounded.
  EXPECT_GE(tree.size(), 3u);
  for (int i = 0; i < 10; ++i) {
    const auto r = tree.lookup(Tokens{"t" + std::to_string(i), "q" + std::to_string(i), "r"});
    EXPECT_NE(r.tmpl, nullptr);
    EXPECT_LE(r.nodes_touched, 3u);
  }
}

TEST(Tree, LookupTouchesAtMostDepth) {
  const auto corpus = synth::template_corpus(30, 20, 5);
  LineParser parser(builtin_profile("plain"));
  for (std::size_t depth : {2u, 3u, 4u, 6u}) {
    TemplateTree tree({.depth = depth, .similarity_threshold = 0.4, .max_children = 100});
    for (const auto& l : corpus.lines) {
      const auto r = tree.insert_or_match(parser.preprocessor().tokens(l.text));
      EXPECT_LE(r.nodes_touched, depth);
    }
  }
}

TEST(Tree, ConfigValidation) {
  EXPECT_THROW(TemplateTree({.depth = 1, .similarity_threshold = 0.4, .max_children = 100}), InvalidArgument);
  EXPECT_THROW(TemplateTree({.depth = 4, .similarity_threshold = 0.0, .max_children = 100}), InvalidArgument);
  EXPECT_THROW(TemplateTree({.depth = 4, .similarity_threshold = 1.5, .max_children = 100}), InvalidArgument);
  EXPECT_THROW(TemplateTree({.depth = 4, .similarity_threshold = 0.4, .max_children = 0}), InvalidArgument);
}

TEST(Tree, JsonRoundTrip) {
  TemplateTree tree;
  tree.insert_or_match(Tokens{"open", "file", "A"});
  tree.insert_or_match(Tokens{"open", "file", "B"});
  tree.insert_or_match(Tokens{"close", "42"});
  const auto copy = TemplateTree::from_json(tree.to_json());
  EXPECT_EQ(template_strings(copy), template_strings(tree));
  const auto r = copy.lookup(Tokens{"open", "file", "Z"});
  ASSERT_NE(r.tmpl, nullptr);
  EXPECT_EQ(r.tmpl->template_id, "E1");
}

TEST(ParseLine, HdfsExample) {
  LineParser parser(builtin_profile("hdfs"));
  TemplateTree tree;
  const RawLogLine line{
      1, "hdfs",
      "081109 203615 148 INFO dfs.DataNode$DataXceiver: Receiving block blk_-5627 src: /10.0.0.1:5000",
      "", std::nullopt};
  const auto ev = parse_line(tree, line, parser);
  EXPECT_EQ(ev.event_template, "Receiving block <*> src: <*>");
  EXPECT_EQ(ev.parameters, (Tokens{"blk_-5627", "/10.0.0.1:5000"}));
  EXPECT_EQ(ev.context, "dfs.DataNode$DataXceiver");
  EXPECT_EQ(ev.level, "INFO");
  EXPECT_EQ(ev.datetime, "081109 203615");
  EXPECT_EQ(ev.record_id, "148");
  EXPECT_FALSE(ev.header_warning);
}

TEST(ParseLine, HeaderOnlyLineRejected) {
  LineParser parser(builtin_profile("hdfs"));
  TemplateTree tree;
  const RawLogLine line{1, "hdfs", "081109 203615 148 INFO dfs.DataNode: ", "", std::nullopt};
  EXPECT_THROW(parse_line(tree, line, parser), FormatError);
}

TEST(ParseLine, HeaderMismatchStillMined) {
  LineParser parser(builtin_profile("hdfs"));
  TemplateTree tree;
  const auto ev = parse_line(tree, {1, "x", "garbage without header 12", "", std::nullopt}, parser);
  EXPECT_TRUE(ev.header_warning);
  EXPECT_FALSE(ev.context.has_value());
  EXPECT_EQ(ev.event_template, "garbage without header <*>");
}

TEST(ParseLine, IdenticalStructureSameEvent) {
  LineParser parser(builtin_profile("plain"));
  TemplateTree tree;
  const auto a = parse_line(tree, {1, "x", "job 17 done", "", std::nullopt}, parser);
  const auto b = parse_line(tree, {2, "x", "job 99 done", "", std::nullopt}, parser);
  EXPECT_EQ(a.event_id, b.event_id);
}

TEST(ParseLine, BglLabelFromHeader) {
  LineParser parser(builtin_profile("bgl"));
  TemplateTree tree;
  const std::string normal =
      "- 1117838570 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.50.675872 "
      "R02-M1-N0-C:J12-U11 RAS KERNEL INFO instruction cache parity error corrected";
  const std::string alert =
      "KERNDTLB 1118536327 2005.06.11 R30-M0-N9-C:J16-U01 2005-06-11-17.32.07.581048 "
      "R30-M0-N9-C:J16-U01 RAS KERNEL FATAL data TLB error interrupt";
  EXPECT_EQ(parse_line(tree, {1, "bgl", normal, "", std::nullopt}, parser).label, 0);
  const auto ev = parse_line(tree, {2, "bgl", alert, "", std::nullopt}, parser);
  EXPECT_EQ(ev.label, 1);
  EXPECT_EQ(ev.level, "FATAL");
  EXPECT_EQ(ev.context, "KERNEL");
}

TEST(ParseLine, ExplicitLabelWins) {
  LineParser parser(builtin_profile("plain"));
  TemplateTree tree;
  EXPECT_EQ(parse_line(tree, {1, "x", "a b", "", 1}, parser).label, 1);
}

TEST(ParseLine, ParameterRoundTrip) {
  // Substituting the parameters back reconstructs the original message tokens.
  const auto corpus = synth::template_corpus(20, 30, 8);
  LineParser parser(builtin_profile("plain"));
  const auto result = parse_batch(corpus.lines, parser, {}, 1);
  for (std::size_t i = 0; i < result.events.size(); ++i) {
    const auto& ev = result.events[i];
    std::string rebuilt;
    std::size_t k = 0;
    const std::string& t = ev.event_template;
    for (std::size_t pos = 0; pos < t.size();) {
      if (t.compare(pos, 3, "<*>") == 0) {
        ASSERT_LT(k, ev.parameters.size());
        rebuilt += ev.parameters[k++];
        pos += 3;
      } else {
        rebuilt += t[pos++];
      }
    }
    EXPECT_EQ(k, ev.parameters.size());
    EXPECT_EQ(rebuilt, corpus.lines[i].text);
  }
}

TEST(ExtractParameters, EmbeddedWildcards) {
  EXPECT_EQ(extract_parameters(Tokens{"size=<*>", "<*>"}, Tokens{"size=42", "x"}),
            (Tokens{"42", "x"}));
  EXPECT_EQ(extract_parameters(Tokens{"<*>:<*>"}, Tokens{"10.0.0.1:80"}),
            (Tokens{"10.0.0.1", "80"}));
}

TEST(ParseBatch, EmptyInput) {
  LineParser parser(builtin_profile("plain"));
  const auto r = parse_batch({}, parser, {}, 4);
  EXPECT_TRUE(r.events.empty());
  EXPECT_TRUE(r.tree.empty());
}

TEST(ParseBatch, SinglePartitionEqualsSequential) {
  const auto corpus = synth::template_corpus(10, 20, 2);
  LineParser parser(builtin_profile("plain"));
  TemplateTree tree;
  std::vector<ParsedEvent> seq;
  for (const auto& l : corpus.lines) seq.push_back(parse_line(tree, l, parser));
  const auto r = parse_batch(corpus.lines, parser, {}, 1);
  EXPECT_EQ(template_strings(r.tree), template_strings(tree));
  ASSERT_EQ(r.events.size(), seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    EXPECT_EQ(r.events[i].event_template, tree.at(seq[i].event_id).str());
    EXPECT_EQ(r.events[i].line_id, corpus.lines[i].line_id);
  }
}

TEST(ParseBatch, PartitionCountInvariant) {
  const auto corpus = synth::template_corpus(24, 40, 11);
  LineParser parser(builtin_profile("plain"));
  const auto ref = parse_batch(corpus.lines, parser, {}, 1);
  for (std::size_t n : {2u, 3u, 4u, 8u}) {
    const auto r = parse_batch(corpus.lines, parser, {}, n);
    EXPECT_EQ(template_strings(r.tree), template_strings(ref.tree)) << "n=" << n;
    ASSERT_EQ(r.events.size(), ref.events.size());
    for (std::size_t i = 0; i < r.events.size(); ++i) {
      EXPECT_EQ(r.events[i].event_template, ref.events[i].event_template);
      EXPECT_EQ(r.events[i].parameters, ref.events[i].parameters);
      EXPECT_EQ(r.events[i].line_id, corpus.lines[i].line_id);
    }
  }
}

TEST(ParseBatch, EventsReferenceTemplates) {
  const auto corpus = synth::template_corpus(12, 15, 4);
  LineParser parser(builtin_profile("plain"));
  const auto r = parse_batch(corpus.lines, parser, {}, 3);
  for (const auto& ev : r.events) {
    const auto* t = r.tree.find(ev.event_id);
    ASSERT_NE(t, nullptr);
    EXPECT_EQ(t->str(), ev.event_template);
    EXPECT_EQ(t->wildcard_count(), ev.parameters.size());
  }
}

TEST(ParseBatch, QuarantinesBadLines) {
  LineParser parser(builtin_profile("hdfs"));
  std::vector<RawLogLine> lines{
      {1, "h", "081109 203615 148 INFO dfs.FSNamesystem: BLOCK* ask 10.0.0.1:50010", "", std::nullopt},
      {2, "h", "081109 203615 148 INFO dfs.FSNamesystem: ", "", std::nullopt},
      {3, "h", "081109 203616 149 INFO dfs.FSNamesystem: BLOCK* ask 10.0.0.2:50010", "", std::nullopt}};
  const auto r = parse_batch(lines, parser, {}, 2);
  EXPECT_EQ(r.events.size(), 2u);
  ASSERT_EQ(r.quarantine.size(), 1u);
  EXPECT_EQ(r.quarantine[0].line_id, 2);
  EXPECT_FALSE(r.quarantine[0].reason.empty());
}

TEST(ParseBatch, BaseTreeInference) {
  const auto corpus = synth::template_corpus(10, 20, 9);
  LineParser parser(builtin_profile("plain"));
  const auto train = parse_batch(corpus.lines, parser, {}, 1);
  const auto again = parse_batch(corpus.lines, parser, {}, 4, &train.tree);
  for (std::size_t i = 0; i < again.events.size(); ++i) {
    EXPECT_EQ(again.events[i].event_id, train.events[i].event_id);
  }
  // An unseen structure gets a fresh template in the copy only.
  std::vector<RawLogLine> novel{{1, "x", "completely unseen structure here", "", std::nullopt}};
  const auto r = parse_batch(novel, parser, {}, 1, &train.tree);
  EXPECT_EQ(r.events.size(), 1u);
  EXPECT_EQ(train.tree.lookup(parser.preprocessor().tokens(novel[0].text)).tmpl, nullptr);
}

TEST(ParseBatch, ZeroPartitionsRejected) {
  LineParser parser(builtin_profile("plain"));
  EXPECT_THROW(parse_batch({}, parser, {}, 0), InvalidArgument);
}

TEST(Csv, RowFormat) {
  ParsedEvent ev;
  ev.line_id = 7;
  ev.datetime = "081109 203615";
  ev.context = "ctx";
  ev.level = "INFO";
  ev.event_id = "E1";
  ev.event_template = "a, <*>";
  ev.parameters = {"x\"y"};
  EXPECT_EQ(csv_header(), "LineId,Datetime,Context,Level,RecordId,EventId,EventTemplate,ParameterList");
  EXPECT_EQ(to_csv_row(ev), R"(7,081109 203615,ctx,INFO,,E1,"a, <*>","[""x\""y""]")");
}

TEST(Json, EventRoundTrip) {
  ParsedEvent ev;
  ev.line_id = 3;
  ev.context = "c";
  ev.event_id = "E2";
  ev.event_template = "t <*>";
  ev.parameters = {"p"};
  ev.label = 1;
  const auto back = parsed_event_from_json(to_json(ev));
  EXPECT_EQ(back.line_id, 3);
  EXPECT_EQ(back.context, "c");
  EXPECT_FALSE(back.level.has_value());
  EXPECT_EQ(back.parameters, ev.parameters);
  EXPECT_EQ(back.label, 1);
}

TEST(Json, RawLineRequiresText) {
  EXPECT_THROW(raw_line_from_json({{"source", "s"}}), FormatError);
  EXPECT_THROW(raw_line_from_json({{"source", "s"}, {"text", "  "}}), FormatError);
  const auto l = raw_line_from_json({{"source", "s"}, {"text", "hi"}, {"label", "anomaly"}});
  EXPECT_EQ(l.line_id, 0);
  EXPECT_EQ(l.label, 1);
}

TEST(Partitions, MapPartitionsMatchesSequential) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> data(rng() % 200);
    for (auto& v : data) v = static_cast<int>(rng() % 1000);
    const std::size_t n = 1 + rng() % 9;
    const auto out = pipeline::map_partitions(
        data,
        [](std::span<const int> part) {
          std::vector<long> r;
          for (int v : part) r.push_back(2L * v + 1);
          return r;
        },
        n);
    ASSERT_EQ(out.size(), data.size());
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(out[i], 2L * data[i] + 1);
  }
}

TEST(Partitions, SplitCoversRange) {
  for (std::size_t count : {0u, 1u, 7u, 100u}) {
    for (std::size_t n : {1u, 3u, 8u}) {
      const auto r = pipeline::split_contiguous(count, n);
      ASSERT_EQ(r.size(), n);
      std::size_t pos = 0;
      for (const auto& p : r) {
        EXPECT_EQ(p.begin, pos);
        EXPECT_LE(p.size(), count / n + 1);
        pos = p.end;
      }
      EXPECT_EQ(pos, count);
    }
  }
}

TEST(Partitions, FailureNamesPartition) {
  std::vector<int> data(10, 0);
  try {
    pipeline::map_partitions(
        data,
        [](std::span<const int> part, std::size_t i) -> std::vector<int> {
          if (i == 2) throw std::runtime_error("boom");
          return {part.begin(), part.end()};
        },
        4);
    FAIL() << "expected PartitionError";
  } catch (const pipeline::PartitionError& e) {
    EXPECT_EQ(e.partition(), 2u);
  }
}
