#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <string>

#include "chaintree/rng.hpp"
#include "chaintree/tree.hpp"
#include "helpers.hpp"

using namespace chaintree;

namespace {

// Reference FNV-1a written from the published constants.
std::uint64_t fnv_ref(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<double> featurize_ref(const std::string& text, std::size_t d) {
  std::vector<double> v(d, 0.0);
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const auto h = fnv_ref(tok);
    v[h % d] += (h >> 63) ? -1.0 : 1.0;
  }
  double n = 0;
  for (double x : v) n += x * x;
  if (n > 0)
    for (double& x : v) x /= std::sqrt(n);
  return v;
}

std::string node_json(int i, int p, double t, const std::string& x) {
  return "{\"i\":" + std::to_string(i) + ",\"p\":" + std::to_string(p) + ",\"t\":" + std::to_string(t) +
         ",\"x\":" + x + "}";
}

}  // namespace

TEST_CASE("fnv1a64 matches the reference constants") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  for (const char* s : {"hello", "Propagation", "x y z"}) CHECK(fnv1a64(s) == fnv_ref(s));
}

TEST_CASE("featurize agrees with an independent hashed bag of tokens") {
  for (const std::string text : {"The quick brown fox", "fox FOX fox", "  spaced\tout\nwords ", "a b c d e f g h"}) {
    for (std::size_t d : {1u, 7u, 64u}) {
      const auto got = featurize(text, d);
      const auto want = featurize_ref(text, d);
      REQUIRE(got.size() == d);
      for (std::size_t j = 0; j < d; ++j) CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-15));
    }
  }
  const auto zero = featurize("   ", 16);
  for (double x : zero) CHECK(x == 0.0);
  CHECK_THROWS_AS(featurize("x", 0), std::invalid_argument);
}

TEST_CASE("validate computes depths and rejects malformed trees") {
  auto t = testutil::tree_from_parents({-1, 0, 1, 1, 0, 4}, 3, 1);
  std::vector<int> want{0, 1, 2, 2, 1, 2};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(t.nodes[i].depth == want[i]);

  auto bad = t;
  bad.nodes[3].parent = 5;
  CHECK_THROWS_AS(validate(bad), InvalidTree);  // forward reference
  bad = t;
  bad.nodes[2].parent = -1;
  CHECK_THROWS_AS(validate(bad), InvalidTree);  // second root
  bad = t;
  bad.nodes[2].parent = 2;
  CHECK_THROWS_AS(validate(bad), InvalidTree);  // self loop
  bad = t;
  bad.nodes[4].features.pop_back();
  CHECK_THROWS_AS(validate(bad), InvalidTree);
  bad = t;
  bad.nodes[2].time = bad.nodes[1].time - 1.0;
  CHECK_THROWS_AS(validate(bad), InvalidTree);
  bad = t;
  bad.nodes.clear();
  CHECK_THROWS_AS(validate(bad), InvalidTree);
}

TEST_CASE("children are ordered by time, ties by index") {
  PropagationTree t;
  t.id = "ties";
  for (int i = 0; i < 5; ++i) {
    Node n;
    n.index = i;
    n.parent = i == 0 ? -1 : 0;
    n.time = i == 0 ? 0.0 : (i == 1 ? 3.0 : 1.0);
    n.features = {1.0};
    t.nodes.push_back(n);
  }
  validate(t);
  CHECK(children_of(t)[0] == std::vector<int>{2, 3, 4, 1});
}

TEST_CASE("parse accepts inline features and text-only nodes") {
  const std::string line = "{\"id\":\"a\",\"label\":1,\"nodes\":[" + node_json(0, -1, 0, "[1,2]") + "," +
                           node_json(1, 0, 1, "[0.5,-1]") + "]}";
  const auto t = parse_tree(line, 1, {});
  CHECK(t.id == "a");
  CHECK(t.label == 1);
  CHECK(t.nodes[1].features == std::vector<double>{0.5, -1.0});

  const std::string text =
      R"({"id":"b","label":null,"nodes":[{"i":0,"p":-1,"t":0,"text":"claim here"},{"i":1,"p":0,"t":2,"text":"reply"}]})";
  ParseOptions po;
  po.feature_dim = 8;
  const auto u = parse_tree(text, 1, po);
  CHECK_FALSE(u.label.has_value());
  CHECK(u.nodes[0].features == featurize_ref("claim here", 8));
  CHECK_THROWS_AS(parse_tree(text, 1, {}), ParseError);  // dimension unknown
}

TEST_CASE("parse errors carry the line number") {
  std::istringstream in(std::string("{\"id\":\"a\",\"label\":0,\"nodes\":[") + node_json(0, -1, 0, "[1]") +
                        "]}\n\n{\"id\":\"b\",\"nodes\":[" + node_json(0, -1, 0, "[1]") + "," +
                        node_json(1, 3, 1, "[1]") + "]}\n");
  try {
    parse_dataset(in);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream mismatch(std::string("{\"id\":\"a\",\"nodes\":[") + node_json(0, -1, 0, "[1,2]") +
                              "]}\n{\"id\":\"b\",\"nodes\":[" + node_json(0, -1, 0, "[1]") + "]}\n");
  CHECK_THROWS_AS(parse_dataset(mismatch), ParseError);
  std::istringstream junk("{not json\n");
  CHECK_THROWS_AS(parse_dataset(junk), ParseError);
}

TEST_CASE("serialize then parse reproduces 100 random files exactly") {
  Rng rng(7);
  for (int f = 0; f < 100; ++f) {
    Dataset data;
    const auto trees = 1 + rng.uniform_int(5);
    const auto d = 1 + rng.uniform_int(6);
    for (std::uint64_t k = 0; k < trees; ++k) {
      auto t = random_tree(1 + rng.uniform_int(30), d, rng.next_u64());
      t.id = "tree \"" + std::to_string(k) + "\"\\";
      t.nodes[0].text = "quoted \"text\"\n";
      if (rng.uniform() < 0.5) t.label.reset();
      else t.label = static_cast<int>(rng.uniform_int(3));
      data.append(std::move(t), Split::Train);
    }
    std::stringstream ss;
    serialize_dataset(data, ss);
    const auto text = ss.str();
    const auto back = parse_dataset(ss);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& a = data.trees[i];
      const auto& b = back.trees[i];
      CHECK(a.id == b.id);
      CHECK(a.label == b.label);
      REQUIRE(a.nodes.size() == b.nodes.size());
      for (std::size_t n = 0; n < a.nodes.size(); ++n) {
        CHECK(a.nodes[n].parent == b.nodes[n].parent);
        CHECK(a.nodes[n].time == b.nodes[n].time);
        CHECK(a.nodes[n].text == b.nodes[n].text);
        CHECK(a.nodes[n].features == b.nodes[n].features);
      }
    }
    std::stringstream again;
    serialize_dataset(back, again);
    CHECK(again.str() == text);
  }
}

TEST_CASE("dataset split tags and class count") {
  Dataset data;
  auto t = testutil::star_tree(2, 2, 1);
  t.label = 2;
  data.append(t, Split::Test);
  t.label.reset();
  data.append(t, Split::Train);  // unlabeled trees always land in Unlabeled
  t.label = 0;
  data.append(t, Split::Unlabeled);
  CHECK(data.indices(Split::Test) == std::vector<std::size_t>{0});
  CHECK(data.indices(Split::Unlabeled) == std::vector<std::size_t>{1, 2});
  CHECK_FALSE(data.trees[2].label.has_value());
  CHECK(data.num_classes() == 3);
  CHECK(split_from_string("val") == Split::Val);
  CHECK_THROWS_AS(split_from_string("dev"), std::invalid_argument);
}

TEST_CASE("depth profile agrees with a direct count") {
  GenConfig g;
  g.claims = 40;
  g.feature_dim = 4;
  const auto data = generate_synthetic(g, 11);
  std::map<int, double> count;
  double replies = 0;
  for (const auto& t : data.trees) {
    // Depth recomputed by walking parents.
    for (const auto& n : t.nodes) {
      int depth = 0;
      for (int p = n.parent; p >= 0; p = t.nodes[static_cast<std::size_t>(p)].parent) ++depth;
      if (depth == 0) continue;
      count[std::min(depth, 3)] += 1;
      replies += 1;
    }
  }
  const auto p = depth_profile(data);
  CHECK(p.claim_count == 40);
  CHECK(p.avg_reply == doctest::Approx(replies / 40));
  CHECK(p.avg_1level == doctest::Approx(count[1] / 40));
  CHECK(p.frac_2level == doctest::Approx(count[2] / replies));
  CHECK(p.frac_deeper == doctest::Approx(count[3] / replies));
  CHECK(p.frac_1level + p.frac_2level + p.frac_deeper == doctest::Approx(1.0));
}

TEST_CASE("generator is deterministic, honors split sizes and validates config") {
  GenConfig g;
  g.claims = 60;
  g.val = 5;
  g.test = 10;
  g.unlabeled = 15;
  g.feature_dim = 6;
  const auto a = generate_synthetic(g, 3);
  const auto b = generate_synthetic(g, 3);
  std::stringstream sa, sb;
  serialize_dataset(a, sa);
  serialize_dataset(b, sb);
  CHECK(sa.str() == sb.str());
  CHECK(a.indices(Split::Train).size() == 30);
  CHECK(a.indices(Split::Val).size() == 5);
  CHECK(a.indices(Split::Test).size() == 10);
  CHECK(a.indices(Split::Unlabeled).size() == 15);
  for (std::size_t i : a.indices(Split::Unlabeled)) CHECK_FALSE(a.trees[i].label.has_value());
  for (std::size_t i : a.indices(Split::Train)) CHECK(a.trees[i].label.has_value());

  auto c = generate_synthetic(g, 4);
  std::stringstream sc;
  serialize_dataset(c, sc);
  CHECK(sc.str() != sa.str());

  g.val = 100;
  CHECK_THROWS_AS(generate_synthetic(g, 0), std::invalid_argument);
}

TEST_CASE("generator level fractions approach the targets") {
  GenConfig g;
  g.claims = 2000;
  g.val = g.test = 0;
  g.feature_dim = 2;
  g.p1 = 0.5;
  g.p2 = 0.3;
  g.p_deeper = 0.2;
  const auto p = depth_profile(generate_synthetic(g, 5));
  CHECK(p.frac_1level == doctest::Approx(0.5).epsilon(0.06));
  CHECK(p.frac_2level == doctest::Approx(0.3).epsilon(0.1));
  CHECK(p.frac_deeper == doctest::Approx(0.2).epsilon(0.15));
}

TEST_CASE("format_double round-trips") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.uniform_int(40)) - 20.0);
    CHECK(std::stod(format_double(v)) == v);
  }
}
