#include <doctest.h>

#include <algorithm>

#include "ficl/aggregator.hpp"
#include "ficl/cost.hpp"
#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"
#include "oracle.hpp"
#include "testutil.hpp"

using namespace ficl;

namespace {

struct Fixture {
  BackboneWeights w = init_backbone(testutil::small_config(3));
  ProjectionLayer proj = ProjectionLayer::near_identity(16, 9);
  AggregationConfig cfg{};
};

}  // namespace

TEST_CASE("aggregation config resolution") {
  const ModelConfig m;  // L = 8
  CHECK(AggregationConfig{}.resolve(m).n_layers == 8);
  CHECK(AggregationConfig::half(m).n_layers == 4);
  CHECK(AggregationConfig::three_quarters(m).n_layers == 6);
  CHECK_THROWS_AS(AggregationConfig{9}.resolve(m), ConfigError);
  ModelConfig odd;
  odd.n_layers = 5;
  CHECK(AggregationConfig::half(odd).n_layers == 3);
  CHECK(AggregationConfig::three_quarters(odd).n_layers == 4);
}

TEST_CASE("projection initialisation") {
  const auto p = ProjectionLayer::near_identity(16, 1);
  CHECK(p.d_model() == 16);
  for (double b : p.bias().data()) CHECK(b == 0.0);
  double off = 0.0;
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) off = std::max(off, std::abs(p.weight().at(i, j) - (i == j ? 1.0 : 0.0)));
  CHECK(off > 0.0);
  CHECK(off < 0.2);
  CHECK(ProjectionLayer::near_identity(16, 1).version() == p.version());
  CHECK(ProjectionLayer::near_identity(16, 2).version() != p.version());
  CHECK_THROWS_AS(ProjectionLayer(Tensor::zeros({3, 4}), Tensor::zeros({4})), DimensionError);
}

TEST_CASE("zero projection annihilates every demo") {
  Fixture f;
  const ProjectionLayer zero(Tensor::zeros({16, 16}), Tensor::zeros({16}));
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto out = aggregate(testutil::random_demo(s), f.cfg, f.w, zero);
    for (double v : out.tokens.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("length law and metadata") {
  Fixture f;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto demo = testutil::random_demo(s);
    const auto out = aggregate(demo, f.cfg, f.w, f.proj);
    CHECK(out.tokens.rows() == tokenize(demo.text()).size());
    CHECK(out.text_len == out.tokens.rows());
    CHECK(out.n_layers_used == 2);
    CHECK(out.demo_digest == demo_digest(demo));
    CHECK(out.weights_version == f.w.digest());
    CHECK(out.projection_version == f.proj.version());
  }
}

TEST_CASE("aggregation matches the naive oracle") {
  Fixture f;
  for (std::size_t n : {1, 2}) {
    const auto demo = testutil::random_demo(40 + n);
    const auto out = aggregate(demo, AggregationConfig{n}, f.w, f.proj);
    const auto ref = oracle::aggregate(demo.image, demo.text(), n, f.w, oracle::from(f.proj.weight()),
                                       oracle::row_of(f.proj.bias()));
    double d = 0.0;
    for (std::size_t i = 0; i < ref.v.size(); ++i) d = std::max(d, std::abs(out.tokens.data()[i] - ref.v[i]));
    CHECK(d < 1e-10);
  }
}

TEST_CASE("aggregation errors") {
  Fixture f;
  CHECK_THROWS_AS(aggregate(Demonstration{testutil::random_image(4, 4, 1), "", ""}, f.cfg, f.w, f.proj),
                  InputError);
  const std::string huge(f.w.config.max_seq, 'x');
  CHECK_THROWS_AS(aggregate(Demonstration{testutil::random_image(4, 4, 1), huge, ""}, f.cfg, f.w, f.proj),
                  CapacityError);
  CHECK_THROWS_AS(aggregate(testutil::random_demo(1), AggregationConfig{3}, f.w, f.proj), ConfigError);
  CHECK_THROWS_AS(AggregationContext(f.w, ProjectionLayer::near_identity(8, 1), f.cfg), DimensionError);
}

TEST_CASE("batch aggregation is independent of its companions") {
  Fixture f;
  std::vector<Demonstration> demos;
  for (std::uint64_t s = 0; s < 4; ++s) demos.push_back(testutil::random_demo(100 + s));
  const auto batch = aggregate_batch(demos, f.cfg, f.w, f.proj);
  for (std::size_t i = 0; i < demos.size(); ++i)
    CHECK(bitwise_equal(batch[i].tokens, aggregate(demos[i], f.cfg, f.w, f.proj).tokens));
  const auto one = aggregate_batch(std::span(demos).first(1), f.cfg, f.w, f.proj);
  CHECK(bitwise_equal(one[0].tokens, batch[0].tokens));
  std::vector<Demonstration> shuffled{demos[2], demos[0], demos[3], demos[1]};
  const auto again = aggregate_batch(shuffled, f.cfg, f.w, f.proj);
  CHECK(bitwise_equal(again[0].tokens, batch[2].tokens));
  CHECK(bitwise_equal(again[3].tokens, batch[1].tokens));

  CHECK_THROWS_AS(aggregate_batch({}, f.cfg, f.w, f.proj), UsageError);
  demos[2].instruction.clear();
  demos[2].label.clear();
  try {
    aggregate_batch(demos, f.cfg, f.w, f.proj);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInput);
    CHECK(std::string(e.what()).find("batch item 2") != std::string::npos);
  }
}

TEST_CASE("concat_fused") {
  Fixture f;
  std::vector<FusedTokens> parts;
  for (std::size_t len : {5, 7, 3}) {
    Demonstration d{testutil::random_image(4, 4, len), testutil::random_text(len, len), ""};
    parts.push_back(aggregate(d, f.cfg, f.w, f.proj));
  }
  const auto single = concat_fused(std::span(parts).first(1));
  CHECK(bitwise_equal(single.tokens, parts[0].tokens));
  const auto seq = concat_fused(parts);
  CHECK(seq.rows() == 15);
  CHECK(seq.lengths == std::vector<std::size_t>{5, 7, 3});
  CHECK(bitwise_equal(slice_rows(seq.tokens, 5, 7), parts[1].tokens));
  std::vector<FusedTokens> perm{parts[2], parts[0], parts[1]};
  const auto p = concat_fused(perm);
  CHECK(bitwise_equal(slice_rows(p.tokens, 0, 3), slice_rows(seq.tokens, 12, 3)));
  CHECK(bitwise_equal(slice_rows(p.tokens, 3, 5), slice_rows(seq.tokens, 0, 5)));
  CHECK(bitwise_equal(slice_rows(p.tokens, 8, 7), slice_rows(seq.tokens, 5, 7)));

  parts[1].n_layers_used = 1;
  CHECK_THROWS_AS(concat_fused(parts), ConsistencyError);
  CHECK_THROWS_AS(concat_fused({}), UsageError);
}

TEST_CASE("aggregation attention elements follow the closed form") {
  Fixture f;
  for (std::size_t k : {1, 2, 4}) {
    ForwardTrace trace;
    std::uint64_t expected = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto demo = testutil::random_demo(200 + i);
      const std::size_t l = f.w.config.visual_tokens + tokenize(demo.text()).size();
      expected += attention_cost(1, l, f.w.config.n_heads, 2, AttentionMode::kIndependent);
      aggregate(demo, f.cfg, f.w, f.proj, &trace);
    }
    CHECK(trace.attention_scores == expected);
    CHECK(trace.forward_calls == k);
  }
}
