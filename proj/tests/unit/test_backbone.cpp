#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ficl/backbone.hpp"
#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"
#include "oracle.hpp"
#include "testutil.hpp"

using namespace ficl;

namespace {

double max_diff(const Tensor& t, const oracle::Mat& m) {
  double d = 0.0;
  for (std::size_t i = 0; i < m.v.size(); ++i) d = std::max(d, std::abs(t.data()[i] - m.v[i]));
  return d;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.vocab_size = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.visual_tokens = c.max_seq;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("initialisation is deterministic per seed") {
  const auto a = init_backbone(testutil::small_config(5));
  const auto b = init_backbone(testutil::small_config(5));
  const auto c = init_backbone(testutil::small_config(6));
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() != c.digest());
}

TEST_CASE("encode_image contracts") {
  const auto w = init_backbone(testutil::small_config());
  const auto zero = encode_image(make_image(8, 8, std::vector<double>(64, 0.0)), w);
  const auto one = encode_image(make_image(8, 8, std::vector<double>(64, 1.0)), w);
  CHECK(max_abs_diff(zero.tokens, one.tokens) > 0.0);
  const Image img = testutil::random_image(8, 12, 3);
  CHECK(bitwise_equal(encode_image(img, w).tokens, encode_image(img, w).tokens));
  for (auto [h, wd] : {std::pair{4, 4}, {8, 16}, {20, 12}, {5, 3}}) {
    const auto vt = encode_image(testutil::random_image(h, wd, 1), w);
    CHECK(vt.tokens.rows() == w.config.visual_tokens);
    CHECK(vt.tokens.cols() == w.config.d_model);
  }
  // Padding twice is padding once.
  const Image padded = pad_to_square(img, w.config.patch_size);
  CHECK(bitwise_equal(encode_image(img, w).tokens, encode_image(padded, w).tokens));
  CHECK(max_diff(encode_image(img, w).tokens, oracle::encode_image(img, w)) < 1e-10);
  CHECK_THROWS_AS(encode_image(Image{0, 0, {}}, w), InputError);
}

TEST_CASE("forward_layers matches the naive oracle and composes") {
  const auto w = init_backbone(testutil::small_config(2));
  const Tensor x = testutil::random_tensor({9, w.config.d_model}, 4);
  const Tensor full = forward_layers(x, 0, w.config.n_layers, w);
  CHECK(max_diff(full, oracle::forward_layers(oracle::from(x), 0, w.config.n_layers, w)) < 1e-10);
  const Tensor split = forward_layers(forward_layers(x, 0, 1, w), 1, w.config.n_layers, w);
  CHECK(max_abs_diff(full, split) < 1e-10);
  CHECK_THROWS_AS(forward_layers(x, 1, 1, w), UsageError);
  CHECK_THROWS_AS(forward_layers(x, 0, w.config.n_layers + 1, w), UsageError);
  CHECK_THROWS_AS(forward_layers(Tensor::zeros({w.config.max_seq + 1, w.config.d_model}), 0, 1, w),
                  CapacityError);
}

TEST_CASE("single token: causal mask is a no-op") {
  const auto w = init_backbone(testutil::small_config(3));
  const Tensor x = testutil::random_tensor({1, w.config.d_model}, 5);
  CHECK(bitwise_equal(forward_layers(x, 0, 2, w, nullptr, true), forward_layers(x, 0, 2, w, nullptr, false)));
}

TEST_CASE("forward_layers is causal") {
  const auto w = init_backbone(testutil::small_config(4));
  const Tensor x = testutil::random_tensor({8, w.config.d_model}, 6);
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t c = 0; c < w.config.d_model; ++c) v[5 * w.config.d_model + c] += 0.3;
  const Tensor a = forward_layers(x, 0, 2, w);
  const Tensor b = forward_layers(Tensor(x.shape(), v), 0, 2, w);
  CHECK(bitwise_equal(slice_rows(a, 0, 5), slice_rows(b, 0, 5)));
  CHECK(max_abs_diff(slice_rows(a, 5, 3), slice_rows(b, 5, 3)) > 0.0);
}

TEST_CASE("lm_logits examples") {
  auto w = init_backbone(testutil::small_config(1));
  const Tensor logits = lm_logits(testutil::random_tensor({3, 16}, 2), w);
  CHECK(logits.rows() == 3);
  CHECK(logits.cols() == w.config.vocab_size);
  w.head = Tensor::zeros(w.head.shape());
  const Tensor zero = lm_logits(Tensor::zeros({1, 16}), w);
  for (double v : zero.data()) CHECK(v == 0.0);

  // By hand on one row: normalise, then multiply by the head.
  auto w2 = init_backbone(testutil::small_config(1));
  const Tensor h = testutil::random_tensor({1, 16}, 3);
  const auto ref = oracle::lm_logits(oracle::from(h), w2);
  CHECK(max_diff(lm_logits(h, w2), ref) < 1e-12);
}

TEST_CASE("attention score counter") {
  const auto w = init_backbone(testutil::small_config());
  ForwardTrace trace;
  forward_layers(Tensor::zeros({10, 16}), 0, 2, w, &trace);
  CHECK(trace.forward_calls == 1);
  CHECK(trace.attention_scores == 2u * 2u * 100u);
}

TEST_CASE("decode session matches full recompute") {
  const auto w = init_backbone(testutil::small_config(8));
  const Tensor prompt = testutil::random_tensor({6, 16}, 9);
  DecodeSession s(w);
  const Tensor first = s.prefill(prompt);
  const auto full = lm_logits(forward_layers(prompt, 0, 2, w), w);
  CHECK(max_abs_diff(first, slice_rows(full, 5, 1)) < 1e-10);
  const Tensor next = s.step(70);
  const int ids[] = {70};
  const Tensor parts[] = {prompt, embed_tokens(ids, w)};
  const auto full2 = lm_logits(forward_layers(concat_rows(parts), 0, 2, w), w);
  CHECK(max_abs_diff(next, slice_rows(full2, 6, 1)) < 1e-10);
  CHECK(s.length() == 7);
  DecodeSession fresh(w);
  CHECK_THROWS_AS(fresh.step(3), UsageError);
}

TEST_CASE("weights file round trip and corruption") {
  const auto dir = testutil::temp_dir("weights");
  const auto cfg = testutil::small_config(11);
  const auto w = init_backbone(cfg);
  save_weights(dir / "w.bin", w);
  const auto back = load_weights(dir / "w.bin");
  CHECK(back.digest() == w.digest());
  CHECK(back.config == cfg);

  auto other = cfg;
  other.d_model = 32;
  CHECK_THROWS_AS(load_weights(dir / "w.bin", other), ConfigError);

  const auto size = std::filesystem::file_size(dir / "w.bin");
  std::filesystem::copy_file(dir / "w.bin", dir / "t.bin");
  std::filesystem::resize_file(dir / "t.bin", size - 9);
  CHECK_THROWS_AS(load_weights(dir / "t.bin"), CorruptionError);

  // Flip one byte inside the payload: the group digest no longer matches.
  std::filesystem::copy_file(dir / "w.bin", dir / "f.bin");
  {
    std::fstream f(dir / "f.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size - 100));
    char c = 0;
    f.read(&c, 1);
    f.seekp(static_cast<std::streamoff>(size - 100));
    c = static_cast<char>(c ^ 0x01);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_weights(dir / "f.bin"), CorruptionError);
  CHECK_THROWS_AS(load_weights(dir / "missing.bin"), InputError);
  std::filesystem::remove_all(dir);
}
