#include <doctest.h>

#include <fstream>

#include "ficl/backbone.hpp"
#include "ficl/binary_io.hpp"
#include "ficl/corpus.hpp"
#include "ficl/digest.hpp"
#include "ficl/error.hpp"
#include "ficl/image.hpp"
#include "ficl/tokenizer.hpp"
#include "testutil.hpp"

using namespace ficl;

TEST_CASE("tokenizer examples") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("A") == std::vector<int>{68});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::string s(100, '\0');
    for (auto& c : s) c = static_cast<char>(rng() & 0xff);
    CHECK(detokenize(tokenize(s)) == s);
  }
  const int with_specials[] = {kBosId, 68, kEosId, kPadId, 69};
  CHECK(detokenize(with_specials) == "AB");
}

TEST_CASE("sha-256 digest of a known string") {
  Hasher h;
  h.update_raw("abc", 3);
  CHECK(to_hex(h.finish()) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("image validation and padding") {
  CHECK_THROWS_AS(make_image(0, 3, {}), InputError);
  CHECK_THROWS_AS(make_image(1, 2, {0.5, 1.5}), InputError);
  CHECK_THROWS_AS(make_image(1, 2, {0.5}), InputError);
  const Image img = testutil::random_image(5, 7, 1);
  const Image sq = pad_to_square(img, 4);
  CHECK(sq.height == 8);
  CHECK(sq.width == 8);
  CHECK(sq.at(4, 6) == img.at(4, 6));
  CHECK(sq.at(7, 7) == 0.0);
  CHECK(pad_to_square(sq, 4) == sq);
}

TEST_CASE("image files round trip") {
  const auto dir = testutil::temp_dir("images");
  const Image img = testutil::random_image(6, 9, 2);
  write_raw_image(dir / "a.raw", img);
  CHECK(read_image(dir / "a.raw") == img);

  std::vector<double> px(12);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i * 20) / 255.0;
  const Image gray = make_image(3, 4, px);
  write_pgm(dir / "g.pgm", gray);
  const Image back = read_image(dir / "g.pgm");
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  for (std::size_t i = 0; i < px.size(); ++i) CHECK(back.pixels[i] == doctest::Approx(px[i]).epsilon(1e-12));

  std::ofstream(dir / "bad.pgm") << "P5\n4 4\n255\nxx";
  CHECK_THROWS_AS(read_image(dir / "bad.pgm"), InputError);
  CHECK_THROWS_AS(read_image(dir / "missing.pgm"), InputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("binary reader rejects short files") {
  const auto dir = testutil::temp_dir("binary");
  {
    BinaryWriter w(dir / "f.bin");
    w.bytes("ABCD", 4);
    w.u32(7);
    w.f64(2.5);
    w.str("hello");
    w.close();
  }
  BinaryReader r(dir / "f.bin");
  r.expect_magic("ABCD");
  CHECK(r.u32() == 7);
  CHECK(r.f64() == 2.5);
  CHECK(r.str() == "hello");
  CHECK(r.at_end());
  CHECK_THROWS_AS(r.u32(), CorruptionError);
  BinaryReader r2(dir / "f.bin");
  CHECK_THROWS_AS(r2.expect_magic("WXYZ"), CorruptionError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic corpus files round trip") {
  const auto dir = testutil::temp_dir("corpus");
  const auto cfg = testutil::small_config();
  const auto corpus = synth_corpus(12, 3, cfg);
  write_corpus(dir / "c.jsonl", corpus);
  const auto back = read_corpus(dir / "c.jsonl");
  CHECK(corpus_digest(back) == corpus_digest(corpus));

  std::ofstream(dir / "broken.jsonl") << "{\"k\": 2, \"images\": [], \"texts\": [], \"remaining_text\": \"x\"}\n";
  CHECK_THROWS_AS(read_corpus(dir / "broken.jsonl"), InputError);
  std::ofstream(dir / "garbage.jsonl") << "not json\n";
  CHECK_THROWS_AS(read_corpus(dir / "garbage.jsonl"), InputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("demo records substitute questions into the instruction") {
  const auto dir = testutil::temp_dir("records");
  const auto cfg = testutil::small_config();
  const auto items = synth_eval_items(3, 1, cfg);
  write_demo_records(dir / "d.jsonl", items);
  const auto back = read_demo_records(dir / "d.jsonl");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].image == items[i].demo.image);
    CHECK(back[i].instruction == items[i].demo.instruction);
    CHECK(back[i].label == items[i].demo.label);
  }
  write_pgm(dir / "q.pgm", items[0].demo.image);
  std::ofstream(dir / "vqa.jsonl") << R"({"image_path": "q.pgm", "instruction": "\n{question} Answer in a word: ", "question": "what animal?"})"
                                   << "\n";
  const auto vqa = read_demo_records(dir / "vqa.jsonl");
  REQUIRE(vqa.size() == 1);
  CHECK(vqa[0].instruction == "\nwhat animal? Answer in a word: ");
  CHECK(vqa[0].label.empty());
  std::filesystem::remove_all(dir);
}
