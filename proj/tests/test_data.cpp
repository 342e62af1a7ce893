#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mimlab/data.hpp"

using namespace mimlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_pixels(const Image& a, const Image& b) { return a.h == b.h && a.w == b.w && a.pix == b.pix; }

bool near_pixels(const Image& a, const Image& b, float tol) {
  if (a.h != b.h || a.w != b.w || a.pix.size() != b.pix.size()) return false;
  for (size_t i = 0; i < a.pix.size(); ++i)
    if (std::abs(a.pix[i] - b.pix[i]) > tol) return false;
  return true;
}

}  // namespace

TEST_CASE("manifest ingestion: empty, single ppm, and line-cited failures") {
  fs::path dir = fresh_dir("mimlab-test-manifest");

  { std::ofstream(dir / "empty.tsv"); }
  LabeledDataset empty = load_image_folder((dir / "empty.tsv").string(), 4, "train");
  CHECK(empty.size() == 0);

  Image img(32, 32);
  for (size_t i = 0; i < img.pix.size(); ++i) img.pix[i] = static_cast<float>(i % 256) / 255.0f;
  save_ppm(img, (dir / "a.ppm").string());
  { std::ofstream(dir / "one.tsv") << "a.ppm\t2\n"; }
  LabeledDataset one = load_image_folder((dir / "one.tsv").string(), 4, "train");
  REQUIRE(one.size() == 1);
  CHECK(one.labels[0] == 2);
  for (float v : one.images[0].pix) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  { std::ofstream(dir / "missing.tsv") << "nope.ppm\t0\n"; }
  try {
    load_image_folder((dir / "missing.tsv").string(), 4, "train");
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Data);
    CHECK(std::string(e.what()).find("nope.ppm") != std::string::npos);
  }

  { std::ofstream(dir / "badlabel.tsv") << "a.ppm\t9\n"; }
  try {
    load_image_folder((dir / "badlabel.tsv").string(), 4, "train");
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Data);
    CHECK(std::string(e.what()).find(":1") != std::string::npos);  // cites the line
  }
}

TEST_CASE("dataset save/load round trip preserves pixels and order") {
  auto [train, test] = synth_generate(11, 6, 2, 3, 16);
  fs::path dir = fresh_dir("mimlab-test-roundtrip");
  save_dataset(train, dir.string());
  LabeledDataset back = load_image_folder((dir / "manifest.tsv").string(), 3, "train");
  REQUIRE(back.size() == train.size());
  CHECK(back.labels == train.labels);
  for (size_t i = 0; i < back.size(); ++i) {
    // ppm quantizes to 8 bits
    for (size_t j = 0; j < back.images[i].pix.size(); ++j)
      CHECK(std::abs(back.images[i].pix[j] - train.images[i].pix[j]) <= 0.5f / 255.0f + 1e-6f);
  }
}

TEST_CASE("synthetic generator: determinism, stratification, and validation") {
  auto [a_train, a_test] = synth_generate(7, 512, 64, 4, 32);
  auto [b_train, b_test] = synth_generate(7, 512, 64, 4, 32);
  REQUIRE(a_train.size() == 512);
  REQUIRE(a_test.size() == 64);
  for (size_t i = 0; i < a_train.size(); ++i) CHECK(same_pixels(a_train.images[i], b_train.images[i]));
  for (size_t i = 0; i < a_test.size(); ++i) CHECK(same_pixels(a_test.images[i], b_test.images[i]));

  std::vector<int64_t> counts(4, 0);
  for (int64_t l : a_train.labels) counts[static_cast<size_t>(l)]++;
  for (int64_t c : counts) CHECK(c == 128);

  // train and test streams differ
  CHECK_FALSE(same_pixels(a_train.images[0], a_test.images[0]));

  auto [c_train, c_test] = synth_generate(8, 4, 2, 4, 32);
  CHECK_FALSE(same_pixels(a_train.images[0], c_train.images[0]));

  for (float v : a_train.images[0].pix) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  CHECK_THROWS_AS(synth_generate(1, 4, 4, 1, 32), Error);   // too few classes
  CHECK_THROWS_AS(synth_generate(1, 4, 4, 4, 30), Error);   // size not a multiple of 8
  CHECK_THROWS_AS(synth_generate(1, 4, 4, 17, 32), Error);  // too many classes
}

TEST_CASE("patchify shapes, fixed flattening order, and inversion") {
  auto [train, test] = synth_generate(3, 1, 1, 2, 32);
  PatchSequence ps = patchify(train.images[0], 8);
  CHECK(ps.n == 16);
  CHECK(ps.d == 192);
  CHECK(ps.rows == 4);
  CHECK(ps.cols == 4);

  // patch (r,c) element k = channel-major, then pixel row, then pixel column
  const Image& img = train.images[0];
  auto pv = ps.patches.f32();
  for (int pr : {0, 3})
    for (int pc : {0, 2}) {
      int64_t base = (static_cast<int64_t>(pr) * 4 + pc) * 192;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            int64_t k = (static_cast<int64_t>(c) * 8 + y) * 8 + x;
            CHECK(pv[base + k] == img.at(c, pr * 8 + y, pc * 8 + x));
          }
    }

  Image back = unpatchify(ps, 8);
  CHECK(same_pixels(back, img));

  Image whole(16, 16);
  for (size_t i = 0; i < whole.pix.size(); ++i) whole.pix[i] = static_cast<float>(i) / 768.0f;
  PatchSequence single = patchify(whole, 16);
  CHECK(single.n == 1);
  CHECK(single.d == 768);
  auto sv = single.patches.f32();
  for (int64_t i = 0; i < 768; ++i) CHECK(sv[i] == whole.pix[static_cast<size_t>(i)]);

  Image odd(30, 32);
  try {
    patchify(odd, 8);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Shape);
  }
}

TEST_CASE("augmentation primitives are involutions at forced settings") {
  auto [train, test] = synth_generate(4, 1, 1, 2, 32);
  const Image& img = train.images[0];

  CHECK(same_pixels(hflip(hflip(img)), img));
  // 1 - (1 - v) reintroduces one ulp of rounding for v < 0.5
  CHECK(near_pixels(solarize(solarize(img, 0.0f), 0.0f), img, 1e-6f));
}

TEST_CASE("augment is deterministic per rng stream and stays in range") {
  auto [train, test] = synth_generate(5, 2, 1, 2, 32);
  const Image& img = train.images[0];

  Rng r1(99), r2(99);
  Image a = augment(img, AugmentPolicy::SmallData, 32, r1);
  Image b = augment(img, AugmentPolicy::SmallData, 32, r2);
  CHECK(same_pixels(a, b));

  Rng sweep(123);
  for (int i = 0; i < 200; ++i) {
    Image out = augment(train.images[static_cast<size_t>(i % 2)],
                        i % 2 ? AugmentPolicy::SmallData : AugmentPolicy::Basic, 32, sweep);
    CHECK(out.h == 32);
    CHECK(out.w == 32);
    for (float v : out.pix) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  Rng r3(99);
  Image none = augment(img, AugmentPolicy::None, 32, r3);
  CHECK(same_pixels(none, img));
}

TEST_CASE("augment policy names round trip") {
  for (auto p : {AugmentPolicy::None, AugmentPolicy::Basic, AugmentPolicy::SmallData})
    CHECK(augment_policy_from_name(augment_policy_name(p)) == p);
  CHECK_THROWS_AS(augment_policy_from_name("mixup"), Error);
}
