#include <doctest.h>

#include <algorithm>
#include <thread>
#include <vector>

#include <voxseg/sampling.hpp>
#include <voxseg/volume.hpp>

#include "test_util.hpp"

using voxseg::BoundedChannel;
using voxseg::ClassIndex;
using voxseg::Coord;
using voxseg::Error;
using voxseg::LabelVolume;
using voxseg::Rng;
using voxseg::SamplerConfig;
using voxseg::SamplerMode;
using voxseg::Subject;
using voxseg::Volume;

namespace {

Volume ramp_image(int64_t d, int64_t h, int64_t w) {
  Volume v;
  v.dims = {d, h, w};
  v.values.resize(static_cast<size_t>(d * h * w));
  for (size_t i = 0; i < v.values.size(); ++i) {
    v.values[i] = static_cast<float>(i);
  }
  return v;
}

LabelVolume block_label(int64_t dim, int64_t lo, int64_t hi, uint8_t cls) {
  LabelVolume l;
  l.dims = {dim, dim, dim};
  l.values.assign(static_cast<size_t>(dim * dim * dim), 0);
  for (int64_t z = lo; z < hi; ++z) {
    for (int64_t y = lo; y < hi; ++y) {
      for (int64_t x = lo; x < hi; ++x) l.at(z, y, x) = cls;
    }
  }
  return l;
}

Subject make_subject(std::string id, int64_t dim, uint64_t seed) {
  Subject s;
  s.id = std::move(id);
  s.image.dims = {dim, dim, dim};
  s.image.values.resize(static_cast<size_t>(dim * dim * dim));
  Rng rng(seed);
  for (auto& v : s.image.values) v = static_cast<float>(rng.normal());
  s.label = block_label(dim, 2, 5, 1);
  s.has_label = true;
  s.class_index = voxseg::build_class_index(s.label);
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("sampling");

TEST_CASE("class index lists the present classes with exact voxel sets") {
  LabelVolume l = block_label(6, 1, 3, 2);
  l.at(5, 5, 5) = 4;
  const ClassIndex idx = voxseg::build_class_index(l);

  REQUIRE(idx.present == std::vector<uint8_t>{0, 2, 4});
  REQUIRE(idx.voxels.size() == 3);
  CHECK(idx.voxels[1].size() == 8);
  CHECK(idx.voxels[2].size() == 1);
  CHECK(idx.voxels[0].size() == 6 * 6 * 6 - 9);
  CHECK(idx.voxels[2][0] == (5 * 6 + 5) * 6 + 5);
  // Voxel lists are in flat scan order.
  CHECK(std::is_sorted(idx.voxels[0].begin(), idx.voxels[0].end()));
}

TEST_CASE("extract_patch copies an interior window verbatim") {
  const Volume img = ramp_image(8, 8, 8);
  LabelVolume lbl = block_label(8, 0, 8, 0);
  lbl.at(4, 4, 4) = 3;

  const auto [vals, labs] = voxseg::extract_patch(img, lbl, {4, 4, 4}, 4);
  REQUIRE(vals.size() == 64);
  REQUIRE(labs.size() == 64);
  // size 4 window around center 4 starts at 4 - 4/2 = 2.
  for (int64_t z = 0; z < 4; ++z) {
    for (int64_t y = 0; y < 4; ++y) {
      for (int64_t x = 0; x < 4; ++x) {
        const float want = img.at(0, z + 2, y + 2, x + 2);
        CHECK(vals[(z * 4 + y) * 4 + x] == want);
      }
    }
  }
  CHECK(labs[(2 * 4 + 2) * 4 + 2] == 3);
}

TEST_CASE("extract_patch clamps windows at the border") {
  const Volume img = ramp_image(8, 8, 8);
  const LabelVolume lbl = block_label(8, 0, 8, 0);

  const auto [vals, labs] = voxseg::extract_patch(img, lbl, {0, 0, 7}, 4);
  // z and y clamp to 0; x clamps to 8 - 4 = 4.
  for (int64_t z = 0; z < 4; ++z) {
    for (int64_t y = 0; y < 4; ++y) {
      for (int64_t x = 0; x < 4; ++x) {
        CHECK(vals[(z * 4 + y) * 4 + x] == img.at(0, z, y, x + 4));
      }
    }
  }
  CHECK(labs[0] == 0);
}

TEST_CASE("extract_patch pads axes shorter than the patch") {
  Volume img = ramp_image(2, 6, 6);
  for (auto& v : img.values) v += 5.0f;  // volume minimum is 5
  LabelVolume lbl;
  lbl.dims = {2, 6, 6};
  lbl.values.assign(2 * 6 * 6, 1);

  const auto [vals, labs] = voxseg::extract_patch(img, lbl, {0, 3, 3}, 4);
  // pad_lo = (4 - 2) / 2 = 1: patch z = 1, 2 hold volume z = 0, 1 and the
  // outer slices hold the fill values.
  for (int64_t y = 0; y < 4; ++y) {
    for (int64_t x = 0; x < 4; ++x) {
      CHECK(vals[(0 * 4 + y) * 4 + x] == 5.0f);
      CHECK(vals[(3 * 4 + y) * 4 + x] == 5.0f);
      CHECK(labs[(0 * 4 + y) * 4 + x] == 0);
      CHECK(labs[(3 * 4 + y) * 4 + x] == 0);
      CHECK(vals[(1 * 4 + y) * 4 + x] == img.at(0, 0, y + 1, x + 1));
      CHECK(labs[(2 * 4 + y) * 4 + x] == 1);
    }
  }
}

TEST_CASE("uniform centers cover the volume uniformly") {
  Rng rng(3);
  const std::array<int64_t, 3> dims{4, 5, 6};
  std::vector<int> hit(4 * 5 * 6, 0);
  for (int i = 0; i < 30000; ++i) {
    const Coord c = voxseg::sample_center_uniform(dims, rng);
    REQUIRE(c.z >= 0);
    REQUIRE(c.z < 4);
    REQUIRE(c.y < 5);
    REQUIRE(c.x < 6);
    ++hit[static_cast<size_t>((c.z * 5 + c.y) * 6 + c.x)];
  }
  // 120 cells, 250 expected each; 6 sigma is about 94.
  for (int h : hit) {
    CHECK(h > 150);
    CHECK(h < 350);
  }
}

TEST_CASE("class-balanced centers hit each class equally") {
  // Class 1 covers 27 of 4096 voxels, yet must receive half the draws.
  LabelVolume lbl = block_label(16, 6, 9, 1);
  const ClassIndex idx = voxseg::build_class_index(lbl);
  Rng rng(5);

  int fg = 0;
  const int kDraws = 2000;
  for (int i = 0; i < kDraws; ++i) {
    const Coord c = voxseg::sample_center_class_balanced(lbl, idx, rng);
    fg += (lbl.at(c.z, c.y, c.x) == 1);
  }
  CHECK(fg > kDraws * 0.45);
  CHECK(fg < kDraws * 0.55);

  // Foreground-only sampling never lands on background.
  for (int i = 0; i < 200; ++i) {
    const Coord c = voxseg::sample_center_class_balanced(lbl, idx, rng, true);
    CHECK(lbl.at(c.z, c.y, c.x) == 1);
  }
}

TEST_CASE("make_batch shapes and patch-major labels") {
  std::vector<Subject> subjects;
  subjects.push_back(make_subject("a", 12, 1));
  subjects.push_back(make_subject("b", 12, 2));

  SamplerConfig cfg;
  cfg.patch_size = 8;
  cfg.mode = SamplerMode::kClassBalanced;
  cfg.seed = 9;

  const auto batch = voxseg::make_batch(subjects, cfg, 3, Rng(cfg.seed));
  CHECK(batch.n == 3);
  CHECK(batch.patch == 8);
  CHECK(batch.images.shape() == voxseg::Shape{3, 1, 8, 8, 8});
  CHECK(batch.labels.size() == 3 * 8 * 8 * 8);
  REQUIRE(batch.origins.size() == 3);
  for (const auto& o : batch.origins) {
    CHECK((o.subject == "a" || o.subject == "b"));
  }
}

TEST_CASE("subject sequence is identical across sampler modes") {
  std::vector<Subject> subjects;
  for (int i = 0; i < 4; ++i) {
    subjects.push_back(make_subject("s" + std::to_string(i), 12, 10 + i));
  }

  SamplerConfig uni;
  uni.patch_size = 8;
  uni.mode = SamplerMode::kUniform;
  uni.seed = 21;
  SamplerConfig bal = uni;
  bal.mode = SamplerMode::kClassBalanced;

  const Rng rng(uni.seed);
  const auto a = voxseg::make_batch(subjects, uni, 24, rng);
  const auto b = voxseg::make_batch(subjects, bal, 24, rng);
  REQUIRE(a.origins.size() == b.origins.size());
  for (size_t i = 0; i < a.origins.size(); ++i) {
    CHECK(a.origins[i].subject == b.origins[i].subject);
  }
}

TEST_CASE("make_batch is deterministic in the generator") {
  std::vector<Subject> subjects;
  subjects.push_back(make_subject("a", 12, 1));

  SamplerConfig cfg;
  cfg.patch_size = 8;
  cfg.seed = 33;

  const auto b1 = voxseg::make_batch(subjects, cfg, 4, Rng(7));
  const auto b2 = voxseg::make_batch(subjects, cfg, 4, Rng(7));
  CHECK(b1.labels == b2.labels);
  for (int64_t i = 0; i < b1.images.size(); ++i) {
    CHECK(b1.images.values()[i] == b2.images.values()[i]);
  }
}

TEST_CASE("sampler config validation") {
  SamplerConfig cfg;
  cfg.patch_size = 7;
  CHECK_THROWS_AS(cfg.validate(), voxseg::ConfigError);
}

TEST_CASE("bounded channel keeps order and honors close") {
  BoundedChannel<int> ch(2);

  std::thread producer([&ch] {
    for (int i = 0; i < 20; ++i) {
      if (!ch.push(i)) return;
    }
    ch.close();
  });

  for (int i = 0; i < 20; ++i) {
    auto v = ch.pop();
    REQUIRE(v.has_value());
    CHECK(*v == i);
  }
  CHECK_FALSE(ch.pop().has_value());
  producer.join();

  BoundedChannel<int> closed(1);
  closed.close();
  CHECK_FALSE(closed.push(1));
  CHECK_FALSE(closed.pop().has_value());
}

TEST_CASE("load_subjects reads, checks and normalizes") {
  const auto dir = testutil::scratch_dir("load_subjects");

  Volume img = ramp_image(6, 6, 6);
  LabelVolume lbl = block_label(6, 1, 3, 2);
  voxseg::write_volume(dir / "img.mvol", img);
  voxseg::write_volume(dir / "lbl.mvol", lbl);
  testutil::write_file(dir / "m.csv", "id,image,label\ns1,img.mvol,lbl.mvol\n");

  const auto subjects =
      voxseg::load_subjects(voxseg::read_manifest(dir / "m.csv"), {}, true);
  REQUIRE(subjects.size() == 1);
  CHECK(subjects[0].id == "s1");
  CHECK(subjects[0].has_label);
  CHECK(subjects[0].class_index.present == std::vector<uint8_t>{0, 2});
  double mean = 0.0;
  for (float v : subjects[0].image.values) mean += v;
  CHECK(std::abs(mean / 216.0) < 1e-5);

  testutil::write_file(dir / "nolabel.csv", "id,image,label\ns1,img.mvol,\n");
  CHECK_THROWS_AS((void)voxseg::load_subjects(
                      voxseg::read_manifest(dir / "nolabel.csv"), {}, true),
                  Error);

  LabelVolume small = block_label(4, 0, 1, 1);
  voxseg::write_volume(dir / "small.mvol", small);
  testutil::write_file(dir / "mismatch.csv",
                       "id,image,label\ns1,img.mvol,small.mvol\n");
  CHECK_THROWS_AS((void)voxseg::load_subjects(
                      voxseg::read_manifest(dir / "mismatch.csv"), {}, true),
                  Error);
}

TEST_SUITE_END();
