#include <doctest.h>

#include <cmath>
#include <string>

#include <voxseg/rng.hpp>
#include <voxseg/volume.hpp>

#include "test_util.hpp"

using voxseg::Error;
using voxseg::LabelVolume;
using voxseg::Manifest;
using voxseg::NormalizationConfig;
using voxseg::Rng;
using voxseg::Volume;

namespace {

Volume make_image(int64_t d, int64_t h, int64_t w, int64_t channels,
                  uint64_t seed) {
  Volume v;
  v.dims = {d, h, w};
  v.channels = channels;
  v.spacing = {1.0, 0.5, 2.0};
  v.values.resize(static_cast<size_t>(channels * d * h * w));
  Rng rng(seed);
  for (auto& x : v.values) x = static_cast<float>(rng.normal());
  return v;
}

LabelVolume make_label(int64_t d, int64_t h, int64_t w, uint64_t seed) {
  LabelVolume l;
  l.dims = {d, h, w};
  l.values.resize(static_cast<size_t>(d * h * w));
  Rng rng(seed);
  for (auto& x : l.values) x = static_cast<uint8_t>(rng.uniform_int(4));
  return l;
}

}  // namespace

TEST_SUITE_BEGIN("volume");

TEST_CASE("image round trip is bit exact") {
  const auto dir = testutil::scratch_dir("volume_roundtrip");
  const auto v = make_image(4, 5, 6, 2, 7);

  voxseg::write_volume(dir / "a.mvol", v);
  const Volume back = voxseg::read_image(dir / "a.mvol");
  CHECK(back.dims == v.dims);
  CHECK(back.channels == 2);
  CHECK(back.spacing == v.spacing);
  CHECK(back.values == v.values);

  voxseg::write_volume(dir / "b.mvol", back);
  CHECK(testutil::files_equal(dir / "a.mvol", dir / "b.mvol"));
}

TEST_CASE("label round trip is bit exact") {
  const auto dir = testutil::scratch_dir("label_roundtrip");
  const auto l = make_label(3, 4, 5, 11);

  voxseg::write_volume(dir / "a.mvol", l);
  const LabelVolume back = voxseg::read_label(dir / "a.mvol");
  CHECK(back.dims == l.dims);
  CHECK(back.values == l.values);

  voxseg::write_volume(dir / "b.mvol", back);
  CHECK(testutil::files_equal(dir / "a.mvol", dir / "b.mvol"));
}

TEST_CASE("read_volume distinguishes images from labels") {
  const auto dir = testutil::scratch_dir("volume_variant");
  voxseg::write_volume(dir / "img.mvol", make_image(2, 2, 2, 1, 3));
  voxseg::write_volume(dir / "lbl.mvol", make_label(2, 2, 2, 3));

  CHECK(std::holds_alternative<Volume>(voxseg::read_volume(dir / "img.mvol")));
  CHECK(std::holds_alternative<LabelVolume>(
      voxseg::read_volume(dir / "lbl.mvol")));
  CHECK_THROWS_AS((void)voxseg::read_label(dir / "img.mvol"), Error);
  CHECK_THROWS_AS((void)voxseg::read_image(dir / "lbl.mvol"), Error);
}

TEST_CASE("corrupt files are rejected") {
  const auto dir = testutil::scratch_dir("volume_corrupt");
  voxseg::write_volume(dir / "ok.mvol", make_image(3, 3, 3, 1, 5));
  const std::string good = testutil::read_file(dir / "ok.mvol");

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    testutil::write_file(dir / "bad.mvol", bad);
    CHECK_THROWS_WITH_AS((void)voxseg::read_image(dir / "bad.mvol"),
                         doctest::Contains("bad magic"), Error);
  }
  SUBCASE("truncated payload") {
    testutil::write_file(dir / "bad.mvol", good.substr(0, good.size() - 5));
    CHECK_THROWS_WITH_AS((void)voxseg::read_image(dir / "bad.mvol"),
                         doctest::Contains("payload size mismatch"), Error);
  }
  SUBCASE("truncated header") {
    testutil::write_file(dir / "bad.mvol", good.substr(0, 10));
    CHECK_THROWS_AS((void)voxseg::read_image(dir / "bad.mvol"), Error);
  }
  SUBCASE("header JSON mangled") {
    std::string bad = good;
    bad[14] = '}';
    testutil::write_file(dir / "bad.mvol", bad);
    CHECK_THROWS_AS((void)voxseg::read_image(dir / "bad.mvol"), Error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS((void)voxseg::read_image(dir / "nope.mvol"),
                         doctest::Contains("cannot open"), Error);
  }
}

TEST_CASE("manifest parses rows and resolves relative paths") {
  const auto dir = testutil::scratch_dir("manifest_ok");
  testutil::write_file(dir / "m.csv",
                       "id,image,label\n"
                       "s1,img1.mvol,lbl1.mvol\n"
                       "s2,sub/img2.mvol,\n");
  const Manifest m = voxseg::read_manifest(dir / "m.csv");
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[0].id == "s1");
  CHECK(m.records[0].has_label);
  CHECK(m.records[0].image == dir / "img1.mvol");
  CHECK(m.records[0].label == dir / "lbl1.mvol");
  CHECK(m.records[1].id == "s2");
  CHECK_FALSE(m.records[1].has_label);
  CHECK(m.records[1].image == dir / "sub" / "img2.mvol");
}

TEST_CASE("manifest rejects malformed input") {
  const auto dir = testutil::scratch_dir("manifest_bad");

  testutil::write_file(dir / "h.csv", "subject,image,label\na,b,c\n");
  CHECK_THROWS_WITH_AS((void)voxseg::read_manifest(dir / "h.csv"),
                       doctest::Contains("id,image,label"), Error);

  testutil::write_file(dir / "dup.csv",
                       "id,image,label\ns1,a.mvol,\ns1,b.mvol,\n");
  CHECK_THROWS_WITH_AS((void)voxseg::read_manifest(dir / "dup.csv"),
                       doctest::Contains("duplicate id 's1'"), Error);

  testutil::write_file(dir / "row.csv", "id,image,label\nonlyid\n");
  CHECK_THROWS_AS((void)voxseg::read_manifest(dir / "row.csv"), Error);

  CHECK_THROWS_WITH_AS((void)voxseg::read_manifest(dir / "missing.csv"),
                       doctest::Contains("cannot open"), Error);
}

TEST_CASE("z-score normalization") {
  Volume v = make_image(6, 6, 6, 1, 13);
  for (auto& x : v.values) x = x * 3.0f + 10.0f;

  const Volume n = voxseg::normalize_intensity(v);
  double sum = 0.0, sumsq = 0.0;
  for (float x : n.values) {
    sum += x;
    sumsq += double(x) * x;
  }
  const double count = double(n.values.size());
  const double mean = sum / count;
  const double var = sumsq / count - mean * mean;
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::abs(var - 1.0) < 1e-4);
}

TEST_CASE("constant channel normalizes to zeros") {
  Volume v;
  v.dims = {2, 2, 2};
  v.values.assign(8, 42.0f);
  const Volume n = voxseg::normalize_intensity(v);
  for (float x : n.values) CHECK(x == 0.0f);
}

TEST_CASE("percentile clipping bounds the tails") {
  Volume v = make_image(8, 8, 8, 1, 17);
  v.values[0] = 1000.0f;
  v.values[1] = -1000.0f;

  NormalizationConfig cfg;
  cfg.clip = true;
  cfg.clip_lo_pct = 5.0;
  cfg.clip_hi_pct = 95.0;
  const Volume n = voxseg::normalize_intensity(v, cfg);

  // After clipping, the former outliers coincide with the clip bounds, so
  // the normalized range stays tight.
  float lo = 1e9f, hi = -1e9f;
  for (float x : n.values) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(hi < 4.0f);
  CHECK(lo > -4.0f);

  NormalizationConfig bad;
  bad.clip = true;
  bad.clip_lo_pct = 90.0;
  bad.clip_hi_pct = 10.0;
  CHECK_THROWS_AS(bad.validate(), voxseg::ConfigError);
}

TEST_SUITE_END();
