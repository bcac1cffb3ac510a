#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fovea/geometry.hpp"
#include "fovea/glimpse.hpp"
#include "fovea/image_io.hpp"
#include "fovea/ini.hpp"
#include "fovea/rng.hpp"
#include "fovea/tensor.hpp"

using namespace fovea;
namespace fs = std::filesystem;

namespace {

BoundingBox mk(double y, double x, double h, double w) {
  BoundingBox b;
  b.yx = {y, x};
  b.hw = {h, w};
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

TEST_CASE("iou: identity, disjoint clamp and the 1/7 pair") {
  const BoundingBox b = mk(-0.4, 0.2, 0.5, 0.3);
  CHECK(iou(b, b) == doctest::Approx(1.0));

  const BoundingBox far1 = mk(-0.9, -0.9, 0.2, 0.2);
  const BoundingBox far2 = mk(0.6, 0.6, 0.2, 0.2);
  CHECK(iou(far1, far2) == doctest::Approx(1e-8));

  const BoundingBox a = mk(0.0, 0.0, 0.5, 0.5);
  const BoundingBox c = mk(0.25, 0.25, 0.5, 0.5);
  CHECK(iou(a, c) == doctest::Approx(1.0 / 7.0));
  CHECK(rasterize_iou_oracle(a, c, 1000) ==
        doctest::Approx(1.0 / 7.0).epsilon(0.015));
}

TEST_CASE("iou: symmetry and translation invariance") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    auto rb = [&]() {
      const double h = rng.uniform(0.05, 0.8), w = rng.uniform(0.05, 0.8);
      return mk(rng.uniform(-0.9, 0.1), rng.uniform(-0.9, 0.1), h, w);
    };
    const BoundingBox a = rb(), b = rb();
    CHECK(iou(a, b) == iou(b, a));

    const double dy = rng.uniform(-0.05, 0.05), dx = rng.uniform(-0.05, 0.05);
    BoundingBox a2 = a, b2 = b;
    a2.yx += Vec2{dy, dx};
    b2.yx += Vec2{dy, dx};
    if (a2.valid() && b2.valid())
      CHECK(iou(a2, b2) == doctest::Approx(iou(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("iou vs rasterization oracle over random in-frame pairs") {
  Rng rng(1000);
  int compared = 0;
  for (int i = 0; i < 250; ++i) {
    auto rb = [&]() {
      const double h = rng.uniform(kMinBoxSide, 2.0);
      const double w = rng.uniform(kMinBoxSide, 2.0);
      return mk(rng.uniform(-1.0, 1.0 - h), rng.uniform(-1.0, 1.0 - w), h, w);
    };
    const BoundingBox a = rb(), b = rb();
    const double v = iou(a, b);
    if (v < 0.01) continue;
    CHECK(std::abs(v - rasterize_iou_oracle(a, b, 1000)) <= 0.005);
    ++compared;
  }
  CHECK(compared > 50);
}

TEST_CASE("clip_detection: clamping and idempotence") {
  const ClipLimits lim;
  auto [box1, s1] = clip_detection({1.5, -2.0}, {0.0, 3.0}, 1.2, lim);
  CHECK(box1.yx(0) == 1.0);
  CHECK(box1.yx(1) == -1.0);
  CHECK(box1.hw(0) == 0.01);
  CHECK(box1.hw(1) == 2.0);
  CHECK(s1 == 1.0);

  // values already inside come back unchanged
  auto [box2, s2] = clip_detection({0.3, -0.4}, {0.5, 0.6}, 0.7, lim);
  CHECK(box2.yx(0) == 0.3);
  CHECK(box2.yx(1) == -0.4);
  CHECK(box2.hw(0) == 0.5);
  CHECK(s2 == 0.7);

  // idempotent
  auto [box3, s3] = clip_detection(box1.yx, box1.hw, s1, lim);
  CHECK((box3.yx - box1.yx).norm() == 0.0);
  CHECK((box3.hw - box1.hw).norm() == 0.0);
  CHECK(s3 == s1);
}

TEST_CASE("box_center: reference values") {
  CHECK((box_center(mk(-1, -1, 2, 2)) - Vec2{0, 0}).norm() == 0.0);
  CHECK((box_center(mk(0, 0, 0.5, 0.5)) - Vec2{0.25, 0.25}).norm() <= 1e-15);
  CHECK((box_center(mk(0.2, -0.4, 0.2, 0.6)) - Vec2{0.3, -0.1}).norm() <=
        1e-15);
}

TEST_CASE("rasterize_iou_oracle: degenerate and edge cases") {
  const BoundingBox a = mk(-0.5, -0.5, 0.4, 0.4);
  CHECK(rasterize_iou_oracle(a, a, 500) == doctest::Approx(1.0));
  const BoundingBox b = mk(0.4, 0.4, 0.3, 0.3);
  CHECK(rasterize_iou_oracle(a, b, 500) == 0.0);
  CHECK_THROWS_AS(rasterize_iou_oracle(a, b, 50), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// rng
// ---------------------------------------------------------------------------

TEST_CASE("rng: deterministic streams, bounds, derived seeds") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(0.3, 1.5);
    CHECK(u >= 0.3);
    CHECK(u < 1.5);
    const int k = r.uniform_int(2, 9);
    CHECK(k >= 2);
    CHECK(k <= 9);
  }
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}

TEST_CASE("rng: normal moments") {
  Rng r(13);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal(2.0, 3.0);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(2.0).epsilon(0.02));
  CHECK(var == doctest::Approx(9.0).epsilon(0.03));
}

// ---------------------------------------------------------------------------
// glimpse
// ---------------------------------------------------------------------------

TEST_CASE("to_pixel: corner and center mappings") {
  CHECK(to_pixel({Vec2{0, 0}}, 56, 56) == std::pair{27.5, 27.5});
  CHECK(to_pixel({Vec2{-1, -1}}, 56, 56) == std::pair{0.0, 0.0});
  CHECK(to_pixel({Vec2{1, -1}}, 100, 56) == std::pair{99.0, 0.0});
}

TEST_CASE("extract_pyramid: crop sides and constant images") {
  GlimpseConfig cfg{8, 3, 2.0, 16};
  CHECK(cfg.crop_sides() == std::vector<int>{8, 16, 32});

  Tensor3 img(56, 56, 1, 0.7);
  const GlimpsePyramid pyr = extract_pyramid(img, {Vec2{0.21, -0.37}}, cfg);
  REQUIRE(pyr.patches.size() == 3);
  for (const auto& p : pyr.patches) {
    CHECK(p.h == 16);
    CHECK(p.w == 16);
    for (double v : p.data) CHECK(v == doctest::Approx(0.7));
  }
}

TEST_CASE("extract_pyramid: corner fixation pads three quarters with zeros") {
  // 56x56 image, fixation at (-1,-1), 32px crop: the lround'd corner puts
  // 16x16 source pixels in view, 768 of 1024 crop cells are padding
  Tensor3 img(56, 56, 1, 1.0);
  GlimpseConfig cfg{8, 3, 2.0, 32};  // su = 32 so the third crop is unresized
  const GlimpsePyramid pyr = extract_pyramid(img, {Vec2{-1, -1}}, cfg);
  const Tensor3& crop = pyr.patches[2];
  REQUIRE(crop.h == 32);
  int zeros = 0;
  for (double v : crop.data) zeros += v == 0.0;
  CHECK(zeros == 768);
}

TEST_CASE("extract_pyramid: translation equivariance on whole-pixel shifts") {
  Rng rng(3);
  Tensor3 img(40, 40, 1);
  for (double& v : img.data) v = rng.uniform();
  // shift content by (+4, +6) pixels
  Tensor3 shifted(40, 40, 1, 0.0);
  for (int r = 0; r + 4 < 40; ++r)
    for (int c = 0; c + 6 < 40; ++c)
      shifted.at(r + 4, c + 6, 0) = img.at(r, c, 0);

  GlimpseConfig cfg{4, 2, 2.0, 8};
  const double cy = 17, cx = 15;  // interior, both crops stay in-bounds
  auto fix_at = [&](double py, double px) {
    return FixationPoint{Vec2{py / ((40 - 1) / 2.0) - 1.0,
                              px / ((40 - 1) / 2.0) - 1.0}};
  };
  const GlimpsePyramid p1 = extract_pyramid(img, fix_at(cy, cx), cfg);
  const GlimpsePyramid p2 = extract_pyramid(shifted, fix_at(cy + 4, cx + 6), cfg);
  for (int k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < p1.patches[k].data.size(); ++i)
      CHECK(p1.patches[k].data[i] ==
            doctest::Approx(p2.patches[k].data[i]).epsilon(1e-12));
}

TEST_CASE("extract_pyramid: nested receptive fields") {
  GlimpseConfig cfg{5, 3, 1.7, 8};
  const auto sides = cfg.crop_sides();
  const double cy = 30.2, cx = 18.7;
  long prev_lo_r = 0, prev_hi_r = 0, prev_lo_c = 0, prev_hi_c = 0;
  for (int k = 0; k < 3; ++k) {
    const long r0 = std::lround(cy - (sides[k] - 1) / 2.0);
    const long c0 = std::lround(cx - (sides[k] - 1) / 2.0);
    if (k > 0) {
      CHECK(r0 < prev_lo_r);
      CHECK(c0 < prev_lo_c);
      CHECK(r0 + sides[k] > prev_hi_r);
      CHECK(c0 + sides[k] > prev_hi_c);
    }
    prev_lo_r = r0;
    prev_hi_r = r0 + sides[k];
    prev_lo_c = c0;
    prev_hi_c = c0 + sides[k];
  }
}

TEST_CASE("extract_pyramid: crop cost is independent of image size") {
  GlimpseConfig cfg{8, 3, 2.0, 16};
  ExtractStats small_stats, large_stats;
  Tensor3 small(56, 56, 1, 0.5), large(800, 800, 1, 0.5);
  extract_pyramid(small, {Vec2{0.1, 0.1}}, cfg, &small_stats);
  extract_pyramid(large, {Vec2{0.1, 0.1}}, cfg, &large_stats);
  CHECK(small_stats.cells_visited == large_stats.cells_visited);
  CHECK(small_stats.cells_visited == 8 * 8 + 16 * 16 + 32 * 32);
}

TEST_CASE("resize kernels preserve constants and handle identity") {
  Tensor3 img(12, 12, 1, 0.42);
  const Tensor3 down = resize_area(img, 5, 7);
  for (double v : down.data) CHECK(v == doctest::Approx(0.42));
  const Tensor3 up = resize_bilinear(img, 20, 18);
  for (double v : up.data) CHECK(v == doctest::Approx(0.42));
  const Tensor3 same = resize_image(img, 12, 12);
  CHECK(same.data == img.data);
}

// ---------------------------------------------------------------------------
// ini + png plumbing
// ---------------------------------------------------------------------------

TEST_CASE("ini: parse, defaults, round trip") {
  const std::string text =
      "# comment\n[model]\nn = 3\nsf = 2.0\n\n[train]\nlr = 1e-3 ; inline\n"
      "flag = true\nlist = 1,2,4\n";
  IniFile ini = IniFile::parse(text);
  CHECK(ini.get_int("model.n", 0) == 3);
  CHECK(ini.get_double("model.sf", 0) == doctest::Approx(2.0));
  CHECK(ini.get_double("train.lr", 0) == doctest::Approx(1e-3));
  CHECK(ini.get_bool("train.flag", false));
  CHECK(ini.get_int_list("train.list", {}) == std::vector<int>{1, 2, 4});
  CHECK(ini.get("absent.key", "fallback") == "fallback");
  CHECK_THROWS(ini.get("absent.key"));

  IniFile again = IniFile::parse(ini.dump());
  CHECK(again.dump() == ini.dump());
  CHECK(digest_hex(ini.dump()) == digest_hex(again.dump()));
  CHECK(digest_hex("a") != digest_hex("b"));
}

TEST_CASE("png: gray and rgb round trips are exact on the 8-bit grid") {
  const fs::path dir = fs::temp_directory_path() / "fovea_png_test";
  fs::create_directories(dir);
  Rng rng(17);

  Tensor3 gray(21, 33, 1);
  for (double& v : gray.data) v = quantize8(rng.uniform());
  write_png(dir / "g.png", gray);
  const Tensor3 gback = read_png(dir / "g.png");
  REQUIRE(gback.same_shape(gray));
  CHECK(gback.data == gray.data);

  Tensor3 rgb(14, 9, 3);
  for (double& v : rgb.data) v = quantize8(rng.uniform());
  write_png(dir / "c.png", rgb);
  const Tensor3 cback = read_png(dir / "c.png");
  REQUIRE(cback.same_shape(rgb));
  CHECK(cback.data == rgb.data);

  CHECK_THROWS(read_png(dir / "missing.png"));
  std::ofstream(dir / "bad.png") << "not a png";
  CHECK_THROWS(read_png(dir / "bad.png"));
  fs::remove_all(dir);
}
