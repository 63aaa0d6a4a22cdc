#include "layoutattn/errors.hpp"
#include "layoutattn/image_io.hpp"
#include "layoutattn/layout.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace layoutattn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "layoutattn_tests" / "layout_io";
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_SUITE("layout_io") {

TEST_CASE("circle masks use closed disks on pixel centers") {
  const GridSize grid{8, 8};
  Layout l;
  // Pixel (3, 3) has center (0.4375, 0.4375); the disk edge passes exactly through it.
  l.regions = {{{0.4375 + 0.25, 0.4375}, 0.25, std::nullopt}};
  const auto m = region_mask(l, grid);
  CHECK(m[0](3, 3) == 1.0);
  CHECK(m[0](3, 2) == 0.0);
  CHECK(m[0](3, 5) == 1.0);
  CHECK(is_binary(m));
  CHECK_THROWS_AS(region_mask(l, {3, 8}), ShapeError);
  Layout bad;
  bad.regions = {{{0.5, 0.5}, 0.2, Matrix::Ones(4, 4)}};
  CHECK_THROWS_AS(region_mask(bad, grid), ShapeError);
  const auto full = full_masks(2, grid);
  CHECK(full.size() == 2);
  CHECK(full[1].minCoeff() == 1.0);
}

TEST_CASE("circle layout file round trip") {
  const auto dir = temp_dir();
  Layout l;
  l.regions = {{{0.25, 0.5}, 0.2, std::nullopt}, {{0.75, 0.125}, 0.1, std::nullopt}};
  const auto path = (dir / "circles.json").string();
  write_layout_file(path, l, R"({"seed": 1})");
  const auto back = read_layout_file(path, {32, 32});
  REQUIRE(back.regions.size() == 2);
  CHECK(back.regions[1].center == Point2{0.75, 0.125});
  CHECK(back.regions[1].radius == 0.1);
  CHECK_FALSE(back.regions[0].mask.has_value());
}

TEST_CASE("mask layout file round trip") {
  const auto dir = temp_dir();
  const GridSize grid{16, 16};
  Matrix mask = Matrix::Zero(16, 16);
  mask.block(2, 4, 4, 6).setOnes();
  Layout l;
  l.regions = {{{}, 0.0, mask}, {{0.5, 0.8}, 0.15, std::nullopt}};
  const auto path = (dir / "masks.json").string();
  write_layout_file(path, l);
  CHECK(fs::exists(dir / "masks.mask1.pgm"));
  const auto back = read_layout_file(path, grid);
  REQUIRE(back.regions[0].mask.has_value());
  CHECK(*back.regions[0].mask == mask);
  CHECK(back.regions[0].center.x == doctest::Approx(7.0 / 16));
  CHECK(back.regions[0].center.y == doctest::Approx(4.0 / 16));
  CHECK(back.regions[0].radius == doctest::Approx(std::sqrt(24.0 / (M_PI * 256))));
  CHECK(region_mask(back, grid)[0] == mask);
  CHECK_THROWS_AS(read_layout_file(path, {8, 8}), ShapeError);
}

TEST_CASE("grey masks are thresholded") {
  const auto dir = temp_dir();
  write_text(dir / "grey.pgm", "P2\n# comment\n4 4\n10\n0 5 6 10\n0 0 0 0\n10 10 0 0\n0 0 0 4\n");
  write_text(dir / "grey.json", R"({"objects": [{"id": 1, "mask_pgm": "grey.pgm"}]})");
  const auto l = read_layout_file((dir / "grey.json").string(), {4, 4});
  const Matrix& m = *l.regions[0].mask;
  CHECK(m.sum() == 4.0);
  CHECK(m(0, 1) == 0.0);
  CHECK(m(0, 2) == 1.0);
}

TEST_CASE("malformed layout files") {
  const auto dir = temp_dir();
  const auto p = dir / "bad.json";
  write_text(p, R"({"objects": [{"id": 1, "cx": 0.5, "cy": 0.5, "radius": 0.2}]})");
  CHECK_THROWS_AS(read_layout_file(p.string(), {32, 32}), ConfigError);
  write_text(p, R"({"objects": [{"id": 2, "cx": 0.5, "cy": 0.5}]})");
  CHECK_THROWS_AS(read_layout_file(p.string(), {32, 32}), ConfigError);
  write_text(p, R"({"objects": [{"id": 1, "cx": 0.5, "cy": 0.5}, {"id": 1, "cx": 0.2, "cy": 0.5}]})");
  CHECK_THROWS_AS(read_layout_file(p.string(), {32, 32}), ConfigError);
  write_text(p, R"({"objects": [{"id": 1, "cx": 0.5, "cy": 0.5, "r": 0.9}]})");
  CHECK_THROWS_AS(read_layout_file(p.string(), {32, 32}), ConfigError);
  write_text(p, "{not json");
  CHECK_THROWS_AS(read_layout_file(p.string(), {32, 32}), IoError);
  write_text(p, R"({"objects": [{"id": 1, "mask_pgm": "missing.pgm"}]})");
  CHECK_THROWS_AS(read_layout_file(p.string(), {32, 32}), IoError);
  CHECK_THROWS_AS(read_layout_file((dir / "nothing.json").string(), {32, 32}), IoError);
}

TEST_CASE("pgm formats") {
  const auto dir = temp_dir();
  Matrix m(2, 3);
  m << 0.0, 0.5, 1.0, 0.25, 0.75, 0.1;
  const auto p2 = (dir / "m.pgm").string();
  write_pgm(p2, m, "two\nlines");
  const Matrix back = read_pgm(p2);
  CHECK((back - m).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);
  {
    std::ofstream out(dir / "b.pgm", std::ios::binary);
    out << "P5\n3 1\n255\n";
    out.put(static_cast<char>(0));
    out.put(static_cast<char>(128));
    out.put(static_cast<char>(255));
  }
  const Matrix b = read_pgm((dir / "b.pgm").string());
  CHECK(b(0, 2) == 1.0);
  CHECK(b(0, 1) == doctest::Approx(128.0 / 255));
  write_text(dir / "t.pgm", "P2\n2 2\n255\n1 2 3\n");
  CHECK_THROWS_AS(read_pgm((dir / "t.pgm").string()), IoError);
  write_text(dir / "x.pgm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_pgm((dir / "x.pgm").string()), IoError);
}

TEST_CASE("scene rendering") {
  ToyScene s = blank_scene({4, 4});
  s.nouns(5, 2) = 0.9;
  s.colors(5, 0) = 0.9;
  const RgbImage img = render_scene(s, 2);
  CHECK(img.width == 8);
  CHECK(img.height == 8);
  Layout l;
  l.regions = {{{0.5, 0.5}, 0.25, std::nullopt}};
  RgbImage over = img;
  draw_layout_overlay(over, l, {4, 4}, 2);
  CHECK(over.pixels != img.pixels);
}

}
