#pragma once

#include "layoutattn/common.hpp"
#include "layoutattn/layout.hpp"
#include "layoutattn/toy_generator.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace layoutattn {

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t* at(int row, int col) {
    return &pixels[(static_cast<std::size_t>(row) * width + col) * 3];
  }
};

/// P2 or P5 greymap, values scaled to [0, 1]. Throws IoError.
Matrix read_pgm(const std::string& path);
/// P2 greymap with maxval 255; values are clamped to [0, 1].
void write_pgm(const std::string& path, const Matrix& values, const std::string& comment = {});
/// P3 pixmap; `comment` lines are written after the magic number.
void write_ppm(const std::string& path, const RgbImage& image, const std::string& comment = {});

/// Palette-colored render: each pixel takes the palette color weighted by
/// color activations, scaled by its strongest noun activation.
RgbImage render_scene(const ToyScene& scene, int scale = 8);

/// Draws each region outline and center marker over a render made with the
/// same scale.
void draw_layout_overlay(RgbImage& image, const Layout& layout, GridSize grid, int scale = 8);

}  // namespace layoutattn
