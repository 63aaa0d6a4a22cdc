#include "layoutattn/image_io.hpp"

#include "layoutattn/errors.hpp"
#include "layoutattn/vocabulary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace layoutattn {

namespace {

// Reads the next header integer, skipping whitespace and '#' comments.
int next_header_int(std::istream& in, const std::string& path) {
  for (;;) {
    const int ch = in.peek();
    if (ch == EOF) throw IoError("truncated PGM header in '" + path + "'");
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw IoError("malformed PGM header in '" + path + "'");
  return v;
}

void write_comment(std::ostream& out, const std::string& comment) {
  std::istringstream lines(comment);
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << '\n';
}

}  // namespace

Matrix read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P2" && magic != "P5") throw IoError("'" + path + "' is not a P2/P5 PGM file");
  const int w = next_header_int(in, path);
  const int h = next_header_int(in, path);
  const int maxval = next_header_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError("bad PGM dimensions in '" + path + "'");
  Matrix m(h, w);
  if (magic == "P2") {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      int v = 0;
      if (!(in >> v)) throw IoError("truncated PGM data in '" + path + "'");
      m.data()[i] = static_cast<double>(v) / maxval;
    }
  } else {
    in.get();  // single whitespace after maxval
    const int bytes = maxval < 256 ? 1 : 2;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      int v = 0;
      for (int b = 0; b < bytes; ++b) {
        const int ch = in.get();
        if (ch == EOF) throw IoError("truncated PGM data in '" + path + "'");
        v = (v << 8) | ch;
      }
      m.data()[i] = static_cast<double>(v) / maxval;
    }
  }
  return m;
}

void write_pgm(const std::string& path, const Matrix& values, const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "P2\n";
  write_comment(out, comment);
  out << values.cols() << ' ' << values.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = std::clamp(values(r, c), 0.0, 1.0);
      out << (c ? " " : "") << static_cast<int>(std::lround(v * 255.0));
    }
    out << '\n';
  }
}

void write_ppm(const std::string& path, const RgbImage& image, const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "P3\n";
  write_comment(out, comment);
  out << image.width << ' ' << image.height << "\n255\n";
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const auto* px = &image.pixels[(static_cast<std::size_t>(r) * image.width + c) * 3];
      out << (c ? " " : "") << int{px[0]} << ' ' << int{px[1]} << ' ' << int{px[2]};
    }
    out << '\n';
  }
}

RgbImage render_scene(const ToyScene& scene, int scale) {
  const auto& vocab = Vocabulary::instance();
  RgbImage img(scene.grid.h * scale, scene.grid.w * scale);
  for (int r = 0; r < scene.grid.h; ++r) {
    for (int c = 0; c < scene.grid.w; ++c) {
      const Eigen::Index p = static_cast<Eigen::Index>(r) * scene.grid.w + c;
      const double strength = scene.nouns.row(p).maxCoeff();
      double rgb[3] = {0.0, 0.0, 0.0};
      double mass = 0.0;
      for (int k = 0; k < kNumColors; ++k) {
        const double a = scene.colors(p, k);
        const auto pal = vocab.color_rgb(k);
        for (int ch = 0; ch < 3; ++ch) rgb[ch] += a * pal[static_cast<std::size_t>(ch)];
        mass += a;
      }
      std::uint8_t px[3];
      for (int ch = 0; ch < 3; ++ch) {
        // Uncolored objects render grey; background stays dark.
        const double base = mass > 0.05 ? rgb[ch] / mass : 160.0;
        px[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(24.0 + strength * (base - 24.0)), 0L, 255L));
      }
      for (int dy = 0; dy < scale; ++dy) {
        for (int dx = 0; dx < scale; ++dx) std::copy(px, px + 3, img.at(r * scale + dy, c * scale + dx));
      }
    }
  }
  return img;
}

void draw_layout_overlay(RgbImage& image, const Layout& layout, GridSize grid, int scale) {
  static constexpr std::uint8_t kOutline[3] = {255, 255, 255};
  auto put = [&](int row, int col) {
    if (row < 0 || col < 0 || row >= image.height || col >= image.width) return;
    std::copy(kOutline, kOutline + 3, image.at(row, col));
  };
  for (const auto& region : layout.regions) {
    const double cx = region.center.x * grid.w * scale;
    const double cy = region.center.y * grid.h * scale;
    if (region.mask) {
      const Matrix& m = *region.mask;
      // Outline: mask pixels with an unmasked 4-neighbour.
      for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
          if (m(r, c) == 0.0) continue;
          const bool edge = r == 0 || c == 0 || r + 1 == m.rows() || c + 1 == m.cols() || m(r - 1, c) == 0.0 ||
                            m(r + 1, c) == 0.0 || m(r, c - 1) == 0.0 || m(r, c + 1) == 0.0;
          if (!edge) continue;
          for (int k = 0; k < scale; ++k) {
            put(r * scale, c * scale + k);
            put(r * scale + k, c * scale);
          }
        }
      }
    } else {
      const double rad = region.radius * grid.w * scale;
      const int steps = std::max(16, static_cast<int>(8.0 * rad));
      for (int k = 0; k < steps; ++k) {
        const double a = 2.0 * 3.14159265358979323846 * k / steps;
        put(static_cast<int>(std::lround(cy + rad * std::sin(a))), static_cast<int>(std::lround(cx + rad * std::cos(a))));
      }
    }
    const int ix = static_cast<int>(std::lround(cx)), iy = static_cast<int>(std::lround(cy));
    for (int k = -3; k <= 3; ++k) {
      put(iy, ix + k);
      put(iy + k, ix);
    }
  }
}

}  // namespace layoutattn
