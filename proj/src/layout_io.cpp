#include "layoutattn/layout.hpp"

#include "layoutattn/errors.hpp"
#include "layoutattn/image_io.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

namespace layoutattn {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<Point2> Layout::centers() const {
  std::vector<Point2> out;
  for (const auto& r : regions) out.push_back(r.center);
  return out;
}

MaskSet region_mask(const Layout& layout, GridSize grid) {
  if (grid.h < 4 || grid.w < 4) throw ShapeError("grid must be at least 4 x 4");
  MaskSet masks;
  for (const auto& region : layout.regions) {
    if (region.mask) {
      if (region.mask->rows() != grid.h || region.mask->cols() != grid.w) {
        throw ShapeError("explicit mask is " + std::to_string(region.mask->rows()) + "x" +
                         std::to_string(region.mask->cols()) + ", grid is " + std::to_string(grid.h) + "x" +
                         std::to_string(grid.w));
      }
      masks.push_back(*region.mask);
      continue;
    }
    Matrix m = Matrix::Zero(grid.h, grid.w);
    const double r2 = region.radius * region.radius;
    for (int r = 0; r < grid.h; ++r) {
      for (int c = 0; c < grid.w; ++c) {
        const Point2 p = pixel_center(grid, r, c);
        const double dx = p.x - region.center.x, dy = p.y - region.center.y;
        if (dx * dx + dy * dy <= r2) m(r, c) = 1.0;
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

MaskSet full_masks(int count, GridSize grid) {
  return MaskSet(static_cast<std::size_t>(count), Matrix::Ones(grid.h, grid.w));
}

bool is_binary(const MaskSet& masks) {
  for (const auto& m : masks) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double v = m.data()[i];
      if (v != 0.0 && v != 1.0) return false;
    }
  }
  return true;
}

namespace {

Region region_from_mask(Matrix mask) {
  const GridSize grid{static_cast<int>(mask.rows()), static_cast<int>(mask.cols())};
  double sx = 0.0, sy = 0.0;
  int count = 0;
  for (int r = 0; r < grid.h; ++r) {
    for (int c = 0; c < grid.w; ++c) {
      if (mask(r, c) == 0.0) continue;
      const Point2 p = pixel_center(grid, r, c);
      sx += p.x;
      sy += p.y;
      ++count;
    }
  }
  Region region;
  region.center = count ? Point2{sx / count, sy / count} : Point2{0.5, 0.5};
  region.radius = std::clamp(std::sqrt(count / (3.14159265358979323846 * grid.pixels())), 1e-6, 0.5);
  region.mask = std::move(mask);
  return region;
}

}  // namespace

Layout read_layout_file(const std::string& path, GridSize grid) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open layout file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("layout file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.contains("objects") || !doc["objects"].is_array()) {
    throw ConfigError("layout file needs an \"objects\" array");
  }
  std::map<int, Region> by_id;
  const fs::path base = fs::path(path).parent_path();
  for (const auto& obj : doc["objects"]) {
    for (const auto& [key, _] : obj.items()) {
      if (key != "id" && key != "cx" && key != "cy" && key != "r" && key != "mask_pgm") {
        throw ConfigError("unknown layout key '" + key + "'");
      }
    }
    const int id = obj.at("id").get<int>();
    Region region;
    if (obj.contains("mask_pgm")) {
      fs::path mp = obj["mask_pgm"].get<std::string>();
      if (mp.is_relative()) mp = base / mp;
      Matrix mask = read_pgm(mp.string());
      if (mask.rows() != grid.h || mask.cols() != grid.w) {
        throw ShapeError("mask '" + mp.string() + "' does not match the " + std::to_string(grid.h) + "x" +
                         std::to_string(grid.w) + " grid");
      }
      mask = (mask.array() > 0.5).cast<double>().matrix();
      region = region_from_mask(std::move(mask));
    } else {
      region.center = {obj.at("cx").get<double>(), obj.at("cy").get<double>()};
      region.radius = obj.value("r", 0.2);
      if (!(region.radius > 0.0 && region.radius <= 0.5)) throw ConfigError("layout radius must lie in (0, 0.5]");
    }
    if (!by_id.emplace(id, std::move(region)).second) throw ConfigError("duplicate layout id " + std::to_string(id));
  }
  Layout layout;
  int expected = 1;
  for (auto& [id, region] : by_id) {
    if (id != expected++) throw ConfigError("layout ids must be 1..N without gaps");
    layout.regions.push_back(std::move(region));
  }
  return layout;
}

void write_layout_file(const std::string& path, const Layout& layout, const std::string& provenance_json) {
  json doc;
  json objects = json::array();
  const fs::path p(path);
  for (std::size_t i = 0; i < layout.regions.size(); ++i) {
    const auto& region = layout.regions[i];
    const int id = static_cast<int>(i) + 1;
    if (region.mask) {
      const std::string name = p.stem().string() + ".mask" + std::to_string(id) + ".pgm";
      write_pgm((p.parent_path() / name).string(), *region.mask);
      objects.push_back({{"id", id}, {"mask_pgm", name}});
    } else {
      objects.push_back({{"id", id}, {"cx", region.center.x}, {"cy", region.center.y}, {"r", region.radius}});
    }
  }
  doc["objects"] = std::move(objects);
  doc["provenance"] = json::parse(provenance_json);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write layout file '" + path + "'");
  out << doc.dump(2) << '\n';
}

}  // namespace layoutattn
