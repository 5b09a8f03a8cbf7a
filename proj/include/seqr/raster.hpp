#pragma once

// Deterministic rasterization of a FeatureVector into a grayscale image.
// Shape membership tests run on 8.8 fixed-point integer coordinates, so the
// produced pixels are bit-identical across platforms.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "seqr/features.hpp"

namespace seqr {

struct render_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Image {
  int resolution = 0;
  std::vector<double> pixels;  // row-major, intensities in [0,1]

  Image() = default;
  explicit Image(int res, double fill = 0.0)
      : resolution(res),
        pixels(static_cast<std::size_t>(res) * static_cast<std::size_t>(res), fill) {
    if (res <= 0) throw render_error("Image: resolution must be positive");
  }

  double at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(resolution) +
                  static_cast<std::size_t>(x)];
  }
  double& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(resolution) +
                  static_cast<std::size_t>(x)];
  }

  bool operator==(const Image& o) const = default;
};

struct PixelCenter {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCenter&) const = default;
};

// ---------------------------------------------------------------------------

struct RenderConfig {
  int resolution = 224;
  double backgroundShade = 0.0;
  std::array<double, kGridValues> shadeGrid{};  // foreground intensities
  std::array<double, kGridValues> sizeGrid{};   // enclosing-circle radii, pixels
  int gridDim = 3;

  /// Linear grids: shades on [1/3, 1], radii on [0.15, 0.48] of a cell.
  static RenderConfig standard(int resolution = 224) {
    RenderConfig cfg;
    cfg.resolution = resolution;
    const double cell = static_cast<double>(resolution) / 3.0;
    for (int i = 0; i < kGridValues; ++i) {
      const double t = static_cast<double>(i) / (kGridValues - 1);
      cfg.shadeGrid[static_cast<std::size_t>(i)] = (1.0 / 3.0) + (1.0 - 1.0 / 3.0) * t;
      cfg.sizeGrid[static_cast<std::size_t>(i)] = (0.15 + (0.48 - 0.15) * t) * cell;
    }
    cfg.validate();
    return cfg;
  }

  void validate() const {
    if (resolution < 9) throw render_error("RenderConfig: resolution too small");
    if (gridDim != 3) throw render_error("RenderConfig: grid must be 3x3");
    const double cell = static_cast<double>(resolution) / 3.0;
    for (int i = 0; i < kGridValues; ++i) {
      const double s = shadeGrid[static_cast<std::size_t>(i)];
      if (s < 0.0 || s > 1.0) throw render_error("RenderConfig: shade outside [0,1]");
      if (s == backgroundShade) throw render_error("RenderConfig: foreground shade equals background");
      for (int j = i + 1; j < kGridValues; ++j)
        if (s == shadeGrid[static_cast<std::size_t>(j)])
          throw render_error("RenderConfig: shade grid values must be distinct");
      if (sizeGrid[static_cast<std::size_t>(i)] <= 0.0 ||
          sizeGrid[static_cast<std::size_t>(i)] > cell / 2.0)
        throw render_error("RenderConfig: radius must be in (0, cell/2]");
    }
  }
};

namespace detail {

inline double respace(double lo, double hi, int i, RuleKind kind) {
  const double t = static_cast<double>(i) / (kGridValues - 1);
  switch (kind) {
    case RuleKind::Exponential: return lo * std::pow(hi / lo, t);
    case RuleKind::Sqrt: return lo + (hi - lo) * std::sqrt(t);
    default: return lo + (hi - lo) * t;
  }
}

}  // namespace detail

/// Render config for one test condition: exponential/sqrt rules replace the
/// predictive feature's value grid with geometric / square-root spacing
/// between the same endpoints.
inline RenderConfig make_render_config(int resolution, const Rule& rule, Feature predictive) {
  RenderConfig cfg = RenderConfig::standard(resolution);
  if (rule.kind != RuleKind::Exponential && rule.kind != RuleKind::Sqrt) return cfg;
  if (predictive == Feature::Color) {
    const double lo = cfg.shadeGrid.front(), hi = cfg.shadeGrid.back();
    for (int i = 0; i < kGridValues; ++i)
      cfg.shadeGrid[static_cast<std::size_t>(i)] = detail::respace(lo, hi, i, rule.kind);
  } else if (predictive == Feature::Size) {
    const double lo = cfg.sizeGrid.front(), hi = cfg.sizeGrid.back();
    for (int i = 0; i < kGridValues; ++i)
      cfg.sizeGrid[static_cast<std::size_t>(i)] = detail::respace(lo, hi, i, rule.kind);
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

/// Centers of the first `count` grid cells named by `arrangement`. Cell c of
/// the 3x3 grid spans [c*res/3, (c+1)*res/3); the midpoint is rounded to the
/// nearest pixel (round half up, in exact integer arithmetic).
inline std::vector<PixelCenter> layout_positions(int count, const std::vector<int>& arrangement,
                                                 const RenderConfig& cfg) {
  if (count < 1 || count > kMaxCount) throw render_error("layout_positions: count out of range");
  if (static_cast<int>(arrangement.size()) < count)
    throw render_error("layout_positions: arrangement too short");
  std::vector<PixelCenter> centers;
  centers.reserve(static_cast<std::size_t>(count));
  auto midpoint = [&](int c) { return ((2 * c + 1) * cfg.resolution + 3) / 6; };
  for (int i = 0; i < count; ++i) {
    const int cell = arrangement[static_cast<std::size_t>(i)];
    if (cell < 0 || cell >= kGridCells) throw render_error("layout_positions: bad cell index");
    centers.push_back({midpoint(cell % 3), midpoint(cell / 3)});
  }
  return centers;
}

// ---------------------------------------------------------------------------
// Shape fills. All membership tests use 8.8 fixed-point integers.

namespace detail {

constexpr std::int64_t kFx = 256;  // fixed-point scale

struct FxPoint {
  std::int64_t x = 0;
  std::int64_t y = 0;
};

inline std::vector<FxPoint> shape_vertices(ShapeKind kind, PixelCenter c, double radius) {
  auto vertex = [&](double angleDeg, double r) {
    const double a = angleDeg * 3.14159265358979323846 / 180.0;
    return FxPoint{kFx * c.x + std::llround(kFx * r * std::cos(a)),
                   kFx * c.y + std::llround(kFx * r * std::sin(a))};
  };
  std::vector<FxPoint> v;
  switch (kind) {
    case ShapeKind::Triangle:
      // Equilateral, vertex up (screen y grows downward).
      for (double a : {-90.0, 30.0, 150.0}) v.push_back(vertex(a, radius));
      break;
    case ShapeKind::Square:
      for (double a : {45.0, 135.0, 225.0, 315.0}) v.push_back(vertex(a, radius));
      break;
    case ShapeKind::Star: {
      // 5-point star, one vertex up; classic pentagram inner/outer ratio.
      const double inner = radius * std::sin(3.14159265358979323846 / 10.0) /
                           std::sin(3.0 * 3.14159265358979323846 / 10.0);
      for (int k = 0; k < 5; ++k) {
        v.push_back(vertex(-90.0 + 72.0 * k, radius));
        v.push_back(vertex(-90.0 + 36.0 + 72.0 * k, inner));
      }
      break;
    }
    case ShapeKind::Hexagon:
      // Regular, flat top.
      for (int k = 0; k < 6; ++k) v.push_back(vertex(60.0 * k, radius));
      break;
    case ShapeKind::Circle:
      break;
  }
  return v;
}

/// Even-odd rule with exact integer arithmetic; handles the concave star.
inline bool point_in_polygon(std::int64_t px, std::int64_t py, const std::vector<FxPoint>& v) {
  bool inside = false;
  const std::size_t n = v.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = v[j];
    const auto& b = v[i];
    if ((a.y > py) != (b.y > py)) {
      const std::int64_t t = (px - a.x) * (b.y - a.y) - (py - a.y) * (b.x - a.x);
      if (b.y > a.y ? t < 0 : t > 0) inside = !inside;
    }
  }
  return inside;
}

}  // namespace detail

/// Hard-edged fill of one shape (no anti-aliasing). Pixels outside the shape
/// are untouched.
inline void draw_shape(Image& canvas, ShapeKind kind, PixelCenter center, double radius,
                       double shade) {
  if (radius <= 0.0) throw render_error("draw_shape: radius must be positive");
  if (radius > static_cast<double>(canvas.resolution) / 6.0)
    throw render_error("draw_shape: radius exceeds grid cell");
  if (shade < 0.0 || shade > 1.0) throw render_error("draw_shape: shade outside [0,1]");

  const int r = static_cast<int>(std::ceil(radius)) + 1;
  const int x0 = std::max(0, center.x - r), x1 = std::min(canvas.resolution - 1, center.x + r);
  const int y0 = std::max(0, center.y - r), y1 = std::min(canvas.resolution - 1, center.y + r);

  if (kind == ShapeKind::Circle) {
    const std::int64_t rfx = std::llround(detail::kFx * radius);
    const std::int64_t r2 = rfx * rfx;
    for (int y = y0; y <= y1; ++y) {
      const std::int64_t dy = detail::kFx * static_cast<std::int64_t>(y - center.y);
      for (int x = x0; x <= x1; ++x) {
        const std::int64_t dx = detail::kFx * static_cast<std::int64_t>(x - center.x);
        if (dx * dx + dy * dy <= r2) canvas.at(x, y) = shade;
      }
    }
    return;
  }

  const auto verts = detail::shape_vertices(kind, center, radius);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (detail::point_in_polygon(detail::kFx * x, detail::kFx * y, verts))
        canvas.at(x, y) = shade;
}

/// Render a feature vector: background plus `count` identical shapes at the
/// arrangement's cell centers. Pure function of (fv, cfg).
inline Image render(const FeatureVector& fv, const RenderConfig& cfg) {
  fv.validate();
  cfg.validate();
  Image img(cfg.resolution, cfg.backgroundShade);
  const auto centers = layout_positions(fv.count, fv.arrangement, cfg);
  const double radius = cfg.sizeGrid[static_cast<std::size_t>(fv.sizeIdx)];
  const double shade = cfg.shadeGrid[static_cast<std::size_t>(fv.shadeIdx)];
  for (const auto& c : centers) draw_shape(img, fv.shapeKind, c, radius, shade);
  return img;
}

// ---------------------------------------------------------------------------

/// A fully realized problem: features plus rasters. Sequence-only training
/// problems leave `choices` empty.
struct Problem {
  ProblemFeatures features;
  std::vector<Image> sequence;  // 5 images
  std::vector<Image> choices;   // 4 images, or empty for training problems
  int answerIdx = -1;

  bool has_choices() const { return !choices.empty(); }
};

inline Problem make_problem(const ProblemFeatures& pf, const RenderConfig& cfg,
                            bool withChoices = true) {
  Problem p;
  p.features = pf;
  p.sequence.reserve(5);
  for (const auto& fv : pf.sequence) p.sequence.push_back(render(fv, cfg));
  if (withChoices) {
    p.choices.reserve(4);
    for (const auto& fv : pf.choices) p.choices.push_back(render(fv, cfg));
    p.answerIdx = pf.answerIdx;
  }
  return p;
}

}  // namespace seqr
