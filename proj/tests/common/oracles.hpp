#pragma once

// Deliberately naive reference implementations used as test oracles. They
// share no code with the library and favour obviousness over speed.

#include <torch/torch.h>

#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "handvid/motion_area.hpp"

namespace oracle {

using handvid::motion::Point;

/// Integer-valued points so collinear and duplicate cases occur often and
/// every cross product is exact.
inline std::vector<Point> random_points(std::mt19937_64& rng, int n, int range, int lo = 0) {
  std::uniform_int_distribution<int> d(lo, lo + range - 1);
  std::vector<Point> pts;
  for (int i = 0; i < n; ++i) pts.push_back({static_cast<double>(d(rng)), static_cast<double>(d(rng))});
  return pts;
}

inline double orient(const Point& a, const Point& b, const Point& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

inline bool between(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

inline std::set<std::pair<double, double>> vertex_set(const std::vector<Point>& pts) {
  std::set<std::pair<double, double>> s;
  for (const auto& p : pts) s.insert({p.x, p.y});
  return s;
}

/// O(n^3): (a, b) is a hull edge when every point lies strictly left of it or
/// on the closed segment; hull vertices are the endpoints of such edges.
inline std::set<std::pair<double, double>> brute_force_hull(const std::vector<Point>& pts) {
  std::set<std::pair<double, double>> out;
  for (const auto& a : pts) {
    for (const auto& b : pts) {
      if (a == b) continue;
      bool edge = true;
      for (const auto& p : pts) {
        const double o = orient(a, b, p);
        if (o < 0 || (o == 0 && !between(a, b, p))) {
          edge = false;
          break;
        }
      }
      if (edge) {
        out.insert({a.x, a.y});
        out.insert({b.x, b.y});
      }
    }
  }
  if (out.empty() && !pts.empty()) out.insert({pts[0].x, pts[0].y});  // all points coincide
  return out;
}

inline bool strictly_ccw(const std::vector<Point>& poly) {
  const auto n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (orient(poly[i], poly[(i + 1) % n], poly[(i + 2) % n]) <= 0) return false;
  }
  return true;
}

/// Pixel (i, j) is set when its centre (j, i) lies inside or on the polygon,
/// decided by area decomposition: the fan areas from the centre sum to the
/// polygon area exactly when the centre is inside or on the boundary.
inline torch::Tensor raster(const std::vector<Point>& poly, int height, int width) {
  auto mask = torch::zeros({height, width}, torch::kFloat32);
  const auto n = poly.size();
  if (n == 0) return mask;
  double area2 = 0;
  for (std::size_t k = 0; k < n; ++k) area2 += orient(poly[0], poly[k], poly[(k + 1) % n]);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const Point q{static_cast<double>(j), static_cast<double>(i)};
      bool inside;
      if (n == 1) {
        inside = poly[0] == q;
      } else if (n == 2) {
        inside = orient(poly[0], poly[1], q) == 0 && between(poly[0], poly[1], q);
      } else {
        double fan = 0;
        for (std::size_t k = 0; k < n; ++k) fan += std::abs(orient(q, poly[k], poly[(k + 1) % n]));
        inside = fan == std::abs(area2);
      }
      if (inside) mask[i][j] = 1.0f;
    }
  }
  return mask;
}

/// Pixel (i, j) is set when its centre is on the inner side of every edge of
/// a counter-clockwise polygon; degenerate polygons fall back to `raster`.
inline torch::Tensor half_plane_raster(const std::vector<Point>& poly, int height, int width) {
  if (poly.size() < 3) return raster(poly, height, width);
  auto mask = torch::zeros({height, width}, torch::kFloat32);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const Point q{static_cast<double>(j), static_cast<double>(i)};
      bool inside = true;
      for (std::size_t k = 0; k < poly.size() && inside; ++k) {
        inside = orient(poly[k], poly[(k + 1) % poly.size()], q) >= 0;
      }
      if (inside) mask[i][j] = 1.0f;
    }
  }
  return mask;
}

/// Pixelwise OR of (F, H, W) binary frames by explicit loops.
inline torch::Tensor union_loop(const torch::Tensor& frames) {
  auto out = torch::zeros({frames.size(1), frames.size(2)}, torch::kFloat32);
  for (std::int64_t f = 0; f < frames.size(0); ++f) {
    for (std::int64_t i = 0; i < frames.size(1); ++i) {
      for (std::int64_t j = 0; j < frames.size(2); ++j) {
        if (frames[f][i][j].item<float>() > 0.5f) out[i][j] = 1.0f;
      }
    }
  }
  return out;
}

/// count(set) / n per pixel.
inline torch::Tensor count_prior(const std::vector<torch::Tensor>& frames) {
  const auto h = frames[0].size(0), w = frames[0].size(1);
  auto out = torch::zeros({h, w}, torch::kFloat32);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      int count = 0;
      for (const auto& f : frames) count += f[i][j].item<float>() > 0.5f;
      out[i][j] = static_cast<float>(count) / static_cast<float>(frames.size());
    }
  }
  return out;
}

/// Closing by stamping: dilate by painting a disk at every set pixel, then
/// erode by keeping pixels whose whole disk is set or off-frame.
inline torch::Tensor close(const torch::Tensor& frame, int radius) {
  const auto h = frame.size(0), w = frame.size(1);
  auto dilated = torch::zeros({h, w}, torch::kFloat32);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      if (frame[i][j].item<float>() < 0.5f) continue;
      for (std::int64_t y = i - radius; y <= i + radius; ++y) {
        for (std::int64_t x = j - radius; x <= j + radius; ++x) {
          if (y < 0 || x < 0 || y >= h || x >= w) continue;
          if ((y - i) * (y - i) + (x - j) * (x - j) <= radius * radius) dilated[y][x] = 1.0f;
        }
      }
    }
  }
  auto out = torch::zeros({h, w}, torch::kFloat32);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      bool keep = true;
      for (std::int64_t y = i - radius; y <= i + radius && keep; ++y) {
        for (std::int64_t x = j - radius; x <= j + radius && keep; ++x) {
          if ((y - i) * (y - i) + (x - j) * (x - j) > radius * radius) continue;
          if (y < 0 || x < 0 || y >= h || x >= w) continue;
          if (dilated[y][x].item<float>() < 0.5f) keep = false;
        }
      }
      if (keep) out[i][j] = 1.0f;
    }
  }
  return out;
}

}  // namespace oracle
