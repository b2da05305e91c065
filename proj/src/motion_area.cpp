#include "handvid/motion_area.hpp"

#include <algorithm>
#include <cmath>

#include "handvid/error.hpp"

namespace handvid::motion {

std::string_view kind_name(MaskKind kind) {
  switch (kind) {
    case MaskKind::per_frame: return "per_frame";
    case MaskKind::union_all: return "union";
    case MaskKind::prior: return "prior";
    case MaskKind::generated: return "generated";
  }
  return "unknown";
}

void MaskVideo::validate() const {
  require(values.defined() && values.dim() == 3, "MaskVideo: values must be (F,H,W)");
  auto v = values.detach();
  require((v >= 0).all().item<bool>() && (v <= 1).all().item<bool>(),
          "MaskVideo: values must lie in [0,1]");
  if (binary) {
    require(((v == 0) | (v == 1)).all().item<bool>(), "MaskVideo: binary mask has soft values");
  }
  if (kind == MaskKind::union_all && v.size(0) > 1) {
    require(v.eq(v[0].unsqueeze(0)).all().item<bool>(),
            "MaskVideo: union mask must be identical across frames");
  }
}

MaskVideo MaskVideo::with_frames(std::int64_t frames) const {
  auto first = values[0].unsqueeze(0);
  return {first.expand({frames, height(), width()}).contiguous(), binary, kind};
}

std::vector<Point> convex_hull(std::span<const Point> points) {
  std::vector<Point> p(points.begin(), points.end());
  std::sort(p.begin(), p.end(), [](const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  p.erase(std::unique(p.begin(), p.end()), p.end());
  if (p.size() <= 1) return p;

  // Andrew's monotone chain; popping on cross <= 0 drops collinear vertices.
  std::vector<Point> hull(2 * p.size());
  std::size_t k = 0;
  for (const auto& pt : p) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pt) <= 0) --k;
    hull[k++] = pt;
  }
  for (std::size_t i = p.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  return hull;
}

namespace {

bool on_segment(const Point& a, const Point& b, const Point& q) {
  return cross(a, b, q) == 0 && q.x >= std::min(a.x, b.x) && q.x <= std::max(a.x, b.x) &&
         q.y >= std::min(a.y, b.y) && q.y <= std::max(a.y, b.y);
}

bool inside_or_on(std::span<const Point> polygon, const Point& q) {
  switch (polygon.size()) {
    case 1: return polygon[0] == q;
    case 2: return on_segment(polygon[0], polygon[1], q);
    default:
      for (std::size_t i = 0; i < polygon.size(); ++i) {
        if (cross(polygon[i], polygon[(i + 1) % polygon.size()], q) < 0) return false;
      }
      return true;
  }
}

}  // namespace

torch::Tensor rasterize_hull(std::span<const Point> polygon, int height, int width) {
  require(height >= 1 && width >= 1, "rasterize_hull: frame must be at least 1x1");
  auto mask = torch::zeros({height, width}, torch::kFloat32);
  if (polygon.empty()) return mask;

  double min_x = polygon[0].x, max_x = polygon[0].x;
  double min_y = polygon[0].y, max_y = polygon[0].y;
  for (const auto& p : polygon) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const int j0 = std::max(0, static_cast<int>(std::ceil(min_x)));
  const int j1 = std::min(width - 1, static_cast<int>(std::floor(max_x)));
  const int i0 = std::max(0, static_cast<int>(std::ceil(min_y)));
  const int i1 = std::min(height - 1, static_cast<int>(std::floor(max_y)));

  auto acc = mask.accessor<float, 2>();
  for (int i = i0; i <= i1; ++i) {
    for (int j = j0; j <= j1; ++j) {
      if (inside_or_on(polygon, {static_cast<double>(j), static_cast<double>(i)})) acc[i][j] = 1.0f;
    }
  }
  return mask;
}

std::vector<Point> visible_joint_pixels(const pose::KeypointSequence& keypoints,
                                        std::int64_t frame, int height, int width) {
  auto coords = keypoints.coords.detach().to(torch::kFloat64).contiguous();
  auto vis = keypoints.visibility.detach().to(torch::kFloat64).contiguous();
  auto c = coords.accessor<double, 3>();
  auto v = vis.accessor<double, 2>();
  std::vector<Point> pixels;
  for (std::int64_t j = 0; j < keypoints.joints(); ++j) {
    if (v[frame][j] < 0.5) continue;
    const int col = std::clamp(static_cast<int>(std::floor(c[frame][j][0] * width)), 0, width - 1);
    const int row = std::clamp(static_cast<int>(std::floor(c[frame][j][1] * height)), 0, height - 1);
    pixels.push_back({static_cast<double>(col), static_cast<double>(row)});
  }
  return pixels;
}

MaskVideo masks_from_keypoints(const pose::KeypointSequence& keypoints, int height, int width) {
  std::vector<torch::Tensor> frames;
  for (std::int64_t f = 0; f < keypoints.frames(); ++f) {
    auto pixels = visible_joint_pixels(keypoints, f, height, width);
    auto hull = convex_hull(pixels);
    frames.push_back(rasterize_hull(hull, height, width));
  }
  return {torch::stack(frames), true, MaskKind::per_frame};
}

MaskVideo union_over_frames(const MaskVideo& per_frame) {
  require(per_frame.binary, "union_over_frames: expects binary per-frame masks");
  require(per_frame.values.dim() == 3, "union_over_frames: expects (F,H,W)");
  auto merged = std::get<0>(per_frame.values.max(0, /*keepdim=*/true));
  return {merged.expand_as(per_frame.values).contiguous(), true, MaskKind::union_all};
}

MaskVideo prior_mask(std::span<const MaskVideo> union_masks) {
  require(!union_masks.empty(), "prior_mask: needs at least one mask");
  const auto h = union_masks[0].height();
  const auto w = union_masks[0].width();
  auto counts = torch::zeros({h, w}, torch::kInt64);
  for (const auto& m : union_masks) {
    require(m.binary, "prior_mask: inputs must be binary");
    if (m.height() != h || m.width() != w) {
      throw ValidationError("prior_mask: resolution mismatch (" + std::to_string(m.height()) +
                            "x" + std::to_string(m.width()) + " vs " + std::to_string(h) + "x" +
                            std::to_string(w) + ")");
    }
    counts += m.values[0].to(torch::kInt64);
  }
  auto prior = counts.to(torch::kFloat32) / static_cast<float>(union_masks.size());
  return {prior.unsqueeze(0), false, MaskKind::prior};
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dy, dx);
    }
  }
  return offsets;
}

// Dilation: any disk neighbour set. Erosion: all disk neighbours set.
// Out-of-frame neighbours are unset for dilation and set for erosion.
torch::Tensor morph(const torch::Tensor& frame, int radius, bool dilate) {
  const int h = static_cast<int>(frame.size(0));
  const int w = static_cast<int>(frame.size(1));
  const auto offsets = disk_offsets(radius);
  auto src = frame.contiguous();
  auto in = src.accessor<float, 2>();
  auto out = torch::zeros_like(src);
  auto o = out.accessor<float, 2>();
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      bool hit = !dilate;
      for (const auto& [dy, dx] : offsets) {
        const int y = i + dy, x = j + dx;
        const bool inside = y >= 0 && y < h && x >= 0 && x < w;
        const bool set = inside ? in[y][x] > 0.5f : !dilate;
        if (dilate && set) {
          hit = true;
          break;
        }
        if (!dilate && !set) {
          hit = false;
          break;
        }
      }
      o[i][j] = hit ? 1.0f : 0.0f;
    }
  }
  return out;
}

}  // namespace

torch::Tensor close_binary(const torch::Tensor& frame, int radius) {
  require(radius >= 0, "close_binary: radius must be non-negative");
  require(frame.dim() == 2, "close_binary: expects an (H,W) frame");
  auto f = frame.detach().to(torch::kFloat32).contiguous();
  if (radius == 0) return f.clone();
  return morph(morph(f, radius, true), radius, false);
}

MaskVideo postprocess_soft_mask(const MaskVideo& soft, double threshold, int radius) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("postprocess_soft_mask: threshold must lie in (0,1), got " +
                          std::to_string(threshold));
  }
  require(soft.values.dim() == 3, "postprocess_soft_mask: expects (F,H,W)");
  auto binary = (soft.values.detach() >= threshold).to(torch::kFloat32);
  std::vector<torch::Tensor> closed;
  for (std::int64_t f = 0; f < binary.size(0); ++f) closed.push_back(close_binary(binary[f], radius));
  auto merged = union_over_frames({torch::stack(closed), true, MaskKind::per_frame});
  merged.kind = MaskKind::generated;
  return merged;
}

torch::Tensor downsample_mask(const MaskVideo& mask, int factor) {
  require(factor >= 1, "downsample_mask: factor must be positive");
  require(mask.height() % factor == 0 && mask.width() % factor == 0,
          "downsample_mask: resolution not divisible by factor");
  auto pooled = torch::avg_pool2d(mask.values.unsqueeze(1), factor, factor).squeeze(1);
  if (mask.binary) return (pooled >= 0.5).to(mask.values.scalar_type());
  return pooled;
}

MaskVideo full_mask(std::int64_t frames, std::int64_t height, std::int64_t width) {
  return {torch::ones({frames, height, width}, torch::kFloat32), true, MaskKind::union_all};
}

MaskVideo prior_support(const MaskVideo& prior) {
  return {(prior.values > 0).to(torch::kFloat32), true, MaskKind::union_all};
}

}  // namespace handvid::motion
