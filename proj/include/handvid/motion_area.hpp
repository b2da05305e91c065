#pragma once

#include <torch/torch.h>

#include <span>
#include <string_view>
#include <vector>

#include "handvid/hand_pose.hpp"

namespace handvid::motion {

enum class MaskKind { per_frame, union_all, prior, generated };

std::string_view kind_name(MaskKind kind);

/// Spatio-temporal motion-area mask, values in [0,1], layout (F, H, W).
struct MaskVideo {
  torch::Tensor values;
  bool binary = true;
  MaskKind kind = MaskKind::per_frame;

  std::int64_t frames() const { return values.size(0); }
  std::int64_t height() const { return values.size(1); }
  std::int64_t width() const { return values.size(2); }

  void validate() const;
  MaskVideo with_frames(std::int64_t frames) const;  // broadcast a temporally constant mask
};

/// Pixel-unit coordinates; pixel (row i, column j) has its center at (x=j, y=i).
struct Point {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Twice the signed area of (a, b, c); > 0 for a counter-clockwise turn in (x, y).
inline double cross(const Point& a, const Point& b, const Point& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

/// Minimal convex polygon (counter-clockwise, no collinear vertices) containing
/// all points. One distinct point yields a 1-vertex polygon, collinear input
/// a 2-vertex segment, and an empty input an empty polygon.
std::vector<Point> convex_hull(std::span<const Point> points);

/// Fills pixels whose centers lie inside or on `polygon` (as produced by
/// convex_hull). Returns an (H, W) float tensor of {0, 1}.
torch::Tensor rasterize_hull(std::span<const Point> polygon, int height, int width);

/// Pixel centers containing each visible joint of frame `frame`.
std::vector<Point> visible_joint_pixels(const pose::KeypointSequence& keypoints,
                                        std::int64_t frame, int height, int width);

/// Per-frame masks M_l: rasterized convex hull of the visible joints.
MaskVideo masks_from_keypoints(const pose::KeypointSequence& keypoints, int height, int width);

/// Pixelwise OR over frames, broadcast back to every frame.
MaskVideo union_over_frames(const MaskVideo& per_frame);

/// Per-pixel mean of binary union masks (single frame, kind = prior).
MaskVideo prior_mask(std::span<const MaskVideo> union_masks);

/// Morphological closing of one binary (H, W) frame with a disk of `radius`.
/// Out-of-frame pixels count as background for dilation and as foreground for
/// erosion, so the result always contains the input.
torch::Tensor close_binary(const torch::Tensor& frame, int radius);

/// Threshold (value >= threshold), close each frame, then take the temporal union.
MaskVideo postprocess_soft_mask(const MaskVideo& soft, double threshold, int radius);

/// Area-average each factor x factor block. Binary masks are re-binarized at
/// 0.5; soft masks keep their averaged values. Output (F, H/factor, W/factor).
torch::Tensor downsample_mask(const MaskVideo& mask, int factor);

/// The "no mask" conditioning: the motion area is the whole frame.
MaskVideo full_mask(std::int64_t frames, std::int64_t height, std::int64_t width);

/// Binary region used for compositing when conditioning on a soft prior:
/// every pixel the prior covers at all.
MaskVideo prior_support(const MaskVideo& prior);

}  // namespace handvid::motion
