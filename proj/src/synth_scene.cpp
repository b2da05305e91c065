#include "handvid/synth_scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "handvid/error.hpp"
#include "handvid/io.hpp"

namespace handvid::synth {

namespace {

struct ActionInfo {
  Action action;
  std::string_view name;
  std::string_view prompt;
};

constexpr std::array<ActionInfo, 6> kActions{{
    {Action::still, "still", "hold the hand still"},
    {Action::move_left, "move_left", "move the hand left"},
    {Action::move_right, "move_right", "move the hand right"},
    {Action::lift, "lift", "lift the hand up"},
    {Action::pinch, "pinch", "pinch the fingers"},
    {Action::wave, "wave", "wave the hand"},
}};

const ActionInfo& info(Action action) {
  for (const auto& a : kActions) {
    if (a.action == action) return a;
  }
  throw ValidationError("unknown action id");
}

// Local hand frame: wrist at the origin, x to the right, y towards the fingers.
// Lengths are in units of HandPose::scale.
struct FingerShape {
  Vec2 base;
  double angle;  // radians from +x
  std::array<double, 3> segments;
};

constexpr std::array<FingerShape, pose::kFingers> kFingerShapes{{
    {{-0.25, 0.15}, 2.30, {0.20, 0.18, 0.15}},  // thumb
    {{-0.22, 0.55}, 1.75, {0.25, 0.17, 0.13}},  // index
    {{-0.05, 0.60}, 1.57, {0.28, 0.19, 0.14}},  // middle
    {{0.12, 0.56}, 1.40, {0.25, 0.17, 0.13}},   // ring
    {{0.27, 0.48}, 1.22, {0.20, 0.13, 0.11}},   // pinky
}};

constexpr double kCurl = 0.08;  // per-joint bend, radians

Vec2 lerp(const Vec2& a, const Vec2& b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

// Translation/rotation amplitudes at full progress.
constexpr double kTranslation = 0.25;
constexpr double kWaveAngle = 0.4;

HandPose apply_action(Action action, HandPose pose, double progress) {
  switch (action) {
    case Action::still: break;
    case Action::move_left: pose.root.x -= kTranslation * progress; break;
    case Action::move_right: pose.root.x += kTranslation * progress; break;
    case Action::lift: pose.root.y -= kTranslation * progress; break;
    case Action::pinch: pose.pinch = std::min(1.0, progress); break;
    case Action::wave:
      pose.rotation += kWaveAngle * std::sin(2.0 * std::numbers::pi * progress);
      break;
  }
  return pose;
}

std::vector<ScenePose> build_trajectory(Action action, const ScenePose& start, int frames,
                                        double amplitude) {
  std::vector<ScenePose> out;
  out.reserve(frames);
  for (int l = 0; l < frames; ++l) {
    const double progress = amplitude * static_cast<double>(l) / (frames - 1);
    ScenePose scene;
    for (const auto& hand : start) scene.push_back(apply_action(action, hand, progress));
    out.push_back(std::move(scene));
  }
  return out;
}

bool inside_frame(const std::vector<ScenePose>& trajectory, double margin) {
  for (const auto& scene : trajectory) {
    for (const auto& hand : scene) {
      for (const auto& j : hand_joints(hand)) {
        if (j.x < margin || j.x > 1 - margin || j.y < margin || j.y > 1 - margin) return false;
      }
    }
  }
  return true;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

using Color = std::array<double, 3>;

enum class ShapeType { rect, disk, triangle };

struct ClutterShape {
  ShapeType type;
  Vec2 center;
  double size;
  double angle;
  Color color;
};

struct Background {
  Color base;
  Color gradient;
  std::vector<ClutterShape> shapes;

  Color at(const Vec2& q) const {
    Color c;
    for (int k = 0; k < 3; ++k) c[k] = base[k] + gradient[k] * (q.y - 0.5);
    for (const auto& s : shapes) {
      const double dx = q.x - s.center.x, dy = q.y - s.center.y;
      const double u = std::cos(s.angle) * dx + std::sin(s.angle) * dy;
      const double v = -std::sin(s.angle) * dx + std::cos(s.angle) * dy;
      bool hit = false;
      switch (s.type) {
        case ShapeType::rect: hit = std::abs(u) <= s.size && std::abs(v) <= 0.6 * s.size; break;
        case ShapeType::disk: hit = dx * dx + dy * dy <= s.size * s.size; break;
        case ShapeType::triangle:
          hit = v <= 0.5 * s.size && v >= -s.size && std::abs(u) <= (0.5 * s.size - v) * 0.6;
          break;
      }
      if (hit) c = s.color;
    }
    return c;
  }
};

Background make_background(Rng& rng, int clutter) {
  Background bg;
  for (auto& c : bg.base) c = rng.uniform(0.25, 0.55);
  for (auto& c : bg.gradient) c = rng.uniform(-0.1, 0.1);
  for (int i = 0; i < clutter; ++i) {
    ClutterShape s;
    s.type = static_cast<ShapeType>(rng.integer(0, 2));
    s.center = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    s.size = rng.uniform(0.05, 0.14);
    s.angle = rng.uniform(0.0, std::numbers::pi);
    for (auto& c : s.color) c = rng.uniform(0.05, 0.95);
    bg.shapes.push_back(s);
  }
  return bg;
}

// Per-finger hues make joint identity learnable; segment shading marks joints.
constexpr std::array<Color, pose::kFingers> kFingerColors{{
    {1.00, 0.55, 0.45},
    {0.95, 0.78, 0.42},
    {0.85, 0.85, 0.55},
    {0.70, 0.75, 0.62},
    {0.62, 0.60, 0.72},
}};
constexpr Color kPalmColor{0.90, 0.68, 0.55};

Color hand_tint(Color c, int slot) {
  const double f = slot == 0 ? 1.0 : 0.62;
  for (auto& v : c) v *= f;
  return c;
}

double segment_distance2(const Vec2& a, const Vec2& b, const Vec2& q) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = q.x - a.x, wy = q.y - a.y;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  const double dx = wx - t * vx, dy = wy - t * vy;
  return dx * dx + dy * dy;
}

struct RenderedHand {
  HandJoints px;  // joints in pixel units
  std::vector<motion::Point> palm;
  double radius;  // capsule radius in pixels
  int slot;
};

RenderedHand prepare_hand(const HandPose& pose, int slot, int height, int width) {
  RenderedHand h;
  h.slot = slot;
  const auto joints = hand_joints(pose);
  for (int j = 0; j < pose::kJointsPerHand; ++j) h.px[j] = {joints[j].x * width, joints[j].y * height};
  std::vector<motion::Point> palm_pts{{h.px[pose::kWrist].x, h.px[pose::kWrist].y}};
  for (int f = 0; f < pose::kFingers; ++f) {
    const auto& b = h.px[pose::finger_joint(f, 0)];
    palm_pts.push_back({b.x, b.y});
  }
  h.palm = motion::convex_hull(palm_pts);
  h.radius = 0.1 * pose.scale * width;
  return h;
}

// Returns true and sets `out` when the sample point hits the hand.
bool shade_hand(const RenderedHand& hand, const Vec2& q, Color& out) {
  const double r2 = hand.radius * hand.radius;
  // Thumb last so it draws on top.
  for (int f = pose::kFingers - 1; f >= 0; --f) {
    for (int k = 2; k >= 0; --k) {
      const auto& a = hand.px[pose::finger_joint(f, k)];
      const auto& b = hand.px[pose::finger_joint(f, k + 1)];
      if (segment_distance2(a, b, q) <= r2) {
        Color c = kFingerColors[f];
        for (auto& v : c) v *= 1.0 - 0.14 * k;
        out = hand_tint(c, hand.slot);
        return true;
      }
    }
  }
  if (hand.palm.size() >= 3) {
    const motion::Point p{q.x, q.y};
    bool inside = true;
    for (std::size_t i = 0; i < hand.palm.size(); ++i) {
      if (motion::cross(hand.palm[i], hand.palm[(i + 1) % hand.palm.size()], p) < 0) {
        inside = false;
        break;
      }
    }
    if (inside) {
      out = hand_tint(kPalmColor, hand.slot);
      return true;
    }
  }
  // Wrist-to-base bones, slightly thicker than fingers.
  for (int f = 0; f < pose::kFingers; ++f) {
    if (segment_distance2(hand.px[pose::kWrist], hand.px[pose::finger_joint(f, 0)], q) <= 1.6 * r2) {
      out = hand_tint(kPalmColor, hand.slot);
      return true;
    }
  }
  return false;
}

constexpr std::array<std::array<double, 2>, 4> kSubsamples{{{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}}};

}  // namespace

const std::vector<Action>& all_actions() {
  static const std::vector<Action> actions = [] {
    std::vector<Action> a;
    for (const auto& i : kActions) a.push_back(i.action);
    return a;
  }();
  return actions;
}

std::string_view action_name(Action action) { return info(action).name; }

Action parse_action(std::string_view name) {
  for (const auto& a : kActions) {
    if (a.name == name) return a.action;
  }
  throw ValidationError("unknown action '" + std::string(name) + "'");
}

std::string_view action_prompt(Action action) { return info(action).prompt; }

Action action_from_prompt(std::string_view prompt) {
  for (const auto& a : kActions) {
    if (a.prompt == prompt) return a.action;
  }
  throw ValidationError("prompt does not match any action template: '" + std::string(prompt) + "'");
}

void SceneSpec::validate() const {
  if (frames < 2) throw ValidationError("SceneSpec: frames must be >= 2, got " + std::to_string(frames));
  if (height < 32 || width < 32) {
    throw ValidationError("SceneSpec: resolution must be at least 32x32, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  if (height % kCodecDownsample != 0 || width % kCodecDownsample != 0) {
    throw ValidationError("SceneSpec: resolution must be divisible by " +
                          std::to_string(kCodecDownsample));
  }
  if (n_hands != 1 && n_hands != 2) throw ValidationError("SceneSpec: n_hands must be 1 or 2");
  if (clutter_level < 0) throw ValidationError("SceneSpec: clutter_level must be >= 0");
  (void)info(action);
}

HandJoints hand_joints(const HandPose& pose) {
  HandJoints local;
  local[pose::kWrist] = {0, 0};
  for (int f = 0; f < pose::kFingers; ++f) {
    const auto& shape = kFingerShapes[f];
    Vec2 p = shape.base;
    double angle = shape.angle;
    // Thumb curls clockwise towards the palm, the others counter-clockwise.
    const double bend = f == 0 ? -kCurl : (shape.angle > 1.57 ? kCurl : -kCurl);
    local[pose::finger_joint(f, 0)] = p;
    for (int k = 0; k < 3; ++k) {
      p = {p.x + shape.segments[k] * std::cos(angle), p.y + shape.segments[k] * std::sin(angle)};
      local[pose::finger_joint(f, k + 1)] = p;
      angle += bend;
    }
  }
  if (pose.pinch > 0) {
    const int thumb_tip = pose::finger_joint(0, 3), index_tip = pose::finger_joint(1, 3);
    const Vec2 meet = lerp(local[thumb_tip], local[index_tip], 0.5);
    const double t = 0.8 * pose.pinch;
    for (int f : {0, 1}) {
      const Vec2 tip_shift{(meet.x - local[pose::finger_joint(f, 3)].x) * t,
                           (meet.y - local[pose::finger_joint(f, 3)].y) * t};
      local[pose::finger_joint(f, 3)].x += tip_shift.x;
      local[pose::finger_joint(f, 3)].y += tip_shift.y;
      local[pose::finger_joint(f, 2)].x += 0.5 * tip_shift.x;
      local[pose::finger_joint(f, 2)].y += 0.5 * tip_shift.y;
    }
  }
  HandJoints out;
  const double c = std::cos(pose.rotation), s = std::sin(pose.rotation);
  for (int j = 0; j < pose::kJointsPerHand; ++j) {
    const double lx = pose.mirrored ? -local[j].x : local[j].x;
    const double ly = local[j].y;
    out[j] = {pose.root.x + pose.scale * (c * lx - s * ly), pose.root.y - pose.scale * (s * lx + c * ly)};
  }
  return out;
}

double max_joint_step(const std::vector<ScenePose>& trajectory) {
  double step = 0;
  for (std::size_t l = 1; l < trajectory.size(); ++l) {
    for (std::size_t h = 0; h < trajectory[l].size(); ++h) {
      const auto a = hand_joints(trajectory[l - 1][h]);
      const auto b = hand_joints(trajectory[l][h]);
      for (int j = 0; j < pose::kJointsPerHand; ++j) {
        step = std::max(step, std::hypot(b[j].x - a[j].x, b[j].y - a[j].y));
      }
    }
  }
  return step;
}

std::vector<ScenePose> action_trajectory(Action action, int frames, int n_hands, Rng& rng,
                                         const TrajectoryOptions& options) {
  require(frames >= 2, "action_trajectory: frames must be >= 2");
  require(n_hands == 1 || n_hands == 2, "action_trajectory: n_hands must be 1 or 2");
  require(options.velocity_cap > 0, "action_trajectory: velocity cap must be positive");
  (void)info(action);

  constexpr double kMargin = 0.03;
  std::vector<ScenePose> best;
  for (int attempt = 0; attempt < 500; ++attempt) {
    ScenePose start;
    HandPose first;
    first.scale = rng.uniform(0.14, 0.18);
    first.rotation = rng.uniform(-0.3, 0.3);
    first.root = {rng.uniform(0.15, 0.85), rng.uniform(0.35, 0.9)};
    start.push_back(first);
    if (n_hands == 2) {
      HandPose second = first;
      second.mirrored = true;
      second.rotation = -first.rotation;
      second.root = {first.root.x - rng.uniform(0.3, 0.36), first.root.y + rng.uniform(-0.05, 0.05)};
      start.push_back(second);
    }

    double amplitude = 1.0;
    auto trajectory = build_trajectory(action, start, frames, amplitude);
    for (int k = 0; k < 30; ++k) {
      const double step = max_joint_step(trajectory);
      if (step <= options.velocity_cap) break;
      amplitude *= 0.99 * options.velocity_cap / step;
      trajectory = build_trajectory(action, start, frames, amplitude);
    }
    if (inside_frame(trajectory, kMargin)) return trajectory;
    if (best.empty()) best = std::move(trajectory);
  }
  // Placement never fit (tiny margins are only violated by extreme specs);
  // joints leaving the frame become invisible downstream.
  return best;
}

pose::KeypointSequence keypoints_from_trajectory(const std::vector<ScenePose>& trajectory) {
  const auto frames = static_cast<std::int64_t>(trajectory.size());
  auto seq = pose::KeypointSequence::zeros(frames, pose::kDefaultJoints);
  auto c = seq.coords.accessor<double, 3>();
  auto v = seq.visibility.accessor<double, 2>();
  for (std::int64_t l = 0; l < frames; ++l) {
    for (std::size_t h = 0; h < trajectory[l].size(); ++h) {
      const auto joints = hand_joints(trajectory[l][h]);
      for (int j = 0; j < pose::kJointsPerHand; ++j) {
        const double x = round6(joints[j].x), y = round6(joints[j].y);
        if (x < 0 || x >= 1 || y < 0 || y >= 1) continue;
        const int idx = pose::hand_joint(static_cast<int>(h), j);
        c[l][idx][0] = x;
        c[l][idx][1] = y;
        v[l][idx] = 1.0;
      }
    }
  }
  return seq;
}

SynthSample generate_sample(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto trajectory = action_trajectory(spec.action, spec.frames, spec.n_hands, rng);
  const auto background = make_background(rng, spec.clutter_level);

  SynthSample sample;
  sample.spec = spec;
  sample.prompt = std::string(action_prompt(spec.action));
  sample.keypoints = keypoints_from_trajectory(trajectory);
  sample.frame_masks = motion::masks_from_keypoints(sample.keypoints, spec.height, spec.width);

  const int H = spec.height, W = spec.width;
  // Background rendered once; frames only differ inside their hull masks.
  std::vector<Color> bg_samples(static_cast<std::size_t>(H) * W * kSubsamples.size());
  auto bg_frame = torch::empty({3, H, W}, torch::kFloat32);
  {
    auto acc = bg_frame.accessor<float, 3>();
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        Color sum{0, 0, 0};
        for (std::size_t s = 0; s < kSubsamples.size(); ++s) {
          const Vec2 q{(j + kSubsamples[s][0]) / W, (i + kSubsamples[s][1]) / H};
          auto c = background.at(q);
          bg_samples[(static_cast<std::size_t>(i) * W + j) * kSubsamples.size() + s] = c;
          for (int k = 0; k < 3; ++k) sum[k] += c[k];
        }
        for (int k = 0; k < 3; ++k) acc[k][i][j] = io::quantize_unit(sum[k] / kSubsamples.size());
      }
    }
  }

  sample.video = bg_frame.unsqueeze(0).repeat({spec.frames, 1, 1, 1}).contiguous();
  auto video = sample.video.accessor<float, 4>();
  auto masks = sample.frame_masks.values.accessor<float, 3>();
  for (int l = 0; l < spec.frames; ++l) {
    std::vector<RenderedHand> hands;
    // Slot 1 first so slot 0 draws on top.
    for (int h = static_cast<int>(trajectory[l].size()) - 1; h >= 0; --h) {
      hands.push_back(prepare_hand(trajectory[l][h], h, H, W));
    }
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        if (masks[l][i][j] < 0.5f) continue;
        Color sum{0, 0, 0};
        for (std::size_t s = 0; s < kSubsamples.size(); ++s) {
          const Vec2 q{j + kSubsamples[s][0], i + kSubsamples[s][1]};
          Color c = bg_samples[(static_cast<std::size_t>(i) * W + j) * kSubsamples.size() + s];
          for (const auto& hand : hands) {
            Color hc;
            if (shade_hand(hand, q, hc)) c = hc;
          }
          for (int k = 0; k < 3; ++k) sum[k] += c[k];
        }
        for (int k = 0; k < 3; ++k) video[l][k][i][j] = io::quantize_unit(sum[k] / kSubsamples.size());
      }
    }
  }
  return sample;
}

}  // namespace handvid::synth
