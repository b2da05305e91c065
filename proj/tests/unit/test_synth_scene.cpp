#include "doctest_torch.hpp"

#include <queue>

#include "handvid/error.hpp"
#include "handvid/synth_scene.hpp"

using namespace handvid;
using namespace handvid::synth;

namespace {

// 4-connected foreground components of an (H, W) binary mask.
int components(const torch::Tensor& mask) {
  const auto h = mask.size(0), w = mask.size(1);
  auto m = mask.contiguous().to(torch::kFloat32);
  const float* p = m.data_ptr<float>();
  std::vector<int> seen(h * w, 0);
  int count = 0;
  for (std::int64_t s = 0; s < h * w; ++s) {
    if (p[s] < 0.5f || seen[s]) continue;
    ++count;
    std::queue<std::int64_t> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      auto c = q.front();
      q.pop();
      const auto i = c / w, j = c % w;
      const std::int64_t di[] = {-1, 1, 0, 0}, dj[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const auto ni = i + di[k], nj = j + dj[k];
        if (ni < 0 || nj < 0 || ni >= h || nj >= w) continue;
        const auto n = ni * w + nj;
        if (p[n] >= 0.5f && !seen[n]) {
          seen[n] = 1;
          q.push(n);
        }
      }
    }
  }
  return count;
}

double visible_centroid_x(const pose::KeypointSequence& k, std::int64_t f) {
  auto vis = k.visibility[f];
  return ((k.coords[f].select(1, 0) * vis).sum() / vis.sum()).item<double>();
}

}  // namespace

TEST_CASE("same spec twice gives bitwise-identical samples") {
  SceneSpec spec;
  spec.seed = 17;
  spec.action = Action::wave;
  spec.n_hands = 2;
  auto a = generate_sample(spec), b = generate_sample(spec);
  CHECK(torch::equal(a.video, b.video));
  CHECK(torch::equal(a.keypoints.coords, b.keypoints.coords));
  CHECK(torch::equal(a.keypoints.visibility, b.keypoints.visibility));
  CHECK(torch::equal(a.frame_masks.values, b.frame_masks.values));
  CHECK(a.prompt == b.prompt);
}

TEST_CASE("move-left sample has a strictly decreasing keypoint centroid") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    SceneSpec spec;
    spec.seed = seed;
    spec.action = Action::move_left;
    auto s = generate_sample(spec);
    for (std::int64_t f = 1; f < s.keypoints.frames(); ++f) {
      CHECK(visible_centroid_x(s.keypoints, f) < visible_centroid_x(s.keypoints, f - 1));
    }
  }
}

TEST_CASE("one hand without clutter gives one connected region per frame mask") {
  for (auto action : all_actions()) {
    SceneSpec spec;
    spec.seed = 9;
    spec.action = action;
    spec.clutter_level = 0;
    spec.n_hands = 1;
    auto s = generate_sample(spec);
    for (std::int64_t f = 0; f < s.frame_masks.frames(); ++f) {
      CHECK(components(s.frame_masks.values[f]) == 1);
    }
  }
}

TEST_CASE("sample invariants hold across actions and hand counts") {
  for (auto action : all_actions()) {
    for (int hands : {1, 2}) {
      SceneSpec spec;
      spec.seed = 100 + static_cast<int>(action) * 2 + hands;
      spec.action = action;
      spec.n_hands = hands;
      auto s = generate_sample(spec);
      CHECK(s.video.sizes() == torch::IntArrayRef{16, 3, 64, 64});
      auto levels = s.video * 255;
      CHECK(torch::equal(levels, levels.round()));
      CHECK(s.keypoints.joints() == pose::kDefaultJoints);
      s.keypoints.validate();
      s.frame_masks.validate();
      CHECK(s.frame_masks.binary);
      CHECK(s.prompt == action_prompt(action));
      CHECK(action_from_prompt(s.prompt) == action);
      // Second slot is empty for one-hand scenes.
      auto second = s.keypoints.visibility.slice(1, pose::kJointsPerHand);
      CHECK((hands == 1) == (second.sum().item<double>() == 0));
    }
  }
}

TEST_CASE("static trajectory keeps every pose equal") {
  Rng rng(4);
  auto traj = action_trajectory(Action::still, 16, 2, rng);
  REQUIRE(traj.size() == 16);
  for (const auto& frame : traj) {
    for (std::size_t h = 0; h < frame.size(); ++h) {
      CHECK(frame[h].root.x == traj[0][h].root.x);
      CHECK(frame[h].root.y == traj[0][h].root.y);
      CHECK(frame[h].rotation == traj[0][h].rotation);
      CHECK(frame[h].pinch == traj[0][h].pinch);
    }
  }
  CHECK(max_joint_step(traj) == 0.0);
}

TEST_CASE("move-left trajectory has a monotone decreasing root x") {
  Rng rng(11);
  auto traj = action_trajectory(Action::move_left, 16, 1, rng);
  for (std::size_t f = 1; f < traj.size(); ++f) CHECK(traj[f][0].root.x < traj[f - 1][0].root.x);
}

TEST_CASE("pinch trajectory closes the thumb-index gap") {
  Rng rng(12);
  auto traj = action_trajectory(Action::pinch, 16, 1, rng);
  auto gap = [&](std::size_t f) {
    auto j = hand_joints(traj[f][0]);
    const auto& a = j[pose::finger_joint(0, 3)];
    const auto& b = j[pose::finger_joint(1, 3)];
    return std::hypot(a.x - b.x, a.y - b.y);
  };
  for (std::size_t f = 1; f < traj.size(); ++f) CHECK(gap(f) < gap(f - 1));
}

TEST_CASE("trajectories respect the velocity cap and stay inside the frame") {
  TrajectoryOptions opts;
  for (auto action : all_actions()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      auto traj = action_trajectory(action, 16, 2, rng, opts);
      CHECK(max_joint_step(traj) <= opts.velocity_cap + 1e-12);
      for (const auto& frame : traj) {
        for (const auto& hand : frame) {
          for (const auto& j : hand_joints(hand)) {
            CHECK(j.x >= 0.0);
            CHECK(j.x <= 1.0);
            CHECK(j.y >= 0.0);
            CHECK(j.y <= 1.0);
          }
        }
      }
    }
  }
}

TEST_CASE("invalid scene specs are rejected") {
  SceneSpec spec;
  spec.frames = 1;
  CHECK_THROWS_AS(generate_sample(spec), ValidationError);
  spec = {};
  spec.height = 30;
  CHECK_THROWS_AS(generate_sample(spec), ValidationError);
  spec = {};
  spec.width = 16;
  CHECK_THROWS_AS(generate_sample(spec), ValidationError);
  spec = {};
  spec.n_hands = 3;
  CHECK_THROWS_AS(generate_sample(spec), ValidationError);
  CHECK_THROWS_AS(parse_action("juggle"), ValidationError);
  CHECK(parse_action("pinch") == Action::pinch);
}
