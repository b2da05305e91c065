#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "handvid/motion_area.hpp"
#include "handvid/synth_scene.hpp"

namespace handvid::synth {

// On-disk layout of a dataset directory:
//
//   manifest.tsv                 one header block, then one `sample` record per line
//   prior_mask.pgm               dataset-level prior (0-255 linear)
//   samples/<id>/frame_XX.ppm    8-bit RGB frames, XX = 00 .. L
//   samples/<id>/mask_XX.pgm     per-frame hull masks {0,255}
//   samples/<id>/keypoints.txt   "frame hand joint x y visibility" records

inline constexpr const char* kManifestFile = "manifest.tsv";
inline constexpr const char* kPriorMaskFile = "prior_mask.pgm";

struct ManifestEntry {
  std::string id;
  std::string dir;  // relative to the dataset root
  Action action = Action::still;
  std::uint64_t seed = 0;
  int n_hands = 1;
  int clutter_level = 0;
  std::string prompt;
};

struct Manifest {
  std::filesystem::path root;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::string prior_mask_file;  // empty when no prior has been built
  std::vector<ManifestEntry> entries;
};

/// Writes frames, masks, keypoints and the manifest. Throws on an empty list.
Manifest write_manifest(std::span<const SynthSample> samples, const std::filesystem::path& root,
                        const std::optional<motion::MaskVideo>& prior = std::nullopt);
Manifest read_manifest(const std::filesystem::path& root);
SynthSample load_sample(const Manifest& manifest, std::size_t index);

/// Keypoint text records (6 decimals).
void write_keypoints(const std::filesystem::path& path, const pose::KeypointSequence& keypoints);
pose::KeypointSequence read_keypoints(const std::filesystem::path& path, int frames, int joints);

void write_mask_image(const std::filesystem::path& path, const torch::Tensor& hw);
motion::MaskVideo read_prior(const Manifest& manifest);

/// Samples in manifest order plus the dataset prior (if present).
struct Dataset {
  Manifest manifest;
  std::vector<SynthSample> samples;
  std::optional<motion::MaskVideo> prior;

  std::size_t size() const { return samples.size(); }
};

Dataset load_dataset(const std::filesystem::path& root);

struct DatasetOptions {
  int count = 200;
  std::uint64_t seed = 1;
  int frames = 16;
  int height = 64;
  int width = 64;
  double two_hand_fraction = 0.25;
  int min_clutter = 2;
  int max_clutter = 6;
  int prior_samples = 0;  // prior covers the first n samples (the training split); 0 = all
};

/// Deterministic mixture of scene specs (actions cycle, the rest is drawn from `seed`).
std::vector<SceneSpec> dataset_specs(const DatasetOptions& options);
std::vector<SynthSample> generate_samples(std::span<const SceneSpec> specs);

/// Prior of the union masks of `samples`.
motion::MaskVideo dataset_prior(std::span<const SynthSample> samples);

/// Generates, computes the prior over the training split, writes everything.
Dataset build_dataset(const std::filesystem::path& root, const DatasetOptions& options);

}  // namespace handvid::synth
