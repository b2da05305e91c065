#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace handvid {

enum class MaskSource { none, stage1, prior, gt };

std::string_view mask_source_name(MaskSource source);
MaskSource parse_mask_source(std::string_view name);
const std::vector<MaskSource>& all_mask_sources();

/// Every tunable of a run. Serialized as `key = value` lines; `#` starts a comment.
struct RunConfig {
  // data
  std::string work_dir = "work";
  int samples = 200;   // training split
  int heldout = 20;    // evaluation split, appended after the training samples
  std::uint64_t data_seed = 1;
  int frames = 15;     // L; every video carries L + 1 frames
  int height = 64;
  int width = 64;

  // noise schedule
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int tau = 1000;
  int inference_steps = 50;

  // losses
  double alpha = 0.1;
  double eta = 0.1;

  // optimization; epochs > 0 overrides the per-stage iteration counts
  int epochs = 0;
  int stage1_iterations = 2000;
  int stage2_iterations = 1000;
  int batch_size = 8;
  double learning_rate = 5e-5;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  // stage 2
  MaskSource mask_source = MaskSource::stage1;
  bool hrl_enabled = true;
  int hrl_every = 1;

  // mask post-processing
  double mask_threshold = 0.5;
  int closing_radius = 2;

  // architecture
  int latent_channels = 4;
  int text_dim = 64;
  int base_channels = 32;
  int mid_channels = 64;

  // auxiliary frozen models
  int detector_epochs = 20;
  int detector_batch = 32;
  double detector_learning_rate = 2e-3;
  int codec_epochs = 12;
  int codec_batch = 16;
  double codec_learning_rate = 2e-3;
  int codec_width = 64;

  int log_every = 50;  // progress lines on stderr; 0 = silent

  /// Range and consistency checks; throws ValidationError naming the field.
  void validate() const;
  /// Sets one field from its text form; unknown keys are rejected.
  void set(std::string_view key, std::string_view value);
  /// Canonical serialization: every key, fixed order, round-trips exactly.
  std::string to_text() const;
  std::uint64_t hash() const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace handvid
