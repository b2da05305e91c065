#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "handvid/config.hpp"
#include "handvid/dataset.hpp"
#include "handvid/eval.hpp"
#include "handvid/pipeline.hpp"

namespace handvid::cli {

/// Artifact locations under a work directory.
struct Layout {
  std::filesystem::path work;

  std::filesystem::path dataset() const { return work / "dataset"; }
  std::filesystem::path models() const { return work / "models"; }
  std::filesystem::path logs() const { return work / "logs"; }
  std::filesystem::path detector() const { return models() / "detector.ckpt"; }
  std::filesystem::path codec() const { return models() / "codec.ckpt"; }
  std::filesystem::path stage1() const { return models() / "stage1.ckpt"; }
  std::filesystem::path stage2(MaskSource source, bool hrl) const;
  std::filesystem::path run_manifest() const { return work / "run_manifest.txt"; }
};

/// Dataset split by the config: the first `samples` train, the next `heldout` evaluate.
struct Split {
  synth::Dataset data;
  std::span<const synth::SynthSample> train;
  std::span<const synth::SynthSample> heldout;
};

/// Throws with a remediation hint when the dataset is missing or was built
/// for a different config.
Split load_split(const Layout& layout, const RunConfig& config);

/// Frozen codec, text embedder and detector loaded from `layout`; throws
/// with a remediation hint when a checkpoint is missing.
pipeline::FrozenModels load_frozen(const Layout& layout, const RunConfig& config);

/// Generates held-out videos for one (mask source, HRL) cell and scores them.
eval::EvalReport evaluate_cell(std::span<const synth::SynthSample> heldout,
                               const pipeline::Models& models, const RunConfig& config,
                               MaskSource source, bool hrl);

/// Mean IoU of post-processed stage-1 masks against the held-out union masks.
double heldout_mask_iou(std::span<const synth::SynthSample> heldout, const pipeline::Models& models,
                        const RunConfig& config);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(const std::vector<std::string>& args);

}  // namespace handvid::cli
