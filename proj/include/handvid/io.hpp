#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace handvid::io {

/// 8-bit interleaved raster, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Binary netpbm: P5 for one channel, P6 for three. Lossless.
void write_image(const std::filesystem::path& path, const Image8& image);
Image8 read_image(const std::filesystem::path& path);

/// (3,H,W) or (H,W) float tensor in [0,1] -> quantized raster (round-to-nearest).
Image8 to_image(const torch::Tensor& chw);
/// Inverse of to_image; values are exactly k/255 as float32.
torch::Tensor from_image(const Image8& image);

/// Value that an 8-bit level decodes to. Everything that must survive an 8-bit
/// round trip is quantized through this.
inline float level_value(int level) { return static_cast<float>(level) / 255.0f; }
float quantize_unit(double value);

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container of named tensors plus a string
// descriptor that loaders compare against the architecture they expect.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> descriptor;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ValidationError naming the first differing key.
void require_descriptor(const Checkpoint& checkpoint, const std::string& kind,
                        const std::map<std::string, std::string>& expected);

/// Parameters followed by buffers, in registration order.
std::vector<std::pair<std::string, torch::Tensor>> module_state(const torch::nn::Module& module);
void load_module_state(torch::nn::Module& module, const Checkpoint& checkpoint,
                       const std::string& prefix = "");

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64 bit). Used for frozen-parameter checks and report ids.
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t hash_string(const std::string& text);
std::uint64_t hash_tensors(const std::vector<torch::Tensor>& tensors);
std::uint64_t hash_module(const torch::nn::Module& module);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex(std::uint64_t value);

/// Serializes arbitrary bytes (e.g. an optimizer archive) as a uint8 tensor.
torch::Tensor bytes_to_tensor(const std::string& bytes);
std::string tensor_to_bytes(const torch::Tensor& tensor);

}  // namespace handvid::io
