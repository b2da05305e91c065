#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace handvid::text {

inline constexpr int kMaxTokens = 8;

/// Lowercased whitespace tokens.
std::vector<std::string> tokenize(std::string_view prompt);

/// Frozen token table over a closed vocabulary plus sinusoidal position
/// features. The table is drawn once from `seed` and never trained.
class TextEmbedder {
 public:
  TextEmbedder(std::vector<std::string> vocabulary, int dim, std::uint64_t seed);
  /// Vocabulary of every action prompt template.
  static TextEmbedder for_action_prompts(int dim = 64, std::uint64_t seed = 0);

  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

  /// (N, d) float32. Throws ValidationError on an empty prompt, more than
  /// kMaxTokens tokens, or a token outside the vocabulary (named in the message).
  torch::Tensor embed(std::string_view prompt) const;

  /// Hash of the table; unchanged for the lifetime of the object.
  std::uint64_t parameter_hash() const;
  std::string descriptor() const;

 private:
  std::vector<std::string> vocabulary_;
  std::map<std::string, std::int64_t, std::less<>> index_;
  int dim_;
  std::uint64_t seed_;
  torch::Tensor table_;      // (V, d)
  torch::Tensor positions_;  // (kMaxTokens, d)
};

struct TextBatch {
  torch::Tensor tokens;  // (B, N, d), zero-padded
  torch::Tensor valid;   // (B, N) bool, false on padding
};

TextBatch batch_text(const std::vector<torch::Tensor>& embeddings);

}  // namespace handvid::text
