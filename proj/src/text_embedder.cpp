#include "handvid/text_embedder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include "handvid/error.hpp"
#include "handvid/io.hpp"
#include "handvid/synth_scene.hpp"

namespace handvid::text {

std::vector<std::string> tokenize(std::string_view prompt) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : prompt) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

TextEmbedder::TextEmbedder(std::vector<std::string> vocabulary, int dim, std::uint64_t seed)
    : vocabulary_(std::move(vocabulary)), dim_(dim), seed_(seed) {
  require(dim_ >= 2 && dim_ % 2 == 0, "TextEmbedder: dimension must be even and >= 2");
  require(!vocabulary_.empty(), "TextEmbedder: empty vocabulary");
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    if (!index_.emplace(vocabulary_[i], static_cast<std::int64_t>(i)).second) {
      throw ValidationError("TextEmbedder: duplicate token '" + vocabulary_[i] + "'");
    }
  }
  // Unit-norm rows: distinct tokens are nearly orthogonal at d = 64.
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed_);
  table_ = torch::randn({static_cast<std::int64_t>(vocabulary_.size()), dim_}, gen,
                        torch::TensorOptions().dtype(torch::kFloat32));
  table_ = table_ / table_.norm(2, 1, true);

  positions_ = torch::zeros({kMaxTokens, dim_});
  auto acc = positions_.accessor<float, 2>();
  for (int p = 0; p < kMaxTokens; ++p) {
    for (int k = 0; k < dim_ / 2; ++k) {
      const double freq = std::pow(100.0, -2.0 * k / dim_);
      acc[p][2 * k] = static_cast<float>(0.25 * std::sin(p * freq));
      acc[p][2 * k + 1] = static_cast<float>(0.25 * std::cos(p * freq));
    }
  }
  positions_ = positions_ / std::sqrt(static_cast<double>(dim_ / 2));
}

TextEmbedder TextEmbedder::for_action_prompts(int dim, std::uint64_t seed) {
  std::set<std::string> words;
  for (auto action : synth::all_actions()) {
    for (auto& w : tokenize(synth::action_prompt(action))) words.insert(w);
  }
  return TextEmbedder(std::vector<std::string>(words.begin(), words.end()), dim, seed);
}

torch::Tensor TextEmbedder::embed(std::string_view prompt) const {
  auto tokens = tokenize(prompt);
  if (tokens.empty()) throw ValidationError("embed_text: empty prompt");
  if (tokens.size() > static_cast<std::size_t>(kMaxTokens)) {
    throw ValidationError("embed_text: prompt has " + std::to_string(tokens.size()) +
                          " tokens, at most " + std::to_string(kMaxTokens) + " are supported");
  }
  std::vector<std::int64_t> ids;
  for (const auto& tok : tokens) {
    auto it = index_.find(tok);
    if (it == index_.end()) throw ValidationError("embed_text: unknown token '" + tok + "'");
    ids.push_back(it->second);
  }
  const auto n = static_cast<std::int64_t>(ids.size());
  auto rows = table_.index_select(0, torch::tensor(ids, torch::kInt64));
  return rows + positions_.slice(0, 0, n);
}

std::uint64_t TextEmbedder::parameter_hash() const {
  return io::hash_tensors({table_, positions_});
}

std::string TextEmbedder::descriptor() const {
  std::ostringstream out;
  out << "d=" << dim_ << ";seed=" << seed_ << ";vocab=";
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) out << (i ? "," : "") << vocabulary_[i];
  return out.str();
}

TextBatch batch_text(const std::vector<torch::Tensor>& embeddings) {
  require(!embeddings.empty(), "batch_text: no embeddings");
  std::int64_t n = 0;
  const auto d = embeddings.front().size(1);
  for (const auto& e : embeddings) {
    require(e.dim() == 2 && e.size(1) == d, "batch_text: inconsistent embedding shapes");
    n = std::max(n, e.size(0));
  }
  const auto b = static_cast<std::int64_t>(embeddings.size());
  auto tokens = torch::zeros({b, n, d}, embeddings.front().options());
  auto valid = torch::zeros({b, n}, torch::kBool);
  for (std::int64_t i = 0; i < b; ++i) {
    const auto len = embeddings[i].size(0);
    tokens[i].slice(0, 0, len).copy_(embeddings[i]);
    valid[i].slice(0, 0, len).fill_(true);
  }
  return {tokens, valid};
}

}  // namespace handvid::text
