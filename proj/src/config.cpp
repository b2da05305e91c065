#include "handvid/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include "handvid/error.hpp"
#include "handvid/io.hpp"

namespace handvid {

namespace fs = std::filesystem;

std::string_view mask_source_name(MaskSource source) {
  switch (source) {
    case MaskSource::none:
      return "none";
    case MaskSource::stage1:
      return "stage1";
    case MaskSource::prior:
      return "prior";
    case MaskSource::gt:
      return "gt";
  }
  return "?";
}

MaskSource parse_mask_source(std::string_view name) {
  for (auto s : all_mask_sources()) {
    if (mask_source_name(s) == name) return s;
  }
  throw ValidationError("unknown mask source '" + std::string(name) +
                        "' (expected none, stage1, prior or gt)");
}

const std::vector<MaskSource>& all_mask_sources() {
  static const std::vector<MaskSource> sources{MaskSource::none, MaskSource::stage1,
                                               MaskSource::prior, MaskSource::gt};
  return sources;
}

namespace {

using Field = std::variant<std::string RunConfig::*, int RunConfig::*, std::uint64_t RunConfig::*,
                           double RunConfig::*, bool RunConfig::*, MaskSource RunConfig::*>;

const std::vector<std::pair<std::string_view, Field>>& fields() {
  static const std::vector<std::pair<std::string_view, Field>> table{
      {"work_dir", &RunConfig::work_dir},
      {"samples", &RunConfig::samples},
      {"heldout", &RunConfig::heldout},
      {"data_seed", &RunConfig::data_seed},
      {"frames", &RunConfig::frames},
      {"height", &RunConfig::height},
      {"width", &RunConfig::width},
      {"beta_start", &RunConfig::beta_start},
      {"beta_end", &RunConfig::beta_end},
      {"tau", &RunConfig::tau},
      {"inference_steps", &RunConfig::inference_steps},
      {"alpha", &RunConfig::alpha},
      {"eta", &RunConfig::eta},
      {"epochs", &RunConfig::epochs},
      {"stage1_iterations", &RunConfig::stage1_iterations},
      {"stage2_iterations", &RunConfig::stage2_iterations},
      {"batch_size", &RunConfig::batch_size},
      {"learning_rate", &RunConfig::learning_rate},
      {"grad_clip", &RunConfig::grad_clip},
      {"seed", &RunConfig::seed},
      {"mask_source", &RunConfig::mask_source},
      {"hrl_enabled", &RunConfig::hrl_enabled},
      {"hrl_every", &RunConfig::hrl_every},
      {"mask_threshold", &RunConfig::mask_threshold},
      {"closing_radius", &RunConfig::closing_radius},
      {"latent_channels", &RunConfig::latent_channels},
      {"text_dim", &RunConfig::text_dim},
      {"base_channels", &RunConfig::base_channels},
      {"mid_channels", &RunConfig::mid_channels},
      {"detector_epochs", &RunConfig::detector_epochs},
      {"detector_batch", &RunConfig::detector_batch},
      {"detector_learning_rate", &RunConfig::detector_learning_rate},
      {"codec_epochs", &RunConfig::codec_epochs},
      {"codec_batch", &RunConfig::codec_batch},
      {"codec_learning_rate", &RunConfig::codec_learning_rate},
      {"codec_width", &RunConfig::codec_width},
      {"log_every", &RunConfig::log_every},
  };
  return table;
}

std::string_view trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("config: invalid value '" + std::string(text) + "' for " +
                          std::string(key));
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ValidationError("config: invalid boolean '" + std::string(text) + "' for " +
                        std::string(key));
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& [name, field] : fields()) {
    if (name != key) continue;
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            this->*member = std::string(value);
          } else if constexpr (std::is_same_v<T, bool>) {
            this->*member = parse_bool(key, value);
          } else if constexpr (std::is_same_v<T, MaskSource>) {
            this->*member = parse_mask_source(value);
          } else {
            this->*member = parse_number<T>(key, value);
          }
        },
        field);
    return;
  }
  throw ValidationError("config: unknown key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [name, field] : fields()) {
    out << name << " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, std::string>) {
            out << this->*member;
          } else if constexpr (std::is_same_v<T, bool>) {
            out << (this->*member ? "true" : "false");
          } else if constexpr (std::is_same_v<T, MaskSource>) {
            out << mask_source_name(this->*member);
          } else if constexpr (std::is_same_v<T, double>) {
            out << format_double(this->*member);
          } else {
            out << this->*member;
          }
        },
        field);
    out << '\n';
  }
  return out.str();
}

std::uint64_t RunConfig::hash() const { return io::hash_string(to_text()); }

void RunConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("config: ") + what);
  };
  check(!work_dir.empty(), "work_dir must not be empty");
  check(samples >= 1, "samples must be >= 1");
  check(heldout >= 0, "heldout must be >= 0");
  check(frames >= 1, "frames (L) must be >= 1");
  check(height >= 32 && width >= 32 && height % 8 == 0 && width % 8 == 0,
        "height and width must be >= 32 and divisible by 8");
  check(beta_start >= 0 && beta_end < 1 && beta_start <= beta_end, "need 0 <= beta_start <= beta_end < 1");
  check(tau >= 1, "tau must be >= 1");
  check(inference_steps >= 1 && inference_steps <= tau, "inference_steps must lie in [1, tau]");
  check(alpha >= 0 && eta >= 0, "alpha and eta must be non-negative");
  check(epochs >= 0 && stage1_iterations >= 0 && stage2_iterations >= 0, "iteration counts must be >= 0");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(learning_rate > 0, "learning_rate must be positive");
  check(grad_clip >= 0, "grad_clip must be >= 0 (0 disables clipping)");
  check(hrl_every >= 1, "hrl_every must be >= 1");
  check(mask_threshold > 0 && mask_threshold < 1, "mask_threshold must lie in (0, 1)");
  check(closing_radius >= 0, "closing_radius must be >= 0");
  check(latent_channels >= 1 && text_dim >= 2 && text_dim % 2 == 0, "invalid latent_channels or text_dim");
  check(base_channels >= 1 && mid_channels >= 1, "channel widths must be >= 1");
  check(detector_epochs >= 0 && detector_batch >= 1 && detector_learning_rate > 0,
        "invalid detector training settings");
  check(codec_epochs >= 0 && codec_batch >= 1 && codec_learning_rate > 0 && codec_width >= 2 &&
            codec_width % 2 == 0,
        "invalid codec training settings");
  check(log_every >= 0, "log_every must be >= 0");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  config.validate();
  return config;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void save_config(const fs::path& path, const RunConfig& config) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << config.to_text();
}

}  // namespace handvid
