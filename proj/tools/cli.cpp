#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "handvid/codec.hpp"
#include "handvid/dataset.hpp"
#include "handvid/detector.hpp"
#include "handvid/error.hpp"
#include "handvid/io.hpp"
#include "handvid/training.hpp"

namespace handvid::cli {

namespace fs = std::filesystem;
using motion::MaskVideo;

fs::path Layout::stage2(MaskSource source, bool hrl) const {
  return models() / ("stage2_" + std::string(mask_source_name(source)) + (hrl ? "_hrl" : "_nohrl") +
                     ".ckpt");
}

Split load_split(const Layout& layout, const RunConfig& config) {
  if (!fs::exists(layout.dataset() / synth::kManifestFile)) {
    throw IoError("no dataset at " + layout.dataset().string() + "; run `handvid synth` first");
  }
  Split split;
  split.data = synth::load_dataset(layout.dataset());
  const auto& m = split.data.manifest;
  if (m.frames != config.frames + 1 || m.height != config.height || m.width != config.width ||
      split.data.size() < static_cast<std::size_t>(config.samples + config.heldout)) {
    throw ValidationError("dataset at " + layout.dataset().string() +
                          " does not match the config (frames, resolution or sample count); "
                          "rerun `handvid synth`");
  }
  std::span<const synth::SynthSample> all(split.data.samples);
  split.train = all.first(config.samples);
  split.heldout = all.subspan(config.samples, config.heldout);
  return split;
}

namespace {

std::string cell_name(MaskSource source, bool hrl) {
  return std::string(mask_source_name(source)) + (hrl ? "_hrl" : "_nohrl");
}

void require_file(const fs::path& path, const std::string& what, const std::string& command) {
  if (!fs::exists(path)) {
    throw IoError(what + " not found at " + path.string() + "; run `handvid " + command + "` first");
  }
}

void record(const Layout& layout, const std::string& key, const fs::path& path) {
  fs::create_directories(layout.work);
  std::ofstream out(layout.run_manifest(), std::ios::app);
  out << key << " = " << path.string();
  if (fs::exists(path) && fs::is_regular_file(path)) out << " hash=" << io::hex(io::hash_file(path));
  out << '\n';
}

// printf-style output through std::cout so embedders can redirect it.
template <typename... Args>
void say(const char* format, Args... args) {
  const int n = std::snprintf(nullptr, 0, format, args...);
  std::string text(static_cast<std::size_t>(n), '\0');
  std::snprintf(text.data(), text.size() + 1, format, args...);
  std::cout << text;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_video_dir(const fs::path& dir, const torch::Tensor& video, const MaskVideo& mask) {
  fs::create_directories(dir);
  char name[32];
  for (std::int64_t f = 0; f < video.size(0); ++f) {
    std::snprintf(name, sizeof name, "frame_%02lld.ppm", static_cast<long long>(f));
    io::write_image(dir / name, io::to_image(video[f]));
  }
  synth::write_mask_image(dir / "mask.pgm", mask.values[0]);
  // Preview: all frames side by side.
  io::write_image(dir / "preview.ppm", io::to_image(torch::cat(video.unbind(0), 2)));
}

torch::Tensor read_video_dir(const fs::path& dir, std::int64_t frames) {
  std::vector<torch::Tensor> out;
  char name[32];
  for (std::int64_t f = 0; f < frames; ++f) {
    std::snprintf(name, sizeof name, "frame_%02lld.ppm", static_cast<long long>(f));
    out.push_back(io::from_image(io::read_image(dir / name)));
  }
  return torch::stack(out);
}

void print_summary(const std::string& label, const std::map<std::string, double>& agg,
                   eval::Scope scope) {
  const bool ma = scope == eval::Scope::ma;
  auto get = [&](const char* key) { return agg.count(key) ? num(agg.at(key)) : "n/a"; };
  say("%-14s hs_err=%s det_rate=%s mask_iou=%s consistency=%s mse_%s=%s psnr_%s=%s off_ma_mse=%s\n",
              label.c_str(), get("hs_err").c_str(), get("detected_hand_rate").c_str(),
              get("mask_iou").c_str(), get("consistency").c_str(), ma ? "ma" : "full",
              get(ma ? "mse_ma" : "mse_full").c_str(), ma ? "ma" : "full",
              get(ma ? "psnr_ma" : "psnr_full").c_str(), get("mse_off_ma").c_str());
}

}  // namespace

pipeline::FrozenModels load_frozen(const Layout& layout, const RunConfig& config) {
  require_file(layout.codec(), "codec checkpoint", "train-codec");
  require_file(layout.detector(), "detector checkpoint", "train-detector");
  pose::DetectorConfig dc;
  dc.height = config.height;
  dc.width = config.width;
  return {codec::LatentCodec::load(layout.codec()),
          text::TextEmbedder::for_action_prompts(config.text_dim),
          pose::DetectorModel::load(layout.detector(), dc)};
}

eval::EvalReport evaluate_cell(std::span<const synth::SynthSample> heldout,
                               const pipeline::Models& models, const RunConfig& config,
                               MaskSource source, bool hrl) {
  if (heldout.empty()) throw ValidationError("evaluation needs at least one held-out sample");
  eval::EvalReport report;
  report.header["config_hash"] = io::hex(config.hash());
  report.header["mask_source"] = std::string(mask_source_name(source));
  report.header["hrl"] = hrl ? "on" : "off";
  report.header["frozen_hash"] = io::hex(models.frozen->hash());
  if (models.stage1) report.header["stage1_hash"] = io::hex(models.stage1->parameter_hash());
  if (models.stage2) report.header["stage2_hash"] = io::hex(models.stage2->parameter_hash());
  constexpr std::size_t kChunk = 8;
  for (std::size_t begin = 0; begin < heldout.size(); begin += kChunk) {
    const auto end = std::min(heldout.size(), begin + kChunk);
    std::vector<pipeline::InferRequest> requests;
    for (auto i = begin; i < end; ++i) {
      const auto& s = heldout[i];
      requests.push_back({s.video[0], s.prompt, config.seed + 1000003 * (i + 1),
                          s.union_mask().values[0]});
    }
    auto results = pipeline::infer_batch(requests, models, config, source);
    for (auto i = begin; i < end; ++i) {
      const auto& s = heldout[i];
      auto& r = results[i - begin];
      char id[32];
      std::snprintf(id, sizeof id, "heldout_%03zu", i);
      report.samples.push_back(eval::evaluate_sample(id, r.video, s.video.slice(0, 1),
                                                     s.union_mask().values[0], r.stage1,
                                                     models.frozen->detector));
    }
  }
  return report;
}

double heldout_mask_iou(std::span<const synth::SynthSample> heldout, const pipeline::Models& models,
                        const RunConfig& config) {
  if (heldout.empty()) throw ValidationError("mask IoU needs at least one held-out sample");
  std::vector<pipeline::InferRequest> requests;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    requests.push_back({heldout[i].video[0], heldout[i].prompt, config.seed + i, {}});
  }
  auto masks = pipeline::generate_stage1_masks(requests, models, config);
  double iou = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    auto gt = heldout[i].union_mask().with_frames(masks[i].frames());
    iou += eval::mask_iou(masks[i], gt) / static_cast<double>(masks.size());
  }
  return iou;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Two-stage hand-centric video diffusion on a synthetic hand world", "handvid"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, out_dir, mask_source, hrl_flag, scope_flag = "full", gen_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  int sample_index = 0;
  bool oracle = false, all_samples = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config file (key = value lines)");
    sub->add_option("--seed", seed, "Override the training / sampling seed");
    sub->add_option("--out-dir", out_dir, "Directory for this command's outputs");
    sub->add_option("--set", overrides, "Override a config key: --set key=value (repeatable)");
  };
  auto cell_flags = [&](CLI::App* sub) {
    sub->add_option("--mask-source", mask_source, "Stage-2 mask source")
        ->check(CLI::IsMember({"none", "stage1", "prior", "gt"}));
    sub->add_option("--hrl", hrl_flag, "Hand refinement loss")->check(CLI::IsMember({"on", "off"}));
  };

  auto* synth_cmd = app.add_subcommand("synth", "Build the synthetic dataset and prior mask");
  auto* det_cmd = app.add_subcommand("train-detector", "Train and freeze the hand keypoint detector");
  auto* codec_cmd = app.add_subcommand("train-codec", "Train and freeze the latent codec");
  auto* s1_cmd = app.add_subcommand("train-stage1", "Train the motion-area mask predictor");
  auto* s2_cmd = app.add_subcommand("train-stage2", "Train the video predictor");
  auto* infer_cmd = app.add_subcommand("infer", "Generate videos for held-out context images");
  auto* eval_cmd = app.add_subcommand("eval", "Score generated videos on the held-out split");
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the mask source x HRL grid");
  auto* viz_cmd = app.add_subcommand("viz", "Write motion-flow heat maps");
  for (auto* sub : {synth_cmd, det_cmd, codec_cmd, s1_cmd, s2_cmd, infer_cmd, eval_cmd, ablate_cmd, viz_cmd}) {
    common(sub);
  }
  for (auto* sub : {s2_cmd, infer_cmd, eval_cmd}) cell_flags(sub);
  for (auto* sub : {eval_cmd, ablate_cmd}) {
    sub->add_option("--scope", scope_flag, "Pixel-metric scope for the summary")
        ->check(CLI::IsMember({"full", "ma"}));
  }
  infer_cmd->add_option("--sample", sample_index, "Held-out sample index");
  infer_cmd->add_flag("--all", all_samples, "Generate every held-out sample");
  viz_cmd->add_option("--sample", sample_index, "Held-out sample index");
  viz_cmd->add_option("--gen-dir", gen_dir, "Visualize a generated video directory instead");
  eval_cmd->add_option("--gen-dir", gen_dir, "Score videos written by `infer --all` instead of generating");
  eval_cmd->add_flag("--oracle", oracle, "Score the ground truth against itself");

  std::vector<const char*> argv{"handvid"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got " + kv);
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) config.seed = *seed;
    if (!mask_source.empty()) config.mask_source = parse_mask_source(mask_source);
    if (!hrl_flag.empty()) config.hrl_enabled = hrl_flag == "on";
    config.validate();
    const Layout layout{config.work_dir};
    const auto scope = eval::parse_scope(scope_flag);
    auto out_or = [&](const fs::path& fallback) { return out_dir.empty() ? fallback : fs::path(out_dir); };
    const bool verbose = config.log_every > 0;

    if (*synth_cmd) {
      auto data = synth::build_dataset(out_or(layout.dataset()), pipeline::dataset_options(config));
      save_config(layout.work / "config.txt", config);
      record(layout, "dataset", out_or(layout.dataset()) / synth::kManifestFile);
      say("wrote %zu samples (%d train, %d held-out, %d frames at %dx%d) to %s\n",
                  data.size(), config.samples, config.heldout, config.frames + 1, config.height,
                  config.width, out_or(layout.dataset()).c_str());
      return 0;
    }

    if (*det_cmd) {
      auto split = load_split(layout, config);
      pose::DetectorTrainConfig tc;
      tc.epochs = config.detector_epochs;
      tc.batch_size = config.detector_batch;
      tc.learning_rate = config.detector_learning_rate;
      tc.seed = config.seed;
      tc.curve_path = layout.logs() / "detector_curve.txt";
      tc.verbose = verbose;
      pose::DetectorConfig dc;
      dc.height = config.height;
      dc.width = config.width;
      auto model = pose::train_detector(split.train, tc, dc);
      const auto path = out_or(layout.models()) / "detector.ckpt";
      fs::create_directories(path.parent_path());
      model.save(path);
      record(layout, "detector", path);
      say("detector: train error %s, held-out error %s (normalized units)\n",
                  num(pose::mean_joint_error(model, split.train)).c_str(),
                  split.heldout.empty() ? "n/a" : num(pose::mean_joint_error(model, split.heldout)).c_str());
      return 0;
    }

    if (*codec_cmd) {
      auto split = load_split(layout, config);
      codec::CodecTrainConfig tc;
      tc.epochs = config.codec_epochs;
      tc.batch_size = config.codec_batch;
      tc.learning_rate = config.codec_learning_rate;
      tc.seed = config.seed;
      tc.curve_path = layout.logs() / "codec_curve.txt";
      tc.verbose = verbose;
      codec::CodecConfig cc;
      cc.latent_channels = config.latent_channels;
      cc.width = config.codec_width;
      auto model = codec::train_codec(split.train, tc, cc);
      const auto path = out_or(layout.models()) / "codec.ckpt";
      fs::create_directories(path.parent_path());
      model.save(path);
      record(layout, "codec", path);
      say("codec: train PSNR %s dB, held-out PSNR %s dB\n",
                  num(codec::reconstruction_psnr(model, split.train)).c_str(),
                  split.heldout.empty() ? "n/a" : num(codec::reconstruction_psnr(model, split.heldout)).c_str());
      return 0;
    }

    auto frozen_models = [&] { return load_frozen(layout, config); };

    if (*s1_cmd) {
      auto split = load_split(layout, config);
      auto frozen = frozen_models();
      pipeline::TrainOptions opts;
      opts.metrics_path = layout.logs() / "stage1_metrics.tsv";
      opts.checkpoint_path = layout.models() / "stage1_state.ckpt";
      auto result = pipeline::train_stage1(split.train, split.data.prior, frozen, config, opts);
      const auto path = out_or(layout.models()) / "stage1.ckpt";
      fs::create_directories(path.parent_path());
      result.model.save(path);
      record(layout, "stage1", path);
      record(layout, "stage1_metrics", opts.metrics_path);
      if (!split.heldout.empty()) {
        pipeline::Models models{&frozen, &result.model, nullptr, *split.data.prior};
        const double iou = heldout_mask_iou(split.heldout, models, config);
        say("stage1: held-out mask IoU %s over %zu samples\n", num(iou).c_str(), split.heldout.size());
      }
      return 0;
    }

    auto load_stage1 = [&](bool needed) -> std::optional<denoiser::PredictorModel> {
      if (!needed) return std::nullopt;
      require_file(layout.stage1(), "stage-1 checkpoint", "train-stage1");
      return denoiser::PredictorModel::load(layout.stage1(), pipeline::unet_config(config),
                                            denoiser::Stage::stage1);
    };

    if (*s2_cmd) {
      auto split = load_split(layout, config);
      auto frozen = frozen_models();
      auto stage1 = load_stage1(config.mask_source == MaskSource::stage1);
      const auto before = frozen.hash();
      const auto cell = cell_name(config.mask_source, config.hrl_enabled);
      pipeline::TrainOptions opts;
      opts.metrics_path = layout.logs() / ("stage2_" + cell + "_metrics.tsv");
      auto result = pipeline::train_stage2(split.train, split.data.prior, frozen,
                                           stage1 ? &*stage1 : nullptr, config, opts);
      if (frozen.hash() != before) throw NumericalError("frozen models changed during stage-2 training");
      const auto path = out_dir.empty() ? layout.stage2(config.mask_source, config.hrl_enabled)
                                        : fs::path(out_dir) / layout.stage2(config.mask_source, config.hrl_enabled).filename();
      fs::create_directories(path.parent_path());
      result.model.save(path);
      record(layout, "stage2_" + cell, path);
      record(layout, "stage2_" + cell + "_metrics", opts.metrics_path);
      say("stage2 (%s): final loss %s over %zu iterations\n", cell.c_str(),
                  result.log.empty() ? "n/a" : num(result.log.back().total).c_str(), result.log.size());
      return 0;
    }

    auto load_stage2 = [&](MaskSource source, bool hrl) {
      require_file(layout.stage2(source, hrl), "stage-2 checkpoint for " + cell_name(source, hrl),
                   "train-stage2 --mask-source " + std::string(mask_source_name(source)) +
                       " --hrl " + (hrl ? "on" : "off"));
      return denoiser::PredictorModel::load(layout.stage2(source, hrl), pipeline::unet_config(config),
                                            denoiser::Stage::stage2);
    };

    if (*infer_cmd) {
      auto split = load_split(layout, config);
      auto frozen = frozen_models();
      auto stage1 = load_stage1(config.mask_source == MaskSource::stage1);
      auto stage2 = load_stage2(config.mask_source, config.hrl_enabled);
      pipeline::Models models{&frozen, stage1 ? &*stage1 : nullptr, &stage2, *split.data.prior};
      const auto dir = out_or(layout.work / "infer" / cell_name(config.mask_source, config.hrl_enabled));
      std::vector<std::size_t> indices;
      if (all_samples) {
        for (std::size_t i = 0; i < split.heldout.size(); ++i) indices.push_back(i);
      } else {
        if (sample_index < 0 || static_cast<std::size_t>(sample_index) >= split.heldout.size()) {
          throw ValidationError("--sample out of range for the held-out split");
        }
        indices.push_back(static_cast<std::size_t>(sample_index));
      }
      for (auto i : indices) {
        const auto& s = split.heldout[i];
        pipeline::InferRequest req{s.video[0], s.prompt, config.seed + 1000003 * (i + 1),
                                   s.union_mask().values[0]};
        auto result = pipeline::infer(req, models, config, config.mask_source);
        char id[32];
        std::snprintf(id, sizeof id, "heldout_%03zu", i);
        write_video_dir(dir / id, result.video, result.mask);
        say("%s prompt=\"%s\" frames=%lld video_hash=%s%s\n", id, s.prompt.c_str(),
                    static_cast<long long>(result.video.size(0)),
                    io::hex(io::hash_tensors({result.video})).c_str(),
                    result.fell_back_to_prior ? " (stage-1 mask empty, used prior)" : "");
      }
      return 0;
    }

    if (*eval_cmd) {
      auto split = load_split(layout, config);
      auto frozen = frozen_models();
      eval::EvalReport report;
      std::string label;
      if (oracle || !gen_dir.empty()) {
        label = oracle ? "oracle" : "gen-dir";
        report.header["config_hash"] = io::hex(config.hash());
        report.header["source"] = oracle ? "ground truth" : gen_dir;
        for (std::size_t i = 0; i < split.heldout.size(); ++i) {
          const auto& s = split.heldout[i];
          char id[32];
          std::snprintf(id, sizeof id, "heldout_%03zu", i);
          auto gt = s.video.slice(0, 1);
          auto gen = oracle ? gt : read_video_dir(fs::path(gen_dir) / id, gt.size(0));
          auto union_mask = s.union_mask();
          report.samples.push_back(eval::evaluate_sample(
              id, gen, gt, union_mask.values[0], union_mask.with_frames(gt.size(0)), frozen.detector));
        }
      } else {
        auto stage1 = load_stage1(config.mask_source == MaskSource::stage1);
        auto stage2 = load_stage2(config.mask_source, config.hrl_enabled);
        pipeline::Models models{&frozen, stage1 ? &*stage1 : nullptr, &stage2, *split.data.prior};
        label = cell_name(config.mask_source, config.hrl_enabled);
        report = evaluate_cell(split.heldout, models, config, config.mask_source, config.hrl_enabled);
      }
      const auto path = out_or(layout.work / "reports") / ("report_" + label + ".txt");
      report.write(path);
      record(layout, "report_" + label, path);
      print_summary(label, report.aggregate(), scope);
      return 0;
    }

    if (*ablate_cmd) {
      auto split = load_split(layout, config);
      auto frozen = frozen_models();
      auto stage1 = load_stage1(true);
      const auto dir = out_or(layout.work / "reports");
      fs::create_directories(dir);
      std::ofstream table(dir / "ablation.tsv");
      table << "mask_source\thrl\ths_err\tdetected_hand_rate\tmask_iou\tconsistency\tmse_full\t"
               "psnr_full\tmse_ma\tpsnr_ma\tmse_off_ma\n";
      for (auto source : all_mask_sources()) {
        for (bool hrl : {false, true}) {
          auto cell_cfg = config;
          cell_cfg.mask_source = source;
          cell_cfg.hrl_enabled = hrl;
          const auto cell = cell_name(source, hrl);
          pipeline::TrainOptions opts;
          opts.metrics_path = layout.logs() / ("stage2_" + cell + "_metrics.tsv");
          auto result = pipeline::train_stage2(split.train, split.data.prior, frozen, &*stage1,
                                               cell_cfg, opts);
          result.model.save(layout.stage2(source, hrl));
          pipeline::Models models{&frozen, &*stage1, &result.model, *split.data.prior};
          auto report = evaluate_cell(split.heldout, models, cell_cfg, source, hrl);
          report.write(dir / ("report_" + cell + ".txt"));
          auto agg = report.aggregate();
          auto get = [&](const char* k) { return agg.count(k) ? num(agg.at(k)) : std::string("n/a"); };
          table << mask_source_name(source) << '\t' << (hrl ? "on" : "off") << '\t' << get("hs_err")
                << '\t' << get("detected_hand_rate") << '\t' << get("mask_iou") << '\t'
                << get("consistency") << '\t' << get("mse_full") << '\t' << get("psnr_full") << '\t'
                << get("mse_ma") << '\t' << get("psnr_ma") << '\t' << get("mse_off_ma") << '\n';
          table.flush();
          print_summary(cell, agg, scope);
        }
      }
      record(layout, "ablation", dir / "ablation.tsv");
      return 0;
    }

    if (*viz_cmd) {
      torch::Tensor video;
      std::string id;
      if (!gen_dir.empty()) {
        video = read_video_dir(gen_dir, config.frames);
        id = fs::path(gen_dir).filename().string();
      } else {
        auto split = load_split(layout, config);
        if (sample_index < 0 || static_cast<std::size_t>(sample_index) >= split.heldout.size()) {
          throw ValidationError("--sample out of range for the held-out split");
        }
        video = split.heldout[sample_index].video.slice(0, 1);
        char buf[32];
        std::snprintf(buf, sizeof buf, "heldout_%03d", sample_index);
        id = buf;
      }
      auto flow = eval::motion_flow(video);
      const auto dir = out_or(layout.work / "viz" / id);
      fs::create_directories(dir);
      char name[32];
      for (std::int64_t p = 0; p < flow.pairs.size(0); ++p) {
        std::snprintf(name, sizeof name, "flow_%02lld.ppm", static_cast<long long>(p));
        io::write_image(dir / name, io::to_image(eval::colorize(flow.pairs[p])));
      }
      io::write_image(dir / "flow_aggregate.ppm", io::to_image(eval::colorize(flow.aggregate)));
      say("wrote %lld motion-flow maps to %s\n", static_cast<long long>(flow.pairs.size(0) + 1),
                  dir.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace handvid::cli
