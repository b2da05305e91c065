#include "handvid/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "handvid/error.hpp"
#include "handvid/io.hpp"

namespace handvid::synth {

namespace fs = std::filesystem;

namespace {

std::string frame_name(const char* stem, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02d.%s", stem, index, ext);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) fields.push_back(field);
  return fields;
}

}  // namespace

void write_mask_image(const fs::path& path, const torch::Tensor& hw) {
  io::write_image(path, io::to_image(hw));
}

void write_keypoints(const fs::path& path, const pose::KeypointSequence& keypoints) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  auto coords = keypoints.coords.detach().to(torch::kFloat64).contiguous();
  auto vis = keypoints.visibility.detach().to(torch::kFloat64).contiguous();
  auto c = coords.accessor<double, 3>();
  auto v = vis.accessor<double, 2>();
  out << "# frame hand joint x y visibility\n";
  char buf[128];
  for (std::int64_t f = 0; f < keypoints.frames(); ++f) {
    for (std::int64_t j = 0; j < keypoints.joints(); ++j) {
      std::snprintf(buf, sizeof buf, "%lld %lld %lld %.6f %.6f %d\n", static_cast<long long>(f),
                    static_cast<long long>(j / pose::kJointsPerHand),
                    static_cast<long long>(j % pose::kJointsPerHand), c[f][j][0], c[f][j][1],
                    v[f][j] > 0.5 ? 1 : 0);
      out << buf;
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

pose::KeypointSequence read_keypoints(const fs::path& path, int frames, int joints) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto seq = pose::KeypointSequence::zeros(frames, joints);
  auto c = seq.coords.accessor<double, 3>();
  auto v = seq.visibility.accessor<double, 2>();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    long long f = 0, hand = 0, joint = 0;
    std::string xs, ys;
    int vis = 0;
    if (!(fields >> f >> hand >> joint >> xs >> ys >> vis)) {
      throw IoError("malformed keypoint record in " + path.string() + ": " + line);
    }
    const long long idx = hand * pose::kJointsPerHand + joint;
    if (f < 0 || f >= frames || idx < 0 || idx >= joints) {
      throw IoError("keypoint record out of range in " + path.string() + ": " + line);
    }
    c[f][idx][0] = std::strtod(xs.c_str(), nullptr);
    c[f][idx][1] = std::strtod(ys.c_str(), nullptr);
    v[f][idx] = vis ? 1.0 : 0.0;
  }
  return seq;
}

Manifest write_manifest(std::span<const SynthSample> samples, const fs::path& root,
                        const std::optional<motion::MaskVideo>& prior) {
  if (samples.empty()) throw ValidationError("write_manifest: sample list is empty");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create dataset directory " + root.string() + ": " + ec.message());

  Manifest manifest;
  manifest.root = root;
  manifest.frames = samples[0].spec.frames;
  manifest.height = samples[0].spec.height;
  manifest.width = samples[0].spec.width;

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    require(s.spec.frames == manifest.frames && s.spec.height == manifest.height &&
                s.spec.width == manifest.width,
            "write_manifest: all samples must share frame count and resolution");
    char id[24];
    std::snprintf(id, sizeof id, "%06zu", i);
    ManifestEntry entry{id, "samples/" + std::string(id), s.spec.action, s.spec.seed,
                        s.spec.n_hands, s.spec.clutter_level, s.prompt};
    const fs::path dir = root / entry.dir;
    for (int f = 0; f < manifest.frames; ++f) {
      io::write_image(dir / frame_name("frame", f, "ppm"), io::to_image(s.video[f]));
      write_mask_image(dir / frame_name("mask", f, "pgm"), s.frame_masks.values[f]);
    }
    write_keypoints(dir / "keypoints.txt", s.keypoints);
    manifest.entries.push_back(std::move(entry));
  }

  if (prior) {
    write_mask_image(root / kPriorMaskFile, prior->values[0]);
    manifest.prior_mask_file = kPriorMaskFile;
  }

  std::ofstream out(root / kManifestFile);
  if (!out) throw IoError("cannot write manifest in " + root.string());
  out << "# handvid dataset manifest\n"
      << "version\t1\n"
      << "frames\t" << manifest.frames << "\n"
      << "height\t" << manifest.height << "\n"
      << "width\t" << manifest.width << "\n"
      << "prior_mask\t" << (manifest.prior_mask_file.empty() ? "-" : manifest.prior_mask_file) << "\n"
      << "columns\tid\tdir\taction\tseed\thands\tclutter\tprompt\n";
  for (const auto& e : manifest.entries) {
    out << "sample\t" << e.id << '\t' << e.dir << '\t' << action_name(e.action) << '\t' << e.seed
        << '\t' << e.n_hands << '\t' << e.clutter_level << '\t' << e.prompt << "\n";
  }
  if (!out) throw IoError("write failed for manifest in " + root.string());
  return manifest;
}

Manifest read_manifest(const fs::path& root) {
  std::ifstream in(root / kManifestFile);
  if (!in) {
    throw IoError("no dataset manifest at " + (root / kManifestFile).string() +
                  " (run `handvid synth` first)");
  }
  Manifest manifest;
  manifest.root = root;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    const auto& key = fields[0];
    auto need = [&](std::size_t n) {
      if (fields.size() < n) throw IoError("malformed manifest line: " + line);
    };
    if (key == "version") {
      need(2);
      if (fields[1] != "1") throw IoError("unsupported manifest version " + fields[1]);
    } else if (key == "frames") {
      need(2);
      manifest.frames = std::stoi(fields[1]);
    } else if (key == "height") {
      need(2);
      manifest.height = std::stoi(fields[1]);
    } else if (key == "width") {
      need(2);
      manifest.width = std::stoi(fields[1]);
    } else if (key == "prior_mask") {
      need(2);
      manifest.prior_mask_file = fields[1] == "-" ? "" : fields[1];
    } else if (key == "sample") {
      need(8);
      ManifestEntry e;
      e.id = fields[1];
      e.dir = fields[2];
      e.action = parse_action(fields[3]);
      e.seed = std::stoull(fields[4]);
      e.n_hands = std::stoi(fields[5]);
      e.clutter_level = std::stoi(fields[6]);
      e.prompt = fields[7];
      manifest.entries.push_back(std::move(e));
    }
  }
  if (manifest.frames < 2 || manifest.height <= 0 || manifest.width <= 0) {
    throw IoError("manifest header incomplete in " + root.string());
  }
  return manifest;
}

SynthSample load_sample(const Manifest& manifest, std::size_t index) {
  require(index < manifest.entries.size(), "load_sample: index out of range");
  const auto& e = manifest.entries[index];
  const fs::path dir = manifest.root / e.dir;
  SynthSample s;
  s.spec = {e.seed, manifest.frames, manifest.height, manifest.width, e.action, e.n_hands, e.clutter_level};
  s.prompt = e.prompt;
  std::vector<torch::Tensor> frames, masks;
  for (int f = 0; f < manifest.frames; ++f) {
    frames.push_back(io::from_image(io::read_image(dir / frame_name("frame", f, "ppm"))));
    masks.push_back(io::from_image(io::read_image(dir / frame_name("mask", f, "pgm"))));
  }
  s.video = torch::stack(frames);
  s.frame_masks = {torch::stack(masks), true, motion::MaskKind::per_frame};
  s.keypoints = read_keypoints(dir / "keypoints.txt", manifest.frames, pose::kDefaultJoints);
  return s;
}

motion::MaskVideo read_prior(const Manifest& manifest) {
  if (manifest.prior_mask_file.empty()) {
    throw IoError("dataset at " + manifest.root.string() +
                  " has no prior mask (rebuild it with `handvid synth`)");
  }
  auto values = io::from_image(io::read_image(manifest.root / manifest.prior_mask_file));
  return {values.unsqueeze(0), false, motion::MaskKind::prior};
}

Dataset load_dataset(const fs::path& root) {
  Dataset data;
  data.manifest = read_manifest(root);
  for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
    data.samples.push_back(load_sample(data.manifest, i));
  }
  if (!data.manifest.prior_mask_file.empty()) data.prior = read_prior(data.manifest);
  return data;
}

std::vector<SceneSpec> dataset_specs(const DatasetOptions& options) {
  require(options.count > 0, "dataset_specs: count must be positive");
  Rng rng(options.seed);
  const auto& actions = all_actions();
  std::vector<SceneSpec> specs;
  for (int i = 0; i < options.count; ++i) {
    SceneSpec spec;
    spec.seed = rng.next();
    spec.frames = options.frames;
    spec.height = options.height;
    spec.width = options.width;
    spec.action = actions[static_cast<std::size_t>(i) % actions.size()];
    spec.n_hands = rng.uniform() < options.two_hand_fraction ? 2 : 1;
    spec.clutter_level = rng.integer(options.min_clutter, options.max_clutter);
    specs.push_back(spec);
  }
  return specs;
}

std::vector<SynthSample> generate_samples(std::span<const SceneSpec> specs) {
  std::vector<SynthSample> samples;
  samples.reserve(specs.size());
  for (const auto& spec : specs) samples.push_back(generate_sample(spec));
  return samples;
}

motion::MaskVideo dataset_prior(std::span<const SynthSample> samples) {
  std::vector<motion::MaskVideo> unions;
  unions.reserve(samples.size());
  for (const auto& s : samples) unions.push_back(s.union_mask());
  return motion::prior_mask(unions);
}

Dataset build_dataset(const fs::path& root, const DatasetOptions& options) {
  const auto specs = dataset_specs(options);
  Dataset data;
  data.samples = generate_samples(specs);
  // Quantize the prior through its 8-bit file form so in-memory and reloaded
  // datasets condition on identical values.
  require(options.prior_samples >= 0 && options.prior_samples <= options.count,
          "build_dataset: prior_samples must lie in [0, count]");
  const auto n_prior = options.prior_samples == 0 ? data.samples.size()
                                                  : static_cast<std::size_t>(options.prior_samples);
  auto prior = dataset_prior(std::span<const SynthSample>(data.samples).first(n_prior));
  prior.values = io::from_image(io::to_image(prior.values[0])).unsqueeze(0);
  data.prior = prior;
  data.manifest = write_manifest(data.samples, root, data.prior);
  return data;
}

}  // namespace handvid::synth
