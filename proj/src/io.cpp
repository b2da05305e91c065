#include "handvid/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "handvid/error.hpp"

namespace handvid::io {

namespace fs = std::filesystem;

namespace {

void skip_header_space(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

int read_header_int(std::istream& in, const fs::path& path) {
  skip_header_space(in);
  int value = -1;
  in >> value;
  if (!in || value < 0) throw IoError("malformed netpbm header in " + path.string());
  return value;
}

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const fs::path& path) {
  auto n = get<std::uint32_t>(in, path);
  if (n > (1u << 30)) throw IoError("corrupt string length in " + path.string());
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return s;
}

std::uint8_t dtype_code(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    case torch::kUInt8: return 4;
    case torch::kInt32: return 5;
    case torch::kBool: return 6;
    default: throw ValidationError("checkpoint: unsupported tensor dtype");
  }
}

torch::Dtype dtype_from_code(std::uint8_t code, const fs::path& path) {
  switch (code) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    case 4: return torch::kUInt8;
    case 5: return torch::kInt32;
    case 6: return torch::kBool;
    default: throw IoError("checkpoint: unknown dtype code in " + path.string());
  }
}

constexpr char kMagic[4] = {'H', 'V', 'C', 'K'};

}  // namespace

void write_image(const fs::path& path, const Image8& image) {
  require(image.channels == 1 || image.channels == 3, "write_image: channels must be 1 or 3");
  require(image.pixels.size() ==
              static_cast<std::size_t>(image.height) * image.width * image.channels,
          "write_image: pixel buffer size mismatch");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (image.channels == 1 ? "P5" : "P6") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Image8 read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  Image8 image;
  if (magic == "P5") {
    image.channels = 1;
  } else if (magic == "P6") {
    image.channels = 3;
  } else {
    throw IoError("not a binary netpbm file: " + path.string());
  }
  image.width = read_header_int(in, path);
  image.height = read_header_int(in, path);
  int maxval = read_header_int(in, path);
  if (maxval != 255) throw IoError("only 8-bit netpbm supported: " + path.string());
  in.get();  // single whitespace before raster
  image.pixels.resize(static_cast<std::size_t>(image.width) * image.height * image.channels);
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (!in) throw IoError("truncated raster in " + path.string());
  return image;
}

float quantize_unit(double value) {
  const double clamped = std::clamp(value, 0.0, 1.0);
  return level_value(static_cast<int>(std::lround(clamped * 255.0)));
}

Image8 to_image(const torch::Tensor& chw) {
  auto t = chw.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  require(t.dim() == 2 || (t.dim() == 3 && t.size(0) == 3),
          "to_image: expected (H,W) or (3,H,W) tensor");
  Image8 image;
  image.channels = t.dim() == 2 ? 1 : 3;
  image.height = static_cast<int>(t.size(-2));
  image.width = static_cast<int>(t.size(-1));
  image.pixels.resize(static_cast<std::size_t>(image.height) * image.width * image.channels);
  auto hwc = image.channels == 1 ? t : t.permute({1, 2, 0}).contiguous();
  const double* src = hwc.data_ptr<double>();
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    image.pixels[i] =
        static_cast<std::uint8_t>(std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0));
  }
  return image;
}

torch::Tensor from_image(const Image8& image) {
  auto out = torch::empty({image.height, image.width, image.channels}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (std::size_t i = 0; i < image.pixels.size(); ++i) dst[i] = level_value(image.pixels[i]);
  if (image.channels == 1) return out.squeeze(-1);
  return out.permute({2, 0, 1}).contiguous();
}

const torch::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ValidationError("checkpoint of kind '" + kind + "' has no tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [&](const auto& entry) { return entry.first == name; });
}

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, checkpoint.kind);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.descriptor.size()));
  for (const auto& [key, value] : checkpoint.descriptor) {
    put_string(out, key);
    put_string(out, value);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    put_string(out, name);
    put<std::uint8_t>(out, dtype_code(t.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    out.write(static_cast<const char*>(t.data_ptr()),
              static_cast<std::streamsize>(t.numel() * t.element_size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " +
                  path.string());
  }
  Checkpoint checkpoint;
  checkpoint.kind = get_string(in, path);
  auto n_desc = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_desc; ++i) {
    auto key = get_string(in, path);
    checkpoint.descriptor[key] = get_string(in, path);
  }
  auto n_tensors = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = get_string(in, path);
    auto dtype = dtype_from_code(get<std::uint8_t>(in, path), path);
    auto ndim = get<std::uint32_t>(in, path);
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = get<std::int64_t>(in, path);
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    in.read(static_cast<char*>(t.data_ptr()),
            static_cast<std::streamsize>(t.numel() * t.element_size()));
    if (!in) throw IoError("truncated tensor '" + name + "' in " + path.string());
    checkpoint.tensors.emplace_back(std::move(name), std::move(t));
  }
  return checkpoint;
}

void require_descriptor(const Checkpoint& checkpoint, const std::string& kind,
                        const std::map<std::string, std::string>& expected) {
  if (checkpoint.kind != kind) {
    throw ValidationError("checkpoint kind mismatch: expected '" + kind + "', found '" +
                          checkpoint.kind + "'");
  }
  for (const auto& [key, value] : expected) {
    auto it = checkpoint.descriptor.find(key);
    const std::string found = it == checkpoint.descriptor.end() ? "<missing>" : it->second;
    if (found != value) {
      throw ValidationError("checkpoint descriptor mismatch for '" + key + "': expected " +
                            value + ", found " + found);
    }
  }
}

std::vector<std::pair<std::string, torch::Tensor>> module_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

void load_module_state(torch::nn::Module& module, const Checkpoint& checkpoint,
                       const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& name, torch::Tensor& dst) {
    const auto& src = checkpoint.tensor(prefix + name);
    if (src.sizes() != dst.sizes()) {
      throw ValidationError("checkpoint tensor '" + name + "' has incompatible shape");
    }
    dst.copy_(src);
  };
  for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_string(const std::string& text) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::uint64_t hash_tensors(const std::vector<torch::Tensor>& tensors) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& tensor : tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    h = fnv1a({static_cast<const std::uint8_t*>(t.data_ptr()),
               static_cast<std::size_t>(t.numel() * t.element_size())},
              h);
  }
  return h;
}

std::uint64_t hash_module(const torch::nn::Module& module) {
  std::vector<torch::Tensor> tensors;
  for (const auto& [name, t] : module_state(module)) tensors.push_back(t);
  return hash_tensors(tensors);
}

std::uint64_t hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hash_string(bytes);
}

std::string hex(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << value;
  return out.str();
}

torch::Tensor bytes_to_tensor(const std::string& bytes) {
  auto t = torch::empty({static_cast<std::int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(t.data_ptr(), bytes.data(), bytes.size());
  return t;
}

std::string tensor_to_bytes(const torch::Tensor& tensor) {
  auto t = tensor.to(torch::kCPU, torch::kUInt8).contiguous();
  return std::string(static_cast<const char*>(t.data_ptr()), static_cast<std::size_t>(t.numel()));
}

}  // namespace handvid::io
