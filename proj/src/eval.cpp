#include "handvid/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "handvid/error.hpp"
#include "handvid/losses.hpp"

namespace handvid::eval {

namespace fs = std::filesystem;

HandStructure hs_err(const pose::KeypointSequence& gen, const pose::KeypointSequence& gt) {
  HandStructure out;
  out.hs_err = losses::hand_refinement_loss(gen, gt).item<double>();
  auto gt_vis = gt.visibility > 0.5;
  const double gt_count = gt_vis.sum().item<double>();
  const double both = (gt_vis & (gen.visibility > 0.5)).sum().item<double>();
  out.detected_hand_rate = gt_count == 0 ? 1.0 : both / gt_count;
  return out;
}

HandStructure hs_err(const torch::Tensor& gen_video, const torch::Tensor& gt_video,
                     const pose::DetectorModel& detector) {
  require(gen_video.sizes() == gt_video.sizes(), "hs_err: videos differ in shape");
  torch::NoGradGuard no_grad;
  return hs_err(detector.detect(gen_video), detector.detect(gt_video));
}

double mask_iou(const motion::MaskVideo& pred, const motion::MaskVideo& gt) {
  require(pred.binary && gt.binary, "mask_iou: masks must be binary");
  if (pred.values.sizes() != gt.values.sizes()) throw ValidationError("mask_iou: mask shapes differ");
  return 1.0 - losses::miou_loss(pred.values.to(torch::kFloat64), gt.values.to(torch::kFloat64))
                   .item<double>();
}

double consistency(const torch::Tensor& features) {
  require(features.dim() == 2, "consistency: expects (F, D) features");
  if (features.size(0) < 2) throw ValidationError("consistency: needs at least two frames");
  auto f = features.to(torch::kFloat64);
  auto a = f.slice(0, 0, -1), b = f.slice(0, 1);
  auto na = a.norm(2, 1), nb = b.norm(2, 1);
  auto dot = (a * b).sum(1);
  auto both_zero = (na == 0) & (nb == 0);
  auto one_zero = (na == 0) ^ (nb == 0);
  auto denom = torch::where(na * nb > 0, na * nb, torch::ones_like(na));
  auto cos = torch::where(both_zero, torch::ones_like(dot),
                          torch::where(one_zero, torch::zeros_like(dot), dot / denom));
  return cos.mean().item<double>();
}

double consistency(const torch::Tensor& video, const pose::DetectorModel& detector) {
  torch::NoGradGuard no_grad;
  return consistency(detector.features(video));
}

std::string_view scope_name(Scope scope) { return scope == Scope::full ? "full" : "ma"; }

Scope parse_scope(std::string_view name) {
  if (name == "full") return Scope::full;
  if (name == "ma") return Scope::ma;
  throw ValidationError("unknown scope '" + std::string(name) + "' (expected full or ma)");
}

namespace {

PixelMetrics from_mse(double mse) {
  PixelMetrics m;
  m.mse = mse;
  m.exact = mse == 0.0;
  m.psnr = m.exact ? kPsnrCap : 10.0 * std::log10(1.0 / mse);
  return m;
}

// Squared error summed over selected pixels and the number of selected values.
std::pair<double, double> masked_error(const torch::Tensor& gen, const torch::Tensor& gt,
                                       const torch::Tensor& weight) {
  auto diff2 = (gen.to(torch::kFloat64) - gt.to(torch::kFloat64)).pow(2);
  auto w = weight.to(torch::kFloat64).expand_as(diff2);
  return {(diff2 * w).sum().item<double>(), w.sum().item<double>()};
}

void check_pair(const torch::Tensor& gen, const torch::Tensor& gt, const torch::Tensor& mask) {
  require(gen.sizes() == gt.sizes(), "pixel metrics: videos differ in shape");
  require(gen.dim() >= 3, "pixel metrics: expects (..., C, H, W)");
  require(mask.dim() == 2 && mask.size(0) == gen.size(-2) && mask.size(1) == gen.size(-1),
          "pixel metrics: union mask must be (H, W) at video resolution");
}

}  // namespace

PixelMetrics scoped_pixel_metrics(const torch::Tensor& gen, const torch::Tensor& gt, Scope scope,
                                  const torch::Tensor& union_mask) {
  if (scope == Scope::full) {
    require(gen.sizes() == gt.sizes(), "pixel metrics: videos differ in shape");
    auto mse = (gen.to(torch::kFloat64) - gt.to(torch::kFloat64)).pow(2).mean().item<double>();
    return from_mse(mse);
  }
  check_pair(gen, gt, union_mask);
  auto [sum, count] = masked_error(gen, gt, union_mask > 0.5);
  if (count == 0) throw ValidationError("scoped_pixel_metrics: motion-area scope is empty");
  return from_mse(sum / count);
}

double mse_off_ma(const torch::Tensor& gen, const torch::Tensor& gt, const torch::Tensor& union_mask) {
  check_pair(gen, gt, union_mask);
  auto [sum, count] = masked_error(gen, gt, union_mask <= 0.5);
  return count == 0 ? 0.0 : sum / count;
}

MotionFlow motion_flow(const torch::Tensor& video, int blur_radius) {
  require(video.dim() == 4, "motion_flow: expects (F, C, H, W)");
  if (video.size(0) < 2) throw ValidationError("motion_flow: needs at least two frames");
  require(blur_radius >= 0, "motion_flow: blur radius must be >= 0");
  auto v = video.to(torch::kFloat64);
  auto diff = (v.slice(0, 1) - v.slice(0, 0, -1)).abs().mean(1);  // (F-1, H, W)
  if (blur_radius > 0) {
    const int k = 2 * blur_radius + 1;
    diff = torch::avg_pool2d(diff.unsqueeze(1), k, 1, blur_radius, false, false).squeeze(1);
  }
  const double peak = diff.max().item<double>();
  if (peak > 0) diff = diff / peak;
  return {diff, std::get<0>(diff.max(0))};
}

torch::Tensor colorize(const torch::Tensor& heat) {
  require(heat.dim() == 2, "colorize: expects (H, W)");
  auto h = heat.to(torch::kFloat32).clamp(0.0, 1.0);
  return torch::stack({(3 * h).clamp(0.0, 1.0), (3 * h - 1).clamp(0.0, 1.0),
                       (3 * h - 2).clamp(0.0, 1.0)});
}

SampleMetrics evaluate_sample(const std::string& id, const torch::Tensor& gen,
                              const torch::Tensor& gt, const torch::Tensor& union_mask,
                              const std::optional<motion::MaskVideo>& pred_mask,
                              const pose::DetectorModel& detector) {
  SampleMetrics m;
  m.id = id;
  auto hs = hs_err(gen, gt, detector);
  m.hs_err = hs.hs_err;
  m.detected_hand_rate = hs.detected_hand_rate;
  if (pred_mask) {
    motion::MaskVideo gt_mask{union_mask.to(torch::kFloat32).unsqueeze(0), true,
                              motion::MaskKind::union_all};
    m.mask_iou = mask_iou(*pred_mask, gt_mask.with_frames(pred_mask->frames()));
  }
  m.consistency = consistency(gen, detector);
  m.full = scoped_pixel_metrics(gen, gt, Scope::full, union_mask);
  m.ma = scoped_pixel_metrics(gen, gt, Scope::ma, union_mask);
  m.mse_off_ma = mse_off_ma(gen, gt, union_mask);
  return m;
}

const std::vector<std::string>& reserved_metric_fields() {
  static const std::vector<std::string> fields{"fid", "fvd", "clip_text", "clip_image",
                                               "blip", "egovlp"};
  return fields;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void metric_lines(std::ostringstream& out, const SampleMetrics& m) {
  out << "hs_err = " << num(m.hs_err) << '\n';
  out << "detected_hand_rate = " << num(m.detected_hand_rate) << '\n';
  out << "mask_iou = " << (m.mask_iou ? num(*m.mask_iou) : "n/a") << '\n';
  out << "consistency = " << num(m.consistency) << '\n';
  out << "mse_full = " << num(m.full.mse) << '\n';
  out << "psnr_full = " << num(m.full.psnr) << (m.full.exact ? " exact" : "") << '\n';
  out << "mse_ma = " << num(m.ma.mse) << '\n';
  out << "psnr_ma = " << num(m.ma.psnr) << (m.ma.exact ? " exact" : "") << '\n';
  out << "mse_off_ma = " << num(m.mse_off_ma) << '\n';
}

}  // namespace

std::map<std::string, double> EvalReport::aggregate() const {
  std::map<std::string, double> agg;
  if (samples.empty()) return agg;
  const double n = static_cast<double>(samples.size());
  double iou_sum = 0, iou_n = 0;
  for (const auto& s : samples) {
    agg["hs_err"] += s.hs_err / n;
    agg["detected_hand_rate"] += s.detected_hand_rate / n;
    agg["consistency"] += s.consistency / n;
    agg["mse_full"] += s.full.mse / n;
    agg["psnr_full"] += s.full.psnr / n;
    agg["mse_ma"] += s.ma.mse / n;
    agg["psnr_ma"] += s.ma.psnr / n;
    agg["mse_off_ma"] += s.mse_off_ma / n;
    if (s.mask_iou) {
      iou_sum += *s.mask_iou;
      iou_n += 1;
    }
  }
  if (iou_n > 0) agg["mask_iou"] = iou_sum / iou_n;
  return agg;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "[header]\n";
  for (const auto& [k, v] : header) out << k << " = " << v << '\n';
  out << "samples = " << samples.size() << '\n';
  for (const auto& s : samples) {
    out << "\n[sample " << s.id << "]\n";
    metric_lines(out, s);
  }
  out << "\n[aggregate]\n";
  for (const auto& [k, v] : aggregate()) out << k << " = " << num(v) << '\n';
  for (const auto& f : reserved_metric_fields()) out << f << " = n/a\n";
  return out.str();
}

void EvalReport::write(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << to_text();
  std::ofstream meta(path.string() + ".meta");
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  meta << "generated_at = " << stamp << '\n';
}

}  // namespace handvid::eval
