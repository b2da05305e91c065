// Quality gates for the frozen detector and codec trained in the shared
// acceptance work dir (HANDVID_BASE_DIR).
#include "doctest_torch.hpp"

#include <cstdlib>

#include "cli.hpp"
#include "handvid/codec.hpp"
#include "handvid/config.hpp"

namespace {

using namespace handvid;

cli::Layout base_layout() {
  const char* dir = std::getenv("HANDVID_BASE_DIR");
  REQUIRE_MESSAGE(dir != nullptr, "HANDVID_BASE_DIR must point at a prepared work dir");
  return cli::Layout{dir};
}

}  // namespace

TEST_CASE("trained detector localizes held-out joints and rejects blank frames") {
  const auto layout = base_layout();
  const auto config = load_config(layout.work / "config.txt");
  auto split = cli::load_split(layout, config);
  const auto frozen = cli::load_frozen(layout, config);
  REQUIRE(frozen.detector.trained());

  const double err = pose::mean_joint_error(frozen.detector, split.heldout);
  MESSAGE("held-out mean joint error " << err);
  CHECK(err < 0.05);

  torch::NoGradGuard no_grad;
  auto blank = torch::zeros({config.frames, 3, config.height, config.width});
  auto out = frozen.detector.run(blank);
  auto keypoints = frozen.detector.detect(blank);
  CHECK(out.logits.max().item<double>() < 0);
  CHECK(keypoints.visibility.sum().item<double>() == 0);
  CHECK(keypoints.coords.abs().sum().item<double>() == 0);
}

TEST_CASE("trained codec reconstructs held-out frames above 30 dB") {
  const auto layout = base_layout();
  const auto config = load_config(layout.work / "config.txt");
  auto split = cli::load_split(layout, config);
  const auto frozen = cli::load_frozen(layout, config);
  REQUIRE(frozen.codec.trained());

  const double psnr = codec::reconstruction_psnr(frozen.codec, split.heldout);
  MESSAGE("held-out reconstruction PSNR " << psnr << " dB");
  CHECK(psnr > 30.0);
}
