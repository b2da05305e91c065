#include "doctest_torch.hpp"

#include "handvid/codec.hpp"
#include "handvid/error.hpp"
#include "handvid/text_embedder.hpp"
#include "handvid/unet.hpp"
#include "helpers.hpp"

using namespace handvid;
using namespace handvid::denoiser;

namespace {

UNetConfig tiny_unet() {
  UNetConfig c;
  c.latent_channels = 2;
  c.text_dim = 8;
  c.base_channels = 8;
  c.mid_channels = 8;
  c.time_dim = 8;
  return c;
}

struct Inputs {
  torch::Tensor z;
  torch::Tensor steps;
  text::TextBatch text;
};

Inputs random_inputs(const UNetConfig& c, torch::Dtype dtype, std::int64_t batch = 1,
                     std::int64_t frames = 3, std::int64_t hw = 4) {
  auto gen = at::detail::createCPUGenerator(11);
  Inputs in;
  in.z = torch::randn({batch, frames, c.latent_channels + 1, hw, hw}, gen, dtype);
  in.steps = torch::full({batch}, 17, torch::kInt64);
  auto tokens = torch::randn({batch, 3, c.text_dim}, gen, dtype);
  in.text = {tokens, torch::ones({batch, 3}, torch::kBool)};
  return in;
}

}  // namespace

TEST_CASE("text embedder is deterministic and separates prompts") {
  auto e = text::TextEmbedder::for_action_prompts(64, 0);
  auto a = e.embed("move the hand left");
  CHECK(torch::equal(a, e.embed("move the hand left")));
  CHECK(torch::equal(a, text::TextEmbedder::for_action_prompts(64, 0).embed("Move  the hand LEFT")));
  CHECK(a.sizes() == torch::IntArrayRef{4, 64});
  auto b = e.embed("move the hand right");
  auto cos = torch::cosine_similarity(a.flatten(), b.flatten(), 0).item<double>();
  CHECK(cos < 0.999);
  CHECK(e.parameter_hash() == text::TextEmbedder::for_action_prompts(64, 0).parameter_hash());
  CHECK(e.parameter_hash() != text::TextEmbedder::for_action_prompts(64, 1).parameter_hash());
}

TEST_CASE("text embedder rejects bad prompts") {
  auto e = text::TextEmbedder::for_action_prompts();
  CHECK_THROWS_AS(e.embed(""), ValidationError);
  CHECK_THROWS_AS(e.embed("   "), ValidationError);
  CHECK_THROWS_WITH_AS(e.embed("move the spoon left"), doctest::Contains("spoon"), ValidationError);
  CHECK_THROWS_AS(e.embed("move the hand left move the hand left again"), ValidationError);
}

TEST_CASE("text batches pad and flag validity") {
  auto e = text::TextEmbedder::for_action_prompts(16);
  auto batch = text::batch_text({e.embed("wave the hand"), e.embed("pinch the fingers")});
  CHECK(batch.tokens.sizes() == torch::IntArrayRef{2, 3, 16});
  CHECK(batch.valid.all().item<bool>());
  auto ragged = text::batch_text({e.embed("wave the hand"), e.embed("hold the hand still")});
  CHECK(ragged.tokens.size(1) == 4);
  CHECK_FALSE(ragged.valid[0][3].item<bool>());
  CHECK(ragged.tokens[0][3].abs().sum().item<double>() == 0);
}

TEST_CASE("codec shape contract") {
  codec::CodecConfig cc;
  cc.width = 16;
  codec::LatentCodec codec(cc, 1);
  auto one = torch::rand({1, 3, 32, 32});
  auto z = codec.encode(one);
  CHECK(z.sizes() == torch::IntArrayRef{1, 4, 8, 8});
  auto constant = torch::full({1, 3, 32, 32}, 0.3);
  CHECK(codec.encode(constant).sizes() == torch::IntArrayRef{1, 4, 8, 8});
  auto batch = torch::rand({2, 5, 3, 32, 32});
  CHECK(codec.encode(batch).sizes() == torch::IntArrayRef{2, 5, 4, 8, 8});
  auto decoded = codec.decode(codec.encode(batch));
  CHECK(decoded.sizes() == batch.sizes());
  CHECK(decoded.min().item<double>() >= 0);
  CHECK(decoded.max().item<double>() <= 1);
  CHECK_THROWS_AS(codec.encode(torch::rand({1, 3, 30, 32})), ValidationError);
  CHECK_THROWS_AS(codec.decode(torch::rand({1, 3, 8, 8})), ValidationError);
}

TEST_CASE("codec encodes frames independently") {
  codec::CodecConfig cc;
  cc.width = 16;
  codec::LatentCodec codec(cc, 1);
  auto video = torch::rand({3, 3, 16, 16});
  auto z = codec.encode(video);
  CHECK(torch::allclose(z[1], codec.encode(video.slice(0, 1, 2))[0], 1e-5, 1e-6));
}

TEST_CASE("codec checkpoint round-trips with normalization") {
  testing::TempDir dir("codec_ckpt");
  codec::CodecConfig cc;
  cc.width = 16;
  codec::LatentCodec codec(cc, 2);
  codec.set_normalization(torch::tensor({0.1f, 0.2f, 0.3f, 0.4f}), torch::tensor({1.f, 2.f, 3.f, 4.f}));
  codec.mark_trained();
  codec.save(dir.path() / "c.ckpt");
  auto loaded = codec::LatentCodec::load(dir.path() / "c.ckpt");
  CHECK(loaded.parameter_hash() == codec.parameter_hash());
  CHECK(loaded.trained());
  auto x = torch::rand({2, 3, 16, 16});
  CHECK(torch::equal(loaded.encode(x), codec.encode(x)));
  CHECK_THROWS_AS(codec.set_normalization(torch::zeros({4}), torch::zeros({4})), ValidationError);
}

TEST_CASE("mask <-> rgb helpers") {
  auto m = (torch::rand({2, 8, 8}) > 0.5).to(torch::kFloat32);
  auto rgb = codec::mask_to_rgb(m);
  CHECK(rgb.sizes() == torch::IntArrayRef{2, 3, 8, 8});
  CHECK(torch::equal(codec::rgb_to_soft_mask(rgb), m));
}

TEST_CASE("mask channel concatenation") {
  auto latent = torch::randn({3, 4, 8, 8});
  auto mask = (torch::rand({3, 8, 8}) > 0.5).to(torch::kFloat32);
  auto x = concat_mask_channel(latent, mask);
  CHECK(x.sizes() == torch::IntArrayRef{3, 5, 8, 8});
  CHECK(torch::equal(x.select(1, 4), mask));
  CHECK(torch::equal(x.slice(1, 0, 4), latent));

  auto full = concat_mask_channel(latent, motion::full_mask(3, 8, 8));
  CHECK(torch::equal(full.select(1, 4), torch::ones({3, 8, 8})));

  motion::MaskVideo prior{torch::rand({1, 8, 8}) * 0.9 + 0.05, false, motion::MaskKind::prior};
  auto soft = concat_mask_channel(latent, prior.with_frames(3));
  auto last = soft.select(1, 4);
  CHECK(((last > 0) & (last < 1)).any().item<bool>());

  auto batched = concat_mask_channel(torch::randn({2, 3, 4, 8, 8}), mask);
  CHECK(batched.sizes() == torch::IntArrayRef{2, 3, 5, 8, 8});
  CHECK_THROWS_AS(concat_mask_channel(latent, mask.slice(0, 0, 2)), ValidationError);
}

TEST_CASE("noise predictor shapes, determinism and validation") {
  auto c = tiny_unet();
  PredictorModel model(c, Stage::stage2, 3);
  auto in = random_inputs(c, torch::kFloat32, 2);
  torch::NoGradGuard no_grad;
  auto out = predict_noise(model, in.z, in.steps, in.text);
  CHECK(out.sizes() == torch::IntArrayRef{2, 3, 2, 4, 4});
  CHECK(torch::equal(out, predict_noise(model, in.z, in.steps, in.text)));
  PredictorModel same(c, Stage::stage2, 3);
  CHECK(same.parameter_hash() == model.parameter_hash());

  auto single = predict_noise(model, in.z[0], 17, in.text.tokens[0]);
  CHECK(single.sizes() == torch::IntArrayRef{3, 2, 4, 4});
  CHECK(torch::allclose(single, out[0], 1e-5, 1e-6));

  auto bad = in.z.clone();
  bad[0][0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(predict_noise(model, bad, in.steps, in.text), NumericalError);
  CHECK_THROWS_AS(predict_noise(model, in.z.slice(2, 0, 2), in.steps, in.text), ValidationError);
}

TEST_CASE("schedule-aware noise estimate mixes the latent with the network output") {
  auto c = tiny_unet();
  PredictorModel model(c, Stage::stage1, 6);
  auto in = random_inputs(c, torch::kFloat64, 2);
  model.to(torch::kFloat64);
  in.steps = torch::tensor({1, 999}, torch::kInt64);
  torch::NoGradGuard no_grad;
  auto raw = predict_noise(model, in.z, in.steps, in.text);
  auto latent = in.z.slice(2, 0, c.latent_channels);

  // Under the identity schedule z_t == z_0 and the estimate is the raw output.
  auto identity = diffusion::NoiseSchedule::identity(1000);
  CHECK(torch::allclose(predict_noise(model, in.z, in.steps, in.text, identity), raw, 0, 1e-15));

  auto schedule = diffusion::NoiseSchedule::linear(1e-4, 0.02, 1000);
  auto eps_hat = predict_noise(model, in.z, in.steps, in.text, schedule);
  auto z0 = diffusion::recover_z0(latent, in.steps, eps_hat, schedule);
  for (int i = 0; i < 2; ++i) {
    const double ab = schedule.alpha_bar(static_cast<int>(in.steps[i].item<std::int64_t>()));
    auto expected = std::sqrt(ab) * latent[i] - std::sqrt(1 - ab) * raw[i];
    CHECK(torch::allclose(z0[i], expected, 1e-9, 1e-9));
  }
}

TEST_CASE("noise predictor is sensitive to frame order and text") {
  auto c = tiny_unet();
  PredictorModel model(c, Stage::stage1, 4);
  auto in = random_inputs(c, torch::kFloat32);
  torch::NoGradGuard no_grad;
  auto base = predict_noise(model, in.z, in.steps, in.text);
  auto perm = torch::tensor({2, 0, 1}, torch::kInt64);
  auto permuted_out = predict_noise(model, in.z.index_select(1, perm), in.steps, in.text);
  // Equivariance would mean the permuted output is just the output permuted.
  CHECK_FALSE(torch::allclose(permuted_out, base.index_select(1, perm), 1e-4, 1e-5));
  text::TextBatch zero{torch::zeros_like(in.text.tokens), in.text.valid};
  CHECK_FALSE(torch::allclose(predict_noise(model, in.z, in.steps, zero), base, 1e-4, 1e-5));
  auto other_step = predict_noise(model, in.z, torch::full({1}, 900, torch::kInt64), in.text);
  CHECK_FALSE(torch::allclose(other_step, base, 1e-4, 1e-5));
}

TEST_CASE("predictor exposes every block type and checks descriptors on load") {
  testing::TempDir dir("predictor_ckpt");
  auto c = tiny_unet();
  PredictorModel model(c, Stage::stage1, 5);
  std::set<std::string> kinds;
  for (const auto& [name, shape] : model.parameter_inventory()) {
    for (const char* k : {"tconv", "tattn", "xattn", "res"}) {
      if (name.find(k) != std::string::npos) kinds.insert(k);
    }
  }
  CHECK(kinds.size() == 4);
  model.save(dir.path() / "p.ckpt");
  auto loaded = PredictorModel::load(dir.path() / "p.ckpt", c, Stage::stage1);
  CHECK(loaded.parameter_hash() == model.parameter_hash());
  CHECK_THROWS_AS(PredictorModel::load(dir.path() / "p.ckpt", c, Stage::stage2), ValidationError);
  auto wider = c;
  wider.base_channels = 16;
  CHECK_THROWS_AS(PredictorModel::load(dir.path() / "p.ckpt", wider, Stage::stage1), ValidationError);
}

TEST_CASE("step embedding is sinusoidal and even-sized") {
  auto e = step_embedding(torch::tensor({0.0, 5.0}, torch::kFloat64), 8);
  CHECK(e.sizes() == torch::IntArrayRef{2, 8});
  CHECK_THROWS_AS(step_embedding(torch::tensor({1.0}), 7), ValidationError);
}

TEST_CASE("noise predictor parameter gradients match central differences") {
  auto c = tiny_unet();
  PredictorModel model(c, Stage::stage2, 6);
  model.to(torch::kFloat64);
  auto in = random_inputs(c, torch::kFloat64);
  auto target = torch::randn({1, 3, c.latent_channels, 4, 4}, torch::kFloat64);
  auto loss_fn = [&] { return (predict_noise(model, in.z, in.steps, in.text) - target).pow(2).mean(); };

  model.net()->zero_grad();
  loss_fn().backward();
  std::vector<double> analytic, numeric;
  const double h = 1e-6;
  torch::NoGradGuard no_grad;
  for (auto& p : model.net()->parameters()) {
    auto flat = p.view(-1);
    auto grad = p.grad().view(-1);
    for (auto idx : {std::int64_t{0}, flat.numel() / 2, flat.numel() - 1}) {
      const double orig = flat[idx].item<double>();
      flat[idx] = orig + h;
      const double up = loss_fn().item<double>();
      flat[idx] = orig - h;
      const double down = loss_fn().item<double>();
      flat[idx] = orig;
      analytic.push_back(grad[idx].item<double>());
      numeric.push_back((up - down) / (2 * h));
    }
  }
  auto a = torch::tensor(analytic, torch::kFloat64), n = torch::tensor(numeric, torch::kFloat64);
  CHECK(n.abs().max().item<double>() > 0);
  CHECK(testing::relative_error(a, n) < 1e-3);
}
