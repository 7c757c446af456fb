#include <cmath>

#include "ptet/nn/mae.hpp"

#include "doctest.h"

using namespace ptet::nn;

namespace {

MaeConfig tiny(int dim = 16, int layers = 2) {
  MaeConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = dim;
  c.decoder_embed_dim = dim;
  c.encoder_layers = layers;
  c.decoder_layers = 1;
  c.heads = 4;
  return c;
}

torch::Generator gen(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace

TEST_CASE("patchify") {
  SUBCASE("constant image") {
    auto p = patchify(torch::full({2, 64, 64}, 3.5), 4);
    CHECK(p.sizes() == torch::IntArrayRef({2, 256, 16}));
    CHECK(torch::equal(p, torch::full({2, 256, 16}, 3.5)));
  }
  SUBCASE("index arithmetic") {
    auto img = torch::arange(64 * 64, torch::kFloat32).reshape({1, 64, 64});
    auto p = patchify(img, 4);
    auto acc = p.accessor<float, 3>();
    for (int pr = 0; pr < 16; pr += 5)
      for (int pc = 0; pc < 16; pc += 3)
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) CHECK(acc[0][pr * 16 + pc][i * 4 + j] == float((pr * 4 + i) * 64 + pc * 4 + j));
  }
  SUBCASE("bijection") {
    auto x = torch::randn({3, 64, 64});
    CHECK(torch::equal(unpatchify(patchify(x, 4), 4, 64), x));
    auto e = torch::randn({3, 16, 16});
    CHECK(torch::equal(unpatchify(patchify(e, 2), 2, 16), e));
  }
  SUBCASE("bad shapes") {
    CHECK_THROWS_AS(patchify(torch::zeros({2, 63, 63}), 4), std::invalid_argument);
    CHECK_THROWS_AS(patchify(torch::zeros({64, 64}), 4), std::invalid_argument);
    CHECK_THROWS_AS(unpatchify(torch::zeros({2, 255, 16}), 4, 64), std::invalid_argument);
  }
}

TEST_CASE("mask_sample") {
  SUBCASE("75% of 256") {
    auto m = mask_sample(8, 256, 0.75, gen(1));
    CHECK(m.keep.size(1) == 64);
    CHECK(torch::equal(m.mask.sum(1), torch::full({8}, 192.0)));
    for (int b = 0; b < 8; ++b) {
      CHECK(std::get<0>(torch::_unique(m.keep[b])).numel() == 64);
      // kept patches are exactly the unmasked ones
      CHECK(torch::equal(m.mask[b].index_select(0, m.keep[b]), torch::zeros({64})));
    }
  }
  SUBCASE("restore inverts the shuffle") {
    auto m = mask_sample(4, 256, 0.75, gen(2));
    auto tokens = torch::arange(256, torch::kLong).repeat({4, 1});
    auto kept = tokens.gather(1, m.keep);
    auto rest = torch::ones({4, 256}, torch::kLong) * m.mask.to(torch::kLong);
    // Rebuild the shuffled order: kept tokens first, then masked ones in shuffle order.
    auto shuffle = m.restore.argsort(int64_t{1});
    CHECK(torch::equal(shuffle.narrow(1, 0, 64), m.keep));
    CHECK(torch::equal(tokens.gather(1, shuffle).gather(1, m.restore), tokens));
    (void)kept;
    (void)rest;
  }
  SUBCASE("ratio 0 keeps everything") {
    auto m = mask_sample(2, 256, 0.0, gen(3));
    CHECK(m.keep.size(1) == 256);
    CHECK(m.mask.sum().item<double>() == 0.0);
  }
  SUBCASE("replay") {
    auto a = mask_sample(4, 256, 0.75, gen(9)), b = mask_sample(4, 256, 0.75, gen(9));
    CHECK(torch::equal(a.keep, b.keep));
    CHECK(torch::equal(a.mask, b.mask));
  }
  MaeConfig c;
  CHECK(c.masked_count() == 192);
}

TEST_CASE("config validation") {
  MaeConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = MaeConfig{};
  c.image_size = 62;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = MaeConfig{};
  CHECK(MaeConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(MaeConfig::from_json({{"embed_dims", 3}}), std::invalid_argument);
}

TEST_CASE("encoder token counts and parameter budget") {
  torch::manual_seed(0);
  MaeEncoder enc(tiny());
  auto x = torch::randn({2, 16, 16});
  auto m = mask_sample(2, 16, 0.75, gen(4));
  CHECK(enc->forward(x, &m).sizes() == torch::IntArrayRef({2, 5, 16}));
  CHECK(enc->forward(x).sizes() == torch::IntArrayRef({2, 17, 16}));
  CHECK(enc->latent(x).sizes() == torch::IntArrayRef({2, 16}));
  CHECK(enc->pos_embed.size(1) == 17);

  MaeEncoder full_size{MaeConfig{}};
  const double n = static_cast<double>(count_parameters(*full_size));
  CHECK(std::abs(n - 9.54e6) <= 0.05 * 9.54e6);
}

TEST_CASE("encoder is permutation-equivariant in the visible tokens") {
  torch::manual_seed(1);
  MaeEncoder enc(tiny(32, 3));
  enc->eval();
  torch::NoGradGuard ng;
  auto x = torch::randn({2, 16, 16});
  auto m = mask_sample(2, 16, 0.5, gen(5));
  auto tokens = enc->embed(x).gather(1, m.keep.unsqueeze(-1).expand({-1, -1, 32}));
  auto perm = torch::randperm(8, gen(6), torch::kLong);
  auto out = enc->encode_tokens(tokens);
  auto out_p = enc->encode_tokens(tokens.index_select(1, perm));
  CHECK((out_p.select(1, 0) - out.select(1, 0)).abs().max().item<double>() <= 1e-5);
  auto expected = out.narrow(1, 1, 8).index_select(1, perm);
  CHECK((out_p.narrow(1, 1, 8) - expected).abs().max().item<double>() <= 1e-5);
}

TEST_CASE("zero block weights reduce the encoder to a layer norm of the embedded tokens") {
  torch::manual_seed(2);
  MaeEncoder enc(tiny());
  torch::NoGradGuard ng;
  for (auto& item : enc->blocks->named_parameters()) item.value().zero_();
  auto x = torch::randn({2, 16, 16});
  auto tokens = enc->embed(x);
  auto cls = (enc->cls_token + enc->pos_embed.narrow(1, 0, 1)).expand({2, -1, -1});
  auto expected = enc->norm->forward(torch::cat({cls, tokens}, 1));
  CHECK(torch::allclose(enc->encode_tokens(tokens), expected, 0, 0));
}

TEST_CASE("decoder bookkeeping and output shape") {
  torch::manual_seed(3);
  MaskedAutoencoder mae(tiny());
  auto x = torch::randn({3, 16, 16});
  auto out = mae->forward(x, 0.75, gen(7));
  CHECK(out.reconstruction.sizes() == torch::IntArrayRef({3, 16, 16}));
  CHECK(torch::equal(out.mask.sum(1), torch::full({3}, 12.0)));
  auto m = mask_sample(3, 16, 0.75, gen(8));
  auto tokens = mae->encoder->forward(x, &m);
  auto bad = m;
  bad.keep = m.keep.narrow(1, 0, 3);
  CHECK_THROWS_AS(mae->decoder->forward(tokens, bad), std::invalid_argument);

  MaskedAutoencoder full{MaeConfig{}};
  CHECK(full->forward(torch::randn({1, 64, 64}), 0.75, gen(1)).reconstruction.sizes() ==
        torch::IntArrayRef({1, 64, 64}));
}

TEST_CASE("gradient check against central differences") {
  torch::manual_seed(4);
  auto cfg = tiny(16, 2);
  MaskedAutoencoder mae(cfg);
  mae->to(torch::kFloat64);
  auto x = torch::randn({2, 16, 16}, torch::kFloat64);
  auto loss_at = [&] { return mae->forward(x, 0.5, gen(11)).loss; };
  mae->zero_grad();
  loss_at().backward();
  int checked = 0;
  double worst = 0;
  torch::NoGradGuard ng;
  for (auto& item : mae->named_parameters()) {
    auto& p = item.value();
    auto flat = p.view(-1);
    auto g = p.grad().view(-1);
    for (int64_t k : {int64_t{0}, flat.numel() / 2, flat.numel() - 1}) {
      const double orig = flat[k].item<double>(), h = 1e-6;
      flat[k] = orig + h;
      const double up = loss_at().item<double>();
      flat[k] = orig - h;
      const double down = loss_at().item<double>();
      flat[k] = orig;
      const double fd = (up - down) / (2 * h), an = g[k].item<double>();
      if (std::abs(an) < 1e-7 && std::abs(fd) < 1e-7) continue;
      worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), std::abs(fd)));
      ++checked;
    }
  }
  CHECK(checked > 20);
  CHECK(worst <= 1e-4);
}

TEST_CASE("loss descends with no masking") {
  torch::manual_seed(5);
  MaskedAutoencoder mae(tiny(32, 2));
  auto coarse = torch::randn({100, 1, 4, 4});
  auto x = torch::nn::functional::interpolate(
               coarse, torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{16, 16}).mode(torch::kBilinear).align_corners(false))
               .squeeze(1);
  torch::optim::AdamW opt(mae->parameters(), torch::optim::AdamWOptions(1e-3));
  double first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    auto loss = mae->forward(x, 0.0, gen(step)).loss;
    loss.backward();
    opt.step();
    if (step == 0) first = loss.item<double>();
    last = loss.item<double>();
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("masked-only loss ignores visible patches") {
  torch::manual_seed(6);
  auto cfg = tiny();
  cfg.masked_loss_only = true;
  MaskedAutoencoder mae(cfg);
  auto x = torch::randn({2, 16, 16});
  auto out = mae->forward(x, 0.75, gen(12));
  auto per_patch = (patchify(out.reconstruction, 4) - patchify(x, 4)).pow(2).mean(-1);
  auto expected = (per_patch * out.mask).sum() / out.mask.sum();
  CHECK(out.loss.item<double>() == doctest::Approx(expected.item<double>()).epsilon(1e-6));
}
