#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "grn/predictor.hpp"

using namespace grn;

namespace {

PredictorConfig tiny(int k = 4) {
  PredictorConfig c;
  c.depth = 1;
  c.hidden = 16;
  c.heads = 2;
  c.ffn_hidden = 32;
  c.n_pos = 6;
  c.c_eff = 2;
  c.categories = k;
  c.n_classes = 3;
  return c;
}

BasicPredictorParams<double> random_params(const PredictorConfig& cfg, std::uint64_t seed,
                                           double scale) {
  BasicPredictorParams<double> p(cfg);
  Rng rng(seed);
  for (auto& v : p.flat()) v = scale * rng.normal();
  for (const auto& s : p.sections()) {
    if (s.name.find("norm") != std::string::npos) {
      for (auto& v : p.view(s.name)) v = 1.0 + 0.1 * rng.normal();
    }
  }
  return p;
}

TokenMap random_tokens(const PredictorConfig& cfg, Rng& rng) {
  return random_token_map(Layout::index, static_cast<std::uint32_t>(cfg.categories),
                          static_cast<std::size_t>(cfg.n_pos),
                          static_cast<std::size_t>(cfg.c_eff), rng);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(PredictorConfigTest, ParameterCountMatchesCountingOracle) {
  for (const auto& c : {tiny(), PredictorConfig{}, PredictorConfig{3, 32, 4, 48, 10, 6, 2, 5}}) {
    const std::size_t d = c.hidden, f = c.ffn_hidden, ck = c.c_eff * c.categories;
    // embeddings + blocks (2 norms, qkv, proj, 3 ffn mats) + final norm + head
    const std::size_t want = ck * d + c.n_pos * d + (c.n_classes + 1) * d +
                             c.depth * (2 * d + 3 * d * d + d * d + 3 * d * f) + d + d * ck + ck;
    EXPECT_EQ(c.parameter_count(), want);
    EXPECT_EQ(PredictorParams(c).flat().size(), want);
  }
}

TEST(PredictorConfigTest, Validation) {
  auto c = tiny();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ParameterError);
  c = tiny();
  c.categories = 1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = tiny();
  c.depth = 0;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(InitParams, DeterministicAndZeroHead) {
  Rng a(5), b(5);
  const auto pa = init_params(tiny(), a);
  const auto pb = init_params(tiny(), b);
  EXPECT_EQ(pa, pb);
  for (float v : pa.view("head.weight")) EXPECT_EQ(v, 0.0f);
  for (float v : pa.view("head.bias")) EXPECT_EQ(v, 0.0f);
  double ss = 0;
  const auto emb = pa.view("pos_emb");
  for (float v : emb) ss += double(v) * v;
  EXPECT_NEAR(std::sqrt(ss / emb.size()), 0.02, 0.006);
}

TEST(Forward, ShapeAndUniformAtInit) {
  Rng rng(1);
  const auto cfg = tiny(8);
  const auto p = init_params(cfg, rng);
  const auto logits = forward(p, random_tokens(cfg, rng), 1u);
  EXPECT_EQ(logits.shape(), (std::vector<std::size_t>{6, 2, 8}));
  const auto probs = softmax(logits);
  for (float v : probs.values()) EXPECT_NEAR(v, 0.125f, 1e-7);
}

TEST(Forward, DeterministicAndConditionSensitive) {
  Rng rng(2);
  const auto cfg = tiny();
  const auto p = random_params(cfg, 3, 0.3).cast<float>();
  const auto x = random_tokens(cfg, rng);
  EXPECT_EQ(forward(p, x, 0u), forward(p, x, 0u));
  EXPECT_NE(forward(p, x, 0u), forward(p, x, 1u));
  EXPECT_NE(forward(p, x, 0u), forward(p, x, std::nullopt));
  EXPECT_TRUE(forward(p, x, std::nullopt).all_finite());
}

TEST(Forward, RejectsBadInputs) {
  Rng rng(2);
  const auto cfg = tiny();
  const auto p = init_params(cfg, rng);
  TokenMap wrong(Layout::index, 4, 5, 2);
  EXPECT_THROW(forward(p, wrong, 0u), ParameterError);
  EXPECT_THROW(forward(p, random_tokens(cfg, rng), 3u), ParameterError);
  auto x = random_tokens(cfg, rng);
  x.values[0] = 9;
  EXPECT_THROW(forward(p, x, 0u), IndexError);
}

TEST(Backward, ZeroHeadLossIsLogK) {
  for (int k : {2, 4, 16}) {
    Rng rng(k);
    const auto cfg = tiny(k);
    const auto p = init_params(cfg, rng);
    std::vector<float> g(p.flat().size(), 0.0f);
    const double loss =
        Predictor<float>::backward(p, random_tokens(cfg, rng), 0u, random_tokens(cfg, rng), g);
    EXPECT_NEAR(loss, std::log(double(k)), 1e-3);
  }
}

TEST(Backward, LossMatchesForwardCrossEntropy) {
  Rng rng(4);
  const auto cfg = tiny();
  const auto p = random_params(cfg, 8, 0.3);
  const auto x = random_tokens(cfg, rng);
  const auto y = random_tokens(cfg, rng);
  std::vector<double> g(p.flat().size(), 0.0);
  const double loss = Predictor<double>::backward(p, x, 2u, y, g);
  const auto logits = forward(p, x, 2u);
  std::vector<std::uint32_t> t(y.values.begin(), y.values.end());
  EXPECT_NEAR(loss, cross_entropy(logits, t), 1e-12);
}

TEST(Backward, EveryParameterGroupPassesGradCheck) {
  Rng rng(6);
  const auto cfg = tiny();
  const auto base = random_params(cfg, 11, 0.4);
  const auto x = random_tokens(cfg, rng);
  const auto y = random_tokens(cfg, rng);
  for (const auto& section : base.sections()) {
    GradFunction f = [&](std::span<const double> v, std::span<double> grad) {
      auto p = base;
      auto dst = p.view(section.name);
      std::copy(v.begin(), v.end(), dst.begin());
      std::vector<double> full(p.flat().size(), 0.0);
      const double loss = Predictor<double>::backward(p, x, 1u, y, full);
      if (!grad.empty()) {
        std::copy_n(full.begin() + static_cast<std::ptrdiff_t>(section.offset), section.size,
                    grad.begin());
      }
      return loss;
    };
    const auto init = base.view(section.name);
    std::vector<double> v(init.begin(), init.end());
    const auto rep = grad_check_report(f, v, 1e-5);
    EXPECT_LT(rep.max_relative_error, 1e-4)
        << section.name << " index " << rep.worst_index << " analytic " << rep.analytic
        << " numeric " << rep.numeric;
  }
}

TEST(Backward, GradientDescentReducesLoss) {
  Rng rng(7);
  const auto cfg = tiny();
  auto p = random_params(cfg, 12, 0.1);
  const auto x = random_tokens(cfg, rng);
  const auto y = random_tokens(cfg, rng);
  std::vector<double> g(p.flat().size());
  double first = 0, last = 0;
  for (int step = 0; step < 100; ++step) {
    std::fill(g.begin(), g.end(), 0.0);
    last = Predictor<double>::backward(p, x, 0u, y, g);
    if (step == 0) first = last;
    auto w = p.flat();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.5 * g[i];
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST(Cfg, LinearExtrapolation) {
  TensorD c({1, 1, 3}, std::vector<double>{1.0, 2.0, -1.0});
  TensorD u({1, 1, 3}, std::vector<double>{0.5, 0.0, 1.0});
  EXPECT_EQ(apply_cfg(c, u, 1.0), c);
  EXPECT_EQ(apply_cfg(c, u, 0.0), u);
  const auto out = apply_cfg(c, u, 2.4);
  EXPECT_NEAR(out[0], 0.5 + 2.4 * 0.5, 1e-12);
  EXPECT_NEAR(out[1], 4.8, 1e-12);
  EXPECT_NEAR(out[2], 1.0 - 2.4 * 2.0, 1e-12);
  EXPECT_THROW(apply_cfg(c, TensorD({1, 1, 2}), 1.0), ParameterError);
  EXPECT_THROW(apply_cfg(c, u, -0.5), ParameterError);
}

TEST(Sampling, LowTemperatureIsArgmax) {
  Tensor logits({200, 1, 4}, 0.0f);
  for (std::size_t i = 0; i < 200; ++i) logits[i * 4 + i % 4] = 1.0f;
  Rng rng(3);
  const auto s = sample_tokens(logits, 0.01, rng, Layout::index);
  for (std::size_t i = 0; i < 200; ++i) EXPECT_EQ(s.values[i], i % 4);
}

TEST(Sampling, UniformBinaryFrequencies) {
  Tensor logits({250000, 4, 2}, 0.0f);
  Rng rng(4);
  const auto s = sample_tokens(logits, 1.0, rng, Layout::bit);
  std::size_t ones = 0;
  for (auto v : s.values) ones += v;
  EXPECT_NEAR(double(ones) / s.size(), 0.5, 0.002);
}

TEST(Sampling, SeededAndValidated) {
  Rng a(9), b(9);
  Tensor logits({10, 2, 5}, 0.3f);
  EXPECT_EQ(sample_tokens(logits, 1.2, a, Layout::index), sample_tokens(logits, 1.2, b, Layout::index));
  EXPECT_THROW(sample_tokens(logits, 0.0, a, Layout::index), ParameterError);
}

TEST(Sampling, TemperatureNeverLowersEntropy) {
  Rng rng(10);
  TensorD logits({20, 2, 6});
  for (auto& v : logits.values()) v = 4.0 * rng.normal();
  double prev = -1;
  for (double tau : {0.2, 0.5, 1.0, 1.3, 2.0, 5.0}) {
    TensorD p = softmax(logits, tau);
    double h = 0;
    for (double v : p.values()) h -= v > 0 ? v * std::log(v) : 0.0;
    EXPECT_GE(h, prev - 1e-12);
    prev = h;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = temp_dir("grn_ckpt_rt");
  const auto cfg = tiny();
  const auto p = random_params(cfg, 21, 0.2).cast<float>();
  save_checkpoint(dir / "m.grnckpt", p, R"({"note":1})");
  const auto back = load_checkpoint(dir / "m.grnckpt", cfg);
  EXPECT_EQ(back.params, p);
  EXPECT_EQ(back.metadata_json, R"({"note":1})");
  Rng rng(1);
  const auto x = random_tokens(cfg, rng);
  EXPECT_EQ(forward(back.params, x, 0u), forward(p, x, 0u));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsReported) {
  const auto dir = temp_dir("grn_ckpt_bad");
  const auto cfg = tiny();
  const auto p = random_params(cfg, 22, 0.2).cast<float>();
  save_checkpoint(dir / "m.grnckpt", p);
  std::vector<char> bytes;
  {
    std::ifstream in(dir / "m.grnckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::vector<char>& b) {
    std::ofstream out(dir / "x.grnckpt", std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write(bad_magic);
  EXPECT_THROW(load_checkpoint(dir / "x.grnckpt"), ParseError);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  write(flipped);
  EXPECT_THROW(load_checkpoint(dir / "x.grnckpt"), ParseError);

  write({bytes.begin(), bytes.end() - 7});
  EXPECT_THROW(load_checkpoint(dir / "x.grnckpt"), ParseError);

  auto other = cfg;
  other.hidden = 32;
  EXPECT_THROW(load_checkpoint(dir / "m.grnckpt", other), ConfigError);
  EXPECT_THROW(load_checkpoint(dir / "absent.grnckpt"), IoError);
  std::filesystem::remove_all(dir);
}
