#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "regavae/error.hpp"
#include "regavae/log.hpp"
#include "regavae/model/checkpoint.hpp"
#include "regavae/model/latent.hpp"
#include "regavae/model/vae.hpp"
#include "regavae/numerics/ops.hpp"
#include "regavae/numerics/optim.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace regavae;
using namespace regavae::model;
using regavae::nn::Tensor;
using regavae::nn::Tape;
namespace ops = regavae::nn::ops;
namespace ts = regavae::test_support;

namespace {

std::vector<Tensor> means_of(const LayerPosteriors& posts) {
  std::vector<Tensor> z;
  for (const auto& g : posts) z.push_back(g.mean);
  return z;
}

double log_normal_pdf(double x, double mean, double log_var) {
  return -0.5 * (std::log(2.0 * std::numbers::pi) + log_var +
                 (x - mean) * (x - mean) / std::exp(log_var));
}

}  // namespace

TEST(Encode, OneLatentPerLayerWithDefaultDimension) {
  ModelConfig c = ts::micro_config();
  c.d_latent = 32;
  VaeModel m(c, 1);
  auto tape = Tape::no_grad();
  TokenSequence x{5, 6, 7};
  auto posts = m.encode(tape, x);
  ASSERT_EQ(posts.size(), c.num_layers);
  for (const auto& g : posts) {
    EXPECT_EQ(g.mean.numel(), 32u);
    EXPECT_EQ(g.log_var.numel(), 32u);
  }
}

TEST(Encode, ZeroHeadsGiveUnitGaussian) {
  VaeModel m(ts::micro_config(), 2);
  ts::zero_posterior_heads(m);
  auto tape = Tape::no_grad();
  TokenSequence x{5, 9, 11, 6};
  for (const auto& g : m.encode(tape, x)) {
    for (double v : g.mean.data()) EXPECT_EQ(v, 0.0);
    for (double v : g.log_var.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encode, EmptyInputAndTruncation) {
  VaeModel m(ts::micro_config(), 3);
  auto tape = Tape::no_grad();
  EXPECT_THROW(m.encode(tape, TokenSequence{}), InputError);
  log::set_level(log::Level::kQuiet);
  TokenSequence long_seq(40, 7);
  TokenSequence clipped(16, 7);
  auto a = m.encode(tape, long_seq);
  auto b = m.encode(tape, clipped);
  log::set_level(log::Level::kInfo);
  for (std::size_t i = 0; i < a[0].dim(); ++i) EXPECT_EQ(a[0].mean[i], b[0].mean[i]);
}

TEST(Reparameterize, DegenerateVarianceReturnsMean) {
  // sigma = exp(-5) ~ 6.7e-3, so 0.01 is a 1.49-sigma band holding ~86% mass.
  auto g = LatentGaussian::constant({0.5}, {-10.0});
  nn::Rng rng(4);
  const std::size_t n = 2000;
  std::size_t inside = 0;
  double worst = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    auto tape = Tape::no_grad();
    const double dev = std::abs(reparameterize(tape, g, rng)[0] - 0.5);
    if (dev < 0.01) ++inside;
    worst = std::max(worst, dev);
  }
  EXPECT_GT(static_cast<double>(inside) / n, 0.83);
  EXPECT_LT(worst, 6.0 * std::exp(-5.0));
}

TEST(Reparameterize, SeededDeterminism) {
  auto g = LatentGaussian::standard(6);
  nn::Rng a(77), b(77);
  Tape tape;
  auto za = reparameterize(tape, g, a);
  auto zb = reparameterize(tape, g, b);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(za[i], zb[i]);
}

TEST(Reparameterize, MonteCarloMeanWithinThreeStandardErrors) {
  auto g = LatentGaussian::constant({1.5, -0.7}, {0.4, -1.2});
  nn::Rng rng(5);
  const std::size_t n = 100000;
  std::vector<double> acc(2, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    auto tape = Tape::no_grad();
    auto z = reparameterize(tape, g, rng);
    acc[0] += z[0];
    acc[1] += z[1];
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const double sigma = std::exp(0.5 * g.log_var[i]);
    EXPECT_NEAR(acc[i] / n, g.mean[i], 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  }
}

TEST(Reparameterize, GradientFlowsToMeanAndLogVar) {
  auto g = LatentGaussian::constant({0.2, 0.3}, {0.1, -0.4});
  g.mean.set_requires_grad(true);
  g.log_var.set_requires_grad(true);
  nn::Rng rng(9);
  Tape tape;
  auto z = reparameterize(tape, g, rng);
  tape.backward(ops::sum(tape, z));
  for (double v : g.mean.grad()) EXPECT_EQ(v, 1.0);
  for (double v : g.log_var.grad()) EXPECT_NE(v, 0.0);
}

TEST(InjectLatent, IdentityCase) {
  ModelConfig c = ts::micro_config();
  c.rank = 1;
  VaeModel m(c, 6);
  const std::size_t d = c.d_hidden, dz = c.d_latent;
  auto& params = m.named_parameters();
  for (auto& [name, t] : params) {
    if (name == "decoder.layer0.inject.w_v0") {
      auto data = t.mutable_data();
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) data[i * d + j] = i == j ? 1.0 : 0.0;
    }
    if (name == "decoder.layer0.inject.w_z0") {
      // W_z z = ones for z = e_0.
      auto data = t.mutable_data();
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < dz; ++j) data[i * dz + j] = j == 0 ? 1.0 : 0.0;
    }
  }
  nn::Rng rng(1);
  auto v = ops::random_normal({3, d}, rng);
  std::vector<double> e0(dz, 0.0);
  e0[0] = 1.0;
  auto z = Tensor::from({dz}, e0);
  auto tape = Tape::no_grad();
  auto out = m.inject_latent(tape, v, z, 0);
  ASSERT_EQ(out.shape(), v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], v[i]);
}

TEST(InjectLatent, ZeroLatentAnnihilates) {
  VaeModel m(ts::micro_config(), 7);
  nn::Rng rng(2);
  auto v = ops::random_normal({4, 8}, rng);
  auto tape = Tape::no_grad();
  auto out = m.inject_latent(tape, v, Tensor::zeros({4}), 1);
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(InjectLatent, MatchesDirectLoopEvaluation) {
  ModelConfig c = ts::micro_config();
  c.rank = 3;
  VaeModel m(c, 8);
  const std::size_t d = c.d_hidden, dz = c.d_latent, T = 5;
  nn::Rng rng(3);
  auto v = ops::random_normal({T, d}, rng);
  auto z = ops::random_normal({dz}, rng);
  auto tape = Tape::no_grad();
  auto out = m.inject_latent(tape, v, z, 1);

  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t row = 0; row < d; ++row) {
      double left = 0.0, right = 0.0;
      for (std::size_t j = 0; j < c.rank; ++j) {
        const Tensor& wv = m.parameter("decoder.layer1.inject.w_v" + std::to_string(j));
        const Tensor& wz = m.parameter("decoder.layer1.inject.w_z" + std::to_string(j));
        for (std::size_t col = 0; col < d; ++col) left += wv.at(row, col) * v.at(i, col);
        for (std::size_t col = 0; col < dz; ++col) right += wz.at(row, col) * z[col];
      }
      EXPECT_NEAR(out.at(i, row), left * right, 1e-12);
    }
  }
}

TEST(InjectLatent, RankZeroIsConfigError) {
  ModelConfig c = ts::micro_config();
  c.rank = 0;
  EXPECT_THROW(VaeModel(c, 1), ConfigError);
}

TEST(InjectLatent, GradientsReachAllFactors) {
  VaeModel m(ts::micro_config(), 9);
  nn::Rng rng(4);
  auto v = ops::random_normal({3, 8}, rng, 1.0, true);
  auto z = ops::random_normal({4}, rng, 1.0, true);
  Tape tape;
  auto out = m.inject_latent(tape, v, z, 0);
  EXPECT_EQ(out.shape(), v.shape());
  tape.backward(ops::sum(tape, ops::mul(tape, out, out)));
  auto nonzero = [](const Tensor& t) {
    for (double g : t.grad())
      if (g != 0.0) return true;
    return false;
  };
  EXPECT_TRUE(nonzero(v));
  EXPECT_TRUE(nonzero(z));
  EXPECT_TRUE(nonzero(m.parameter("decoder.layer0.inject.w_v0")));
  EXPECT_TRUE(nonzero(m.parameter("decoder.layer0.inject.w_z1")));
}

TEST(Decode, UntrainedNllIsNearLogVocab) {
  const std::size_t V = 40;
  VaeModel m(ts::small_config(V), 10);
  nn::Rng rng(5);
  auto tape = Tape::no_grad();
  std::vector<Tensor> z;
  for (std::size_t l = 0; l < 2; ++l) z.push_back(ops::random_normal({8}, rng));
  TokenSequence y{6, 7, 8, 9, 10, 11};
  auto r = m.decode(tape, z, y);
  EXPECT_EQ(r.num_tokens, y.size() + 1);
  EXPECT_NEAR(r.recon_nll.item(), std::log(static_cast<double>(V)), 0.05 * std::log(V));
}

TEST(Decode, LayerCountMismatchIsContractError) {
  VaeModel m(ts::micro_config(), 11);
  auto tape = Tape::no_grad();
  std::vector<Tensor> z{Tensor::zeros({4})};
  EXPECT_THROW(m.decode(tape, z, TokenSequence{5, 6}), ContractError);
}

TEST(Decode, NllDecreasesOverTwoHundredSteps) {
  const std::size_t V = 30;
  auto data = ts::toy_pairs(50, V, 12);
  VaeModel m(ts::small_config(V), 12);
  auto losses = ts::train_elbo(m, data, 200, 3e-3, 0.1, 5, 12);
  const double first = (losses[0] + losses[1] + losses[2]) / 3.0;
  const double last = (losses[197] + losses[198] + losses[199]) / 3.0;
  EXPECT_LT(last, first);
}

TEST(Decode, OverfitCorpusIsMemorized) {
  const std::size_t V = 20;
  auto data = ts::toy_pairs(5, V, 13, 4);
  VaeModel m(ts::small_config(V), 13);
  ts::train_elbo(m, data, 400, 5e-3, 0.05, 5, 13);
  std::size_t exact = 0;
  for (const auto& p : data) {
    auto tape = Tape::no_grad();
    auto z = means_of(m.encode(tape, p.x));
    auto out = m.generate(z, GenerateOptions{.max_len = 10});
    if (out == p.y) ++exact;
  }
  EXPECT_EQ(exact, data.size());

  // Trained encoder separates different inputs.
  auto tape = Tape::no_grad();
  auto a = m.encode(tape, data[0].x);
  auto b = m.encode(tape, data[1].x);
  double dist = 0.0;
  for (std::size_t i = 0; i < a[0].dim(); ++i) {
    const double diff = a[0].mean[i] - b[0].mean[i];
    dist += diff * diff;
  }
  EXPECT_GT(std::sqrt(dist), 0.0);
}

TEST(Elbo, PosteriorEqualPriorGivesZeroKl) {
  VaeModel m(ts::micro_config(), 14);
  ts::zero_posterior_heads(m);
  nn::Rng rng(1);
  Tape tape;
  auto e = m.elbo_step(tape, TokenSequence{5, 6}, TokenSequence{7, 8}, 1.0, rng);
  EXPECT_EQ(e.kl, 0.0);
}

TEST(Elbo, ClosedFormKlHalfNat) {
  // KL(N(1, 1) || N(0, 1)) = 0.5 * (1 + 1 - 0 - 1) = 0.5.
  auto g = LatentGaussian::constant({1.0}, {0.0});
  Tape tape;
  EXPECT_NEAR(kl_to_standard_normal(tape, g).item(), 0.5, 1e-12);
}

TEST(Elbo, BreakdownInvariants) {
  VaeModel m(ts::micro_config(), 15);
  for (double beta : {0.0, 0.3, 1.0}) {
    nn::Rng rng(2);
    Tape tape;
    auto e = m.elbo_step(tape, TokenSequence{5, 6, 9}, TokenSequence{7, 8}, beta, rng);
    EXPECT_NEAR(e.total, e.recon_nll + beta * e.kl, 1e-9);
    EXPECT_GE(e.kl, -1e-9);
    if (beta == 0.0) {
      EXPECT_EQ(e.total, e.recon_nll);
    }
  }
}

TEST(Elbo, ClosedFormKlAgreesWithMonteCarlo) {
  nn::Rng gen(16);
  const std::size_t n = 100000;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 1 + gen.below(4);
    std::vector<double> mu(d), lv(d);
    for (std::size_t i = 0; i < d; ++i) {
      mu[i] = gen.normal();
      lv[i] = 0.8 * gen.normal();
    }
    auto g = LatentGaussian::constant(mu, lv);
    Tape tape;
    const double closed = kl_to_standard_normal(tape, g).item();
    nn::Rng rng(100 + static_cast<std::uint64_t>(trial));
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double log_ratio = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double z = mu[i] + std::exp(0.5 * lv[i]) * rng.normal();
        log_ratio += log_normal_pdf(z, mu[i], lv[i]) - log_normal_pdf(z, 0.0, 0.0);
      }
      sum += log_ratio;
      sum_sq += log_ratio * log_ratio;
    }
    const double est = sum / n;
    const double se = std::sqrt((sum_sq / n - est * est) / n);
    EXPECT_NEAR(closed, est, 3.0 * se) << "trial " << trial;
  }
}

TEST(Elbo, GradientsMatchFiniteDifferencesOnMicroModel) {
  VaeModel m(ts::micro_config(), 17);
  TokenSequence x{5, 7, 9, 11}, y{6, 8, 10};
  auto fn = [&](Tape& tape) {
    nn::Rng rng(3);
    return m.elbo_step(tape, x, y, 0.7, rng).loss;
  };
  std::vector<Tensor> params;
  for (const char* name : {"posterior.layer0.w", "decoder.layer1.inject.w_v1",
                           "decoder.layer0.inject.w_z0", "encoder.layer1.attn.wq",
                           "decoder.layer0.mlp.w1", "output.w", "embed.token"}) {
    params.push_back(m.parameter(name));
  }
  auto r = ts::grad_check(fn, params, 1e-5, 1e-6, 40);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Generate, EdgeCasesAndDeterminism) {
  VaeModel m(ts::small_config(30), 18);
  nn::Rng rng(6);
  std::vector<Tensor> z{ops::random_normal({8}, rng), ops::random_normal({8}, rng)};
  EXPECT_TRUE(m.generate(z, GenerateOptions{.max_len = 0}).empty());
  auto g1 = m.generate(z, GenerateOptions{.max_len = 12});
  auto g2 = m.generate(z, GenerateOptions{.max_len = 12});
  EXPECT_EQ(g1, g2);
  GenerateOptions topk{.max_len = 12, .strategy = DecodeStrategy::kTopK, .top_k = 5};
  nn::Rng a(42), b(42);
  EXPECT_EQ(m.generate(z, topk, &a), m.generate(z, topk, &b));
  EXPECT_THROW(m.generate(z, topk, nullptr), ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  VaeModel m(ts::micro_config(), 19);
  auto path = std::filesystem::temp_directory_path() / "regavae_model_test.ckpt";
  nlohmann::json header{{"vocab", {"a", "b"}}};
  save_checkpoint(path, m, header);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.header["vocab"][1], "b");
  EXPECT_EQ(loaded.header["model"]["d_z"], 4);
  const auto& a = m.named_parameters();
  const auto& b = loaded.model.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second.shape(), b[i].second.shape());
    EXPECT_EQ(std::memcmp(a[i].second.data().data(), b[i].second.data().data(),
                          a[i].second.numel() * sizeof(double)),
              0);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFiles) {
  auto path = std::filesystem::temp_directory_path() / "regavae_not_a_ckpt.bin";
  {
    std::ofstream out(path);
    out << "hello world, definitely not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), InputError);
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), InputError);
  std::filesystem::remove(path);
}

TEST(Model, CloneIsIndependent) {
  VaeModel m(ts::micro_config(), 20);
  VaeModel c = m.clone();
  c.named_parameters()[0].second.mutable_data()[0] += 1.0;
  EXPECT_NE(m.named_parameters()[0].second[0], c.named_parameters()[0].second[0]);
}
