#include <gtest/gtest.h>

#include <cmath>

#include "regavae/error.hpp"
#include "regavae/log.hpp"
#include "regavae/mixture/mixture.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/kl_oracle.hpp"

using namespace regavae;
using namespace regavae::mixture;
using model::LatentGaussian;
using nn::Tape;
using nn::Tensor;
namespace ts = regavae::test_support;

TEST(MixtureWeights, NoRetrievalCollapsesToQuery) {
  auto w = weights_from_scores(std::vector<double>{});
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], 1.0);
}

TEST(MixtureWeights, EqualLogitsAreUniform) {
  auto w = weights_from_scores(std::vector<double>{1.0, 1.0, 1.0, 1.0});
  for (double x : w) EXPECT_NEAR(x, 0.2, 1e-15);
}

TEST(MixtureWeights, DirectSoftmaxOracle) {
  auto w = weights_from_scores(std::vector<double>{0.9, 0.1}, 0.9);
  const double e9 = std::exp(0.9), e1 = std::exp(0.1);
  const double z = 2.0 * e9 + e1;
  EXPECT_NEAR(w[0], e9 / z, 1e-15);
  EXPECT_NEAR(w[1], e9 / z, 1e-15);
  EXPECT_NEAR(w[2], e1 / z, 1e-15);
}

TEST(MixtureWeights, ShiftInvariantAndNormalized) {
  nn::Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(rng.below(8));
    for (double& x : s) x = 2.0 * rng.uniform() - 1.0;
    const double c = 10.0 * rng.normal();
    auto shifted = s;
    for (double& x : shifted) x += c;
    auto a = weights_from_scores(s, kSelfLogit);
    auto b = weights_from_scores(shifted, kSelfLogit + c);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      total += a[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(MixtureWeights, UsesCosineToRetrievedMeans) {
  std::vector<double> query{1.0, 0.0};
  std::vector<LatentGaussian> retrieved{LatentGaussian::constant({3.0, 0.0}, {0.0, 0.0}),
                                        LatentGaussian::constant({0.0, 2.0}, {0.0, 0.0})};
  auto w = mixture_weights(query, retrieved);
  auto expected = weights_from_scores(std::vector<double>{1.0, 0.0});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], expected[i], 1e-15);
  EXPECT_NEAR(w[0], w[1], 1e-15);
}

TEST(SampleMixture, DegenerateCategoricals) {
  nn::Rng rng(2), untouched(2);
  EXPECT_EQ(sample_component(std::vector<double>{1.0}, rng), 0u);
  EXPECT_EQ(rng.next_u64(), untouched.next_u64());
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(sample_component(std::vector<double>{1.0, 0.0, 0.0}, rng), 0u);
    EXPECT_EQ(sample_component(std::vector<double>{0.0, 0.0, 1.0}, rng), 2u);
  }
  GaussianMixture single{{LatentGaussian::standard(3)}, {1.0}};
  Tape tape;
  EXPECT_EQ(sample_mixture(tape, single, rng).component, 0u);
}

TEST(SampleMixture, FrequenciesMatchWeights) {
  nn::Rng rng(3);
  const std::size_t n = 100000;
  std::size_t ones = 0;
  for (std::size_t i = 0; i < n; ++i) ones += sample_component(std::vector<double>{0.5, 0.5}, rng);
  const double se = std::sqrt(0.25 / static_cast<double>(n));
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.5, 3.0 * se);
}

TEST(SampleMixture, GradientReachesSelectedComponentOnly) {
  auto a = LatentGaussian::constant({0.1, 0.2}, {0.0, 0.0});
  auto b = LatentGaussian::constant({0.3, 0.4}, {0.0, 0.0});
  a.mean.set_requires_grad(true);
  b.mean.set_requires_grad(true);
  GaussianMixture m{{a, b}, {0.0, 1.0}};
  nn::Rng rng(4);
  Tape tape;
  auto s = sample_mixture(tape, m, rng);
  ASSERT_EQ(s.component, 1u);
  tape.backward(nn::ops::sum(tape, s.z));
  for (double g : b.mean.grad()) EXPECT_EQ(g, 1.0);
  EXPECT_TRUE(!a.mean.has_grad() || a.mean.grad()[0] == 0.0);
}

TEST(KlGaussianDiag, ClosedFormCases) {
  auto a = LatentGaussian::constant({0.3, -2.0}, {0.5, -1.0});
  EXPECT_EQ(kl_gaussian_diag(a, a), 0.0);
  auto n11 = LatentGaussian::constant({1.0}, {0.0});
  EXPECT_NEAR(kl_gaussian_diag(n11, LatentGaussian::standard(1)), 0.5, 1e-12);
  EXPECT_THROW(kl_gaussian_diag(a, LatentGaussian::standard(3)), ContractError);
}

TEST(KlGaussianDiag, AgreesWithMonteCarlo) {
  nn::Rng gen(5), mc(6);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 1 + gen.below(8);
    auto a = ts::random_gaussian(gen, d);
    auto b = ts::random_gaussian(gen, d);
    auto est = ts::mc_kl_gaussian(a, b, 100000, mc);
    EXPECT_NEAR(kl_gaussian_diag(a, b), est.mean, 3.0 * est.stderr_) << "trial " << t;
  }
}

TEST(KlGaussianDiag, GradientsMatchFiniteDifferences) {
  nn::Rng rng(7);
  auto a = ts::random_gaussian(rng, 4);
  auto b = ts::random_gaussian(rng, 4);
  for (auto* t : {&a.mean, &a.log_var, &b.mean, &b.log_var}) t->set_requires_grad(true);
  auto r = ts::grad_check([&](Tape& tape) { return kl_gaussian_diag(tape, a, b); },
                          {a.mean, a.log_var, b.mean, b.log_var});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(KlMixtureBound, IdentityMixturesGiveZero) {
  auto posterior = MixturePrior::standard(3, {0.2, 0.5, 0.3});
  EXPECT_EQ(kl_mixture_upper_bound(posterior, make_prior(MixturePosterior{posterior}, PriorWeights::kTied)), 0.0);

  nn::Rng rng(8);
  GaussianMixture p{{ts::random_gaussian(rng, 4), ts::random_gaussian(rng, 4)}, {0.7, 0.3}};
  EXPECT_EQ(kl_mixture_upper_bound(p, p), 0.0);
}

TEST(KlMixtureBound, ZeroOnlyForMatchingMixtures) {
  nn::Rng rng(9);
  auto g1 = ts::random_gaussian(rng, 3);
  auto g2 = ts::random_gaussian(rng, 3);
  GaussianMixture p{{g1, g2}, {0.4, 0.6}};
  GaussianMixture other_weights{{g1, g2}, {0.5, 0.5}};
  GaussianMixture other_component{{g1, g1}, {0.4, 0.6}};
  EXPECT_GT(kl_mixture_upper_bound(p, other_weights), 0.0);
  EXPECT_GT(kl_mixture_upper_bound(p, other_component), 0.0);
  EXPECT_GT(kl_mixture_upper_bound(other_component, p), 0.0);
}

TEST(KlMixtureBound, SingleComponentReducesToDiagonalKl) {
  nn::Rng rng(10);
  auto a = ts::random_gaussian(rng, 5);
  auto b = ts::random_gaussian(rng, 5);
  EXPECT_EQ(kl_mixture_upper_bound(GaussianMixture{{a}, {1.0}}, GaussianMixture{{b}, {1.0}}),
            kl_gaussian_diag(a, b));
}

TEST(KlMixtureBound, DominatesMonteCarloMixtureKl) {
  nn::Rng gen(11), mc(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 1 + gen.below(8);
    const std::size_t n = 1 + gen.below(5);
    GaussianMixture p, q;
    for (std::size_t i = 0; i < n; ++i) {
      p.components.push_back(ts::random_gaussian(gen, d));
      q.components.push_back(ts::random_gaussian(gen, d));
    }
    p.weights = ts::random_weights(gen, n);
    q.weights = ts::random_weights(gen, n);
    const double bound = kl_mixture_upper_bound(p, q);
    auto est = ts::mc_kl_mixture(p, q, 100000, mc);
    EXPECT_GE(bound, est.mean - 3.0 * est.stderr_) << "trial " << t;
    EXPECT_GE(bound, 0.0);
  }
}

TEST(KlMixtureBound, ContractErrors) {
  auto p = MixturePrior::standard(2, {0.5, 0.5});
  auto q = MixturePrior::standard(2, {1.0});
  EXPECT_THROW(kl_mixture_upper_bound(p, q), ContractError);
  EXPECT_THROW(MixturePrior::standard(2, {0.5, 0.4}), ContractError);
  EXPECT_TRUE(std::isinf(kl_categorical(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0})));
}

TEST(MakePrior, TiedAndUniformWeights) {
  MixturePosterior p;
  p.components = {LatentGaussian::constant({1.0}, {0.0}), LatentGaussian::constant({-1.0}, {0.0})};
  p.weights = {0.8, 0.2};
  auto tied = make_prior(p, PriorWeights::kTied);
  auto uniform = make_prior(p, PriorWeights::kUniform);
  EXPECT_EQ(tied.weights, p.weights);
  EXPECT_EQ(uniform.weights, (std::vector<double>{0.5, 0.5}));
  EXPECT_NEAR(kl_mixture_upper_bound(p, tied), 0.5, 1e-12);
  EXPECT_NEAR(kl_mixture_upper_bound(p, uniform),
              0.5 + 0.8 * std::log(1.6) + 0.2 * std::log(0.4), 1e-12);
}

class RegaVaeLoss : public ::testing::Test {
 protected:
  static constexpr std::size_t kVocab = 24;
  RegaVaeLoss()
      : pairs_(ts::toy_pairs(12, kVocab, 20)),
        corpus_(ts::as_corpus(pairs_)),
        model_(ts::micro_config(kVocab), 20),
        db_(retrieval::build_database(corpus_, model_)) {}

  std::vector<ts::Pair> pairs_;
  std::vector<CorpusPair> corpus_;
  model::VaeModel model_;
  retrieval::RetrievalDatabase db_;
};

TEST_F(RegaVaeLoss, NoNeighborsReducesToPlainElbo) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto& p = pairs_[seed];
    nn::Rng ra(seed), rb(seed);
    Tape ta, tb;
    auto plain = model_.elbo_step(ta, p.x, p.y, 0.4, ra);
    auto rega = regavae_loss(tb, model_, p.x, p.y, retrieval::RetrievalDatabase{},
                             RetrievalOptions{.k = 0}, 0.4, rb);
    EXPECT_EQ(plain.total, rega.elbo.total);
    EXPECT_EQ(plain.recon_nll, rega.elbo.recon_nll);
    EXPECT_EQ(plain.kl, rega.elbo.kl);
    EXPECT_EQ(rega.mixture.weights, std::vector<double>{1.0});
    EXPECT_EQ(ra.next_u64(), rb.next_u64());
  }
}

TEST_F(RegaVaeLoss, BetaZeroAndDeterminism) {
  const auto& p = pairs_[0];
  RetrievalOptions opts{.k = 3, .exclude_id = 0};
  nn::Rng r1(5), r2(5);
  Tape t1, t2;
  auto a = regavae_loss(t1, model_, p.x, p.y, db_, opts, 0.0, r1);
  auto b = regavae_loss(t2, model_, p.x, p.y, db_, opts, 0.0, r2);
  EXPECT_EQ(a.elbo.total, a.elbo.recon_nll);
  EXPECT_EQ(a.elbo.total, b.elbo.total);
  EXPECT_EQ(a.component, b.component);
  ASSERT_EQ(a.mixture.neighbors.size(), 3u);
  for (const auto& n : a.mixture.neighbors) EXPECT_NE(n.entry->id, 0u);
  EXPECT_EQ(a.mixture.layers.size(), 2u);
  EXPECT_EQ(a.mixture.layers[1].size(), 4u);
  EXPECT_GE(a.kl_bound, 0.0);
}

TEST_F(RegaVaeLoss, EmptyDatabaseIsRetrievalError) {
  Tape tape;
  nn::Rng rng(1);
  EXPECT_THROW(regavae_loss(tape, model_, pairs_[0].x, pairs_[0].y, retrieval::RetrievalDatabase{},
                            RetrievalOptions{.k = 2}, 1.0, rng),
               RetrievalError);
}

TEST_F(RegaVaeLoss, RetrievedComponentsStayConstant) {
  bool saw_retrieved = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto& p = pairs_[seed % pairs_.size()];
    nn::Rng rng(seed);
    Tape tape;
    auto step = regavae_loss(tape, model_, p.x, p.y, db_, RetrievalOptions{.k = 4}, 1.0, rng);
    tape.backward(step.elbo.loss);
    saw_retrieved |= step.component != 0;
    for (const auto& layer : step.mixture.layers) {
      for (std::size_t i = 1; i < layer.size(); ++i) {
        for (const Tensor* t : {&layer.components[i].mean, &layer.components[i].log_var}) {
          if (!t->has_grad()) continue;
          for (double g : t->grad()) EXPECT_EQ(g, 0.0);
        }
      }
    }
    for (const auto& e : db_.entries()) EXPECT_FALSE(e.key().mean.has_grad() && e.key().mean.grad()[0] != 0.0);
    for (const auto& param : model_.parameters()) param.clear_grad();
  }
  EXPECT_TRUE(saw_retrieved);
}

TEST_F(RegaVaeLoss, GradientsMatchFiniteDifferences) {
  const char* names[] = {"posterior.layer0.w", "posterior.layer1.b", "decoder.layer1.inject.w_v0",
                         "decoder.layer0.inject.w_z1", "encoder.layer0.mlp.w2",
                         "decoder.layer1.attn.wo", "output.w", "embed.token"};
  std::vector<Tensor> params;
  for (const char* n : names) params.push_back(model_.parameter(n));
  std::size_t retrieved_draws = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto& p = pairs_[seed];
    std::size_t component = 0;
    auto fn = [&](Tape& tape) {
      nn::Rng rng(seed);
      auto step = regavae_loss(tape, model_, p.x, p.y, db_,
                               RetrievalOptions{.k = 3, .exclude_id = seed}, 0.8, rng);
      component = step.component;
      return step.elbo.loss;
    };
    auto r = ts::grad_check(fn, params, 1e-5, 1e-6, 30);
    EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed;
    retrieved_draws += component != 0;
  }
  EXPECT_GT(retrieved_draws, 0u);
}
