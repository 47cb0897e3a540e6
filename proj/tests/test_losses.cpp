#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mistere/losses.hpp"
#include "test_util.hpp"

using namespace mistere;
using testutil::expect_gradient_matches;
using testutil::random_tensor;

namespace {

Value C(Tensor t) { return Value::constant(std::move(t)); }

/// Two-class logits whose softmax puts probability p on class 0.
Value logits_for(double p) { return C(Tensor::matrix(1, 2, {std::log(p / (1.0 - p)), 0.0})); }

double focal(double p, double gamma) {
  const std::vector<std::size_t> y{0};
  return focal_loss(logits_for(p), y, gamma).value().item();
}

double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits.at(i, j) - mx);
    loss -= logits.at(i, labels[i]) - mx - std::log(z);
  }
  return loss;
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
Tensor random_rotation(std::size_t d, Rng& rng) {
  Tensor q = random_tensor({d, d}, rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += q.at(i, k) * q.at(j, k);
      for (std::size_t k = 0; k < d; ++k) q.at(i, k) -= dot * q.at(j, k);
    }
    double n = 0.0;
    for (std::size_t k = 0; k < d; ++k) n += q.at(i, k) * q.at(i, k);
    for (std::size_t k = 0; k < d; ++k) q.at(i, k) /= std::sqrt(n);
  }
  return q;
}

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.below(k);
  return y;
}

}  // namespace

// ---- focal loss ----

TEST(FocalLoss, PerfectPredictionIsZero) {
  const std::vector<std::size_t> y{0};
  EXPECT_EQ(focal_loss(C(Tensor::matrix(1, 2, {800.0, 0.0})), y, 3.0).value().item(), 0.0);
}

TEST(FocalLoss, HandValues) {
  EXPECT_NEAR(focal(0.5, 0.0), std::numbers::ln2, 1e-9);
  EXPECT_NEAR(focal(0.5, 0.0), 0.693147, 5e-7);
  EXPECT_NEAR(focal(0.9, 3.0), 1e-3 * -std::log(0.9), 1e-9);
  EXPECT_NEAR(focal(0.9, 3.0), 1.05361e-4, 1e-9);
}

TEST(FocalLoss, GammaZeroIsCrossEntropy) {
  Rng rng(1);
  for (int trial = 0; trial < 10000; ++trial) {
    const Tensor logits = random_tensor({1, 4}, rng, 5.0);
    const auto y = random_labels(rng, 1, 4);
    EXPECT_NEAR(focal_loss(C(logits), y, 0.0).value().item(), cross_entropy(logits, y), 1e-12);
  }
}

TEST(FocalLoss, GammaZeroIsCrossEntropyForConfidentMistakes) {
  Rng rng(21);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t k = 2 + rng.below(6);
    const Tensor logits = random_tensor({1, k}, rng, 20.0);
    const auto y = random_labels(rng, 1, k);
    const double ce = cross_entropy(logits, y);
    EXPECT_NEAR(focal_loss(C(logits), y, 0.0).value().item(), ce, 1e-12 * std::max(1.0, ce));
  }
}

TEST(FocalLoss, NonIncreasingInTrueClassProbability) {
  for (double gamma : {0.0, 0.5, 1.0, 2.0, 3.0, 5.0}) {
    double previous = focal(0.01, gamma);
    for (int i = 2; i <= 99; ++i) {
      const double current = focal(i / 100.0, gamma);
      EXPECT_LE(current, previous) << "gamma " << gamma << " p " << i / 100.0;
      previous = current;
    }
  }
}

TEST(FocalLoss, MaskedRowsIgnored) {
  const Tensor logits = Tensor::matrix(3, 2, {1.0, 2.0, -1.0, 0.5, 30.0, -30.0});
  const std::vector<std::size_t> y{0, 1, 1};
  const double masked = focal_loss(C(logits), y, 2.0, {true, true, false}).value().item();
  const std::vector<std::size_t> y2{0, 1};
  const double direct =
      focal_loss(C(Tensor::matrix(2, 2, {1.0, 2.0, -1.0, 0.5})), y2, 2.0).value().item();
  EXPECT_EQ(masked, direct);
}

TEST(FocalLoss, Gradient) {
  Rng rng(2);
  const auto y = random_labels(rng, 4, 3);
  for (double gamma : {0.0, 1.5, 3.0})
    expect_gradient_matches([&](const Value& x) { return focal_loss(x, y, gamma); },
                            random_tensor({4, 3}, rng, 2.0));
}

// ---- contrastive loss ----

TEST(ContrastiveLoss, SingleUtteranceIsZero) {
  Rng rng(3);
  const std::vector<std::size_t> y{2};
  const double v = contrastive_loss(C(random_tensor({1, 4}, rng)), C(random_tensor({1, 4}, rng)),
                                    y, 0.7)
                       .value()
                       .item();
  EXPECT_EQ(v, 0.0);
}

TEST(ContrastiveLoss, OrthonormalPairExample) {
  const Tensor ms = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor mt = ms;
  const std::vector<std::size_t> y{0, 1};
  const double v = contrastive_loss(C(ms), C(mt), y, 1.0).value().item();
  const double brute = oracle::contrastive(oracle::from_tensor(ms), oracle::from_tensor(mt), y, 1.0);
  EXPECT_NEAR(brute, 4.0 * (std::log(std::numbers::e + 2.0) - 1.0), 1e-12);
  EXPECT_NEAR(v, brute, 1e-12);
  // The printed value 2.205781 is 4 x 0.551445, rounded per anchor first.
  EXPECT_NEAR(v, 2.205781, 2.5e-6);
}

TEST(ContrastiveLoss, MatchesBruteForce) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 2 + rng.below(4);
    const Tensor ms = random_tensor({n, d}, rng), mt = random_tensor({n, d}, rng);
    const auto y = random_labels(rng, n, 3);
    const double tau = 0.2 + rng.uniform();
    EXPECT_NEAR(contrastive_loss(C(ms), C(mt), y, tau).value().item(),
                oracle::contrastive(oracle::from_tensor(ms), oracle::from_tensor(mt), y, tau),
                1e-10);
  }
}

TEST(ContrastiveLoss, PermutationInvariant) {
  Rng rng(5);
  const Tensor ms = random_tensor({5, 3}, rng), mt = random_tensor({5, 3}, rng);
  const std::vector<std::size_t> y{0, 1, 0, 2, 1};
  const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  std::vector<std::size_t> py;
  for (std::size_t i : perm) py.push_back(y[i]);
  const double a = contrastive_loss(C(ms), C(mt), y, 0.5).value().item();
  const double b =
      contrastive_loss(select_rows(C(ms), perm), select_rows(C(mt), perm), py, 0.5).value().item();
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(ContrastiveLoss, RotationInvariant) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor ms = random_tensor({4, 5}, rng), mt = random_tensor({4, 5}, rng);
    const Value r = C(random_rotation(5, rng));
    const auto y = random_labels(rng, 4, 2);
    const double a = contrastive_loss(C(ms), C(mt), y, 0.8).value().item();
    const double b =
        contrastive_loss(matmul(C(ms), r), matmul(C(mt), r), y, 0.8).value().item();
    EXPECT_NEAR(a, b, 1e-9);
  }
}

TEST(ContrastiveLoss, PullingPositivesTogetherLowersLoss) {
  Rng rng(7);
  int decreased = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3, d = 6;
    const Tensor ms = random_tensor({n, d}, rng);
    Tensor mt = random_tensor({n, d}, rng);
    const std::vector<std::size_t> y{0, 1, 2};
    const double before = contrastive_loss(C(ms), C(mt), y, 1.0).value().item();
    const std::size_t i = rng.below(n);
    for (std::size_t j = 0; j < d; ++j) mt.at(i, j) += 0.5 * (ms.at(i, j) - mt.at(i, j));
    const double after = contrastive_loss(C(ms), C(mt), y, 1.0).value().item();
    decreased += after < before;
  }
  EXPECT_EQ(decreased, 100);
}

TEST(ContrastiveLoss, ZeroRowRejected) {
  const std::vector<std::size_t> y{0, 1};
  EXPECT_THROW(contrastive_loss(C(Tensor({2, 3}, 0.0)), C(Tensor({2, 3}, 1.0)), y, 1.0),
               NumericalError);
  EXPECT_THROW(contrastive_loss(C(Tensor({2, 3}, 1.0)), C(Tensor({2, 3}, 1.0)), y, 0.0),
               std::invalid_argument);
}

TEST(ContrastiveLoss, Gradient) {
  Rng rng(8);
  const Tensor mt = random_tensor({4, 3}, rng);
  const std::vector<std::size_t> y{0, 1, 0, 1};
  expect_gradient_matches([&](const Value& ms) { return contrastive_loss(ms, C(mt), y, 0.5); },
                          random_tensor({4, 3}, rng));
  const Tensor ms = random_tensor({4, 3}, rng);
  expect_gradient_matches([&](const Value& t) { return contrastive_loss(C(ms), t, y, 0.5); },
                          random_tensor({4, 3}, rng));
}

// ---- KL consistency ----

TEST(KlConsistency, IdenticalDistributionsGiveZero) {
  const Value p = C(Tensor::matrix(2, 3, {0.2, 0.3, 0.5, 0.6, 0.3, 0.1}));
  EXPECT_NEAR(kl_consistency(p, p, p).value().item(), 0.0, 1e-15);
}

TEST(KlConsistency, HandExample) {
  const Value pm = C(Tensor::matrix(1, 2, {0.75, 0.25}));
  const Value ps = C(Tensor::matrix(1, 2, {0.5, 0.5}));
  const double v = kl_consistency(pm, ps, pm).value().item();
  EXPECT_NEAR(v, 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-9);
  EXPECT_NEAR(v, 0.130812, 5e-7);
}

TEST(KlConsistency, NonNegativeAndAsymmetric) {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const Value pm = softmax(C(random_tensor({2, 4}, rng, 2.0)));
    const Value ps = softmax(C(random_tensor({2, 4}, rng, 2.0)));
    const Value pt = softmax(C(random_tensor({2, 4}, rng, 2.0)));
    EXPECT_GE(kl_consistency(pm, ps, pt).value().item(), 0.0);
  }
  const std::vector<double> p{0.75, 0.25}, q{0.5, 0.5};
  EXPECT_GT(std::abs(kl_divergence(p, q) - kl_divergence(q, p)), 1e-3);
  EXPECT_EQ(kl_divergence(p, p), 0.0);
}

TEST(KlConsistency, Gradient) {
  Rng rng(10);
  const Value ps = softmax(C(random_tensor({3, 4}, rng)));
  const Value pt = softmax(C(random_tensor({3, 4}, rng)));
  expect_gradient_matches([&](const Value& x) { return kl_consistency(softmax(x), ps, pt); },
                          random_tensor({3, 4}, rng));
  const Value pm = softmax(C(random_tensor({3, 4}, rng)));
  expect_gradient_matches([&](const Value& x) { return kl_consistency(pm, softmax(x), pt); },
                          random_tensor({3, 4}, rng));
}

// ---- total loss ----

namespace {

struct Instance {
  Tensor s, t, m, fused, ms, mt;
  std::vector<std::size_t> y;
};

Instance random_instance(Rng& rng, std::size_t n = 4, std::size_t k = 3) {
  return {random_tensor({n, k}, rng, 2.0), random_tensor({n, k}, rng, 2.0),
          random_tensor({n, k}, rng, 2.0), random_tensor({n, k}, rng, 2.0),
          random_tensor({n, 5}, rng),      random_tensor({n, 5}, rng),
          random_labels(rng, n, k)};
}

LossBreakdown total_of(const Instance& x, const LossConfig& cfg, const nn::Mask& mask = {}) {
  return total_loss({C(x.s), C(x.t), C(x.m)}, C(x.fused), C(x.ms), C(x.mt), x.y, cfg, mask);
}

}  // namespace

TEST(TotalLoss, ComposesTheSubLosses) {
  Rng rng(11);
  const LossConfig cfg{2.0, 0.7, 0.3, 0.9};
  for (int trial = 0; trial < 50; ++trial) {
    const Instance x = random_instance(rng);
    const LossBreakdown b = total_of(x, cfg);
    const double fs = focal_loss(C(x.s), x.y, 2.0).value().item();
    const double ft = focal_loss(C(x.t), x.y, 2.0).value().item();
    const double fm = focal_loss(C(x.m), x.y, 2.0).value().item();
    const double ff = focal_loss(C(x.fused), x.y, 2.0).value().item();
    const double con = oracle::contrastive(oracle::from_tensor(x.ms), oracle::from_tensor(x.mt),
                                           x.y, 0.9);
    const double kl =
        kl_consistency(softmax(C(x.m)), softmax(C(x.s)), softmax(C(x.t))).value().item();
    EXPECT_NEAR(b.can, fs + ft, 1e-12);
    EXPECT_NEAR(b.multi, fm + 0.7 * con, 1e-10);
    EXPECT_NEAR(b.contrastive, con, 1e-10);
    EXPECT_NEAR(b.kl, kl, 1e-12);
    EXPECT_NEAR(b.moe, ff + 0.3 * kl, 1e-12);
    EXPECT_NEAR(b.total_value(), b.can + b.multi + b.moe, 1e-12);
    EXPECT_GE(b.can, 0.0);
    EXPECT_GE(b.multi, 0.0);
    EXPECT_GE(b.moe, 0.0);
  }
}

TEST(TotalLoss, ZeroWeightsLeaveFourFocalTerms) {
  Rng rng(12);
  const Instance x = random_instance(rng);
  const LossBreakdown b = total_of(x, LossConfig{3.0, 0.0, 0.0, 1.0});
  double expected = 0.0;
  for (const Tensor* l : {&x.s, &x.t, &x.m, &x.fused})
    expected += focal_loss(C(*l), x.y, 3.0).value().item();
  EXPECT_NEAR(b.total_value(), expected, 1e-12);
}

TEST(TotalLoss, ConfidentAndCorrectIsNearZero) {
  Rng rng(13);
  Instance x = random_instance(rng);
  for (Tensor* l : {&x.s, &x.t, &x.m, &x.fused}) {
    l->fill(-20.0);
    for (std::size_t i = 0; i < x.y.size(); ++i) l->at(i, x.y[i]) = 20.0;
  }
  EXPECT_LE(total_of(x, LossConfig{3.0, 0.0, 0.0, 1.0}).total_value(), 1e-6);
}

TEST(TotalLoss, PaddedRowsContributeNothing) {
  Rng rng(14);
  const Instance x = random_instance(rng, 5);
  Instance head = x;
  const std::vector<std::size_t> keep{0, 1, 2};
  for (Tensor* l : {&head.s, &head.t, &head.m, &head.fused, &head.ms, &head.mt})
    *l = select_rows(C(*l), keep).value();
  head.y.resize(3);
  const LossConfig cfg;
  const LossBreakdown a = total_of(x, cfg, {true, true, true, false, false});
  const LossBreakdown b = total_of(head, cfg);
  EXPECT_NEAR(a.total_value(), b.total_value(), 1e-9);
  EXPECT_NEAR(a.contrastive, b.contrastive, 1e-9);
  EXPECT_NEAR(a.kl, b.kl, 1e-9);
}

TEST(TotalLoss, Gradient) {
  Rng rng(15);
  const Instance x = random_instance(rng);
  const LossConfig cfg{3.0, 1.0, 0.1, 1.0};
  expect_gradient_matches(
      [&](const Value& s) {
        return total_loss({s, C(x.t), C(x.m)}, C(x.fused), C(x.ms), C(x.mt), x.y, cfg).total;
      },
      x.s);
  expect_gradient_matches(
      [&](const Value& m) {
        return total_loss({C(x.s), C(x.t), m}, C(x.fused), C(x.ms), C(x.mt), x.y, cfg).total;
      },
      x.m);
  expect_gradient_matches(
      [&](const Value& ms) {
        return total_loss({C(x.s), C(x.t), C(x.m)}, C(x.fused), ms, C(x.mt), x.y, cfg).total;
      },
      x.ms);
}

TEST(TotalLoss, AverageOverConversations) {
  Rng rng(16);
  const LossConfig cfg;
  std::vector<LossBreakdown> parts;
  double sum = 0.0, can = 0.0;
  for (int i = 0; i < 3; ++i) {
    parts.push_back(total_of(random_instance(rng), cfg));
    sum += parts.back().total_value();
    can += parts.back().can;
  }
  const LossBreakdown avg = average(parts);
  EXPECT_NEAR(avg.total_value(), sum / 3.0, 1e-12);
  EXPECT_NEAR(avg.can, can / 3.0, 1e-12);
}

TEST(LossConfig, Validation) {
  EXPECT_THROW((LossConfig{-1.0, 1.0, 0.1, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossConfig{3.0, -1.0, 0.1, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossConfig{3.0, 1.0, -0.1, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossConfig{3.0, 1.0, 0.1, 0.0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW(LossConfig{}.validate());
}
