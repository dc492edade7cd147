#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bfseg/loss.hpp"
#include "oracles.hpp"

using namespace bfseg;

TEST(LossMode, ParseAndPrint) {
  for (LossMode m : kAllModes) EXPECT_EQ(parse_loss_mode(to_string(m)), m);
  try {
    parse_loss_mode("seg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModeMismatch);
  }
}

TEST(Nll, MatchesPerPixelOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 2.0);
  Tensor<double> logits({2, 4, 3, 5});
  for (auto& v : logits.values()) v = g(rng);
  std::vector<std::uint8_t> targets(2 * 15);
  for (auto& t : targets) t = static_cast<std::uint8_t>(rng() % 4);
  const auto r = nll_pixelwise(logits, std::span<const std::uint8_t>(targets));
  double expected = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int p = 0; p < 15; ++p) {
      std::vector<double> l;
      for (int c = 0; c < 4; ++c) l.push_back(logits.plane_ptr(b, c)[p]);
      expected += oracle::nll(l, targets[b * 15 + p]);
    }
  EXPECT_NEAR(r.value, expected / 30.0, 1e-12);

  // Gradient: (softmax - onehot) / pixel count, checked by central differences.
  for (std::size_t i = 0; i < logits.size(); i += 7) {
    Tensor<double> lp = logits, lm = logits;
    lp[i] += 1e-6;
    lm[i] -= 1e-6;
    const double num = (nll_pixelwise(lp, std::span<const std::uint8_t>(targets), false).value -
                        nll_pixelwise(lm, std::span<const std::uint8_t>(targets), false).value) /
                       2e-6;
    EXPECT_NEAR(r.grad[i], num, 1e-8);
  }
}

TEST(Nll, UniformLogitsGiveLogK) {
  Tensor<double> logits({1, 10, 4, 4}, 0.0);
  std::vector<std::uint8_t> t(16, 3);
  EXPECT_NEAR(nll_pixelwise(logits, std::span<const std::uint8_t>(t)).value, std::log(10.0), 1e-15);
}

TEST(Nll, RejectsBadTargets) {
  Tensor<double> logits({1, 2, 2, 2}, 0.0);
  std::vector<std::uint8_t> short_t(3, 0), bad(4, 2);
  EXPECT_THROW(nll_pixelwise(logits, std::span<const std::uint8_t>(short_t)), Error);
  EXPECT_THROW(nll_pixelwise(logits, std::span<const std::uint8_t>(bad)), Error);
}

TEST(Uncertainty, IdentityAtZero) {
  for (double nll : {0.0, 0.1, 0.6931, 2.0, 123.4}) EXPECT_EQ(uncertainty_task_loss(nll, 0.0), nll);
}

TEST(Uncertainty, MinimizerIsLogNll) {
  for (double nll : {0.1, 0.6931, 2.0}) {
    EXPECT_NEAR(uncertainty_task_loss_ds(nll, std::log(nll)), 0.0, 1e-15);
    EXPECT_LT(uncertainty_task_loss(nll, std::log(nll)), uncertainty_task_loss(nll, std::log(nll) + 0.01));
    EXPECT_LT(uncertainty_task_loss(nll, std::log(nll)), uncertainty_task_loss(nll, std::log(nll) - 0.01));
  }
}

TEST(TotalLoss, ModesAndDerivatives) {
  const LossConfig seg{LossMode::SegOnly}, dist{LossMode::DistOnly}, eq{LossMode::MultitaskEqual},
      unc{LossMode::MultitaskUncertainty};
  const TaskWeights w0{0.0, 0.0};
  EXPECT_EQ(total_loss(0.4, 1.5, w0, seg).total, 0.4);
  EXPECT_EQ(total_loss(0.4, 1.5, w0, dist).total, 1.5);
  EXPECT_EQ(total_loss(0.4, 1.5, w0, eq).total, total_loss(0.4, 1.5, w0, unc).total);
  const auto b = total_loss(0.4, 1.5, TaskWeights{0.3, -0.7}, unc);
  EXPECT_NEAR(b.total, std::exp(-0.3) * 0.4 + 0.3 + std::exp(0.7) * 1.5 - 0.7, 1e-15);
  EXPECT_NEAR(b.d_seg_nll, std::exp(-0.3), 1e-15);
  EXPECT_NEAR(b.d_s_dist, 1.0 - std::exp(0.7) * 1.5, 1e-15);
  const auto e = total_loss(0.4, 1.5, w0, LossConfig{LossMode::MultitaskEqual, 2.0, 0.5});
  EXPECT_NEAR(e.total, 0.8 + 0.75, 1e-15);
  EXPECT_EQ(total_loss(0.4, 1.5, TaskWeights{1, 1}, eq).d_s_seg, 0.0);
}

TEST(ScaledNll, ArgmaxInvariantAndGapSmallNearOne) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_real_distribution<double> s2(0.25, 4.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> l(10);
    for (auto& v : l) v = g(rng);
    const double sigma2 = s2(rng);
    std::vector<double> scaled(l);
    for (auto& v : scaled) v /= sigma2;
    EXPECT_EQ(std::max_element(l.begin(), l.end()) - l.begin(),
              std::max_element(scaled.begin(), scaled.end()) - scaled.begin());
  }
  const std::vector<double> l{0.3, -1.2, 2.0};
  EXPECT_NEAR(exact_scaled_nll(l, 1, 1.0), approx_scaled_nll(l, 1, 1.0), 1e-15);
  EXPECT_NEAR(exact_scaled_nll(l, 1, 1.0), oracle::nll(l, 1), 1e-14);
}

TEST(LossLog, RecordIsJson) {
  std::ostringstream os;
  LossBreakdown b;
  b.total = 1.25;
  b.seg_nll = 0.5;
  write_loss_record(os, 17, b, 0.01);
  const auto j = nlohmann::json::parse(os.str());
  EXPECT_EQ(j["iter"], 17);
  EXPECT_DOUBLE_EQ(j["total"].get<double>(), 1.25);
  EXPECT_DOUBLE_EQ(j["lr"].get<double>(), 0.01);
  for (const char* k : {"seg_nll", "dist_nll", "s_seg", "s_dist"}) EXPECT_TRUE(j.contains(k)) << k;
}
