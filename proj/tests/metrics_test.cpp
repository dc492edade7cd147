#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "bfseg/metrics.hpp"
#include "oracles.hpp"

using namespace bfseg;

namespace {

// Counting oracle written independently of the library.
struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts count(const Mask& p, const Mask& g) {
  Counts c;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) {
      if (p(y, x) && g(y, x)) ++c.tp;
      else if (p(y, x)) ++c.fp;
      else if (g(y, x)) ++c.fn;
      else ++c.tn;
    }
  return c;
}

}  // namespace

TEST(Metrics, HandComputed) {
  Mask p(2, 3, std::vector<std::uint8_t>{1, 1, 0, 0, 1, 0});
  Mask g(2, 3, std::vector<std::uint8_t>{1, 0, 0, 1, 1, 0});
  const auto iou = iou_building(p, g);
  EXPECT_EQ(iou.intersection, 2u);
  EXPECT_EQ(iou.union_, 4u);
  EXPECT_DOUBLE_EQ(iou.ratio, 0.5);
  EXPECT_DOUBLE_EQ(pixel_accuracy(p, g), 4.0 / 6.0);
}

TEST(Metrics, EmptyBothIsPerfect) {
  Mask z(4, 4, 0);
  EXPECT_EQ(iou_building(z, z).ratio, 1.0);
  EXPECT_EQ(pixel_accuracy(z, z), 1.0);
  EXPECT_THROW(iou_building(z, Mask(4, 5, 0)), Error);
}

TEST(Metrics, MatchCountingOracle) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 50; ++t) {
    const Mask p = oracle::random_mask(33, 17, 0.1 + 0.016 * t, rng);
    const Mask g = oracle::random_blob_mask(33, 17, rng);
    const Counts c = count(p, g);
    const auto iou = iou_building(p, g);
    EXPECT_EQ(iou.intersection, c.tp);
    EXPECT_EQ(iou.union_, c.tp + c.fp + c.fn);
    if (c.tp + c.fp + c.fn) EXPECT_EQ(iou.ratio, static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn));
    EXPECT_EQ(pixel_accuracy(p, g), static_cast<double>(c.tp + c.tn) / (33.0 * 17.0));
  }
}

TEST(Report, OverallIsCountSumNotMeanOfRatios) {
  MetricsReport r;
  r.add("a", MetricCounts{1, 10, 90, 100});
  r.add("b", MetricCounts{9, 10, 100, 100});
  r.add("a", MetricCounts{0, 0, 50, 50});
  const auto o = r.overall();
  EXPECT_EQ(o.intersection, 10u);
  EXPECT_EQ(o.union_, 20u);
  EXPECT_DOUBLE_EQ(o.iou(), 0.5);
  EXPECT_DOUBLE_EQ(o.accuracy(), 240.0 / 250.0);
  EXPECT_EQ(r.per_location().at("a").pixels, 150u);
}

TEST(Report, JsonRoundTripAndCsv) {
  MetricsReport r;
  r.add("vienna", MetricCounts{2, 3, 7, 9});
  r.add("austin", MetricCounts{1, 3, 8, 9});
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j["overall"]["iou"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["per_location"]["vienna"]["iou"].get<double>(), 0.6667);
  const auto back = MetricsReport::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  std::ostringstream os;
  r.write_csv(os);
  EXPECT_EQ(os.str(),
            "location,iou,accuracy,intersection,union,correct,pixels\n"
            "austin,0.3333,0.8889,1,3,8,9\n"
            "vienna,0.6667,0.7778,2,3,7,9\n"
            "Overall,0.5000,0.8333,3,6,15,18\n");
}

TEST(Tiling, CoversExtentOnce) {
  EXPECT_EQ(tile_origins(128, 64), (std::vector<int>{0, 64}));
  EXPECT_EQ(tile_origins(100, 32), (std::vector<int>{0, 32, 64, 68}));
  EXPECT_EQ(tile_origins(32, 32), (std::vector<int>{0}));
  EXPECT_THROW(tile_origins(16, 32), Error);
}

TEST(Predict, TiledEqualsWholeSceneForPointwiseNetwork) {
  // With 1x1 kernels the network is pointwise in the input, so tiling cannot
  // change predictions except through pooling windows, which align with tiles.
  NetworkConfig c;
  c.stages = 1;
  c.channels_per_stage = {3};
  c.convs_per_stage = {1};
  c.kernel_size = 1;
  c.num_distance_classes = 4;
  Network<double> net(c);
  net.initialize(4);
  SynthParams sp;
  sp.extent = 24;
  sp.min_side = 3;
  sp.max_side = 8;
  const auto scenes = generate_synthetic(1, sp, 2, 2);
  const auto tiled = predict_scene(net, scenes[0].image, 8, 2);
  const auto whole = predict_scene(net, scenes[0].image, 24, 2);
  EXPECT_EQ(tiled.seg, whole.seg);
  EXPECT_EQ(tiled.dist_bins, whole.dist_bins);
  EXPECT_EQ(tiled.dist, decode_mask(tiled.dist_bins, 4, 2));
}

TEST(Evaluate, ModelAndPredictionPathsAgree) {
  NetworkConfig c;
  c.stages = 1;
  c.channels_per_stage = {4};
  c.convs_per_stage = {1};
  c.num_distance_classes = 4;
  Network<float> net(c);
  net.initialize(8);
  SynthParams sp;
  sp.extent = 16;
  sp.min_side = 3;
  sp.max_side = 8;
  const auto scenes = generate_synthetic(5, sp, 3, 2);
  const auto r = evaluate_model(net, scenes, DecodeRule::SegArgmax, 8, 2);
  std::map<std::string, Mask> preds;
  for (const auto& s : scenes) preds.emplace(s.id, predict_scene(net, s.image, 8, 2).seg);
  EXPECT_EQ(evaluate_predictions(scenes, preds).to_json(), r.to_json());
  EXPECT_THROW(evaluate_model(net, {}, DecodeRule::SegArgmax, 8, 2), Error);
  preds.erase(scenes[0].id);
  EXPECT_THROW(evaluate_predictions(scenes, preds), Error);
}
