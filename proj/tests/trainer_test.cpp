#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "bfseg/config.hpp"
#include "bfseg/trainer.hpp"

using namespace bfseg;

namespace {

NetworkConfig tiny_net() {
  NetworkConfig c;
  c.stages = 2;
  c.channels_per_stage = {4, 6};
  c.convs_per_stage = {1, 1};
  return c;
}

std::vector<Scene> tiny_scenes(int n, std::uint64_t seed) {
  SynthParams p;
  p.extent = 32;
  p.min_side = 4;
  p.max_side = 12;
  p.max_buildings = 5;
  return generate_synthetic(n, p, seed, 4);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("bfseg_trainer_" + name);
  std::filesystem::remove_all(d);
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Schedule, StepDecay) {
  TrainConfig c;
  c.lr0 = 0.01;
  c.lr_step_iters = 100;
  c.lr_factor = 0.1;
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 0), 0.01);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 99), 0.01);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 100), 0.001);
  EXPECT_NEAR(scheduled_lr(c, 250), 0.0001, 1e-18);
}

TEST(Sgd, HandTrace) {
  ParamStore<double> ps;
  ps.add("w", {2});
  ps.add("s", {1}, false);
  ps[0].value[0] = 1.0;
  ps[0].value[1] = -2.0;
  ps[1].value[0] = 0.5;
  TrainConfig c;
  c.lr0 = 0.1;
  c.momentum = 0.9;
  c.weight_decay = 0.01;
  c.lr_step_iters = 1;
  c.lr_factor = 0.5;
  OptimizerState<double> st(ps, c.lr0);

  // Step 1: lr 0.1, v = g + wd*w.
  ps[0].grad[0] = 0.2;
  ps[0].grad[1] = 0.0;
  ps[1].grad[0] = 1.0;
  sgd_step(ps, st, c);
  const double v0 = 0.2 + 0.01 * 1.0, v1 = 0.0 + 0.01 * -2.0, vs = 1.0;
  EXPECT_NEAR(ps[0].value[0], 1.0 - 0.1 * v0, 1e-15);
  EXPECT_NEAR(ps[0].value[1], -2.0 - 0.1 * v1, 1e-15);
  EXPECT_NEAR(ps[1].value[0], 0.5 - 0.1 * vs, 1e-15);  // no decay on log-variances

  // Step 2: lr halves, momentum carries.
  const double w0 = ps[0].value[0];
  ps[0].grad[0] = -0.1;
  sgd_step(ps, st, c);
  const double v0b = 0.9 * v0 + (-0.1 + 0.01 * w0);
  EXPECT_NEAR(ps[0].value[0], w0 - 0.05 * v0b, 1e-15);
  EXPECT_EQ(st.iteration, 2);
  EXPECT_DOUBLE_EQ(st.lr, 0.025);
}

TEST(Targets, FlipEquivariance) {
  // Distance targets are computed on the whole scene, then cropped and
  // flipped; for a full-scene crop this must equal encoding the flipped mask.
  const auto scenes = tiny_scenes(3, 5);
  const LabelConfig lc{6.0, 6};
  const auto targets = prepare_targets(scenes, lc);
  const BinSpec spec(6, 6.0);
  for (bool fh : {false, true})
    for (bool fv : {false, true}) {
      const auto batch = assemble_batch<float>(targets, {CropDecision{1, 0, 0, fh, fv}}, 32);
      Mask m = scenes[1].mask;
      if (fh) m = flip_horizontal(m);
      if (fv) m = flip_vertical(m);
      const auto expect = quantize(signed_truncated_distance(m, 6.0), spec).bins;
      EXPECT_EQ(batch.dist_targets, expect.storage());
      EXPECT_EQ(batch.seg_targets, m.storage());
    }
}

TEST(Targets, CropAlignsImageAndMask) {
  const auto scenes = tiny_scenes(2, 6);
  const auto targets = prepare_targets(scenes, LabelConfig{});
  const auto b = assemble_batch<double>(targets, {CropDecision{0, 8, 16, true, false}}, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const int sx = 16 + 15 - x, sy = 8 + y;
      EXPECT_EQ(b.seg_targets[y * 16 + x], scenes[0].mask(sy, sx));
      EXPECT_DOUBLE_EQ(b.images.at(0, 1, y, x), (scenes[0].image.at(sy, sx, 1) / 255.0 - 0.5) / 0.25);
    }
}

TEST(Sampler, DeterministicAndInBounds) {
  std::vector<std::pair<int, int>> ext{{32, 32}, {40, 48}, {64, 32}};
  PatchSampler a(ext, 16, 4, 0, 9), b(ext, 16, 4, 0, 9), c(ext, 16, 4, 0, 10);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const auto da = a.next(), db = b.next(), dc = c.next();
    EXPECT_EQ(da, db);
    differs |= da != dc;
    for (const auto& d : da) {
      ASSERT_LT(d.scene, ext.size());
      EXPECT_LE(d.y0 + 16, ext[d.scene].first);
      EXPECT_LE(d.x0 + 16, ext[d.scene].second);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Sampler, BatchesPerScene) {
  PatchSampler s({{32, 32}, {32, 32}, {32, 32}, {32, 32}}, 16, 3, 2, 1);
  for (int i = 0; i < 10; ++i) {
    const auto first = s.next(), second = s.next();
    for (const auto& d : first) EXPECT_EQ(d.scene, first[0].scene);
    for (const auto& d : second) EXPECT_EQ(d.scene, first[0].scene);
  }
}

TEST(Sampler, RejectsSmallScenes) {
  EXPECT_THROW(PatchSampler({{8, 32}}, 16, 1, 0, 1), Error);
  EXPECT_THROW(PatchSampler({}, 16, 1, 0, 1), Error);
}

TEST(Training, LossDecreasesAndLogsAreDeterministic) {
  const auto scenes = tiny_scenes(6, 3);
  TrainConfig c;
  c.patch = 16;
  c.patches_per_batch = 2;
  c.max_iters = 60;
  c.lr_step_iters = 40;
  c.loss.mode = LossMode::MultitaskUncertainty;
  const LabelConfig lc{6.0, 10};

  auto run = [&](const std::filesystem::path& dir) {
    Network<float> net(tiny_net());
    net.initialize(c.seed);
    RunOptions o;
    o.out_dir = dir;
    return run_experiment(net, scenes, lc, c, o);
  };
  const auto d1 = temp_dir("a"), d2 = temp_dir("b");
  const auto r1 = run(d1);
  const auto r2 = run(d2);
  ASSERT_EQ(r1.trace.size(), 60u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) first += r1.trace[i].total, last += r1.trace[50 + i].total;
  EXPECT_LT(last, first);
  EXPECT_EQ(slurp(d1 / "loss.ndjson"), slurp(d2 / "loss.ndjson"));
  EXPECT_EQ(slurp(d1 / "final.fckp"), slurp(d2 / "final.fckp"));
  EXPECT_TRUE(std::filesystem::exists(d1 / "iter40.fckp"));
  // The log-variances moved.
  EXPECT_NE(r1.trace.back().s_seg, 0.0);
}

TEST(Training, InitFromLoadsCheckpoint) {
  const auto scenes = tiny_scenes(4, 4);
  const auto dir = temp_dir("init");
  Network<float> a(tiny_net());
  a.initialize(3);
  std::filesystem::create_directories(dir);
  save_checkpoint((dir / "start.fckp").string(), a.params());
  TrainConfig c;
  c.patch = 16;
  c.max_iters = 0;
  c.init_from = (dir / "start.fckp").string();
  Network<float> b(tiny_net());
  b.initialize(99);
  run_experiment(b, scenes, LabelConfig{}, c);
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
}

TEST(Training, ValidatesConfig) {
  const auto scenes = tiny_scenes(2, 1);
  Network<float> net(tiny_net());
  TrainConfig c;
  c.patch = 18;  // not divisible by 4
  EXPECT_THROW(run_experiment(net, scenes, LabelConfig{}, c), Error);
  c.patch = 16;
  EXPECT_THROW(run_experiment(net, {}, LabelConfig{}, c), Error);
}

TEST(Config, ParseOverridesAndRoundTrip) {
  std::istringstream is(
      "# desk\n"
      "lr0 = 0.02\n"
      "mode = multitask_uncertainty   # trailing comment\n"
      "channels = 8, 16, 32\n"
      "bins = 8\n"
      "patch=64\n");
  const ExperimentConfig c = parse_config(is);
  EXPECT_DOUBLE_EQ(c.train.lr0, 0.02);
  EXPECT_EQ(c.train.loss.mode, LossMode::MultitaskUncertainty);
  EXPECT_EQ(c.net.channels_per_stage, (std::vector<int>{8, 16, 32}));
  EXPECT_EQ(c.net.num_distance_classes, 8);
  EXPECT_EQ(c.resolved_threshold_bin(), 4);
  EXPECT_EQ(c.train.patch, 64);
  c.validate();

  std::istringstream again(config_to_text(c));
  const ExperimentConfig d = parse_config(again);
  EXPECT_EQ(config_to_text(d), config_to_text(c));
}

TEST(Config, Errors) {
  auto parse = [](const std::string& s) {
    std::istringstream is(s);
    return parse_config(is);
  };
  EXPECT_THROW(parse("nonsense = 1\n"), Error);
  EXPECT_THROW(parse("lr0 = abc\n"), Error);
  EXPECT_THROW(parse("max_iters = 1.5\n"), Error);
  EXPECT_THROW(parse("just words\n"), Error);
  EXPECT_THROW(parse("mode = both\n"), Error);
  EXPECT_THROW(parse("threshold_bin = 10\n").validate(), Error);
  EXPECT_THROW(parse("split = random\n").validate(), Error);
}
