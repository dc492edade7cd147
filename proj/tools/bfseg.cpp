// bfseg: command-line entry point for the boundary-aware building segmentation
// pipeline (synth, encode, train, predict, eval, gradcheck, report).
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bfseg/config.hpp"
#include "bfseg/data.hpp"
#include "bfseg/distxform.hpp"
#include "bfseg/gradcheck.hpp"
#include "bfseg/metrics.hpp"
#include "bfseg/network.hpp"
#include "bfseg/png_io.hpp"
#include "bfseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace bfseg;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr const char* kDataRootEnv = "BFSEG_DATA_ROOT";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_data_root() {
  const char* env = std::getenv(kDataRootEnv);
  return env ? env : "";
}

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Shared model/config options of train, predict and eval.
struct ModelArgs {
  std::string config;
  std::string run;
  std::string checkpoint;
  std::string data;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> threshold_bin;
  std::vector<std::string> overrides;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "Experiment config file (key = value)");
    app->add_option("--run", run, "Run directory written by 'train' (config.txt, final.fckp)");
    app->add_option("--checkpoint", checkpoint, "Checkpoint file (overrides <run>/final.fckp)");
    app->add_option("--data", data, std::string("Dataset root with images/ and gt/ (default $") + kDataRootEnv + ")");
    app->add_option("--mode", mode, "Loss mode: seg_only, dist_only, multitask_equal, multitask_uncertainty");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--threshold-bin", threshold_bin, "Distance class at or above which a pixel is building (default K/2)");
    app->add_option("--set", overrides, "Override one config key, e.g. --set lr0=0.001 (repeatable)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!run.empty()) c = load_config((fs::path(run) / "config.txt").string(), c);
    if (!config.empty()) c = load_config(config, c);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      apply_config_value(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    if (!mode.empty()) c.train.loss.mode = parse_loss_mode(mode);
    if (seed) c.train.seed = *seed;
    if (threshold_bin) c.threshold_bin = *threshold_bin;
    if (!data.empty()) c.data_root = data;
    if (c.data_root.empty()) c.data_root = default_data_root();
    c.validate();
    return c;
  }

  std::string checkpoint_path() const {
    if (!checkpoint.empty()) return checkpoint;
    if (!run.empty()) return (fs::path(run) / "final.fckp").string();
    throw UsageError("need --checkpoint or --run");
  }
};

void print_resolved(const ExperimentConfig& c) {
  std::cout << "# resolved config (seed " << c.train.seed << ")\n" << config_to_text(c) << std::flush;
}

DatasetSplit load_split(const ExperimentConfig& c) {
  if (c.data_root.empty()) {
    throw Error(ErrorCode::IoError, std::string("no dataset: pass --data or set ") + kDataRootEnv);
  }
  return split_dataset(load_dataset(c.data_root), c.split_rule());
}

DecodeRule default_rule(LossMode mode) {
  return mode == LossMode::DistOnly ? DecodeRule::DistThreshold : DecodeRule::SegArgmax;
}

DecodeRule parse_rule(const std::string& s, LossMode mode) {
  if (s == "auto") return default_rule(mode);
  if (s == "seg") return DecodeRule::SegArgmax;
  if (s == "dist") return DecodeRule::DistThreshold;
  throw UsageError("--decode must be auto, seg or dist");
}

// ---------------------------------------------------------------- synth

int cmd_synth(const fs::path& out, int count, std::uint64_t seed, const SynthParams& params) {
  std::cout << "# synth: count " << count << ", seed " << seed << ", extent " << params.extent << '\n'
            << nlohmann::json(params).dump() << '\n';
  const auto scenes = generate_synthetic(count, params, seed);
  write_synthetic_dataset(out, scenes, params, seed);
  std::cout << "wrote " << scenes.size() << " scenes to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- encode

int cmd_encode(const fs::path& in, const fs::path& out, double radius, int bins) {
  const BinSpec spec(bins, radius);
  std::cout << "# encode: radius " << radius << ", bins " << bins << '\n';
  fs::create_directories(out);
  for (const auto& path : png_files(in)) {
    const Mask mask = read_mask_png(path.string());
    const SignedDistanceMap sdm = signed_truncated_distance(mask, radius);
    const DistanceClassMap dcm = quantize(sdm, spec);
    write_gray_png((out / path.filename()).string(), dcm.bins);
    save_sdt((out / path.stem()).string() + ".sdt", sdm);
    std::cout << path.filename().string() << ":";
    for (auto n : bin_histogram(dcm)) std::cout << ' ' << n;
    std::cout << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const ModelArgs& args, const std::string& init_from, const fs::path& out) {
  ExperimentConfig c = args.resolve();
  if (!init_from.empty()) c.train.init_from = init_from;
  print_resolved(c);
  const DatasetSplit split = load_split(c);
  std::cout << "train " << split.train.size() << " / validation " << split.validation.size() << " scenes ("
            << split.rule << ")\n";

  fs::create_directories(out);
  {
    std::ofstream cfg(out / "config.txt");
    cfg << config_to_text(c);
  }
  Network<float> net(c.net);
  net.initialize(c.train.seed);
  RunOptions opts;
  opts.out_dir = out;
  opts.on_iteration = [&](long it, const LossBreakdown& b, double lr) {
    if (it % 100 == 0 || it + 1 == c.train.max_iters) {
      std::printf("iter %6ld  total %.5f  seg %.5f  dist %.5f  s_seg %.4f  s_dist %.4f  lr %.2g\n", it, b.total,
                  b.seg_nll, b.dist_nll, b.s_seg, b.s_dist, lr);
      std::fflush(stdout);
    }
  };
  const RunResult r = run_experiment(net, split.train, c.labels, c.train, opts);
  std::printf("trained %ld iterations in %.1f s; checkpoint %s\n", c.train.max_iters, r.seconds,
              r.checkpoints.back().c_str());
  return 0;
}

// ---------------------------------------------------------------- predict

int cmd_decode_classes(const fs::path& in, const fs::path& out, int bins, int threshold_bin) {
  fs::create_directories(out);
  for (const auto& path : png_files(in)) {
    const Grid<std::uint8_t> classes = read_gray_png(path.string());
    for (auto v : classes.values())
      if (v >= bins) throw Error(ErrorCode::BadClassIndex, path.string() + ": class index >= K");
    write_mask_png((out / path.filename()).string(), decode_mask(classes, bins, threshold_bin));
  }
  return 0;
}

int cmd_predict(const ModelArgs& args, const fs::path& out, bool all_scenes) {
  const ExperimentConfig c = args.resolve();
  print_resolved(c);
  Network<float> net(c.net);
  load_checkpoint(args.checkpoint_path(), net.params());
  DatasetSplit split = load_split(c);
  std::vector<const Scene*> todo;
  for (const auto& s : split.validation) todo.push_back(&s);
  if (all_scenes)
    for (const auto& s : split.train) todo.push_back(&s);
  for (const char* sub : {"seg", "dist", "dist_classes"}) fs::create_directories(out / sub);
  for (const Scene* s : todo) {
    const ScenePrediction p = predict_scene(net, s->image, c.train.patch, c.resolved_threshold_bin());
    write_mask_png((out / "seg" / (s->id + ".png")).string(), p.seg);
    write_mask_png((out / "dist" / (s->id + ".png")).string(), p.dist);
    write_gray_png((out / "dist_classes" / (s->id + ".png")).string(), p.dist_bins);
  }
  std::cout << "wrote predictions for " << todo.size() << " scenes to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

void emit_report(const MetricsReport& report, const std::string& out, const std::string& csv,
                 const nlohmann::json& extra) {
  nlohmann::json j = report.to_json();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + out);
    os << j.dump(2) << '\n';
  }
  if (!csv.empty()) {
    std::ofstream os(csv);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + csv);
    report.write_csv(os);
  }
}

int cmd_eval(const ModelArgs& args, const std::string& pred_dir, const std::string& decode, std::string out,
             const std::string& csv) {
  if (!pred_dir.empty()) {
    ExperimentConfig c;
    c.data_root = args.data.empty() ? default_data_root() : args.data;
    if (!args.config.empty()) c = load_config(args.config, c);
    if (!args.data.empty()) c.data_root = args.data;
    const DatasetSplit split = load_split(c);
    std::map<std::string, Mask> preds;
    for (const auto& s : split.validation) preds.emplace(s.id, read_mask_png((fs::path(pred_dir) / (s.id + ".png")).string()));
    emit_report(evaluate_predictions(split.validation, preds), out, csv, {{"source", pred_dir}});
    return 0;
  }
  const ExperimentConfig c = args.resolve();
  print_resolved(c);
  Network<float> net(c.net);
  load_checkpoint(args.checkpoint_path(), net.params());
  const DatasetSplit split = load_split(c);
  const DecodeRule rule = parse_rule(decode, c.train.loss.mode);
  const MetricsReport report = evaluate_model(net, split.validation, rule, c.train.patch, c.resolved_threshold_bin());
  if (out.empty() && !args.run.empty()) out = (fs::path(args.run) / "report.json").string();
  emit_report(report, out, csv,
              {{"mode", std::string(to_string(c.train.loss.mode))},
               {"seed", c.train.seed},
               {"decode", std::string(to_string(rule))}});
  return 0;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(std::uint64_t seed, double tolerance, bool corrupt) {
  GradCheckOptions opt;
  opt.seed = seed;
  opt.tolerance = tolerance;
  opt.corrupt_gradient = corrupt;
  std::cout << "# gradcheck: seed " << seed << ", 2-stage " << opt.extent << "x" << opt.extent
            << " model, float64, central differences step " << opt.step << ", tolerance " << tolerance << '\n';
  const GradCheckReport r = run_gradcheck(opt);
  for (const auto& g : r.groups) {
    std::printf("%-22s %5zu params  max rel err %.3e  max abs err %.3e\n", g.name.c_str(), g.count, g.max_rel_error,
                g.max_abs_error);
  }
  std::printf("max relative error %.3e -> %s\n", r.max_rel_error, r.passed ? "PASS" : "FAIL");
  return r.passed ? 0 : kExitRuntime;
}

// ---------------------------------------------------------------- report

struct RunSummary {
  LossMode mode;
  std::uint64_t seed;
  MetricsReport report;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_report(const fs::path& root, const std::string& csv) {
  std::vector<RunSummary> runs;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().filename() != "report.json") continue;
    std::ifstream is(e.path());
    const nlohmann::json j = nlohmann::json::parse(is);
    if (!j.contains("mode")) continue;
    runs.push_back({parse_loss_mode(j.at("mode").get<std::string>()), j.value("seed", std::uint64_t{0}),
                    MetricsReport::from_json(j)});
  }
  if (runs.empty()) throw Error(ErrorCode::EmptySplit, "no report.json with a mode under " + root.string());

  std::vector<std::string> locations;
  for (const auto& r : runs)
    for (const auto& [loc, _] : r.report.per_location())
      if (std::find(locations.begin(), locations.end(), loc) == locations.end()) locations.push_back(loc);
  std::sort(locations.begin(), locations.end());

  const char* labels[] = {"Single-loss NLL seg classes", "Single-loss NLL dist classes", "Multi-task equal weights",
                          "Multi-task uncertainty weights"};
  std::ofstream csv_os;
  if (!csv.empty()) {
    csv_os.open(csv);
    csv_os << "regime,seeds";
    for (const auto& l : locations) csv_os << ',' << l << "_iou," << l << "_acc";
    csv_os << ",overall_iou,overall_acc\n";
  }

  std::printf("%-32s %5s", "regime (median over seeds)", "seeds");
  for (const auto& l : locations) std::printf(" %15s", l.c_str());
  std::printf(" %15s\n", "Overall");
  std::map<LossMode, double> overall_iou;
  for (std::size_t m = 0; m < std::size(kAllModes); ++m) {
    const LossMode mode = kAllModes[m];
    std::vector<const RunSummary*> sel;
    for (const auto& r : runs)
      if (r.mode == mode) sel.push_back(&r);
    if (sel.empty()) continue;
    auto med = [&](auto&& f) {
      std::vector<double> v;
      for (const auto* r : sel) v.push_back(f(*r));
      return median(std::move(v));
    };
    std::printf("%-32s %5zu", labels[m], sel.size());
    if (csv_os.is_open()) csv_os << to_string(mode) << ',' << sel.size();
    for (const auto& l : locations) {
      auto get = [&](const RunSummary& r) {
        auto it = r.report.per_location().find(l);
        return it == r.report.per_location().end() ? MetricCounts{} : it->second;
      };
      const double iou = med([&](const RunSummary& r) { return get(r).iou(); });
      const double acc = med([&](const RunSummary& r) { return get(r).accuracy(); });
      std::printf("   %6.2f/%6.2f", 100 * iou, 100 * acc);
      if (csv_os.is_open()) csv_os << ',' << MetricsReport::round4(iou) << ',' << MetricsReport::round4(acc);
    }
    const double iou = med([](const RunSummary& r) { return r.report.overall().iou(); });
    const double acc = med([](const RunSummary& r) { return r.report.overall().accuracy(); });
    overall_iou[mode] = iou;
    std::printf("   %6.2f/%6.2f\n", 100 * iou, 100 * acc);
    if (csv_os.is_open()) csv_os << ',' << MetricsReport::round4(iou) << ',' << MetricsReport::round4(acc) << '\n';
  }
  std::printf("(cells: IoU/Acc in percent)\n");
  if (overall_iou.count(LossMode::SegOnly) && overall_iou.count(LossMode::MultitaskUncertainty)) {
    const double seg = overall_iou[LossMode::SegOnly];
    const double unc = overall_iou[LossMode::MultitaskUncertainty];
    std::printf("trend: multitask_uncertainty %.4f vs seg_only %.4f (delta %+.4f); non-regression (>= -0.03): %s\n",
                unc, seg, unc - seg, unc >= seg - 0.03 ? "yes" : "no");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary-aware building footprint segmentation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic building-scene dataset");
  std::string synth_out;
  int synth_count = 250;
  std::uint64_t synth_seed = 1;
  SynthParams synth_params;
  synth->add_option("--out", synth_out, "Output dataset root")->required();
  synth->add_option("--count", synth_count, "Number of scenes");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--extent", synth_params.extent, "Scene side length in pixels");
  synth->add_option("--min-buildings", synth_params.min_buildings);
  synth->add_option("--max-buildings", synth_params.max_buildings);
  synth->add_option("--min-side", synth_params.min_side);
  synth->add_option("--max-side", synth_params.max_side);
  synth->add_option("--max-rotation", synth_params.max_rotation_deg, "Maximum roof rotation in degrees");
  synth->add_option("--density-min", synth_params.density_min);
  synth->add_option("--density-max", synth_params.density_max);
  synth->add_option("--noise", synth_params.noise, "Pixel noise amplitude");

  // encode
  auto* encode = app.add_subcommand("encode", "Encode masks as signed distance rasters and distance classes");
  std::string enc_in, enc_out;
  double radius = 20.0;
  int bins = 10;
  encode->add_option("--in", enc_in, "Directory of 0/255 mask PNGs")->required();
  encode->add_option("--out", enc_out, "Output directory")->required();
  encode->add_option("--radius", radius, "Truncation threshold R in pixels (default 20)");
  encode->add_option("--bins", bins, "Number of distance classes K (default 10)");

  // train
  auto* train = app.add_subcommand("train", "Train one loss regime");
  ModelArgs train_args;
  std::string init_from, train_out;
  train_args.add_to(train);
  train->add_option("--init-from", init_from, "Checkpoint to initialize from (staged training)");
  train->add_option("--out", train_out, "Run directory")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "Predict full-scene masks, or decode distance-class PNGs");
  ModelArgs pred_args;
  std::string pred_out, decode_dir;
  bool pred_all = false;
  int decode_bins = 10;
  pred_args.add_to(predict);
  predict->add_option("--out", pred_out, "Output directory")->required();
  predict->add_flag("--all", pred_all, "Also predict training scenes");
  predict->add_option("--decode-classes", decode_dir, "Decode distance-class PNGs from this directory instead");
  predict->add_option("--bins", decode_bins, "K for --decode-classes");

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint or a directory of predicted masks");
  ModelArgs eval_args;
  std::string eval_pred, eval_decode = "auto", eval_out, eval_csv;
  eval_args.add_to(eval);
  eval->add_option("--pred", eval_pred, "Directory of predicted <id>.png masks");
  eval->add_option("--decode", eval_decode, "auto, seg or dist");
  eval->add_option("--out", eval_out, "Report JSON path (default <run>/report.json)");
  eval->add_option("--csv", eval_csv, "Optional per-location CSV");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full backward pass");
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  bool gc_corrupt = false;
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--tolerance", gc_tol);
  gradcheck->add_flag("--corrupt-gradient", gc_corrupt, "Test hook: perturb one analytic gradient");

  // report
  auto* report = app.add_subcommand("report", "Side-by-side regime comparison over run directories");
  std::string report_root, report_csv;
  report->add_option("--runs", report_root, "Directory searched for report.json files")->required();
  report->add_option("--csv", report_csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_count, synth_seed, synth_params);
    if (*encode) return cmd_encode(enc_in, enc_out, radius, bins);
    if (*train) return cmd_train(train_args, init_from, train_out);
    if (*predict) {
      if (!decode_dir.empty()) {
        const int t = pred_args.threshold_bin.value_or(decode_bins / 2);
        return cmd_decode_classes(decode_dir, pred_out, decode_bins, t);
      }
      return cmd_predict(pred_args, pred_out, pred_all);
    }
    if (*eval) return cmd_eval(eval_args, eval_pred, eval_decode, eval_out, eval_csv);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_tol, gc_corrupt);
    if (*report) return cmd_report(report_root, report_csv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
