#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bevflow/pipeline.hpp"
#include "bevflow/rng.hpp"

namespace {

using namespace bevflow;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  int workers = 0;
};

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = load_experiment_config(opts.config_path);
  if (const char* env = std::getenv("BEVFLOW_OUT_DIR")) cfg.out_dir = env;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers > 0) cfg.workers = opts.workers;
  return cfg;
}

void add_common(CLI::App* app, CommonOpts& opts) {
  app->add_option("-c,--config", opts.config_path, "config file (JSON sections)");
  app->add_option("-o,--out", opts.out_dir, "output directory");
  app->add_option("-s,--seed", opts.seed, "seed override");
  app->add_option("-w,--workers", opts.workers, "worker thread count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asynchrony-robust collaborative BEV perception workbench"};
  app.require_subcommand(1);

  CommonOpts opts;
  double interval_ms = 300.0;
  double noise_level = 0.0;
  std::string method_str = "feature_warp_mha";
  std::string log_dir;
  std::string params_path;

  CLI::App* sim = app.add_subcommand("simulate", "emit observation and message logs");
  add_common(sim, opts);
  sim->add_option("--interval-ms", interval_ms, "expected message interval");
  sim->add_option("--noise", noise_level, "pose noise level (m and deg)");

  CLI::App* train = app.add_subcommand("train", "fit the motion estimator");
  add_common(train, opts);
  train->add_option("--params", params_path, "output parameters file")->required();

  CLI::App* run = app.add_subcommand("run", "run the configured sweep");
  add_common(run, opts);
  bool resume = false;
  run->add_flag("--resume", resume, "reuse completed sweep rows from the output dir");

  CLI::App* replay = app.add_subcommand("replay", "re-evaluate simulated logs");
  add_common(replay, opts);
  replay->add_option("--logs", log_dir, "directory with simulate output")->required();
  replay->add_option("--interval-ms", interval_ms, "interval the logs were made with");
  replay->add_option("--noise", noise_level, "noise level the logs were made with");
  replay->add_option("--method", method_str, "method to evaluate");
  replay->add_option("--params", params_path, "estimator parameters file");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = resolve_config(opts);
    if (sim->parsed()) {
      simulate_to_logs(cfg, interval_ms, noise_level, cfg.out_dir);
      std::cout << "logs written to " << cfg.out_dir << "\n";
    } else if (train->parsed()) {
      cfg.estimator_path = params_path;
      EstimatorHyperparams hyper = cfg.estimator;
      hyper.cell = cfg.scenario.cell;
      hyper.time_encoding = cfg.time_encoding;
      const auto data = generate_training_data(cfg, mix64(cfg.seed, 0x66));
      const TrainReport report = train_estimator(data, hyper, mix64(cfg.seed, 0x66, 7));
      if (report.diverged) {
        std::cerr << "training diverged (loss " << report.final_loss << ")\n";
        return 2;
      }
      save_estimator(params_path, report.params);
      std::cout << "trained on " << data.size() << " tracklets: loss "
                << report.initial_loss << " -> " << report.final_loss << "\n"
                << "parameters written to " << params_path << "\n";
    } else if (run->parsed()) {
      cfg.resume = resume;
      const RunReport report = run_pipeline(cfg);
      emit_report(report, cfg, cfg.out_dir);
      std::cout << "wrote " << report.rows.size() << " rows to " << cfg.out_dir
                << "/results.csv in " << report.wall_seconds << " s\n";
    } else if (replay->parsed()) {
      const Method method = method_from_name(method_str);
      std::optional<EstimatorParams> est;
      if (!params_path.empty()) est = load_estimator(params_path);
      const bool needs_est =
          method == Method::kFeatureWarpMha || method == Method::kBoxWarp;
      if (needs_est && !est) {
        cfg.estimator_path = params_path;
        est = obtain_estimator(cfg);
      }
      const SweepPointResult row =
          replay_logs(cfg, log_dir, interval_ms, noise_level, method, est ? &*est : nullptr);
      std::cout << "method=" << method_name(row.method) << " records=" << row.record_count
                << " ap50=" << row.ap50 << " ap70=" << row.ap70
                << " mean_center_err=" << row.mean_center_err
                << " comm_volume=" << row.comm_volume << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
