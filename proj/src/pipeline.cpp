#include "bevflow/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "bevflow/rng.hpp"
#include "bevflow/svg_plot.hpp"

namespace bevflow {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// seed stream labels
constexpr uint64_t kWorldStream = 0x11;
constexpr uint64_t kOffsetStream = 0x22;
constexpr uint64_t kScheduleStream = 0x33;
constexpr uint64_t kObsStream = 0x44;
constexpr uint64_t kSynthStream = 0x55;
constexpr uint64_t kTrainStream = 0x66;

uint64_t scene_seed_of(const ExperimentConfig& cfg, int scene_index) {
  return mix64(cfg.seed, 0xA11CE, uint64_t(scene_index));
}

ObjectState sample_object(std::mt19937_64& rng, const ScenarioConfig& s, int id) {
  std::uniform_real_distribution<double> ux(s.x_min + 4.0, s.x_max - 4.0);
  std::uniform_real_distribution<double> uy(s.y_min + 4.0, s.y_max - 4.0);
  std::uniform_real_distribution<double> uh(-M_PI, M_PI);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> ulen(3.8, 5.0);
  std::uniform_real_distribution<double> uwid(1.7, 2.1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ObjectState o;
  o.id = id;
  o.center = {ux(rng), uy(rng)};
  o.heading = wrap_angle(uh(rng));
  o.length = ulen(rng);
  o.width = uwid(rng);
  const double cls = u01(rng);
  const double speed_draw =
      std::exp(std::log(s.speed_mean) - 0.5 * s.speed_sigma * s.speed_sigma +
               s.speed_sigma * gauss(rng));
  const double straight = u01(rng);
  std::uniform_real_distribution<double> uradius(s.turn_radius_min, s.turn_radius_max);
  const double radius = uradius(rng);
  const double turn_sign = (u01(rng) < 0.5) ? 1.0 : -1.0;
  if (cls < s.stationary_fraction) {
    o.speed = 0.0;
    o.yaw_rate = 0.0;
  } else {
    o.speed = std::clamp(speed_draw, 0.5, s.speed_cap);
    if (straight < s.straight_fraction) {
      o.yaw_rate = 0.0;
    } else {
      o.yaw_rate = turn_sign * std::min(o.speed / radius, s.max_yaw_rate);
    }
  }
  return o;
}

PoseNoiseSpec pose_noise_of(double level) {
  return {level, level * M_PI / 180.0};
}

struct SceneContext {
  const ExperimentConfig* cfg = nullptr;
  uint64_t scene_seed = 0;
  int scene_index = 0;
  double interval_ms = 0.0;
  double noise_level = 0.0;
  GridSpec grid;
  std::vector<ObjectState> world0;
  std::vector<Vec2> agent_pos;
  std::vector<double> ego_ticks;

  const ScenarioConfig& sc() const { return cfg->scenario; }

  FovSpec fov(int agent) const { return {agent_pos[std::size_t(agent)], sc().fov_range}; }

  Observation observe_at(int agent, double t, uint64_t frame_key, bool ego_frame) const {
    const auto world = step_world(world0, t);
    const PoseNoiseSpec pn = ego_frame ? PoseNoiseSpec{0.0, 0.0} : pose_noise_of(noise_level);
    return observe(world, agent, t, fov(agent), grid.extent(), sc().detection_noise, pn,
                   mix64(scene_seed, kObsStream, uint64_t(agent), frame_key));
  }

  CollabMessage message_at(int agent, double t, uint64_t frame_key) const {
    const Observation obs = observe_at(agent, t, frame_key, false);
    return pack_message(agent, obs, grid, sc().conf_threshold, sc().nms_iou,
                        mix64(scene_seed, kSynthStream, uint64_t(agent), frame_key),
                        cfg->max_rois);
  }
};

SceneContext make_scene_context(const ExperimentConfig& cfg, int scene_index,
                                double interval_ms, double noise_level) {
  SceneContext ctx;
  ctx.cfg = &cfg;
  ctx.scene_index = scene_index;
  ctx.scene_seed = scene_seed_of(cfg, scene_index);
  ctx.interval_ms = interval_ms;
  ctx.noise_level = noise_level;
  ctx.grid = cfg.scenario.grid();
  ctx.world0 = generate_world(cfg.scenario, ctx.scene_seed);
  ctx.agent_pos = cfg.scenario.agent_positions();

  AgentClock ego_clock{0, 0.0, 0.0, cfg.scenario.nominal_period, cfg.scenario.nominal_period};
  ctx.ego_ticks = sample_schedule(ego_clock, cfg.scenario.horizon, 0).timestamps;
  return ctx;
}

AgentClock collab_clock(const SceneContext& ctx, int agent) {
  const ScenarioConfig& s = ctx.sc();
  AgentClock c;
  c.agent_id = agent;
  c.nominal_period = s.nominal_period;
  if (ctx.interval_ms <= 0.0) {
    // degenerate synchronous mode: every agent shares the ego clock
    c.offset = 0.0;
    c.turbulence_bound = 0.0;
    c.interval_expectation = s.nominal_period;
  } else {
    auto rng = make_rng(mix64(ctx.scene_seed, kOffsetStream, uint64_t(agent)));
    std::uniform_real_distribution<double> uoff(-s.offset_bound, s.offset_bound);
    c.offset = uoff(rng);
    c.turbulence_bound = s.turbulence_bound;
    c.interval_expectation = ctx.interval_ms / 1000.0;
  }
  return c;
}

WarpedGrid passthrough(const BevGrid& grid) {
  WarpedGrid w;
  w.grid = grid;
  w.residual.assign(grid.spec.cell_count() * 2, 0.0f);
  w.provenance.reserve(grid.nonzero.size());
  for (uint32_t idx : grid.nonzero) w.provenance.push_back({idx, idx});
  return w;
}

std::vector<PosePrediction> predict_tracks(const TrackStore& store, double t_query,
                                           Method method, const EstimatorParams* estimator) {
  std::vector<PosePrediction> preds;
  preds.reserve(store.latest_assignment.size());
  for (const auto& [roi_id, track_id] : store.latest_assignment) {
    const Tracklet& tr = store.tracklets.at(track_id);
    PosePrediction p;
    if (t_query - tr.states.back().t <= 1e-12) {
      // matching timestamps: compensation is the identity
      p = identity_prediction(tr);
    } else if (method == Method::kFeatureWarpCv) {
      p = estimate_pose_cv(tr, t_query);
    } else {
      p = estimate_pose(tr, t_query, *estimator);
    }
    p.roi_id = roi_id;
    preds.push_back(p);
  }
  return preds;
}

struct CollabState {
  Schedule schedule;
  std::size_t next_msg = 0;
  std::optional<CollabMessage> latest;
  TrackStore store;
};

// detections for one ego frame given the collaborators' current state
std::vector<OrientedBox> frame_detections(const SceneContext& ctx, Method method,
                                          const BevGrid& ego_grid,
                                          std::vector<CollabState>& collabs, double t,
                                          const EstimatorParams* estimator,
                                          std::vector<int>* roi_counts) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const double thr = ctx.sc().conf_threshold, nms_iou = ctx.sc().nms_iou;

  if (method == Method::kBoxWarp) {
    std::vector<OrientedBox> boxes = nms(decode_candidates(ego_grid, thr), nms_iou);
    for (auto& cs : collabs) {
      if (!cs.latest) continue;
      const auto preds = predict_tracks(cs.store, t, method, estimator);
      const RoiSet warped = warp_boxes(cs.latest->roi_set, preds);
      for (const auto& [id, box] : warped.rois) boxes.push_back(box);
    }
    return nms(std::move(boxes), nms_iou);
  }

  std::vector<WarpedGrid> warped;
  for (auto& cs : collabs) {
    if (method == Method::kSyncIdeal) {
      const uint64_t tick = uint64_t(std::llround(t / ctx.sc().nominal_period));
      const CollabMessage msg = ctx.message_at(cs.store.sender_id, t, tick);
      if (roi_counts) roi_counts->push_back(int(msg.roi_set.rois.size()));
      warped.push_back(passthrough(msg.sparse_grid));
      continue;
    }
    if (!cs.latest) continue;
    if (method == Method::kNoCompensation) {
      warped.push_back(passthrough(cs.latest->sparse_grid));
    } else {
      const auto preds = predict_tracks(cs.store, t, method, estimator);
      const BevFlowMap flow = build_flow_map(preds, ctx.grid);
      warped.push_back(warp_features(cs.latest->sparse_grid, flow));
    }
  }
  const FusedGrid fused = fuse(ego_grid, warped);
  return decode_detections(fused, thr, nms_iou);
}

}  // namespace

std::vector<ObjectState> generate_world(const ScenarioConfig& s, uint64_t scene_seed) {
  auto rng = make_rng(mix64(scene_seed, kWorldStream));
  std::vector<ObjectState> world;
  world.reserve(std::size_t(s.object_count));
  for (int i = 0; i < s.object_count; ++i) world.push_back(sample_object(rng, s, i));
  return world;
}

SceneMethodOutput run_scene(const ExperimentConfig& cfg, int scene_index, double interval_ms,
                            double noise_level, Method method,
                            const EstimatorParams* estimator) {
  SceneContext ctx = make_scene_context(cfg, scene_index, interval_ms, noise_level);
  const bool uses_tracker = method == Method::kFeatureWarpCv ||
                            method == Method::kFeatureWarpMha || method == Method::kBoxWarp;
  const bool uses_messages = method != Method::kSyncIdeal;

  TrackerParams tparams;
  tparams.half_angle = cfg.tracker_half_angle;
  tparams.max_speed = cfg.scenario.speed_cap;
  tparams.gate_slack = cfg.tracker_gate_slack;
  tparams.use_hungarian = cfg.use_hungarian;

  std::vector<CollabState> collabs;
  for (int a = 1; a < cfg.scenario.agent_count; ++a) {
    CollabState cs;
    cs.store.sender_id = a;
    cs.store.history_depth = cfg.history_depth;
    cs.store.staleness_limit = cfg.staleness_limit;
    if (uses_messages) {
      cs.schedule = sample_schedule(collab_clock(ctx, a), cfg.scenario.horizon,
                                    mix64(ctx.scene_seed, kScheduleStream, uint64_t(a)),
                                    cfg.scenario.binomial_n);
    }
    collabs.push_back(std::move(cs));
  }

  SceneMethodOutput out;
  for (std::size_t i = 0; i < ctx.ego_ticks.size(); ++i) {
    const double t = ctx.ego_ticks[i];
    if (uses_messages) {
      for (auto& cs : collabs) {
        while (cs.next_msg < cs.schedule.timestamps.size() &&
               cs.schedule.timestamps[cs.next_msg] <= t) {
          const double ts = cs.schedule.timestamps[cs.next_msg];
          if (ts < 0.0) {  // clock offsets can reach before the scene start
            ++cs.next_msg;
            continue;
          }
          CollabMessage msg = ctx.message_at(cs.store.sender_id, ts, cs.next_msg);
          out.message_roi_counts.push_back(int(msg.roi_set.rois.size()));
          if (uses_tracker) track_message(cs.store, msg.roi_set, tparams);
          cs.latest = std::move(msg);
          ++cs.next_msg;
        }
      }
    }
    const bool eval_frame = t >= cfg.warmup && (i % std::size_t(cfg.eval_stride) == 0);
    if (!eval_frame) continue;

    const Observation ego_obs = ctx.observe_at(0, t, uint64_t(i), true);
    const BevGrid ego_grid =
        synthesize_grid(ego_obs, ctx.grid, mix64(ctx.scene_seed, kSynthStream, 0, uint64_t(i)));

    EvalRecord rec;
    rec.scene_id = scene_index;
    rec.timestamp = t;
    rec.detections = frame_detections(ctx, method, ego_grid, collabs, t, estimator,
                                      &out.message_roi_counts);
    rec.ground_truth.reserve(ego_obs.ground_truth.size());
    for (const auto& gt : ego_obs.ground_truth) rec.ground_truth.push_back(gt.box(1.0));
    out.records.push_back(std::move(rec));
  }
  return out;
}

SweepPointResult run_sweep_point(const ExperimentConfig& cfg, double interval_ms,
                                 double noise_level, Method method,
                                 const EstimatorParams* estimator) {
  std::vector<EvalRecord> records;
  std::vector<int> roi_counts;
  for (int s = 0; s < cfg.scene_count; ++s) {
    SceneMethodOutput out = run_scene(cfg, s, interval_ms, noise_level, method, estimator);
    for (auto& r : out.records) records.push_back(std::move(r));
    roi_counts.insert(roi_counts.end(), out.message_roi_counts.begin(),
                      out.message_roi_counts.end());
  }
  SweepPointResult row;
  row.interval_ms = interval_ms;
  row.sigma_t = noise_level;
  row.sigma_r_deg = noise_level;
  row.method = method;
  row.record_count = records.size();
  row.ap50 = average_precision(records, 0.5).value_or(std::nan(""));
  row.ap70 = average_precision(records, 0.7).value_or(std::nan(""));
  const auto stats = center_error_stats(records);
  row.mean_center_err = stats ? stats->mean : std::nan("");
  double vol = 0.0;
  std::size_t n_msgs = 0;
  for (int k : roi_counts) {
    if (k >= 1) {
      vol += comm_volume(k);
      ++n_msgs;
    }
  }
  row.comm_volume = (n_msgs > 0) ? vol / double(n_msgs) : 0.0;
  return row;
}

std::vector<TrainingSample> generate_training_data(const ExperimentConfig& cfg, uint64_t seed) {
  const ScenarioConfig& s = cfg.scenario;
  std::vector<TrainingSample> data;
  data.reserve(std::size_t(cfg.train_tracklets));
  const int k = std::max(2, cfg.history_depth);
  for (int i = 0; i < cfg.train_tracklets; ++i) {
    auto rng = make_rng(mix64(seed, uint64_t(i)));
    ObjectState obj = sample_object(rng, s, i);
    const double interval_ms =
        cfg.train_intervals_ms[std::size_t(i) % cfg.train_intervals_ms.size()];
    const double expectation = std::max(interval_ms / 1000.0, s.nominal_period);
    const double p =
        (expectation / s.nominal_period - 1.0) / double(s.binomial_n);
    std::binomial_distribution<int> skip(s.binomial_n, std::clamp(p, 0.0, 1.0));
    std::uniform_real_distribution<double> turb(-s.turbulence_bound, s.turbulence_bound);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto next_gap = [&]() {
      const int b = (p > 0.0) ? skip(rng) : 0;
      return s.nominal_period * (1.0 + b) + ((s.turbulence_bound > 0.0) ? turb(rng) : 0.0);
    };

    const int length = 2 + (i % (k - 1));
    TrainingSample sample;
    sample.tracklet.track_id = uint32_t(i);
    double t = 0.0;
    for (int j = 0; j < length; ++j) {
      const ObjectState st = propagate(obj, t);
      Tracklet::State noisy;
      noisy.t = t;
      noisy.x = st.center.x + gauss(rng) * s.detection_noise.sigma_center;
      noisy.y = st.center.y + gauss(rng) * s.detection_noise.sigma_center;
      noisy.heading = wrap_angle(st.heading + gauss(rng) * s.detection_noise.sigma_heading);
      sample.tracklet.states.push_back(noisy);
      if (j + 1 < length) t += next_gap();
    }
    const auto& last = sample.tracklet.states.back();
    sample.tracklet.last_box = {s.detection_noise.base_confidence,
                                {last.x, last.y},
                                obj.length,
                                obj.width,
                                last.heading};
    sample.t_query = t + u01(rng) * next_gap();
    const ObjectState target = propagate(obj, sample.t_query);
    sample.target_x = target.center.x;
    sample.target_y = target.center.y;
    sample.target_heading = target.heading;
    data.push_back(std::move(sample));
  }
  return data;
}

EstimatorParams obtain_estimator(const ExperimentConfig& cfg) {
  if (!cfg.estimator_path.empty() && fs::exists(cfg.estimator_path)) {
    return load_estimator(cfg.estimator_path);
  }
  EstimatorHyperparams hyper = cfg.estimator;
  hyper.cell = cfg.scenario.cell;
  hyper.time_encoding = cfg.time_encoding;
  const auto data = generate_training_data(cfg, mix64(cfg.seed, kTrainStream));
  const TrainReport report = train_estimator(data, hyper, mix64(cfg.seed, kTrainStream, 7));
  if (report.diverged) throw std::runtime_error("estimator training diverged");
  if (!cfg.estimator_path.empty()) save_estimator(cfg.estimator_path, report.params);
  return report.params;
}

namespace {

struct Job {
  double interval_ms;
  double noise_level;
  Method method;
};

std::string job_key(const Job& j) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "i%g_n%g_%s", j.interval_ms, j.noise_level,
                method_name(j.method));
  return buf;
}

}  // namespace

RunReport run_pipeline(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Job> jobs;
  for (double interval : cfg.interval_expectations_ms) {
    for (double noise : cfg.noise_levels) {
      for (Method m : cfg.methods) jobs.push_back({interval, noise, m});
    }
  }

  bool needs_estimator = false;
  for (const Job& j : jobs) {
    if ((j.method == Method::kFeatureWarpMha || j.method == Method::kBoxWarp) &&
        j.interval_ms > 0.0) {
      needs_estimator = true;
    }
  }
  std::optional<EstimatorParams> estimator;
  if (needs_estimator) estimator = obtain_estimator(cfg);

  const fs::path row_dir = fs::path(cfg.out_dir) / "rows";
  if (cfg.resume) fs::create_directories(row_dir);

  std::vector<SweepPointResult> rows(jobs.size());
  std::vector<char> done(jobs.size(), 0);
  if (cfg.resume) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const fs::path marker = row_dir / (job_key(jobs[i]) + ".json");
      if (!fs::exists(marker)) continue;
      std::ifstream is(marker);
      json j = json::parse(is);
      SweepPointResult& r = rows[i];
      r.interval_ms = j.at("interval_ms");
      r.sigma_t = j.at("sigma_t");
      r.sigma_r_deg = j.at("sigma_r_deg");
      r.method = method_from_name(j.at("method"));
      r.ap50 = j.at("ap50");
      r.ap70 = j.at("ap70");
      r.mean_center_err = j.at("mean_center_err");
      r.comm_volume = j.at("comm_volume");
      r.record_count = j.at("record_count");
      done[i] = 1;
    }
  }

  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, cfg.workers);
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      if (done[i]) continue;
      rows[i] = run_sweep_point(cfg, jobs[i].interval_ms, jobs[i].noise_level, jobs[i].method,
                                estimator ? &*estimator : nullptr);
      if (cfg.resume) {
        const SweepPointResult& r = rows[i];
        json j{{"interval_ms", r.interval_ms},
               {"sigma_t", r.sigma_t},
               {"sigma_r_deg", r.sigma_r_deg},
               {"method", method_name(r.method)},
               {"ap50", r.ap50},
               {"ap70", r.ap70},
               {"mean_center_err", r.mean_center_err},
               {"comm_volume", r.comm_volume},
               {"record_count", r.record_count}};
        std::ofstream os(row_dir / (job_key(jobs[i]) + ".json"));
        os << j.dump(2) << "\n";
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  RunReport report;
  report.rows = std::move(rows);
  report.config_hash = config_hash(cfg);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace {

std::string csv_number(double v) {
  char buf[40];
  if (std::isnan(v)) return "nan";
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void emit_report(const RunReport& report, const ExperimentConfig& cfg,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream os(fs::path(out_dir) / "results.csv", std::ios::binary);
    if (!os) throw std::runtime_error("emit_report: cannot write results.csv");
    os << "interval_expectation_ms,sigma_t,sigma_r,method,ap50,ap70,mean_center_err,"
          "comm_volume\n";
    for (const auto& r : report.rows) {
      os << csv_number(r.interval_ms) << "," << csv_number(r.sigma_t) << ","
         << csv_number(r.sigma_r_deg) << "," << method_name(r.method) << ","
         << csv_number(r.ap50) << "," << csv_number(r.ap70) << ","
         << csv_number(r.mean_center_err) << "," << csv_number(r.comm_volume) << "\n";
    }
  }
  {
    std::ofstream os(fs::path(out_dir) / "config.json", std::ios::binary);
    os << dump_experiment_config(cfg) << "\n";
  }
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)report.config_hash);
    json info{{"config_hash", buf}, {"wall_seconds", report.wall_seconds},
              {"rows", report.rows.size()}};
    std::ofstream os(fs::path(out_dir) / "runinfo.json", std::ios::binary);
    os << info.dump(2) << "\n";
  }

  // latency sweep plots at the first noise level
  if (cfg.interval_expectations_ms.size() > 1) {
    const double noise0 = cfg.noise_levels.front();
    for (const auto& [metric, file, label] :
         {std::tuple{&SweepPointResult::ap50, "latency_sweep_ap50.svg", "AP@0.50"},
          std::tuple{&SweepPointResult::ap70, "latency_sweep_ap70.svg", "AP@0.70"}}) {
      std::vector<PlotSeries> series;
      for (Method m : cfg.methods) {
        PlotSeries s;
        s.name = method_name(m);
        for (const auto& r : report.rows) {
          if (r.method == m && r.sigma_t == noise0 && !std::isnan(r.*metric)) {
            s.points.emplace_back(r.interval_ms, r.*metric);
          }
        }
        std::sort(s.points.begin(), s.points.end());
        if (!s.points.empty()) series.push_back(std::move(s));
      }
      if (!series.empty()) {
        write_svg_line_plot((fs::path(out_dir) / file).string(),
                            std::string(label) + " vs expected interval",
                            "interval expectation [ms]", label, series);
      }
    }
  }
}

namespace {

json box_to_json(const OrientedBox& b) {
  return json{{"c", b.confidence}, {"x", b.center.x}, {"y", b.center.y},
              {"l", b.length},     {"w", b.width},    {"a", b.heading}};
}

OrientedBox box_from_json(const json& j) {
  return {j.at("c"), {j.at("x"), j.at("y")}, j.at("l"), j.at("w"), j.at("a")};
}

}  // namespace

void simulate_to_logs(const ExperimentConfig& cfg, double interval_ms, double noise_level,
                      const std::string& out_dir) {
  fs::create_directories(out_dir);
  for (int s = 0; s < cfg.scene_count; ++s) {
    SceneContext ctx = make_scene_context(cfg, s, interval_ms, noise_level);
    char obs_name[64], msg_name[64];
    std::snprintf(obs_name, sizeof(obs_name), "scene_%03d_observations.jsonl", s);
    std::snprintf(msg_name, sizeof(msg_name), "scene_%03d_messages.bin", s);
    std::ofstream obs_os(fs::path(out_dir) / obs_name, std::ios::binary);
    std::ofstream msg_os(fs::path(out_dir) / msg_name, std::ios::binary);

    // ego observations at its ticks
    for (std::size_t i = 0; i < ctx.ego_ticks.size(); ++i) {
      const Observation obs = ctx.observe_at(0, ctx.ego_ticks[i], uint64_t(i), true);
      json line{{"scene", s}, {"agent", 0}, {"frame", i}, {"t", obs.timestamp}};
      json objs = json::array(), gts = json::array();
      for (const auto& b : obs.objects) objs.push_back(box_to_json(b));
      for (const auto& g : obs.ground_truth) {
        gts.push_back(json{{"id", g.id}, {"x", g.center.x}, {"y", g.center.y},
                           {"a", g.heading}, {"v", g.speed}, {"yr", g.yaw_rate},
                           {"l", g.length}, {"w", g.width}});
      }
      line["objects"] = std::move(objs);
      line["gt"] = std::move(gts);
      obs_os << line.dump() << "\n";
    }

    // collaborator messages merged in (timestamp, agent) order
    struct Cursor {
      int agent;
      Schedule sched;
      std::size_t pos = 0;
    };
    std::vector<Cursor> cursors;
    for (int a = 1; a < cfg.scenario.agent_count; ++a) {
      cursors.push_back({a,
                         sample_schedule(collab_clock(ctx, a), cfg.scenario.horizon,
                                         mix64(ctx.scene_seed, kScheduleStream, uint64_t(a)),
                                         cfg.scenario.binomial_n),
                         0});
    }
    while (true) {
      Cursor* best = nullptr;
      for (auto& c : cursors) {
        if (c.pos >= c.sched.timestamps.size()) continue;
        if (!best || c.sched.timestamps[c.pos] < best->sched.timestamps[best->pos]) best = &c;
      }
      if (!best) break;
      const double ts = best->sched.timestamps[best->pos];
      if (ts >= 0.0) {
        write_message(msg_os, ctx.message_at(best->agent, ts, best->pos));
      }
      ++best->pos;
    }
  }
}

SweepPointResult replay_logs(const ExperimentConfig& cfg, const std::string& dir,
                             double interval_ms, double noise_level, Method method,
                             const EstimatorParams* estimator) {
  const GridSpec grid = cfg.scenario.grid();
  TrackerParams tparams;
  tparams.half_angle = cfg.tracker_half_angle;
  tparams.max_speed = cfg.scenario.speed_cap;
  tparams.gate_slack = cfg.tracker_gate_slack;
  tparams.use_hungarian = cfg.use_hungarian;
  const bool uses_tracker = method == Method::kFeatureWarpCv ||
                            method == Method::kFeatureWarpMha || method == Method::kBoxWarp;
  if (method == Method::kSyncIdeal)
    throw std::invalid_argument("replay: sync_ideal needs live simulation, not logs");

  std::vector<EvalRecord> records;
  std::vector<int> roi_counts;
  for (int s = 0; s < cfg.scene_count; ++s) {
    char obs_name[64], msg_name[64];
    std::snprintf(obs_name, sizeof(obs_name), "scene_%03d_observations.jsonl", s);
    std::snprintf(msg_name, sizeof(msg_name), "scene_%03d_messages.bin", s);
    std::ifstream obs_is(fs::path(dir) / obs_name, std::ios::binary);
    std::ifstream msg_is(fs::path(dir) / msg_name, std::ios::binary);
    if (!obs_is || !msg_is) {
      if (s == 0) throw std::runtime_error("replay: missing logs in " + dir);
      break;
    }

    SceneContext ctx = make_scene_context(cfg, s, interval_ms, noise_level);
    std::vector<CollabState> collabs;
    for (int a = 1; a < cfg.scenario.agent_count; ++a) {
      CollabState cs;
      cs.store.sender_id = a;
      cs.store.history_depth = cfg.history_depth;
      cs.store.staleness_limit = cfg.staleness_limit;
      collabs.push_back(std::move(cs));
    }
    std::optional<CollabMessage> pending = read_message(msg_is, grid);

    std::string line;
    while (std::getline(obs_is, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (int(j.at("agent")) != 0) continue;
      const double t = j.at("t");
      const std::size_t frame = j.at("frame");
      while (pending && pending->timestamp <= t) {
        const int a = pending->sender_id;
        CollabState& cs = collabs.at(std::size_t(a - 1));
        roi_counts.push_back(int(pending->roi_set.rois.size()));
        if (uses_tracker) track_message(cs.store, pending->roi_set, tparams);
        cs.latest = std::move(*pending);
        pending = read_message(msg_is, grid);
      }
      const bool eval_frame = t >= cfg.warmup && (frame % std::size_t(cfg.eval_stride) == 0);
      if (!eval_frame) continue;

      Observation ego_obs;
      ego_obs.agent_id = 0;
      ego_obs.timestamp = t;
      for (const auto& ob : j.at("objects")) ego_obs.objects.push_back(box_from_json(ob));
      EvalRecord rec;
      rec.scene_id = s;
      rec.timestamp = t;
      for (const auto& g : j.at("gt")) {
        rec.ground_truth.push_back(
            OrientedBox{1.0, {g.at("x"), g.at("y")}, g.at("l"), g.at("w"), g.at("a")});
      }
      const BevGrid ego_grid = synthesize_grid(
          ego_obs, grid, mix64(ctx.scene_seed, kSynthStream, 0, uint64_t(frame)));
      rec.detections =
          frame_detections(ctx, method, ego_grid, collabs, t, estimator, nullptr);
      records.push_back(std::move(rec));
    }
  }

  SweepPointResult row;
  row.interval_ms = interval_ms;
  row.sigma_t = noise_level;
  row.sigma_r_deg = noise_level;
  row.method = method;
  row.record_count = records.size();
  row.ap50 = average_precision(records, 0.5).value_or(std::nan(""));
  row.ap70 = average_precision(records, 0.7).value_or(std::nan(""));
  const auto stats = center_error_stats(records);
  row.mean_center_err = stats ? stats->mean : std::nan("");
  double vol = 0.0;
  std::size_t n = 0;
  for (int k : roi_counts) {
    if (k >= 1) {
      vol += comm_volume(k);
      ++n;
    }
  }
  row.comm_volume = n ? vol / double(n) : 0.0;
  return row;
}

}  // namespace bevflow
