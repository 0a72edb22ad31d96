#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "bevflow/flow.hpp"
#include "bevflow/rng.hpp"
#include "bevflow/scene_sim.hpp"

using namespace bevflow;

namespace {

Tracklet make_tracklet(std::vector<Tracklet::State> states, double length = 4.0,
                       double width = 2.0) {
  Tracklet tr;
  tr.track_id = 1;
  tr.states = std::move(states);
  const auto& last = tr.states.back();
  tr.last_box = {0.9, {last.x, last.y}, length, width, last.heading};
  return tr;
}

EstimatorParams random_params(int d, int heads, uint64_t seed) {
  EstimatorHyperparams hp;
  hp.d = d;
  hp.n_heads = heads;
  hp.hidden = 8;
  return EstimatorParams::init(hp, seed);
}

std::vector<std::pair<Eigen::VectorXd, TimeCode>> random_tokens(int n, int d, uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> ut(-5.0, 0.0);
  std::vector<std::pair<Eigen::VectorXd, TimeCode>> tokens;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd feat(d);
    for (int j = 0; j < d; ++j) feat(j) = g(rng);
    tokens.emplace_back(feat, time_encode(ut(rng), d));
  }
  return tokens;
}

// hybrid tolerance: relative for large entries, absolute for tiny ones
bool grad_close(double analytic, double numeric, double tol) {
  return std::fabs(analytic - numeric) <=
         tol * std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
}

std::vector<TrainingSample> ctrv_dataset(int count, double yaw_rate, double speed,
                                         uint64_t seed, double noise = 0.0) {
  std::vector<TrainingSample> data;
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    ObjectState obj;
    obj.center = {20.0 * u(rng) - 10.0, 20.0 * u(rng) - 10.0};
    obj.heading = wrap_angle(2 * M_PI * u(rng));
    obj.speed = speed;
    obj.yaw_rate = yaw_rate;
    TrainingSample s;
    s.tracklet.track_id = uint32_t(i);
    double t = 0.0;
    const int len = 3;
    for (int j = 0; j < len; ++j) {
      const auto st = propagate(obj, t);
      s.tracklet.states.push_back({t, st.center.x + noise * g(rng),
                                   st.center.y + noise * g(rng), st.heading});
      t += 0.1 + 0.25 * u(rng);  // irregular gaps
    }
    const auto& last = s.tracklet.states.back();
    s.tracklet.last_box = {0.9, {last.x, last.y}, 4.0, 2.0, last.heading};
    s.t_query = s.tracklet.states.back().t + 0.3;
    const auto target = propagate(obj, s.t_query);
    s.target_x = target.center.x;
    s.target_y = target.center.y;
    s.target_heading = target.heading;
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace

TEST_CASE("time encoding basics") {
  const auto zero = time_encode(0.0, 4);
  CHECK(zero.values == std::vector<double>{0.0, 1.0, 0.0, 1.0});

  const auto one = time_encode(1.0, 4);
  CHECK(one.values[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
  CHECK(one.values[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
  CHECK(one.values[2] == doctest::Approx(std::sin(0.01)).epsilon(1e-12));
  CHECK(one.values[3] == doctest::Approx(std::cos(0.01)).epsilon(1e-12));

  CHECK_THROWS_AS(time_encode(1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(time_encode(1.0, 0), std::invalid_argument);
}

TEST_CASE("time encoding pairs have unit norm") {
  auto rng = make_rng(11);
  std::uniform_real_distribution<double> ut(-100.0, 100.0);
  std::uniform_int_distribution<int> ud(1, 32);
  for (int i = 0; i < 500; ++i) {
    const int d = 2 * ud(rng);
    const auto code = time_encode(ut(rng), d);
    for (int e = 0; e * 2 < d; ++e) {
      const double n = code.values[2 * e] * code.values[2 * e] +
                       code.values[2 * e + 1] * code.values[2 * e + 1];
      CHECK(std::fabs(n - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("single-token attention reduces to a projection") {
  const auto params = random_params(8, 2, 21);
  const auto tokens = random_tokens(1, 8, 22);
  const auto query = time_encode(1.7, 8);
  Eigen::VectorXd q = Eigen::Map<const Eigen::VectorXd>(query.values.data(), 8);
  const Eigen::VectorXd out = mha_forward(q, tokens, params);

  // duplicate token changes nothing (softmax over equal scores)
  auto twice = tokens;
  twice.push_back(tokens[0]);
  const Eigen::VectorXd out2 = mha_forward(q, twice, params);
  CHECK((out - out2).norm() < 1e-12);

  CHECK_THROWS_AS(mha_forward(q, {}, params), std::invalid_argument);
}

TEST_CASE("attention is permutation invariant over tokens") {
  const auto params = random_params(8, 2, 33);
  auto tokens = random_tokens(5, 8, 34);
  Eigen::VectorXd q = Eigen::Map<const Eigen::VectorXd>(time_encode(0.9, 8).values.data(), 8);
  const Eigen::VectorXd base = mha_forward(q, tokens, params);
  std::swap(tokens[0], tokens[3]);
  std::swap(tokens[1], tokens[4]);
  const Eigen::VectorXd permuted = mha_forward(q, tokens, params);
  CHECK((base - permuted).norm() < 1e-12);
}

TEST_CASE("attention output gradient matches finite differences") {
  for (uint64_t trial = 0; trial < 8; ++trial) {
    const int d = (trial % 2 == 0) ? 8 : 12;
    const int heads = (trial % 3 == 0) ? 1 : 2;
    EstimatorParams params = random_params(d, heads, 100 + trial);
    const auto tokens = random_tokens(1 + int(trial % 4), d, 200 + trial);
    Eigen::VectorXd q =
        Eigen::Map<const Eigen::VectorXd>(time_encode(0.5 + double(trial), d).values.data(), d);

    std::vector<double> grad;
    mha_output_sqnorm_grad(q, tokens, params, grad);

    const double eps = 1e-5;
    auto value = [&](const EstimatorParams& p) {
      return mha_forward(q, tokens, p).squaredNorm();
    };
    for (std::size_t i = 0; i < params.theta.size(); i += 7) {  // sampled components
      EstimatorParams up = params, down = params;
      up.theta[i] += eps;
      down.theta[i] -= eps;
      const double fd = (value(up) - value(down)) / (2 * eps);
      CHECK(grad_close(grad[i], fd, 1e-4));
    }
  }
}

TEST_CASE("training loss gradient matches finite differences") {
  EstimatorHyperparams hp;
  hp.d = 8;
  hp.n_heads = 2;
  hp.hidden = 6;
  EstimatorParams params = EstimatorParams::init(hp, 404);
  const auto batch = ctrv_dataset(3, 0.25, 8.0, 405);

  std::vector<double> grad;
  estimator_loss_grad(params, batch, grad);
  const double eps = 1e-5;
  for (std::size_t i = 0; i < params.theta.size(); i += 5) {
    EstimatorParams up = params, down = params;
    up.theta[i] += eps;
    down.theta[i] -= eps;
    const double fd = (estimator_loss(up, batch) - estimator_loss(down, batch)) / (2 * eps);
    CHECK(grad_close(grad[i], fd, 1e-4));
  }
}

TEST_CASE("constant-velocity estimator") {
  SUBCASE("two points define the line") {
    const auto tr = make_tracklet({{0, 0, 0, 0}, {1, 2, 0, 0}});
    const auto p = estimate_pose_cv(tr, 2.0);
    CHECK(p.x == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(p.y == doctest::Approx(0.0));
  }
  SUBCASE("stationary tracklets stay put") {
    const auto tr = make_tracklet({{0, 3, -2, 0.5}, {0.7, 3, -2, 0.5}});
    const auto p = estimate_pose_cv(tr, 5.0);
    CHECK(p.x == doctest::Approx(3.0));
    CHECK(p.y == doctest::Approx(-2.0));
    CHECK(p.heading == doctest::Approx(0.5));
  }
  SUBCASE("irregular noiseless samples recover the velocity exactly") {
    const double vx = 3.7, vy = -1.9;
    std::vector<Tracklet::State> states;
    for (double t : {0.0, 0.13, 0.21, 0.55, 0.81}) {
      states.push_back({t, 10 + vx * t, -4 + vy * t, 0.3});
    }
    const auto p = estimate_pose_cv(make_tracklet(std::move(states)), 1.5);
    CHECK(std::fabs(p.x - (10 + vx * 1.5)) < 1e-9);
    CHECK(std::fabs(p.y - (-4 + vy * 1.5)) < 1e-9);
  }
  SUBCASE("length-one tracklets fall back to zero motion") {
    const auto tr = make_tracklet({{1.0, 5, 6, 0.2}});
    const auto p = estimate_pose_cv(tr, 2.0);
    CHECK(p.zero_motion_fallback);
    CHECK(p.x == 5.0);
    CHECK(p.y == 6.0);
  }
}

TEST_CASE("attention estimator basics") {
  EstimatorHyperparams hp;
  hp.d = 8;
  hp.n_heads = 2;
  hp.hidden = 6;
  const auto params = EstimatorParams::init(hp, 500);
  SUBCASE("length-one fallback is exact") {
    const auto tr = make_tracklet({{1.0, 5, 6, 0.2}});
    const auto p = estimate_pose(tr, 1.0, params);
    CHECK(p.zero_motion_fallback);
    CHECK(p.x == 5.0);
    CHECK(p.heading == 0.2);
  }
  SUBCASE("queries before the last state are rejected") {
    const auto tr = make_tracklet({{0, 0, 0, 0}, {1, 1, 0, 0}});
    CHECK_THROWS_AS(estimate_pose(tr, 0.5, params), std::invalid_argument);
  }
}

TEST_CASE("training fits stationary data quickly") {
  auto data = ctrv_dataset(60, 0.0, 0.0, 606);
  EstimatorHyperparams hp;
  hp.d = 8;
  hp.n_heads = 2;
  hp.hidden = 8;
  hp.epochs = 200;
  const auto report = train_estimator(data, hp, 607);
  CHECK(!report.diverged);
  CHECK(report.final_loss < 1e-3);  // cell units
  CHECK(report.final_loss <= report.initial_loss);
  CHECK_THROWS_AS(train_estimator({}, hp, 1), std::invalid_argument);
}

TEST_CASE("training is deterministic") {
  const auto data = ctrv_dataset(30, 0.2, 6.0, 777, 0.05);
  EstimatorHyperparams hp;
  hp.d = 8;
  hp.n_heads = 2;
  hp.hidden = 8;
  hp.epochs = 50;
  const auto a = train_estimator(data, hp, 778);
  const auto b = train_estimator(data, hp, 778);
  CHECK(a.params.theta == b.params.theta);
  CHECK(a.final_loss == b.final_loss);
}

TEST_CASE("trained model beats constant velocity on turning tracklets") {
  // mixed turning motions; constant velocity cannot follow the arc
  std::vector<TrainingSample> train_data, test_data;
  for (int part = 0; part < 4; ++part) {
    const double yaw = 0.15 + 0.1 * part;
    auto chunk = ctrv_dataset(150, yaw, 10.0, 900 + uint64_t(part));
    train_data.insert(train_data.end(), chunk.begin(), chunk.end());
    auto test_chunk = ctrv_dataset(125, yaw, 10.0, 950 + uint64_t(part));
    test_data.insert(test_data.end(), test_chunk.begin(), test_chunk.end());
  }
  EstimatorHyperparams hp;
  hp.epochs = 300;
  const auto report = train_estimator(train_data, hp, 901);
  REQUIRE(!report.diverged);

  double mha_err = 0.0, cv_err = 0.0;
  for (const auto& s : test_data) {
    const auto pm = estimate_pose(s.tracklet, s.t_query, report.params);
    const auto pc = estimate_pose_cv(s.tracklet, s.t_query);
    mha_err += std::hypot(pm.x - s.target_x, pm.y - s.target_y);
    cv_err += std::hypot(pc.x - s.target_x, pc.y - s.target_y);
  }
  mha_err /= double(test_data.size());
  cv_err /= double(test_data.size());
  CHECK(mha_err < cv_err);
}

TEST_CASE("flow map construction") {
  const GridSpec spec = GridSpec::make(-20, 20, -20, 20, 0.4, 15);

  SUBCASE("identity predictions give the zero map") {
    Tracklet tr = make_tracklet({{0, 2, 3, 0.4}});
    auto p = identity_prediction(tr);
    const auto flow = build_flow_map({p}, spec);
    for (float v : flow.vectors) CHECK(v == 0.0f);
  }

  SUBCASE("pure translation moves every footprint cell identically") {
    Tracklet tr = make_tracklet({{0, 0, 0, 0}});
    PosePrediction p = identity_prediction(tr);
    p.x = 0.8;  // +2 columns
    p.zero_motion_fallback = false;
    const auto flow = build_flow_map({p}, spec);
    std::size_t touched = 0;
    for_each_footprint_cell(spec, tr.last_box, [&](int h, int w) {
      CHECK(flow.at(h, w)[0] == doctest::Approx(0.0));
      CHECK(flow.at(h, w)[1] == doctest::Approx(2.0));
      ++touched;
    });
    CHECK(touched > 0);
    // zero outside the footprint
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < spec.cell_count(); ++i) {
      if (flow.vectors[2 * i] != 0.0f || flow.vectors[2 * i + 1] != 0.0f) ++nonzero;
    }
    CHECK(nonzero == touched);
  }

  SUBCASE("pure rotation matches the affine oracle per cell") {
    Tracklet tr = make_tracklet({{0, 1.0, -2.0, 0.0}}, 4.0, 2.4);
    PosePrediction p = identity_prediction(tr);
    p.heading = M_PI / 2.0;
    p.zero_motion_fallback = false;
    const auto flow = build_flow_map({p}, spec);
    for_each_footprint_cell(spec, tr.last_box, [&](int h, int w) {
      const Vec2 c = spec.cell_center(h, w);
      const Vec2 rel = c - Vec2{1.0, -2.0};
      // counterclockwise quarter turn: (rx, ry) -> (-ry, rx)
      const Vec2 target = Vec2{1.0, -2.0} + Vec2{-rel.y, rel.x};
      CHECK(flow.at(h, w)[1] == doctest::Approx((target.x - c.x) / 0.4).epsilon(1e-5));
      CHECK(flow.at(h, w)[0] == doctest::Approx((target.y - c.y) / 0.4).epsilon(1e-5));
    });
  }

  SUBCASE("cell collisions keep the higher source confidence") {
    Tracklet a = make_tracklet({{0, 0, 0, 0}});
    a.last_box.confidence = 0.9;
    Tracklet b = make_tracklet({{0, 1.0, 0, 0}});
    b.last_box.confidence = 0.7;
    PosePrediction pa = identity_prediction(a);
    pa.x = 5.0;
    pa.zero_motion_fallback = false;
    PosePrediction pb = identity_prediction(b);
    const auto flow = build_flow_map({pb, pa}, spec);
    int h, w;
    REQUIRE(spec.locate({0.9, 0.0}, h, w));  // inside both footprints
    CHECK(flow.at(h, w)[1] == doctest::Approx(5.0 / 0.4).epsilon(1e-5));
  }
}

TEST_CASE("estimator parameters round-trip through the file format") {
  EstimatorHyperparams hp;
  hp.d = 12;
  hp.n_heads = 3;
  hp.hidden = 10;
  hp.time_encoding = false;
  const auto params = EstimatorParams::init(hp, 4096);
  const std::string path = (std::filesystem::temp_directory_path() / "est_test.bin").string();
  save_estimator(path, params);
  const auto back = load_estimator(path);
  CHECK(back.hyper.d == 12);
  CHECK(back.hyper.n_heads == 3);
  CHECK(back.hyper.hidden == 10);
  CHECK(back.hyper.time_encoding == false);
  CHECK(back.theta == params.theta);
  std::filesystem::remove(path);
}
