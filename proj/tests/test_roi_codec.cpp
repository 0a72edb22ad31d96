#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bevflow/eval.hpp"
#include "bevflow/roi_codec.hpp"
#include "bevflow/rng.hpp"

using namespace bevflow;

namespace {

GridSpec small_spec() { return GridSpec::make(-20, 20, -20, 20, 0.4, 15); }

Observation obs_with(std::vector<OrientedBox> boxes) {
  Observation obs;
  obs.agent_id = 1;
  obs.timestamp = 2.5;
  obs.objects = std::move(boxes);
  return obs;
}

// independent point-in-rectangle via half-plane dot products
bool in_rect(const OrientedBox& b, const Vec2& p) {
  const Vec2 axis_l{std::cos(b.heading), std::sin(b.heading)};
  const Vec2 axis_w{-std::sin(b.heading), std::cos(b.heading)};
  const Vec2 d = p - b.center;
  return std::fabs(d.dot(axis_l)) <= 0.5 * b.length && std::fabs(d.dot(axis_w)) <= 0.5 * b.width;
}

// reference greedy suppression written the simple O(n^2) way
std::vector<OrientedBox> nms_reference(std::vector<OrientedBox> boxes, double thr) {
  std::sort(boxes.begin(), boxes.end(), [](const OrientedBox& a, const OrientedBox& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.center.x != b.center.x) return a.center.x < b.center.x;
    return a.center.y < b.center.y;
  });
  std::vector<char> dead(boxes.size(), 0);
  std::vector<OrientedBox> kept;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (dead[i]) continue;
    kept.push_back(boxes[i]);
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (!dead[j] && rotated_iou(boxes[i], boxes[j]) >= thr) dead[j] = 1;
    }
  }
  return kept;
}

}  // namespace

TEST_CASE("empty observation synthesizes a zero grid") {
  const auto grid = synthesize_grid(obs_with({}), small_spec(), 1);
  CHECK(grid.nonzero.empty());
  for (float v : grid.data) CHECK(v == 0.0f);
}

TEST_CASE("footprint rasterization matches a point-in-box oracle") {
  const GridSpec spec = small_spec();
  const OrientedBox box{0.8, {1.3, -2.1}, 4.0, 2.0, 0.0};
  const auto grid = synthesize_grid(obs_with({box}), spec, 2);
  std::size_t oracle_count = 0;
  for (int h = 0; h < spec.height; ++h) {
    for (int w = 0; w < spec.width; ++w) {
      const bool inside = in_rect(box, spec.cell_center(h, w));
      if (inside) ++oracle_count;
      CHECK((grid.confidence(h, w) != 0.0f) == inside);
    }
  }
  CHECK(grid.nonzero.size() == oracle_count);
  // footprint area is about length*width / cell^2 cells
  CHECK(double(oracle_count) == doctest::Approx(4.0 * 2.0 / (0.4 * 0.4)).epsilon(0.15));
}

TEST_CASE("confidence channel is written through") {
  const auto grid = synthesize_grid(obs_with({{0.9, {0, 0}, 4, 2, 0.3}}), small_spec(), 3);
  float max_conf = 0.0f;
  for (uint32_t idx : grid.nonzero) {
    max_conf = std::max(max_conf, grid.data[std::size_t(idx) * 15]);
  }
  CHECK(max_conf == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("overlap resolution keeps the higher confidence vector") {
  const GridSpec spec = small_spec();
  const OrientedBox strong{0.9, {0, 0}, 4, 2, 0};
  const OrientedBox weak{0.6, {0.8, 0}, 4, 2, 0};
  const auto grid = synthesize_grid(obs_with({weak, strong}), spec, 4);
  int h, w;
  REQUIRE(spec.locate({0.2, 0.0}, h, w));  // inside both
  CHECK(grid.confidence(h, w) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("noiseless round-trip through roi generation") {
  const GridSpec spec = small_spec();
  const OrientedBox box{0.9, {3.17, -4.42}, 4.4, 1.9, 0.62};
  const auto grid = synthesize_grid(obs_with({box}), spec, 5);
  const auto [rois, sparse] = generate_rois(grid, 0.5, 0.3);
  REQUIRE(rois.rois.size() == 1);
  const auto& rec = rois.rois[0].second;
  CHECK(std::fabs(rec.center.x - box.center.x) < 1e-5);
  CHECK(std::fabs(rec.center.y - box.center.y) < 1e-5);
  CHECK(std::fabs(wrap_angle(rec.heading - box.heading)) < 1e-6);
  CHECK(rec.confidence == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(rec.length == doctest::Approx(4.4).epsilon(1e-6));
  // sparse grid equals the original on the footprint
  CHECK(sparse.nonzero == grid.nonzero);
}

TEST_CASE("all-zero grid yields nothing") {
  const auto [rois, sparse] = generate_rois(BevGrid(small_spec()), 0.5, 0.3);
  CHECK(rois.rois.empty());
  CHECK(sparse.nonzero.empty());
}

TEST_CASE("nms keeps the higher-confidence duplicate") {
  const OrientedBox a{0.9, {0, 0}, 4, 2, 0};
  const OrientedBox b{0.8, {0, 0}, 4, 2, 0};
  const auto kept = nms({a, b}, 0.3);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].confidence == 0.9);
}

TEST_CASE("nms identity and disjoint cases") {
  const OrientedBox a{0.9, {0, 0}, 4, 2, 0.2};
  CHECK(nms({a}, 0.3).size() == 1);
  const OrientedBox b{0.8, {15, 15}, 4, 2, 1.2};
  CHECK(nms({a, b}, 0.3).size() == 2);
}

TEST_CASE("nms equals brute-force suppression on random boxes") {
  auto rng = make_rng(616);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<OrientedBox> boxes;
    const int n = 2 + trial % 7;
    for (int i = 0; i < n; ++i) {
      boxes.push_back({0.3 + 0.7 * u(rng),
                       {6 * u(rng), 6 * u(rng)},
                       3 + 2 * u(rng),
                       1.5 + u(rng),
                       u(rng) * M_PI});
    }
    const auto got = nms(boxes, 0.35);
    const auto want = nms_reference(boxes, 0.35);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].center.x == want[i].center.x);
      CHECK(got[i].confidence == want[i].confidence);
    }
    // antichain under the suppression relation
    for (std::size_t i = 0; i < got.size(); ++i) {
      for (std::size_t j = i + 1; j < got.size(); ++j) {
        CHECK(rotated_iou(got[i], got[j]) < 0.35);
      }
    }
  }
}

TEST_CASE("masking is idempotent and confined to footprints") {
  const GridSpec spec = small_spec();
  const OrientedBox b1{0.9, {2, 2}, 4, 2, 0.4};
  const OrientedBox b2{0.7, {-5, -3}, 4.5, 2, -1.0};
  const auto grid = synthesize_grid(obs_with({b1, b2}), spec, 6);
  const auto [rois, sparse] = generate_rois(grid, 0.5, 0.3);
  const auto again = mask_to_rois(sparse, rois);
  CHECK(again.nonzero == sparse.nonzero);
  CHECK(again.data == sparse.data);
  for (uint32_t idx : sparse.nonzero) {
    const int h = int(idx / spec.width), w = int(idx % spec.width);
    bool inside_any = false;
    for (const auto& [id, roi] : rois.rois) {
      if (roi.contains(spec.cell_center(h, w))) inside_any = true;
    }
    CHECK(inside_any);
  }
}

TEST_CASE("comm volume follows the log formula") {
  CHECK(std::fabs(comm_volume(1) - 5.321928094887362) < 1e-12);
  CHECK(std::fabs(comm_volume(10) - 8.643856189774724) < 1e-12);
  CHECK(comm_volume(2) - comm_volume(1) == 1.0);  // doubling adds exactly one bit
  CHECK_THROWS_AS(comm_volume(0), std::invalid_argument);
}

TEST_CASE("message serialization round-trips bit-exactly") {
  const GridSpec spec = small_spec();
  auto rng = make_rng(700);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<OrientedBox> boxes;
  for (int i = 0; i < 6; ++i) {
    boxes.push_back({0.55 + 0.45 * u(rng),
                     {30 * u(rng) - 15, 30 * u(rng) - 15},
                     4 + u(rng),
                     1.8 + 0.4 * u(rng),
                     wrap_angle(u(rng) * 2 * M_PI)});
  }
  Observation obs = obs_with(boxes);
  const CollabMessage msg = pack_message(3, obs, spec, 0.5, 0.3, 701, 0);
  REQUIRE(!msg.roi_set.rois.empty());

  std::stringstream buf;
  write_message(buf, msg);
  write_message(buf, msg);  // a log is a concatenation
  const auto back1 = read_message(buf, spec);
  const auto back2 = read_message(buf, spec);
  const auto eof = read_message(buf, spec);
  REQUIRE(back1.has_value());
  REQUIRE(back2.has_value());
  CHECK(!eof.has_value());

  CHECK(back1->sender_id == 3);
  CHECK(back1->timestamp == 2.5);
  REQUIRE(back1->roi_set.rois.size() == msg.roi_set.rois.size());
  for (std::size_t i = 0; i < msg.roi_set.rois.size(); ++i) {
    CHECK(back1->roi_set.rois[i].first == msg.roi_set.rois[i].first);
    CHECK(back1->roi_set.rois[i].second.center.x == msg.roi_set.rois[i].second.center.x);
    CHECK(back1->roi_set.rois[i].second.confidence == msg.roi_set.rois[i].second.confidence);
  }
  CHECK(back1->sparse_grid.nonzero == msg.sparse_grid.nonzero);
  CHECK(back1->sparse_grid.data == msg.sparse_grid.data);  // signatures bit-identical
}

TEST_CASE("roi cap keeps the top confidences and remasks") {
  const GridSpec spec = small_spec();
  std::vector<OrientedBox> boxes;
  for (int i = 0; i < 5; ++i) {
    boxes.push_back({0.5 + 0.1 * i, {double(-16 + 7 * i), 6.0}, 4, 2, 0});
  }
  Observation obs = obs_with(boxes);
  const CollabMessage capped = pack_message(1, obs, spec, 0.45, 0.3, 44, 2);
  REQUIRE(capped.roi_set.rois.size() == 2);
  CHECK(capped.roi_set.rois[0].second.confidence == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(capped.roi_set.rois[1].second.confidence == doctest::Approx(0.8).epsilon(1e-6));
  for (uint32_t idx : capped.sparse_grid.nonzero) {
    const int h = int(idx / spec.width), w = int(idx % spec.width);
    bool inside = false;
    for (const auto& [id, roi] : capped.roi_set.rois) {
      if (roi.contains(spec.cell_center(h, w))) inside = true;
    }
    CHECK(inside);
  }
}

TEST_CASE("signatures survive the whole codec untouched") {
  const GridSpec spec = small_spec();
  const auto grid = synthesize_grid(obs_with({{0.9, {1, 1}, 4, 2, 0.5}}), spec, 808);
  const auto [rois, sparse] = generate_rois(grid, 0.5, 0.3);
  std::map<std::array<float, 8>, int> source_sigs;
  for (uint32_t idx : grid.nonzero) {
    std::array<float, 8> sig;
    std::memcpy(sig.data(), grid.data.data() + std::size_t(idx) * 15 + 7, 8 * sizeof(float));
    source_sigs[sig]++;
  }
  for (uint32_t idx : sparse.nonzero) {
    std::array<float, 8> sig;
    std::memcpy(sig.data(), sparse.data.data() + std::size_t(idx) * 15 + 7, 8 * sizeof(float));
    CHECK(source_sigs.count(sig) == 1);
  }
}
