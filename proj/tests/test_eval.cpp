#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bevflow/eval.hpp"
#include "bevflow/rng.hpp"

using namespace bevflow;

namespace {

OrientedBox box(double x, double y, double l, double w, double a, double conf = 1.0) {
  return {conf, {x, y}, l, w, a};
}

// Monte Carlo IoU over the union's bounding box
double mc_iou(const OrientedBox& a, const OrientedBox& b, int samples, uint64_t seed) {
  double lox = 1e18, hix = -1e18, loy = 1e18, hiy = -1e18;
  for (const auto& bb : {a, b}) {
    for (const auto& c : bb.corners()) {
      lox = std::min(lox, c.x); hix = std::max(hix, c.x);
      loy = std::min(loy, c.y); hiy = std::max(hiy, c.y);
    }
  }
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> ux(lox, hix), uy(loy, hiy);
  long inter = 0, uni = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec2 p{ux(rng), uy(rng)};
    const bool ia = a.contains(p), ib = b.contains(p);
    if (ia && ib) ++inter;
    if (ia || ib) ++uni;
  }
  return uni > 0 ? double(inter) / double(uni) : 0.0;
}

// PR staircase enumerated per confidence cutoff, re-matching from scratch
double brute_force_ap(const std::vector<EvalRecord>& records, double iou_threshold) {
  struct Det {
    std::size_t rec, idx;
    double conf;
  };
  std::vector<Det> dets;
  std::size_t n_gt = 0;
  for (std::size_t r = 0; r < records.size(); ++r) {
    n_gt += records[r].ground_truth.size();
    for (std::size_t i = 0; i < records[r].detections.size(); ++i) {
      dets.push_back({r, i, records[r].detections[i].confidence});
    }
  }
  if (n_gt == 0) return -1.0;
  std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.rec != b.rec) return a.rec < b.rec;
    return a.idx < b.idx;
  });

  std::vector<double> recall, precision;
  for (std::size_t cut = 1; cut <= dets.size(); ++cut) {
    // match the top-`cut` detections greedily, from scratch
    std::vector<std::vector<char>> used(records.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
      used[r].assign(records[r].ground_truth.size(), 0);
    }
    std::size_t tp = 0;
    for (std::size_t i = 0; i < cut; ++i) {
      const auto& d = dets[i];
      const auto& rec = records[d.rec];
      double best = 0.0;
      int best_g = -1;
      for (std::size_t g = 0; g < rec.ground_truth.size(); ++g) {
        if (used[d.rec][g]) continue;
        const double iou = rotated_iou(rec.detections[d.idx], rec.ground_truth[g]);
        if (iou > best) {
          best = iou;
          best_g = int(g);
        }
      }
      if (best_g >= 0 && best >= iou_threshold) {
        used[d.rec][std::size_t(best_g)] = 1;
        ++tp;
      }
    }
    recall.push_back(double(tp) / double(n_gt));
    precision.push_back(double(tp) / double(cut));
  }

  double ap = 0.0, env = 0.0;
  for (std::size_t i = recall.size(); i-- > 0;) {
    env = std::max(env, precision[i]);
    ap += (recall[i] - (i == 0 ? 0.0 : recall[i - 1])) * env;
  }
  return ap;
}

}  // namespace

TEST_CASE("iou of identical boxes is one") {
  const auto a = box(1, 2, 4, 2, 0.3);
  CHECK(rotated_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("iou of disjoint boxes is zero") {
  CHECK(rotated_iou(box(0, 0, 2, 2, 0), box(10, 0, 2, 2, 0.5)) == 0.0);
}

TEST_CASE("axis-aligned overlap has the analytic value") {
  // unit squares offset by half a side: intersection 0.5, union 1.5
  const double iou = rotated_iou(box(0, 0, 1, 1, 0), box(0.5, 0, 1, 1, 0));
  CHECK(std::fabs(iou - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("degenerate boxes give zero") {
  CHECK(rotated_iou(box(0, 0, 0, 1, 0), box(0, 0, 1, 1, 0)) == 0.0);
}

TEST_CASE("iou is symmetric and matches Monte Carlo") {
  auto rng = make_rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 25; ++i) {
    const auto a = box(u(rng) * 2, u(rng) * 2, 1.5 + u(rng), 1.0 + 0.5 * u(rng), u(rng) * M_PI);
    const auto b = box(u(rng) * 2, u(rng) * 2, 1.5 + u(rng), 1.0 + 0.5 * u(rng), u(rng) * M_PI);
    const double ab = rotated_iou(a, b);
    CHECK(ab == doctest::Approx(rotated_iou(b, a)).epsilon(1e-12));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(std::fabs(ab - mc_iou(a, b, 200000, mix64(99, i))) < 0.012);
  }
}

TEST_CASE("perfect detections give ap one") {
  EvalRecord rec;
  rec.ground_truth = {box(0, 0, 4, 2, 0), box(10, 5, 4, 2, 1.0)};
  rec.detections = {box(0, 0, 4, 2, 0, 0.9), box(10, 5, 4, 2, 1.0, 0.8)};
  const auto ap = average_precision({rec}, 0.5);
  REQUIRE(ap.has_value());
  CHECK(*ap == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hand-computed pr curve") {
  // one GT; matching detection at conf 0.9, disjoint one at 0.8:
  // points (r=1, p=1), (r=1, p=0.5) -> envelope area 1
  EvalRecord rec;
  rec.ground_truth = {box(0, 0, 4, 2, 0)};
  rec.detections = {box(0, 0, 4, 2, 0, 0.9), box(20, 20, 4, 2, 0, 0.8)};
  const auto curve = pr_curve({rec}, 0.5);
  REQUIRE(curve.has_value());
  CHECK(curve->ap == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(curve->recall.size() == 2);
  CHECK(curve->recall[0] == doctest::Approx(1.0));
  CHECK(curve->precision[1] == doctest::Approx(0.5));
}

TEST_CASE("no ground truth yields the explicit marker") {
  EvalRecord rec;
  rec.detections = {box(0, 0, 4, 2, 0, 0.9)};
  CHECK(!average_precision({rec}, 0.5).has_value());
}

TEST_CASE("ap equals the brute-force staircase on random small instances") {
  auto rng = make_rng(31337);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(0, 5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<EvalRecord> records(1 + trial % 2);
    bool any_gt = false;
    for (auto& rec : records) {
      const int n_gt = count(rng), n_det = count(rng);
      for (int g = 0; g < n_gt; ++g) {
        rec.ground_truth.push_back(box(10 * u(rng), 10 * u(rng), 3 + u(rng), 2, u(rng)));
        any_gt = true;
      }
      for (int d = 0; d < n_det; ++d) {
        // half the detections sit near some ground truth box
        if (!rec.ground_truth.empty() && u(rng) < 0.5) {
          const auto& gt = rec.ground_truth[std::size_t(count(rng)) % rec.ground_truth.size()];
          rec.detections.push_back(box(gt.center.x + 0.5 * u(rng), gt.center.y + 0.5 * u(rng),
                                       gt.length, gt.width, gt.heading, u(rng)));
        } else {
          rec.detections.push_back(box(10 * u(rng), 10 * u(rng), 3 + u(rng), 2, u(rng), u(rng)));
        }
      }
    }
    const auto ap = average_precision(records, 0.5);
    const double oracle = brute_force_ap(records, 0.5);
    if (!any_gt) {
      CHECK(!ap.has_value());
    } else {
      REQUIRE(ap.has_value());
      CHECK(*ap == oracle);  // exact
    }
  }
}

TEST_CASE("appending a low-confidence non-matching detection never increases ap") {
  auto rng = make_rng(4242);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    EvalRecord rec;
    const int n = 1 + int(u(rng) * 4);
    for (int g = 0; g < n; ++g) {
      rec.ground_truth.push_back(box(8 * u(rng), 8 * u(rng), 4, 2, u(rng)));
      if (u(rng) < 0.7) {
        const auto& gt = rec.ground_truth.back();
        rec.detections.push_back(
            box(gt.center.x + 0.3 * u(rng), gt.center.y, 4, 2, gt.heading, 0.2 + 0.8 * u(rng)));
      }
    }
    const auto before = average_precision({rec}, 0.5);
    EvalRecord extended = rec;
    extended.detections.push_back(box(500, 500, 4, 2, 0, 0.01));
    const auto after = average_precision({extended}, 0.5);
    if (before.has_value()) {
      REQUIRE(after.has_value());
      CHECK(*after <= *before + 1e-12);
    }
  }
}

TEST_CASE("ap is invariant under monotone confidence transforms") {
  auto rng = make_rng(777);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EvalRecord> records(3);
  for (auto& rec : records) {
    for (int g = 0; g < 4; ++g) {
      rec.ground_truth.push_back(box(12 * u(rng), 12 * u(rng), 4, 2, u(rng)));
      rec.detections.push_back(box(rec.ground_truth.back().center.x + 0.4 * u(rng),
                                   rec.ground_truth.back().center.y, 4, 2,
                                   rec.ground_truth.back().heading, 0.1 + 0.8 * u(rng)));
    }
    rec.detections.push_back(box(30 * u(rng), -30 * u(rng), 4, 2, 0, 0.5 * u(rng)));
  }
  const auto base = average_precision(records, 0.5);
  auto transformed = records;
  for (auto& rec : transformed) {
    for (auto& d : rec.detections) d.confidence = 0.1 + 0.5 * d.confidence * d.confidence;
  }
  const auto mapped = average_precision(transformed, 0.5);
  REQUIRE(base.has_value());
  REQUIRE(mapped.has_value());
  CHECK(*base == doctest::Approx(*mapped).epsilon(1e-12));
}

TEST_CASE("center error statistics") {
  EvalRecord perfect;
  perfect.ground_truth = {box(0, 0, 4, 2, 0)};
  perfect.detections = {box(0, 0, 4, 2, 0, 0.9)};
  auto st = center_error_stats({perfect});
  REQUIRE(st.has_value());
  CHECK(st->mean == doctest::Approx(0.0));

  EvalRecord offset;
  offset.ground_truth = {box(0, 0, 6, 4, 0)};
  offset.detections = {box(0.3, 0.4, 6, 4, 0, 0.9)};
  st = center_error_stats({offset});
  REQUIRE(st.has_value());
  CHECK(st->mean == doctest::Approx(0.5).epsilon(1e-12));  // 3-4-5 triangle
  CHECK(st->count == 1);

  EvalRecord miss;
  miss.ground_truth = {box(0, 0, 4, 2, 0)};
  CHECK(!center_error_stats({miss}).has_value());
}

TEST_CASE("center error mean matches independent recomputation") {
  auto rng = make_rng(888);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EvalRecord> records(4);
  for (auto& rec : records) {
    for (int g = 0; g < 5; ++g) {
      const auto gt = box(40 * u(rng) - 20, 40 * u(rng) - 20, 4.5, 2, u(rng) * M_PI);
      rec.ground_truth.push_back(gt);
      rec.detections.push_back(box(gt.center.x + 0.4 * (u(rng) - 0.5),
                                   gt.center.y + 0.4 * (u(rng) - 0.5), 4.5, 2, gt.heading,
                                   0.3 + 0.7 * u(rng)));
    }
  }
  const auto st = center_error_stats(records);
  REQUIRE(st.has_value());
  // every detection here overlaps its own GT well past IoU 0.5 and boxes are
  // far apart, so the match set is the identity pairing
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& rec : records) {
    for (std::size_t i = 0; i < rec.detections.size(); ++i) {
      sum += (rec.detections[i].center - rec.ground_truth[i].center).norm();
      ++n;
    }
  }
  CHECK(st->count == n);
  CHECK(st->mean == doctest::Approx(sum / double(n)).epsilon(1e-12));
}
