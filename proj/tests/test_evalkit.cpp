#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "aptrack/evalkit.hpp"
#include "aptrack/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace aptrack;

namespace {

std::vector<BBox> random_boxes(Rng& rng, std::size_t n) {
  std::vector<BBox> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({rng.uniform(10, 110), rng.uniform(10, 110), rng.uniform(4, 30),
                   rng.uniform(4, 30), rng.uniform()});
  return out;
}

}  // namespace

TEST_CASE("perfect predictions score 1.0 everywhere") {
  Rng rng(1);
  auto gts = random_boxes(rng, 40);
  MetricsReport r = precision_success(gts, gts);
  CHECK(r.pr20 == doctest::Approx(1.0));
  CHECK(r.auc == doctest::Approx(1.0));
  for (double v : r.precision_curve) CHECK(v == doctest::Approx(1.0));
  for (double v : r.success_curve) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("a constant 20px displacement is a step function in precision") {
  Rng rng(2);
  auto gts = random_boxes(rng, 25);
  for (BBox& b : gts) {
    b.x = std::floor(b.x);  // integer centers keep the displacement exact
    b.y = std::floor(b.y);
  }
  std::vector<BBox> preds = gts;
  for (BBox& b : preds) {
    b.x += 12.0;
    b.y += 16.0;  // exactly 20px away
  }
  MetricsReport r = precision_success(preds, gts);
  for (int t = 0; t < 20; ++t) CHECK(r.precision_curve[t] == doctest::Approx(0.0));
  for (int t = 20; t <= 50; ++t) CHECK(r.precision_curve[t] == doctest::Approx(1.0));
  CHECK(r.pr20 == doctest::Approx(1.0));
}

TEST_CASE("precision_success matches a per-frame brute-force oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto gts = random_boxes(rng, 12);
    auto preds = random_boxes(rng, 12);
    MetricsReport r = precision_success(preds, gts);
    for (int t = 0; t <= 50; ++t) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = std::hypot(preds[i].x - gts[i].x, preds[i].y - gts[i].y);
        if (d <= t) ++hits;
      }
      CHECK(r.precision_curve[t] == doctest::Approx(hits / 12.0));
    }
    for (int t = 0; t <= 20; ++t) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (iou(preds[i], gts[i]) >= t / 20.0) ++hits;
      CHECK(r.success_curve[t] == doctest::Approx(hits / 12.0));
    }
  }
}

TEST_CASE("curves are monotone and bounded") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = precision_success(random_boxes(rng, 30), random_boxes(rng, 30));
    for (std::size_t i = 1; i < r.precision_curve.size(); ++i)
      CHECK(r.precision_curve[i] >= r.precision_curve[i - 1]);
    for (std::size_t i = 1; i < r.success_curve.size(); ++i)
      CHECK(r.success_curve[i] <= r.success_curve[i - 1]);
    for (double v : r.precision_curve) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("metrics are invariant under a global translation") {
  Rng rng(5);
  auto gts = random_boxes(rng, 20);
  auto preds = random_boxes(rng, 20);
  MetricsReport a = precision_success(preds, gts);
  for (BBox& b : gts) {
    b.x += 37.0;
    b.y -= 11.0;
  }
  for (BBox& b : preds) {
    b.x += 37.0;
    b.y -= 11.0;
  }
  MetricsReport b = precision_success(preds, gts);
  CHECK(a.precision_curve == b.precision_curve);
  CHECK(a.success_curve == b.success_curve);
}

TEST_CASE("invisible frames are excluded") {
  Rng rng(6);
  auto gts = random_boxes(rng, 10);
  auto preds = gts;
  preds[3].x += 1000.0;  // a miss, but on the invisible frame
  std::vector<int> vis(10, 1);
  vis[3] = 0;
  MetricsReport r = precision_success(preds, gts, &vis);
  CHECK(r.auc == doctest::Approx(1.0));
  CHECK_THROWS_AS(precision_success(preds, random_boxes(rng, 9)), std::runtime_error);
}

TEST_CASE("mpr_msr with equal ground truths reduces to precision_success") {
  Rng rng(7);
  auto gts = random_boxes(rng, 15);
  auto preds = random_boxes(rng, 15);
  MetricsReport plain = precision_success(preds, gts);
  MetricsReport dual = mpr_msr(preds, gts, gts);
  CHECK(plain.precision_curve == dual.precision_curve);
  CHECK(plain.success_curve == dual.success_curve);
  CHECK(*dual.mpr20 == plain.pr20);
  CHECK(*dual.msr_auc == plain.auc);
}

TEST_CASE("mpr takes the smaller per-frame distance") {
  BBox pred{0.0, 0.0, 10.0, 10.0, std::nullopt};
  BBox g_rgb{3.0, 4.0, 10.0, 10.0, std::nullopt};  // distance 5
  BBox g_x{0.0, 6.0, 10.0, 10.0, std::nullopt};    // distance 6
  MetricsReport r = mpr_msr({pred}, {g_rgb}, {g_x});
  for (int t = 0; t <= 50; ++t)
    CHECK(r.precision_curve[t] == doctest::Approx(t >= 5 ? 1.0 : 0.0));
}

TEST_CASE("mpr_msr matches the per-frame min/max oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto preds = random_boxes(rng, 8);
    auto g1 = random_boxes(rng, 8);
    auto g2 = random_boxes(rng, 8);
    MetricsReport r = mpr_msr(preds, g1, g2);
    for (int t = 0; t <= 20; ++t) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const double o = std::max(iou(preds[i], g1[i]), iou(preds[i], g2[i]));
        if (o >= t / 20.0) ++hits;
      }
      CHECK(r.success_curve[t] == doctest::Approx(hits / 8.0));
    }
  }
}

TEST_CASE("f_score of equal precision and recall is that value") {
  // all frames visible, all predictions made and identical to gt
  Rng rng(9);
  auto gts = random_boxes(rng, 10);
  std::vector<double> conf(10, 0.9);
  std::vector<int> vis(10, 1);
  FScoreResult r = f_score(gts, conf, gts, vis, default_confidence_sweep());
  CHECK(r.precision == doctest::Approx(r.recall));
  CHECK(r.f == doctest::Approx(r.precision));
  CHECK(r.f == doctest::Approx(1.0));
}

TEST_CASE("f_score reproduces the published consistency check") {
  // Re = 61.9, Pr = 62.3 -> F = 62.1 (percent scale)
  const double re = 0.619, pr = 0.623;
  const double f = 2.0 * re * pr / (re + pr);
  CHECK(std::fabs(f * 100.0 - 62.1) < 0.05);
}

TEST_CASE("f_score matches a direct-formula oracle at each threshold") {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    auto gts = random_boxes(rng, 12);
    auto preds = random_boxes(rng, 12);
    std::vector<double> conf(12);
    for (double& c : conf) c = rng.uniform();
    std::vector<int> vis(12);
    for (int& v : vis) v = rng.uniform() < 0.8 ? 1 : 0;
    if (std::none_of(vis.begin(), vis.end(), [](int v) { return v == 1; })) vis[0] = 1;

    const std::vector<double> sweep = {0.25, 0.5, 0.75};
    FScoreResult got = f_score(preds, conf, gts, vis, sweep);

    double best_f = -1.0, best_pr = 0.0, best_re = 0.0;
    for (double thr : sweep) {
      double pr_sum = 0.0, re_sum = 0.0;
      std::size_t made = 0, visible = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const double o = vis[i] ? iou(preds[i], gts[i]) : 0.0;
        if (conf[i] >= thr) {
          ++made;
          pr_sum += o;
        }
        if (vis[i]) {
          ++visible;
          re_sum += conf[i] >= thr ? o : 0.0;
        }
      }
      const double pr = made ? pr_sum / made : 0.0;
      const double re = re_sum / visible;
      const double f = (pr + re) > 0 ? 2 * re * pr / (re + pr) : 0.0;
      if (f > best_f) {
        best_f = f;
        best_pr = pr;
        best_re = re;
      }
    }
    CHECK(got.f == doctest::Approx(best_f));
    CHECK(got.precision == doctest::Approx(best_pr));
    CHECK(got.recall == doctest::Approx(best_re));
  }
}

TEST_CASE("f_score with no visible frames is an error") {
  Rng rng(11);
  auto gts = random_boxes(rng, 4);
  std::vector<double> conf(4, 0.5);
  std::vector<int> vis(4, 0);
  CHECK_THROWS_WITH_AS(f_score(gts, conf, gts, vis, default_confidence_sweep()),
                       doctest::Contains("no visible frames"), std::runtime_error);
}

TEST_CASE("prediction files round trip") {
  Rng rng(12);
  auto boxes = random_boxes(rng, 9);
  auto dir = std::filesystem::temp_directory_path() / "aptrack_eval";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "preds.txt").string();
  save_predictions(path, boxes);
  auto back = load_predictions(path);
  REQUIRE(back.size() == boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CHECK(back[i].x == doctest::Approx(boxes[i].x).epsilon(1e-4));
    CHECK(*back[i].score == doctest::Approx(*boxes[i].score).epsilon(1e-5));
  }
  MetricsReport r = precision_success(back, back);
  save_report(r, (dir / "report.txt").string());
  CHECK(std::filesystem::exists(dir / "report.txt.success.csv"));
  std::filesystem::remove_all(dir);
}
