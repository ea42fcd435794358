#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "scenes.hpp"
#include "splinegauss/errors.hpp"
#include "splinegauss/harness.hpp"
#include "splinegauss/metrics.hpp"
#include "splinegauss/trainer.hpp"

using namespace splinegauss;

namespace {

void fill_random(SceneGradients& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  for (auto& gg : g.gaussians)
    for_each_param(gg, [&](ParamGroup, std::span<double> v) {
      for (double& x : v) x = n01(rng);
    });
  for (double& x : g.env_map) x = n01(rng);
}

void normalize_quaternions(Scene& s) {
  for (auto& g : s.gaussians) {
    g.rotation.normalize();
    if (g.motion)
      for (auto& q : g.motion->rotation_curve.controls) q.normalize();
  }
}

Dataset small_dataset(bool moving, std::uint64_t seed = 2) {
  SyntheticSceneSpec spec = moving ? SyntheticSceneSpec::desk_default() : SyntheticSceneSpec::desk_static();
  spec.width = spec.height = 32;
  spec.focal = 32;
  spec.frames = 12;
  spec.lidar_points = 500;
  for (auto& m : spec.moving)
    if (m.first_frame >= 0) {
      m.first_frame = 3;
      m.last_frame = 7;
    }
  return synthesize(spec, seed).dataset;
}

TrainConfig quick_config(int iterations) {
  TrainConfig c;
  c.iterations = iterations;
  c.densify_from = iterations + 1;
  c.densify_until = iterations + 1;
  c.eval_interval = 0;
  c.init.sh_degree = 1;
  c.init.env_height = 8;
  c.init.env_width = 16;
  return c;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  TrainConfig c;
  CHECK(c.iterations == 7000);
  CHECK(c.knn_refresh == 10);
  CHECK(c.lr.position == 1.6e-4);
  CHECK(c.lr.spline_controls == 1.6e-3);
  CHECK(c.lr.quat_controls == 1e-3);
  CHECK(c.lr.opacity == 5e-2);
  CHECK(c.lr.env_map == 1e-2);
  CHECK(c.prune_opacity == 0.005);
  CHECK_NOTHROW(c.validate());
  TrainConfig bad = c;
  bad.densify_interval = 0;
  CHECK_THROWS_AS(bad.validate(), FormatError);
  bad = c;
  bad.prune_opacity = 0;
  CHECK_THROWS_AS(bad.validate(), FormatError);
  bad = c;
  bad.weights.lambda_r = -1;
  CHECK_THROWS_AS(bad.validate(), FormatError);
  bad = c;
  bad.init.sh_degree = 4;
  CHECK_THROWS_AS(bad.validate(), FormatError);
}

TEST_CASE("zero gradients leave parameters unchanged") {
  std::mt19937_64 rng(60);
  Scene s = testscene::random_scene(rng);
  normalize_quaternions(s);
  const Scene before = s;
  Adam adam;
  adam.reset(s);
  const SceneGradients g = SceneGradients::zeros_like(s);
  for (int i = 0; i < 3; ++i) adam.step(s, g, LearningRates{}, 1.0);
  for (size_t i = 0; i < s.gaussians.size(); ++i) {
    std::vector<std::pair<ParamGroup, std::span<const double>>> a, b;
    for_each_param(std::as_const(s.gaussians[i]), [&](ParamGroup grp, std::span<const double> v) { a.emplace_back(grp, v); });
    for_each_param(before.gaussians[i], [&](ParamGroup grp, std::span<const double> v) { b.emplace_back(grp, v); });
    for (size_t k = 0; k < a.size(); ++k)
      for (size_t j = 0; j < a[k].second.size(); ++j) {
        // Renormalizing a unit quaternion may move its last bit.
        const bool quat = a[k].first == ParamGroup::rotation || a[k].first == ParamGroup::quat_controls;
        if (quat)
          CHECK(std::abs(a[k].second[j] - b[k].second[j]) < 1e-15);
        else
          CHECK(a[k].second[j] == b[k].second[j]);
      }
  }
  CHECK(s.env_map.texels == before.env_map.texels);
}

TEST_CASE("adam converges on a quadratic") {
  // f(x) = (x - 3)^2 has its minimum at 3.
  Adam adam(0.9, 0.999, 1e-15);
  std::vector<double> x{0.0}, m{0.0}, v{0.0}, g{0.0};
  int steps = 0;
  for (long t = 1; t <= 2000; ++t) {
    g[0] = 2 * (x[0] - 3.0);
    adam.update(x, g, m, v, 0.05, t);
    steps = static_cast<int>(t);
  }
  CHECK(steps == 2000);
  CHECK(std::abs(x[0] - 3.0) < 1e-6);
}

TEST_CASE("quaternion controls stay unit after a step") {
  std::mt19937_64 rng(61);
  Scene s = testscene::random_scene(rng);
  Adam adam;
  adam.reset(s);
  SceneGradients g = SceneGradients::zeros_like(s);
  for (int i = 0; i < 5; ++i) {
    fill_random(g, rng);
    adam.step(s, g, LearningRates{}, 1.0);
    for (const auto& gg : s.gaussians) {
      CHECK(std::abs(gg.rotation.norm() - 1.0) < 1e-12);
      if (gg.motion)
        for (const auto& q : gg.motion->rotation_curve.controls) CHECK(std::abs(q.norm() - 1.0) < 1e-12);
    }
  }
  CHECK(adam.step_count() == 5);
}

TEST_CASE("non-finite gradients skip their group") {
  std::mt19937_64 rng(62);
  Scene s = testscene::random_scene(rng);
  normalize_quaternions(s);
  const Scene before = s;
  Adam adam;
  adam.reset(s);
  SceneGradients g = SceneGradients::zeros_like(s);
  fill_random(g, rng);
  g.gaussians[0].opacity_logit = std::nan("");
  const auto r = adam.step(s, g, LearningRates{}, 1.0);
  REQUIRE(r.skipped.size() == 1);
  CHECK(r.skipped[0] == "opacity");
  for (size_t i = 0; i < s.gaussians.size(); ++i) {
    CHECK(s.gaussians[i].opacity_logit == before.gaussians[i].opacity_logit);
    CHECK(s.gaussians[i].mu != before.gaussians[i].mu);
  }
}

TEST_CASE("momentum is remapped with densification") {
  std::mt19937_64 rng(63);
  testscene::RandomSceneOptions o;
  o.count = 4;
  Scene s = testscene::random_scene(rng, o);
  Adam adam;
  adam.reset(s);
  SceneGradients g = SceneGradients::zeros_like(s);
  fill_random(g, rng);
  adam.step(s, g, LearningRates{}, 1.0);
  // Duplicate Gaussian 2 and append a fresh one; a further zero-gradient step
  // moves the copies identically and leaves the fresh one alone.
  Scene grown = s;
  grown.gaussians = {s.gaussians[2], s.gaussians[2], s.gaussians[0]};
  adam.remap(grown, std::vector<int>{2, 2, -1});
  const Scene before = grown;
  adam.step(grown, SceneGradients::zeros_like(grown), LearningRates{}, 1.0);
  CHECK(grown.gaussians[0].mu == grown.gaussians[1].mu);
  CHECK(grown.gaussians[0].mu != before.gaussians[0].mu);
  CHECK(grown.gaussians[2].mu == before.gaussians[2].mu);
  CHECK_THROWS_AS(adam.remap(grown, std::vector<int>{0}), ShapeError);
}

namespace {

Scene densify_scene() {
  Scene s;
  s.frame_interval = 0.1;
  const KnotLayout layout(4, 5, 0.0, 1.0);
  for (int i = 0; i < 3; ++i) {
    SplatGaussian g;
    g.mu = Eigen::Vector3d(i, 0, 0);
    g.log_scale.setConstant(std::log(0.01));
    g.opacity_logit = 1.0;
    g.sh.assign(3, 0.1);
    g.color_trig = TrigSeries(2, 3);
    g.tag = 7 + i;
    if (i < 2) g.motion = ObjectMotion::identity(layout, 2, TemporalMask(0.25 + 0.5 * i, 0.1, 0.2));
    s.gaussians.push_back(g);
  }
  return s;
}

DensifyStats stats_for(const Scene& s, std::vector<double> grad) {
  DensifyStats st;
  st.reset(s.gaussians.size());
  for (size_t i = 0; i < grad.size(); ++i) {
    st.grad_norm_sum[i] = grad[i];
    st.visible[i] = 1;
    st.position_grad[i] = Eigen::Vector3d(0, 1, 0);
  }
  return st;
}

}  // namespace

TEST_CASE("densification inherits every attribute") {
  TrainConfig c;
  c.densify_grad_threshold = 1.0;
  std::mt19937_64 rng(64);

  SUBCASE("clone") {
    Scene s = densify_scene();
    const auto r = densify_and_prune(s, stats_for(s, {2.0, 0.0, 0.0}), c, 10.0, rng);
    CHECK(r.cloned == 1);
    CHECK(r.split == 0);
    REQUIRE(s.gaussians.size() == 4);
    CHECK(r.source == std::vector<int>{0, 0, 1, 2});
    const auto& parent = s.gaussians[0];
    const auto& child = s.gaussians[1];
    CHECK(child.is_object());
    CHECK(child.motion->mask.mu_t == parent.motion->mask.mu_t);
    CHECK(child.motion->mask.log_s1 == parent.motion->mask.log_s1);
    CHECK(child.tag == parent.tag);
    CHECK(child.log_scale == parent.log_scale);
    // Nudged against the accumulated position gradient by half the largest scale.
    CHECK(child.mu.y() == doctest::Approx(-0.005));
    CHECK_FALSE(s.knn.valid);
  }
  SUBCASE("split") {
    Scene s = densify_scene();
    s.gaussians[1].log_scale.setConstant(std::log(2.0));
    const auto r = densify_and_prune(s, stats_for(s, {0.0, 2.0, 0.0}), c, 10.0, rng);
    CHECK(r.split == 1);
    REQUIRE(s.gaussians.size() == 4);
    CHECK(r.source == std::vector<int>{0, 1, 1, 2});
    for (int i : {1, 2}) {
      const auto& child = s.gaussians[i];
      REQUIRE(child.is_object());
      CHECK(child.motion->mask.mu_t == 0.75);
      CHECK(child.tag == 8u);
      CHECK(child.scale().x() == doctest::Approx(2.0 / 1.6));
    }
    CHECK(s.gaussians[1].mu != s.gaussians[2].mu);
  }
  SUBCASE("background stays background") {
    Scene s = densify_scene();
    densify_and_prune(s, stats_for(s, {0.0, 0.0, 2.0}), c, 10.0, rng);
    REQUIRE(s.gaussians.size() == 4);
    CHECK_FALSE(s.gaussians[2].is_object());
    CHECK_FALSE(s.gaussians[3].is_object());
  }
  SUBCASE("budget") {
    Scene s = densify_scene();
    c.max_gaussians = 4;
    const auto r = densify_and_prune(s, stats_for(s, {2.0, 3.0, 2.5}), c, 10.0, rng);
    CHECK(r.cloned == 1);
    CHECK(s.gaussians.size() == 4);
    CHECK(r.source == std::vector<int>{0, 1, 1, 2});
  }
}

TEST_CASE("densification below every threshold changes nothing") {
  TrainConfig c;
  std::mt19937_64 rng(65);
  Scene s = densify_scene();
  const Scene before = s;
  const auto r = densify_and_prune(s, stats_for(s, {1e-9, 1e-9, 1e-9}), c, 10.0, rng);
  CHECK(r.cloned + r.split + r.pruned == 0);
  REQUIRE(s.gaussians.size() == before.gaussians.size());
  for (size_t i = 0; i < s.gaussians.size(); ++i) {
    CHECK(s.gaussians[i].mu == before.gaussians[i].mu);
    CHECK(s.gaussians[i].is_object() == before.gaussians[i].is_object());
  }
}

TEST_CASE("pruning") {
  TrainConfig c;
  std::mt19937_64 rng(66);
  Scene s = densify_scene();
  s.gaussians[1].opacity_logit = -10;
  auto r = densify_and_prune(s, stats_for(s, {0, 0, 0}), c, 10.0, rng);
  CHECK(r.pruned == 1);
  CHECK(s.gaussians.size() == 2);
  CHECK(r.source == std::vector<int>{0, 2});

  c.prune_opacity = 1.0;
  Scene all = densify_scene();
  CHECK_THROWS_AS(densify_and_prune(all, stats_for(all, {0, 0, 0}), c, 10.0, rng), StateError);
  CHECK(all.gaussians.size() == 3);
}

TEST_CASE("scene extent") {
  Scene s = densify_scene();
  CHECK(scene_extent(s) == doctest::Approx(1.0));
  CHECK(scene_extent(Scene{}) == 1.0);
}

TEST_CASE("fit with zero iterations") {
  const Dataset data = small_dataset(true);
  TrainConfig c = quick_config(0);
  Scene s = init_scene(data, c.init);
  const Scene before = s;
  const FitReport r = fit(s, data, c);
  CHECK(r.iterations.empty());
  CHECK(r.snapshots.empty());
  CHECK(r.events.empty());
  REQUIRE(s.gaussians.size() == before.gaussians.size());
  for (size_t i = 0; i < s.gaussians.size(); ++i) CHECK(s.gaussians[i].mu == before.gaussians[i].mu);
}

TEST_CASE("fit keeps classes and acquisition times") {
  const Dataset data = small_dataset(true);
  TrainConfig c = quick_config(40);
  Scene s = init_scene(data, c.init);
  REQUIRE(s.object_count() > 0);
  const Scene before = s;
  const FitReport r = fit(s, data, c);
  CHECK(r.iterations.size() == 40);
  REQUIRE(s.gaussians.size() == before.gaussians.size());
  for (size_t i = 0; i < s.gaussians.size(); ++i) {
    CHECK(s.gaussians[i].is_object() == before.gaussians[i].is_object());
    if (s.gaussians[i].motion) CHECK(s.gaussians[i].motion->mask.mu_t == before.gaussians[i].motion->mask.mu_t);
  }
  for (const auto& rec : r.iterations) {
    CHECK(std::isfinite(rec.loss.total));
    CHECK_FALSE(data.frames[rec.frame].held_out);
  }
  CHECK(s.knn.valid);
}

TEST_CASE("fit with densification keeps acquisition times of object children") {
  const Dataset data = small_dataset(true);
  TrainConfig c = quick_config(60);
  c.densify_from = 20;
  c.densify_interval = 20;
  c.densify_until = 60;
  c.densify_grad_threshold = 1e-6;
  Scene s = init_scene(data, c.init);
  std::set<double> times;
  for (const auto& g : s.gaussians)
    if (g.motion) times.insert(g.motion->mask.mu_t);
  const FitReport r = fit(s, data, c);
  CHECK(r.final_gaussians > 0);
  CHECK(r.events.size() >= 3);
  for (const auto& g : s.gaussians)
    if (g.motion) CHECK(times.count(g.motion->mask.mu_t) == 1);
  CHECK(s.knn.valid);
  CHECK(s.knn.neighbors.size() == s.gaussians.size());
}

TEST_CASE("fit applies ablation switches to the scene") {
  const Dataset data = small_dataset(true);
  TrainConfig c = quick_config(2);
  c.motion = false;
  c.temporal_mask = false;
  Scene s = init_scene(data, c.init);
  fit(s, data, c);
  CHECK_FALSE(s.options.motion);
  CHECK_FALSE(s.options.temporal_mask);
}

TEST_CASE("photometric fit of a static scene improves held-out PSNR window by window") {
  const Dataset data = small_dataset(false);
  TrainConfig c = quick_config(1500);
  c.weights.lambda_d = c.weights.lambda_f = c.weights.lambda_obj = c.weights.lambda_sky = 0;
  c.weights.lambda_r = c.weights.lambda_s = 0;
  c.eval_interval = 500;
  Scene s = init_scene(data, c.init);
  const double initial = evaluate(s, data, data.test_indices()).psnr;
  const FitReport r = fit(s, data, c);
  REQUIRE(r.snapshots.size() == 3);
  double prev = initial;
  for (const auto& snap : r.snapshots) {
    INFO("iteration " << snap.iteration << " psnr " << snap.test_psnr);
    CHECK(snap.test_psnr > prev);
    prev = snap.test_psnr;
  }
}
