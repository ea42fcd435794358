#include "splinegauss/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "splinegauss/errors.hpp"
#include "splinegauss/metrics.hpp"

namespace splinegauss {

double LearningRates::for_group(ParamGroup group) const {
  switch (group) {
    case ParamGroup::position: return position;
    case ParamGroup::scale: return scale;
    case ParamGroup::rotation: return rotation;
    case ParamGroup::opacity: return opacity;
    case ParamGroup::sh: return sh;
    case ParamGroup::color_trig: return color_trig;
    case ParamGroup::spline_controls: return spline_controls;
    case ParamGroup::motion_trig: return motion_trig;
    case ParamGroup::quat_controls: return quat_controls;
    case ParamGroup::mask_scales: return mask_scales;
  }
  return 0.0;
}

void TrainConfig::validate() const {
  weights.validate();
  if (iterations < 0) throw FormatError("iterations must be non-negative");
  if (densify_interval <= 0) throw FormatError("densify_interval must be positive");
  if (densify_from < 0 || densify_until < densify_from) throw FormatError("bad densification window");
  if (knn_refresh <= 0) throw FormatError("knn_refresh must be positive");
  if (eval_interval < 0) throw FormatError("eval_interval must be non-negative");
  if (!(densify_grad_threshold > 0) || !(split_scale_fraction > 0) || !(prune_opacity > 0))
    throw FormatError("densification thresholds must be positive");
  if (max_gaussians <= 0) throw FormatError("max_gaussians must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0))
    throw FormatError("bad optimizer constants");
  const double rates[] = {lr.position, lr.scale, lr.rotation, lr.opacity, lr.sh, lr.color_trig,
                          lr.spline_controls, lr.motion_trig, lr.quat_controls, lr.mask_scales,
                          lr.env_map};
  for (double r : rates)
    if (!std::isfinite(r) || r < 0) throw FormatError("learning rates must be finite and non-negative");
  if (!(lr.position_final_factor > 0)) throw FormatError("position_final_factor must be positive");
  if (init.sh_degree < 0 || init.sh_degree > 3) throw FormatError("init.sh_degree must be in [0, 3]");
  if (init.spline_order < 1 || init.spline_order > kMaxSplineOrder) throw FormatError("init.spline_order out of range");
  if (init.control_count < 0 || init.trig_levels < 0 || init.color_levels < 0)
    throw FormatError("init counts must be non-negative");
  if (!(init.initial_opacity > 0 && init.initial_opacity < 1)) throw FormatError("init.initial_opacity must be in (0, 1)");
  if (!(init.mask_scale_frames > 0)) throw FormatError("init.mask_scale_frames must be positive");
  if (init.env_height <= 0 || init.env_width <= 0) throw FormatError("init env map size must be positive");
}

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::update(std::span<double> p, std::span<const double> g, std::span<double> m,
                  std::span<double> v, double lr, long t) const {
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
  for (size_t i = 0; i < p.size(); ++i) {
    m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
    v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
    p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
  }
}

void Adam::reset(const Scene& scene) {
  m_.clear();
  v_.clear();
  for (const auto& g : scene.gaussians) {
    m_.push_back(zeros_like(g));
    v_.push_back(zeros_like(g));
  }
  env_m_.assign(scene.env_map.texels.size(), 0.0);
  env_v_.assign(scene.env_map.texels.size(), 0.0);
}

void Adam::remap(const Scene& scene, std::span<const int> source) {
  if (source.size() != scene.gaussians.size()) throw ShapeError("remap: source size mismatch");
  std::vector<SplatGaussian> m, v;
  m.reserve(source.size());
  v.reserve(source.size());
  for (size_t i = 0; i < source.size(); ++i) {
    const int s = source[i];
    if (s >= 0 && static_cast<size_t>(s) < m_.size()) {
      m.push_back(m_[s]);
      v.push_back(v_[s]);
    } else {
      m.push_back(zeros_like(scene.gaussians[i]));
      v.push_back(zeros_like(scene.gaussians[i]));
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
}

namespace {

using SpanList = std::vector<std::pair<ParamGroup, std::span<double>>>;
using ConstSpanList = std::vector<std::pair<ParamGroup, std::span<const double>>>;

SpanList spans(SplatGaussian& g) {
  SpanList out;
  for_each_param(g, [&](ParamGroup grp, std::span<double> s) { out.emplace_back(grp, s); });
  return out;
}

ConstSpanList spans(const SplatGaussian& g) {
  ConstSpanList out;
  for_each_param(g, [&](ParamGroup grp, std::span<const double> s) { out.emplace_back(grp, s); });
  return out;
}

bool is_quaternion(ParamGroup g) { return g == ParamGroup::rotation || g == ParamGroup::quat_controls; }

}  // namespace

Adam::StepReport Adam::step(Scene& scene, const SceneGradients& grads, const LearningRates& lr,
                            double position_scale) {
  const size_t n = scene.gaussians.size();
  if (grads.gaussians.size() != n || m_.size() != n)
    throw ShapeError("optimizer step: buffers do not match the scene");
  ++t_;

  std::array<bool, kParamGroupCount> bad{};
  for (const auto& g : grads.gaussians)
    for (const auto& [grp, s] : spans(g))
      for (double x : s)
        if (!std::isfinite(x)) bad[static_cast<int>(grp)] = true;
  bool env_bad = false;
  for (double x : grads.env_map)
    if (!std::isfinite(x)) env_bad = true;

  StepReport report;
  for (int k = 0; k < kParamGroupCount; ++k)
    if (bad[k]) report.skipped.emplace_back(param_group_name(static_cast<ParamGroup>(k)));
  if (env_bad) report.skipped.emplace_back("env_map");

  std::vector<double> tangent;
  for (size_t i = 0; i < n; ++i) {
    auto p = spans(scene.gaussians[i]);
    const auto g = spans(grads.gaussians[i]);
    auto m = spans(m_[i]);
    auto v = spans(v_[i]);
    if (g.size() != p.size() || m.size() != p.size()) throw ShapeError("optimizer step: layout mismatch");
    for (size_t k = 0; k < p.size(); ++k) {
      const ParamGroup grp = p[k].first;
      if (bad[static_cast<int>(grp)]) continue;
      double rate = lr.for_group(grp);
      if (grp == ParamGroup::position) rate *= position_scale;
      std::span<double> param = p[k].second;
      if (!is_quaternion(grp)) {
        update(param, g[k].second, m[k].second, v[k].second, rate, t_);
        continue;
      }
      // Remove the radial component, step, then project back onto the sphere.
      tangent.assign(g[k].second.begin(), g[k].second.end());
      for (size_t b = 0; b + 4 <= param.size(); b += 4) {
        Eigen::Map<Eigen::Vector4d> q(param.data() + b);
        Eigen::Map<Eigen::Vector4d> d(tangent.data() + b);
        const Eigen::Vector4d u = q.normalized();
        d -= d.dot(u) * u;
      }
      update(param, tangent, m[k].second, v[k].second, rate, t_);
      for (size_t b = 0; b + 4 <= param.size(); b += 4) {
        Eigen::Map<Eigen::Vector4d> q(param.data() + b);
        q /= q.norm();
      }
    }
  }
  if (!env_bad && !scene.env_map.empty()) {
    if (grads.env_map.size() != scene.env_map.texels.size() || env_m_.size() != grads.env_map.size())
      throw ShapeError("optimizer step: environment buffers do not match");
    update(scene.env_map.texels, grads.env_map, env_m_, env_v_, lr.env_map, t_);
  }
  return report;
}

void DensifyStats::reset(size_t count) {
  grad_norm_sum.assign(count, 0.0);
  visible.assign(count, 0);
  position_grad.assign(count, Eigen::Vector3d::Zero());
}

void DensifyStats::accumulate(const SceneGradients& grads) {
  if (grads.gaussians.size() != grad_norm_sum.size()) throw ShapeError("densify stats size mismatch");
  for (size_t i = 0; i < grad_norm_sum.size(); ++i) {
    grad_norm_sum[i] += grads.screen_grad_norm[i];
    visible[i] += grads.visible_count[i];
    position_grad[i] += grads.gaussians[i].mu;
  }
}

double scene_extent(const Scene& scene) {
  if (scene.gaussians.empty()) return 1.0;
  Eigen::Vector3d lo = scene.gaussians[0].mu, hi = lo;
  for (const auto& g : scene.gaussians) {
    lo = lo.cwiseMin(g.mu);
    hi = hi.cwiseMax(g.mu);
  }
  return std::max(0.5 * (hi - lo).norm(), 1e-6);
}

DensifyReport densify_and_prune(Scene& scene, const DensifyStats& stats, const TrainConfig& config,
                                double extent, std::mt19937_64& rng) {
  const size_t n = scene.gaussians.size();
  if (stats.grad_norm_sum.size() != n) throw ShapeError("densify stats do not match the scene");

  std::vector<char> prune(n, 0);
  size_t kept = 0;
  for (size_t i = 0; i < n; ++i) {
    prune[i] = scene.gaussians[i].opacity() < config.prune_opacity;
    kept += !prune[i];
  }
  if (kept == 0) throw StateError("pruning would remove every Gaussian");

  // High-gradient survivors, strongest first, limited by the size budget.
  std::vector<int> candidates;
  std::vector<double> mean_grad(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (stats.visible[i] > 0) mean_grad[i] = stats.grad_norm_sum[i] / stats.visible[i];
    if (!prune[i] && mean_grad[i] >= config.densify_grad_threshold) candidates.push_back(static_cast<int>(i));
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](int a, int b) { return mean_grad[a] > mean_grad[b]; });
  const long budget = std::max<long>(0, static_cast<long>(config.max_gaussians) - static_cast<long>(kept));
  if (static_cast<long>(candidates.size()) > budget) candidates.resize(budget);
  std::vector<char> densify(n, 0);
  for (int c : candidates) densify[c] = 1;

  const double split_limit = config.split_scale_fraction * extent;
  const double shrink = std::log(1.6);
  std::normal_distribution<double> n01;

  DensifyReport report;
  std::vector<SplatGaussian> out;
  out.reserve(kept + candidates.size());
  for (size_t i = 0; i < n; ++i) {
    const SplatGaussian& g = scene.gaussians[i];
    if (prune[i]) {
      ++report.pruned;
      continue;
    }
    if (!densify[i]) {
      out.push_back(g);
      report.source.push_back(static_cast<int>(i));
      continue;
    }
    const Eigen::Vector3d s = g.scale();
    if (s.maxCoeff() > split_limit) {
      const double t_ref = g.motion ? g.motion->mask.mu_t : 0.0;
      const Eigen::Matrix3d r = quat_to_matrix(gaussian_rotation(g, t_ref, scene.options));
      for (int c = 0; c < 2; ++c) {
        SplatGaussian child = g;
        const Eigen::Vector3d z(n01(rng), n01(rng), n01(rng));
        child.mu = g.mu + r * s.cwiseProduct(z);
        child.log_scale = g.log_scale.array() - shrink;
        out.push_back(std::move(child));
        report.source.push_back(static_cast<int>(i));
      }
      ++report.split;
    } else {
      out.push_back(g);
      report.source.push_back(static_cast<int>(i));
      SplatGaussian child = g;
      const Eigen::Vector3d d = stats.position_grad[i];
      if (d.norm() > 0) child.mu -= 0.5 * s.maxCoeff() * d.normalized();
      out.push_back(std::move(child));
      report.source.push_back(static_cast<int>(i));
      ++report.cloned;
    }
  }
  scene.gaussians = std::move(out);
  scene.knn.valid = false;
  return report;
}

FrameTargets frame_targets(const Dataset& data, int frame) {
  const FrameData& f = data.frames.at(frame);
  FrameTargets t;
  t.color = &f.color;
  if (!f.obj_mask.empty()) t.obj_mask = &f.obj_mask;
  if (!f.sky_mask.empty()) t.sky_mask = &f.sky_mask;
  if (!f.inv_depth.empty()) t.inv_depth = &f.inv_depth;
  if (!f.depth_valid.empty()) t.depth_valid = &f.depth_valid;
  if (f.flow_target >= 0 && !f.flow.empty()) {
    t.flow = &f.flow;
    t.flow_camera = &data.frames.at(f.flow_target).camera;
  }
  return t;
}

void FitReport::write_loss_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << "iteration,term,value\n";
  out.precision(17);
  for (const auto& r : iterations)
    for (const auto& [name, value] : r.loss.terms()) out << r.iteration << ',' << name << ',' << value << '\n';
}

void FitReport::write_json(const std::string& path) const {
  nlohmann::json j;
  j["final_gaussians"] = final_gaussians;
  j["final_objects"] = final_objects;
  j["events"] = events;
  auto& its = j["iterations"] = nlohmann::json::array();
  for (const auto& r : iterations) {
    nlohmann::json e{{"iteration", r.iteration}, {"frame", r.frame}};
    for (const auto& [name, value] : r.loss.terms()) e[name] = value;
    its.push_back(std::move(e));
  }
  auto& snaps = j["psnr_snapshots"] = nlohmann::json::array();
  for (const auto& s : snapshots) {
    // JSON has no infinity; identical renders are reported as null.
    nlohmann::json e{{"iteration", s.iteration}, {"test_ssim", s.test_ssim}};
    e["test_psnr"] = std::isfinite(s.test_psnr) ? nlohmann::json(s.test_psnr) : nlohmann::json();
    snaps.push_back(std::move(e));
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << '\n';
}

FitReport fit(Scene& scene, const Dataset& data, const TrainConfig& config, const FitProgress& progress) {
  config.validate();
  data.validate();
  FitReport report;
  if (config.iterations == 0) {
    report.final_gaussians = static_cast<int>(scene.gaussians.size());
    report.final_objects = static_cast<int>(scene.object_count());
    return report;
  }
  const std::vector<int> train = data.train_indices();
  const std::vector<int> test = data.test_indices();
  if (train.empty()) throw FormatError("dataset has no training frames");
  if (scene.gaussians.empty()) throw StateError("cannot fit an empty scene");

  scene.options.motion = config.motion;
  scene.options.temporal_mask = config.temporal_mask;
  const LossWeights& w = config.weights;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<size_t> pick(0, train.size() - 1);
  const double extent = scene_extent(scene);

  Adam adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
  adam.reset(scene);
  DensifyStats stats;
  stats.reset(scene.gaussians.size());
  SceneGradients grads = SceneGradients::zeros_like(scene);
  Rasterizer rasterizer;
  if (!scene.knn.valid || scene.knn.neighbors.size() != scene.gaussians.size()) refresh_knn(scene);

  int bad_streak = 0;
  const double decay = std::log(config.lr.position_final_factor);
  for (int it = 1; it <= config.iterations; ++it) {
    const int f = static_cast<int>(train[pick(rng)]);
    const FrameData& frame = data.frames[f];
    FrameTargets targets = frame_targets(data, f);
    std::optional<double> flow_time;
    if (targets.flow && w.lambda_f > 0.0 && config.motion) {
      flow_time = scene.normalize_time(data.frames[frame.flow_target].camera.timestamp);
    } else {
      targets.flow = nullptr;
    }
    const double t = scene.normalize_time(frame.camera.timestamp);
    const RenderOutputs& out = rasterizer.forward(scene, frame.camera, t, flow_time);
    OutputGradients upstream = OutputGradients::zeros_like(out);
    LossBreakdown loss = image_losses(out, targets, w, &upstream);
    grads.set_zero();
    rasterizer.backward(scene, upstream, grads);
    loss.rigidity = rigidity_loss(scene, &grads, w.lambda_r).value;
    loss.expanding = expanding_loss_total(scene, &grads, w.lambda_s).value;
    total_loss(loss, w);

    IterationRecord record{it, f, loss};
    if (!std::isfinite(loss.total)) {
      report.events.push_back("iteration " + std::to_string(it) + ": non-finite loss, step skipped");
      if (++bad_streak >= 10) throw StateError("loss was non-finite for 10 consecutive iterations");
    } else {
      bad_streak = 0;
      if (it <= config.densify_until) stats.accumulate(grads);
      const double frac = static_cast<double>(it - 1) / std::max(1, config.iterations - 1);
      const auto step = adam.step(scene, grads, config.lr, extent * std::exp(decay * frac));
      for (const auto& g : step.skipped)
        report.events.push_back("iteration " + std::to_string(it) + ": non-finite gradient in " + g);
    }

    if (++scene.knn.age >= config.knn_refresh) refresh_knn(scene);
    if (it >= config.densify_from && it <= config.densify_until && it % config.densify_interval == 0) {
      const DensifyReport d = densify_and_prune(scene, stats, config, extent, rng);
      adam.remap(scene, d.source);
      stats.reset(scene.gaussians.size());
      grads = SceneGradients::zeros_like(scene);
      refresh_knn(scene);
      report.events.push_back("iteration " + std::to_string(it) + ": cloned " + std::to_string(d.cloned) +
                              ", split " + std::to_string(d.split) + ", pruned " +
                              std::to_string(d.pruned) + ", total " +
                              std::to_string(scene.gaussians.size()));
    }
    report.iterations.push_back(record);
    if (progress) progress(it, record);
    if (config.eval_interval > 0 && it % config.eval_interval == 0 && !test.empty()) {
      const EvalResult e = evaluate(scene, data, test);
      report.snapshots.push_back({it, e.psnr, e.ssim});
    }
  }
  report.final_gaussians = static_cast<int>(scene.gaussians.size());
  report.final_objects = static_cast<int>(scene.object_count());
  return report;
}

}  // namespace splinegauss
