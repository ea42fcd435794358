#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "splinegauss/errors.hpp"
#include "splinegauss/harness.hpp"
#include "splinegauss/losses.hpp"
#include "splinegauss/renderer.hpp"
#include "splinegauss/sh.hpp"

namespace splinegauss {
namespace {

constexpr double kStep = 1e-5;

/// Collects analytic and numeric values per group, then scores them.
class Comparison {
 public:
  void add(const std::string& group, double analytic, double numeric) {
    auto& g = groups_[group];
    g.analytic.push_back(analytic);
    g.numeric.push_back(numeric);
  }

  void finish(GradCheckReport& report) const {
    for (const auto& [name, g] : groups_) {
      double scale = 0.0;
      for (double f : g.numeric) scale = std::max(scale, std::abs(f));
      const double floor = std::max(1e-3 * scale, 1e-12);
      double worst = 0.0;
      for (size_t i = 0; i < g.numeric.size(); ++i) {
        const double a = g.analytic[i], f = g.numeric[i];
        worst = std::max(worst, std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor}));
      }
      double& slot = report.max_rel_error[name];
      slot = std::max(slot, worst);
      report.checked += static_cast<int>(g.numeric.size());
    }
  }

 private:
  struct Group {
    std::vector<double> analytic, numeric;
  };
  std::map<std::string, Group> groups_;
};

/// Central difference. Halving the step must leave a smooth function's
/// estimate unchanged; when it does not, the step straddles a kink (an L1
/// residual or clamp changing sign) and shrinks.
double central(double& x, const std::function<double()>& f, double step = kStep) {
  const double x0 = x;
  auto diff = [&](double h) {
    x = x0 + h;
    const double fp = f();
    x = x0 - h;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2 * h);
  };
  const double noise = 1e-9 * std::max(1.0, std::abs(f()));
  double d = diff(step);
  for (int attempt = 0; attempt < 3; ++attempt, step *= 0.1) {
    const double half = diff(0.5 * step);
    if (std::abs(d - half) <= 1e-4 * std::max(std::abs(d), std::abs(half)) + noise) break;
    d = diff(0.1 * step);
  }
  return d;
}

Eigen::Vector3d randn3(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return {n(rng), n(rng), n(rng)};
}

Eigen::Vector4d randn4(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return {n(rng), n(rng), n(rng), n(rng)};
}

KnotLayout random_layout(std::mt19937_64& rng) {
  const int order = std::uniform_int_distribution<int>(2, 6)(rng);
  const int count = order + std::uniform_int_distribution<int>(0, 5)(rng);
  return KnotLayout(order, count, 0.0, 1.0);
}

QuatBSplineCurve random_quat_curve(std::mt19937_64& rng, const KnotLayout& layout) {
  std::uniform_real_distribution<double> u(0.8, 1.2);
  std::vector<Eigen::Vector4d> qs;
  Quat q = Quat::from_vec(randn4(rng).normalized());
  for (int c = 0; c < layout.control_count(); ++c) {
    qs.push_back(q.vec() * u(rng));
    q = q * quat_exp(0.4 * randn3(rng));
  }
  return QuatBSplineCurve(layout, qs);
}

void check_spline(std::mt19937_64& rng, Comparison& cmp) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const KnotLayout layout = random_layout(rng);
    std::vector<Eigen::Vector3d> pts(layout.control_count());
    for (auto& p : pts) p = randn3(rng);
    BSplineCurve curve(layout, pts);
    const double t = trial == 0 ? 1.0 : u01(rng);
    const Eigen::Vector3d up = randn3(rng);
    const std::vector<double> w = curve_control_gradient(curve, t);
    for (size_t i = 0; i < pts.size(); ++i)
      for (int c = 0; c < 3; ++c)
        cmp.add("controls", w[i] * up[c],
                central(curve.control_points[i][c], [&] { return up.dot(eval_curve(curve, t)); }));
  }
}

void check_quaternion(std::mt19937_64& rng, Comparison& cmp) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const KnotLayout layout = random_layout(rng);
    QuatBSplineCurve curve = random_quat_curve(rng, layout);
    const double t = u01(rng);
    const Eigen::Vector4d up = randn4(rng);
    std::vector<Eigen::Vector4d> g(curve.controls.size(), Eigen::Vector4d::Zero());
    quat_curve_backward(curve, t, up, g);
    for (size_t i = 0; i < g.size(); ++i)
      for (int c = 0; c < 4; ++c)
        cmp.add("controls", g[i][c],
                central(curve.controls[i][c], [&] { return up.dot(eval_quat_curve(curve, t).vec()); }));
  }
}

void check_trig(std::mt19937_64& rng, Comparison& cmp) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 10; ++trial) {
    TrigSeries s(1 + trial % 6, 3);
    for (auto& v : s.sin_coeffs) v = n01(rng);
    for (auto& v : s.cos_coeffs) v = n01(rng);
    const double t = u01(rng);
    const Eigen::Vector3d up = randn3(rng);
    TrigSeries g(s.levels, 3);
    trig_backward(s, t, std::span<const double>(up.data(), 3), g);
    auto f = [&] { return up.dot(trig_eval3(s, t)); };
    for (size_t i = 0; i < s.sin_coeffs.size(); ++i) {
      cmp.add("sin", g.sin_coeffs[i], central(s.sin_coeffs[i], f));
      cmp.add("cos", g.cos_coeffs[i], central(s.cos_coeffs[i], f));
    }
    // Color path: deform_color shifts the diffuse band only.
    std::vector<double> sh(12);
    for (auto& v : sh) v = n01(rng);
    std::vector<double> w(12);
    for (auto& v : w) v = n01(rng);
    auto fc = [&] {
      const auto out = deform_color(sh, s, t);
      double acc = 0;
      for (size_t i = 0; i < out.size(); ++i) acc += w[i] * out[i];
      return acc;
    };
    TrigSeries gc(s.levels, 3);
    trig_backward(s, t, std::span<const double>(w.data(), 3), gc);
    for (size_t i = 0; i < s.sin_coeffs.size(); ++i) cmp.add("color", gc.sin_coeffs[i], central(s.sin_coeffs[i], fc));
    for (size_t i = 0; i < sh.size(); ++i) cmp.add("color", w[i], central(sh[i], fc));
  }
}

void check_mask(std::mt19937_64& rng, Comparison& cmp) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    TemporalMask m(u01(rng), 0.05 + 0.4 * u01(rng), 0.05 + 0.4 * u01(rng));
    double sigma = 0.1 + 0.8 * u01(rng);
    const double t = u01(rng);
    const MaskGradient g = effective_opacity_gradient(m, sigma, t);
    auto f = [&] { return effective_opacity(m, sigma, t); };
    cmp.add("opacity", g.sigma, central(sigma, f));
    cmp.add("opacity", g.log_s0, central(m.log_s0, f));
    cmp.add("opacity", g.log_s1, central(m.log_s1, f));
    const double df = 1.0 / 29.0;
    const Eigen::Vector2d ge = expanding_loss_gradient(m, df);
    auto fe = [&] { return expanding_loss(m, df); };
    cmp.add("expanding", ge[0], central(m.log_s0, fe));
    cmp.add("expanding", ge[1], central(m.log_s1, fe));
  }
}

/// Small randomized scene in front of `front_camera`.
Scene random_scene(std::mt19937_64& rng, int count, int sh_degree) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Scene s;
  s.sh_degree = sh_degree;
  s.frame_interval = 1.0 / 29.0;
  s.env_map = EnvMap(8, 16, {0.2, 0.3, 0.5});
  for (auto& t : s.env_map.texels) t = 0.5 * u01(rng);
  const KnotLayout layout(4, 6, 0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    SplatGaussian g;
    g.mu = Eigen::Vector3d(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5) * 2.0;
    g.log_scale = Eigen::Vector3d::Constant(-2.0) + 0.3 * randn3(rng);
    g.rotation = randn4(rng) * 0.7;
    if (g.rotation.norm() < 0.2) g.rotation[0] += 1.0;
    const double sigma = 0.1 + 0.8 * u01(rng);
    g.opacity_logit = std::log(sigma / (1 - sigma));
    g.sh.resize(3 * sh_coeff_count(sh_degree));
    for (auto& v : g.sh) v = 0.2 * n01(rng);
    g.color_trig = TrigSeries(2, 3);
    for (auto& v : g.color_trig.sin_coeffs) v = 0.05 * n01(rng);
    for (auto& v : g.color_trig.cos_coeffs) v = 0.05 * n01(rng);
    if (i % 2 == 0) {
      std::vector<Eigen::Vector3d> pts(layout.control_count());
      for (auto& p : pts) p = 0.1 * randn3(rng);
      TrigSeries trig(2, 3);
      for (auto& v : trig.sin_coeffs) v = 0.03 * n01(rng);
      for (auto& v : trig.cos_coeffs) v = 0.03 * n01(rng);
      g.motion = ObjectMotion(BSplineCurve(layout, pts), trig, random_quat_curve(rng, layout),
                              TemporalMask(u01(rng), 0.1 + 0.3 * u01(rng), 0.1 + 0.3 * u01(rng)));
    }
    s.gaussians.push_back(std::move(g));
  }
  refresh_knn(s);
  return s;
}

Camera front_camera(int size) {
  return Camera::look_at({0.0, -0.3, -4.0}, {0, 0, 0}, {0, -1, 0}, 1.2 * size, size, size, 0.0);
}

/// FD over every learnable scalar and env texel of `s` against `grads`.
void scene_fd(Scene& s, const SceneGradients& grads, const std::function<double()>& f, Comparison& cmp) {
  for (size_t i = 0; i < s.gaussians.size(); ++i) {
    std::vector<std::pair<ParamGroup, std::span<double>>> params;
    std::vector<std::span<const double>> gs;
    for_each_param(s.gaussians[i], [&](ParamGroup grp, std::span<double> v) { params.emplace_back(grp, v); });
    for_each_param(grads.gaussians[i], [&](ParamGroup, std::span<const double> v) { gs.push_back(v); });
    for (size_t k = 0; k < params.size(); ++k)
      for (size_t j = 0; j < params[k].second.size(); ++j)
        cmp.add(param_group_name(params[k].first), gs[k][j], central(params[k].second[j], f));
  }
  for (size_t j = 0; j < s.env_map.texels.size(); ++j) cmp.add("env_map", grads.env_map[j], central(s.env_map.texels[j], f));
}

Image random_image(std::mt19937_64& rng, int size, int channels) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Image img(size, size, channels);
  for (auto& v : img.data) v = u01(rng);
  return img;
}

void check_renderer(std::mt19937_64& rng, Comparison& cmp) {
  std::normal_distribution<double> n01;
  Scene s = random_scene(rng, 12, 2);
  const Camera cam = front_camera(16);
  const double t = 0.45, tf = 0.55;
  Rasterizer r;
  const RenderOutputs& out = r.forward(s, cam, t, tf);
  OutputGradients w = OutputGradients::zeros_like(out);
  for (Image* img : {&w.color, &w.obj_mask, &w.inv_depth, &w.transmittance, &w.flow_pos, &w.flow_pos_src})
    for (auto& v : img->data) v = n01(rng);
  SceneGradients g = SceneGradients::zeros_like(s);
  r.backward(s, w, g);
  auto dot = [](const Image& a, const Image& b) {
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
  };
  auto f = [&] {
    const RenderOutputs o = render(s, cam, t, {}, tf);
    return dot(w.color, o.color) + dot(w.obj_mask, o.obj_mask) + dot(w.inv_depth, o.inv_depth) +
           dot(w.transmittance, o.transmittance) + dot(w.flow_pos, o.flow_pos) + dot(w.flow_pos_src, o.flow_pos_src);
  };
  scene_fd(s, g, f, cmp);
}

/// Targets for one 16x16 frame with every term active.
struct TargetSet {
  Image color, obj, sky, depth;
  std::vector<FlowCorrespondence> flow;
  Camera flow_camera;
  FrameTargets view() const {
    FrameTargets tg;
    tg.color = &color;
    tg.obj_mask = &obj;
    tg.sky_mask = &sky;
    tg.inv_depth = &depth;
    tg.flow = &flow;
    tg.flow_camera = &flow_camera;
    return tg;
  }
};

TargetSet random_targets(std::mt19937_64& rng, const Camera& cam, int size) {
  TargetSet ts;
  ts.color = random_image(rng, size, 3);
  ts.obj = random_image(rng, size, 1);
  ts.sky = random_image(rng, size, 1);
  ts.depth = random_image(rng, size, 1);
  for (auto& v : ts.obj.data) v = v < 0.4;
  for (auto& v : ts.sky.data) v = v < 0.3;
  for (auto& v : ts.depth.data) v = 0.15 + 0.2 * v;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (ts.obj.at(x, y) > 0.5) ts.flow.push_back({x, y, x + 0.3, y - 0.2});
  ts.flow_camera = cam;
  ts.flow_camera.translation += Eigen::Vector3d(0.05, 0.0, 0.0);
  return ts;
}

void check_losses(std::mt19937_64& rng, Comparison& cmp) {
  const int size = 12;
  Scene s = random_scene(rng, 25, 1);
  const Camera cam = front_camera(size);
  RenderOutputs out = render(s, cam, 0.4, {}, 0.5);
  // Keep both BCE inputs away from the clamp, where log curvature swamps differences.
  for (auto& v : out.transmittance.data) v = std::min(v, 0.99);
  for (auto& v : out.obj_mask.data) v = std::clamp(v, 0.01, 0.99);
  const TargetSet ts = random_targets(rng, cam, size);
  FrameTargets tg = ts.view();
  LossWeights w;
  tg.depth_alignment = Eigen::Vector2d(1.3, 0.02);
  OutputGradients grads = OutputGradients::zeros_like(out);
  image_losses(out, tg, w, &grads);
  auto f = [&] { return image_losses(out, tg, w).total; };
  auto channel = [&](const char* name, Image& x, const Image& g, double step) {
    for (size_t i = 0; i < x.data.size(); ++i) cmp.add(name, g.data[i], central(x.data[i], f, step));
  };
  // Steps stay below the BCE clamp so mask pixels at 0 or 1 do not cross it.
  channel("color", out.color, grads.color, 1e-6);
  channel("obj_mask", out.obj_mask, grads.obj_mask, 1e-7);
  channel("inv_depth", out.inv_depth, grads.inv_depth, 1e-6);
  channel("transmittance", out.transmittance, grads.transmittance, 1e-7);
  channel("flow_pos", out.flow_pos, grads.flow_pos, 1e-6);
  channel("flow_pos_src", out.flow_pos_src, grads.flow_pos_src, 1e-6);
}

void check_rigidity(std::mt19937_64& rng, Comparison& cmp) {
  Scene s = random_scene(rng, 30, 0);
  SceneGradients g = SceneGradients::zeros_like(s);
  rigidity_loss(s, &g, 1.0);
  expanding_loss_total(s, &g, 0.3);
  scene_fd(s, g, [&] { return rigidity_loss(s).value + 0.3 * expanding_loss_total(s).value; }, cmp);
}

void check_end_to_end(std::mt19937_64& rng, Comparison& cmp) {
  const int size = 16;
  Scene s = random_scene(rng, 50, 1);
  const Camera cam = front_camera(size);
  const TargetSet ts = random_targets(rng, cam, size);
  FrameTargets tg = ts.view();
  const double t = 0.4, tf = 0.5;
  LossWeights w;
  Rasterizer r;
  const RenderOutputs& out = r.forward(s, cam, t, tf);
  // The alignment is a per-frame constant in the backward pass; freeze it at its fitted value.
  const LossBreakdown fitted = image_losses(out, tg, w);
  tg.depth_alignment = Eigen::Vector2d(fitted.depth_scale, fitted.depth_shift);
  OutputGradients up = OutputGradients::zeros_like(out);
  image_losses(out, tg, w, &up);
  SceneGradients g = SceneGradients::zeros_like(s);
  r.backward(s, up, g);
  rigidity_loss(s, &g, w.lambda_r);
  expanding_loss_total(s, &g, w.lambda_s);
  auto f = [&] {
    LossBreakdown b = image_losses(render(s, cam, t, {}, tf), tg, w);
    b.rigidity = rigidity_loss(s).value;
    b.expanding = expanding_loss_total(s).value;
    return total_loss(b, w);
  };
  scene_fd(s, g, f, cmp);
}

struct Entry {
  const char* name;
  double tolerance;
  void (*run)(std::mt19937_64&, Comparison&);
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"spline_controls", 1e-6, check_spline},     {"quaternion_controls", 1e-4, check_quaternion},
      {"trig_series", 1e-4, check_trig},           {"temporal_mask", 1e-4, check_mask},
      {"renderer", 1e-4, check_renderer},          {"losses", 1e-4, check_losses},
      {"rigidity", 1e-4, check_rigidity},          {"end_to_end", 1e-3, check_end_to_end},
  };
  return entries;
}

}  // namespace

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& [name, e] : max_rel_error) w = std::max(w, std::isnan(e) ? INFINITY : e);
  return w;
}

std::vector<std::string> grad_check_components() {
  std::vector<std::string> names;
  for (const auto& e : registry()) names.emplace_back(e.name);
  return names;
}

GradCheckReport grad_check(const std::string& component, std::uint64_t seed) {
  for (const auto& e : registry()) {
    if (component != e.name) continue;
    std::mt19937_64 rng(seed);
    Comparison cmp;
    e.run(rng, cmp);
    GradCheckReport report;
    report.component = component;
    report.tolerance = e.tolerance;
    cmp.finish(report);
    return report;
  }
  throw FormatError("unknown gradient check component: " + component);
}

}  // namespace splinegauss
