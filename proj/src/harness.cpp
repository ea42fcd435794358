#include "splinegauss/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "splinegauss/errors.hpp"
#include "splinegauss/io.hpp"
#include "splinegauss/renderer.hpp"
#include "splinegauss/sh.hpp"

namespace splinegauss {
namespace {

constexpr double kTruthOpacity = 0.95;

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

Eigen::Vector3d TrajectorySpec::offset(double t) const {
  return velocity * t + amplitude * std::sin(2.0 * std::numbers::pi * frequency * t + phase);
}

void SyntheticSceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw FormatError("spec: image size must be positive");
  if (frames < 2) throw FormatError("spec: need at least two frames");
  if (!(frame_seconds > 0)) throw FormatError("spec: frame_seconds must be positive");
  if (!(focal > 0)) throw FormatError("spec: focal must be positive");
  if (look_direction.norm() == 0) throw FormatError("spec: look_direction must be nonzero");
  if (lidar_points <= 0) throw FormatError("spec: lidar_points must be positive");
  if (holdout_every < 2) throw FormatError("spec: holdout_every must be at least 2");
  if (max_flow_per_pair < 0) throw FormatError("spec: max_flow_per_pair must be non-negative");
  if (spline_order < 2 || spline_order > kMaxSplineOrder) throw FormatError("spec: bad spline order");
  if (trig_levels < 1) throw FormatError("spec: trig_levels must be positive");
  if (noise.mask_flip_rate < 0 || noise.mask_flip_rate > 1) throw FormatError("spec: mask_flip_rate outside [0, 1]");
  if (noise.flow_jitter < 0) throw FormatError("spec: flow_jitter must be non-negative");
  if (!(noise.depth_scale_min > 0) || noise.depth_scale_max < noise.depth_scale_min ||
      noise.depth_shift_max < noise.depth_shift_min)
    throw FormatError("spec: bad depth gauge range");
  auto check_box = [](const BoxSpec& b) {
    if ((b.size.array() <= 0).any() || !(b.spacing > 0)) throw FormatError("spec: box size and spacing must be positive");
  };
  for (const auto& b : static_boxes) check_box(b);
  if (ground.enabled && (!(ground.spacing > 0) || !(ground.checker > 0) || ground.x_max <= ground.x_min ||
                         ground.z_max <= ground.z_min))
    throw FormatError("spec: bad ground plane");
  for (const auto& m : moving) {
    check_box(m.box);
    const double levels = 2.0 * m.trajectory.frequency;
    if (m.trajectory.amplitude.norm() > 0 &&
        (levels < 1 || levels > trig_levels || std::abs(levels - std::round(levels)) > 1e-12))
      throw FormatError("spec: 2 * trajectory frequency must be a whole number in [1, trig_levels]");
    if ((m.first_frame >= 0) != (m.last_frame >= 0)) throw FormatError("spec: window needs both ends");
    if (m.first_frame >= 0 && (m.first_frame > m.last_frame || m.last_frame >= frames))
      throw FormatError("spec: appearance window outside the sequence");
  }
}

SyntheticSceneSpec SyntheticSceneSpec::desk_static() {
  SyntheticSceneSpec s;
  BoxSpec a;
  a.center = {-2.2, -0.3, 3.5};
  a.size = {1.2, 1.6, 1.4};
  a.color = {0.75, 0.3, 0.25};
  BoxSpec b;
  b.center = {2.4, -0.5, 5.0};
  b.size = {1.4, 2.0, 1.4};
  b.color = {0.25, 0.4, 0.75};
  s.static_boxes = {a, b};
  return s;
}

SyntheticSceneSpec SyntheticSceneSpec::desk_default() {
  SyntheticSceneSpec s = desk_static();
  MovingObjectSpec mover;
  mover.box.center = {0.0, 0.1, 2.5};
  mover.box.size = {0.8, 0.8, 0.8};
  mover.box.color = {0.9, 0.8, 0.2};
  mover.box.spacing = 0.1;
  mover.trajectory.amplitude = {1.4, 0.0, 0.0};
  mover.trajectory.velocity = {0.0, 0.0, 0.6};
  mover.trajectory.frequency = 1.0;
  MovingObjectSpec transient;
  transient.box.center = {-0.9, 0.2, 1.2};
  transient.box.size = {0.6, 0.6, 0.6};
  transient.box.color = {0.2, 0.75, 0.3};
  transient.box.spacing = 0.1;
  transient.first_frame = 8;
  transient.last_frame = 20;
  s.moving = {mover, transient};
  return s;
}

namespace {

using nlohmann::json;

json vec_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw FormatError(where + ": expected a 3-vector");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

template <class T>
void get_to(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + "." + key + ": " + e.what());
  }
}

void get_vec(const json& j, const char* key, Eigen::Vector3d& out, const std::string& where) {
  if (j.contains(key)) out = vec_from(j.at(key), where + "." + key);
}

json box_json(const BoxSpec& b) {
  return {{"center", vec_json(b.center)}, {"size", vec_json(b.size)}, {"color", vec_json(b.color)},
          {"spacing", b.spacing}};
}

BoxSpec box_from(const json& j, const std::string& where) {
  require_known_keys(j, {"center", "size", "color", "spacing"}, where);
  BoxSpec b;
  get_vec(j, "center", b.center, where);
  get_vec(j, "size", b.size, where);
  get_vec(j, "color", b.color, where);
  get_to(j, "spacing", b.spacing, where);
  return b;
}

}  // namespace

json spec_to_json(const SyntheticSceneSpec& s) {
  json boxes = json::array();
  for (const auto& b : s.static_boxes) boxes.push_back(box_json(b));
  json moving = json::array();
  for (const auto& m : s.moving) {
    moving.push_back({{"box", box_json(m.box)},
                      {"trajectory",
                       {{"velocity", vec_json(m.trajectory.velocity)},
                        {"amplitude", vec_json(m.trajectory.amplitude)},
                        {"frequency", m.trajectory.frequency},
                        {"phase", m.trajectory.phase}}},
                      {"first_frame", m.first_frame},
                      {"last_frame", m.last_frame}});
  }
  const GroundSpec& g = s.ground;
  return {{"width", s.width},
          {"height", s.height},
          {"frames", s.frames},
          {"frame_seconds", s.frame_seconds},
          {"camera_start", vec_json(s.camera_start)},
          {"camera_velocity", vec_json(s.camera_velocity)},
          {"look_direction", vec_json(s.look_direction)},
          {"focal", s.focal},
          {"ground",
           {{"enabled", g.enabled}, {"height", g.height}, {"x_min", g.x_min}, {"x_max", g.x_max},
            {"z_min", g.z_min}, {"z_max", g.z_max}, {"checker", g.checker}, {"color_a", vec_json(g.color_a)},
            {"color_b", vec_json(g.color_b)}, {"spacing", g.spacing}}},
          {"static_boxes", boxes},
          {"moving", moving},
          {"sky_zenith", vec_json(s.sky_zenith)},
          {"sky_horizon", vec_json(s.sky_horizon)},
          {"lidar_points", s.lidar_points},
          {"holdout_every", s.holdout_every},
          {"max_flow_per_pair", s.max_flow_per_pair},
          {"noise",
           {{"mask_flip_rate", s.noise.mask_flip_rate}, {"depth_regauge", s.noise.depth_regauge},
            {"depth_scale_min", s.noise.depth_scale_min}, {"depth_scale_max", s.noise.depth_scale_max},
            {"depth_shift_min", s.noise.depth_shift_min}, {"depth_shift_max", s.noise.depth_shift_max},
            {"flow_jitter", s.noise.flow_jitter}}},
          {"spline_order", s.spline_order},
          {"trig_levels", s.trig_levels}};
}

SyntheticSceneSpec spec_from_json(const json& j) {
  const std::string w = "spec";
  require_known_keys(j, {"width", "height", "frames", "frame_seconds", "camera_start", "camera_velocity",
                         "look_direction", "focal", "ground", "static_boxes", "moving", "sky_zenith",
                         "sky_horizon", "lidar_points", "holdout_every", "max_flow_per_pair", "noise",
                         "spline_order", "trig_levels"},
                     w);
  SyntheticSceneSpec s;
  s.static_boxes.clear();
  get_to(j, "width", s.width, w);
  get_to(j, "height", s.height, w);
  get_to(j, "frames", s.frames, w);
  get_to(j, "frame_seconds", s.frame_seconds, w);
  get_vec(j, "camera_start", s.camera_start, w);
  get_vec(j, "camera_velocity", s.camera_velocity, w);
  get_vec(j, "look_direction", s.look_direction, w);
  get_to(j, "focal", s.focal, w);
  get_vec(j, "sky_zenith", s.sky_zenith, w);
  get_vec(j, "sky_horizon", s.sky_horizon, w);
  get_to(j, "lidar_points", s.lidar_points, w);
  get_to(j, "holdout_every", s.holdout_every, w);
  get_to(j, "max_flow_per_pair", s.max_flow_per_pair, w);
  get_to(j, "spline_order", s.spline_order, w);
  get_to(j, "trig_levels", s.trig_levels, w);
  if (j.contains("ground")) {
    const json& g = j.at("ground");
    const std::string gw = "spec.ground";
    require_known_keys(g, {"enabled", "height", "x_min", "x_max", "z_min", "z_max", "checker", "color_a",
                           "color_b", "spacing"},
                       gw);
    get_to(g, "enabled", s.ground.enabled, gw);
    get_to(g, "height", s.ground.height, gw);
    get_to(g, "x_min", s.ground.x_min, gw);
    get_to(g, "x_max", s.ground.x_max, gw);
    get_to(g, "z_min", s.ground.z_min, gw);
    get_to(g, "z_max", s.ground.z_max, gw);
    get_to(g, "checker", s.ground.checker, gw);
    get_vec(g, "color_a", s.ground.color_a, gw);
    get_vec(g, "color_b", s.ground.color_b, gw);
    get_to(g, "spacing", s.ground.spacing, gw);
  }
  if (j.contains("static_boxes"))
    for (const auto& b : j.at("static_boxes")) s.static_boxes.push_back(box_from(b, "spec.static_boxes[]"));
  if (j.contains("moving")) {
    for (const auto& m : j.at("moving")) {
      const std::string mw = "spec.moving[]";
      require_known_keys(m, {"box", "trajectory", "first_frame", "last_frame"}, mw);
      MovingObjectSpec o;
      if (m.contains("box")) o.box = box_from(m.at("box"), mw + ".box");
      if (m.contains("trajectory")) {
        const json& t = m.at("trajectory");
        require_known_keys(t, {"velocity", "amplitude", "frequency", "phase"}, mw + ".trajectory");
        get_vec(t, "velocity", o.trajectory.velocity, mw);
        get_vec(t, "amplitude", o.trajectory.amplitude, mw);
        get_to(t, "frequency", o.trajectory.frequency, mw);
        get_to(t, "phase", o.trajectory.phase, mw);
      }
      get_to(m, "first_frame", o.first_frame, mw);
      get_to(m, "last_frame", o.last_frame, mw);
      s.moving.push_back(o);
    }
  }
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    const std::string nw = "spec.noise";
    require_known_keys(n, {"mask_flip_rate", "depth_regauge", "depth_scale_min", "depth_scale_max",
                           "depth_shift_min", "depth_shift_max", "flow_jitter"},
                       nw);
    get_to(n, "mask_flip_rate", s.noise.mask_flip_rate, nw);
    get_to(n, "depth_regauge", s.noise.depth_regauge, nw);
    get_to(n, "depth_scale_min", s.noise.depth_scale_min, nw);
    get_to(n, "depth_scale_max", s.noise.depth_scale_max, nw);
    get_to(n, "depth_shift_min", s.noise.depth_shift_min, nw);
    get_to(n, "depth_shift_max", s.noise.depth_shift_max, nw);
    get_to(n, "flow_jitter", s.noise.flow_jitter, nw);
  }
  s.validate();
  return s;
}

SyntheticSceneSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return spec_from_json(j);
}

namespace {

/// A flat surface Gaussian before it is attached to an object.
struct Surfel {
  Eigen::Vector3d position;
  Eigen::Vector3d log_scale;
  Eigen::Vector3d color;
};

std::vector<Surfel> box_surfels(const BoxSpec& b) {
  std::vector<Surfel> out;
  // Face shading keeps the box's geometry readable under flat colors.
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = -1; side <= 1; side += 2) {
      if (axis == 1 && side == 1) continue;  // bottom face rests on the ground
      const double shade = axis == 1 ? 1.0 : (axis == 0 ? 0.78 : 0.9);
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      const int n1 = std::max(2, static_cast<int>(std::lround(b.size[a1] / b.spacing)));
      const int n2 = std::max(2, static_cast<int>(std::lround(b.size[a2] / b.spacing)));
      for (int i = 0; i < n1; ++i) {
        for (int j = 0; j < n2; ++j) {
          Surfel s;
          s.position = b.center;
          s.position[axis] += side * 0.5 * b.size[axis];
          s.position[a1] += ((i + 0.5) / n1 - 0.5) * b.size[a1];
          s.position[a2] += ((j + 0.5) / n2 - 0.5) * b.size[a2];
          s.log_scale[axis] = std::log(0.08 * b.spacing);
          s.log_scale[a1] = std::log(0.6 * b.size[a1] / n1);
          s.log_scale[a2] = std::log(0.6 * b.size[a2] / n2);
          s.color = (b.color * shade).cwiseMin(1.0);
          out.push_back(s);
        }
      }
    }
  }
  return out;
}

std::vector<Surfel> ground_surfels(const GroundSpec& g) {
  std::vector<Surfel> out;
  if (!g.enabled) return out;
  const int nx = std::max(1, static_cast<int>(std::lround((g.x_max - g.x_min) / g.spacing)));
  const int nz = std::max(1, static_cast<int>(std::lround((g.z_max - g.z_min) / g.spacing)));
  const double dx = (g.x_max - g.x_min) / nx, dz = (g.z_max - g.z_min) / nz;
  for (int i = 0; i < nx; ++i) {
    for (int k = 0; k < nz; ++k) {
      Surfel s;
      s.position = {g.x_min + (i + 0.5) * dx, g.height, g.z_min + (k + 0.5) * dz};
      s.log_scale = {std::log(0.6 * dx), std::log(0.08 * g.spacing), std::log(0.6 * dz)};
      const long cell = static_cast<long>(std::floor(s.position.x() / g.checker)) +
                        static_cast<long>(std::floor(s.position.z() / g.checker));
      s.color = (cell % 2 == 0) ? g.color_a : g.color_b;
      out.push_back(s);
    }
  }
  return out;
}

SplatGaussian make_gaussian(const Surfel& s, int sh_degree, int color_levels, std::uint32_t tag) {
  SplatGaussian g;
  g.mu = s.position;
  g.log_scale = s.log_scale;
  g.opacity_logit = logit(kTruthOpacity);
  g.sh.assign(3 * sh_coeff_count(sh_degree), 0.0);
  for (int c = 0; c < 3; ++c) g.sh[c] = (s.color[c] - 0.5) / kShC0;
  g.color_trig = TrigSeries(color_levels, 3);
  g.tag = tag;
  return g;
}

/// Controls reproducing velocity * t exactly: a B-spline of order >= 2 is
/// linear when its controls sit on the line at the Greville abscissae.
std::vector<Eigen::Vector3d> linear_controls(const KnotLayout& layout, const Eigen::Vector3d& velocity) {
  std::vector<Eigen::Vector3d> pts(layout.control_count());
  const int k = layout.order();
  for (int i = 0; i < layout.control_count(); ++i) {
    double xi = 0.0;
    for (int j = i + 1; j <= i + k - 1; ++j) xi += layout.knot(j);
    xi /= (k - 1);
    pts[i] = velocity * xi;
  }
  return pts;
}

ObjectMotion truth_motion(const MovingObjectSpec& m, const KnotLayout& layout, int levels, double mu_t,
                          double s) {
  TrigSeries trig(levels, 3);
  const Eigen::Vector3d& a = m.trajectory.amplitude;
  if (a.norm() > 0) {
    const int l = static_cast<int>(std::lround(2.0 * m.trajectory.frequency));
    // A sin(l pi t + phase) = A cos(phase) sin(l pi t) + A sin(phase) cos(l pi t)
    for (int c = 0; c < 3; ++c) {
      trig.sin_at(l)[c] = a[c] * std::cos(m.trajectory.phase);
      trig.cos_at(l)[c] = a[c] * std::sin(m.trajectory.phase);
    }
  }
  return ObjectMotion(BSplineCurve(layout, linear_controls(layout, m.trajectory.velocity)), trig,
                      QuatBSplineCurve(layout), TemporalMask(mu_t, s, s));
}

Image threshold(const Image& img, double level) {
  Image out(img.width, img.height, 1);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = img.data[i] > level ? 1.0 : 0.0;
  return out;
}

}  // namespace

SyntheticResult synthesize(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01;

  SyntheticResult result;
  Dataset& data = result.dataset;
  Scene& truth = result.truth;

  // Cameras.
  std::vector<Camera> cameras;
  for (int f = 0; f < spec.frames; ++f) {
    const double ts = f * spec.frame_seconds;
    const Eigen::Vector3d pos = spec.camera_start + spec.camera_velocity * ts;
    cameras.push_back(Camera::look_at(pos, pos + spec.look_direction.normalized(), {0, -1, 0}, spec.focal,
                                      spec.width, spec.height, ts));
  }
  truth.time_begin = cameras.front().timestamp;
  truth.time_end = cameras.back().timestamp;
  truth.frame_interval = 1.0 / (spec.frames - 1);
  truth.sh_degree = 0;

  // Sky: zenith to horizon above, neutral gray below.
  truth.env_map = EnvMap(16, 32, Eigen::Vector3d::Constant(0.3));
  for (int r = 0; r < truth.env_map.height; ++r) {
    const double lat = (0.5 - (r + 0.5) / truth.env_map.height) * std::numbers::pi;
    const Eigen::Vector3d c = lat > 0 ? Eigen::Vector3d(spec.sky_horizon + (spec.sky_zenith - spec.sky_horizon) * std::sin(lat))
                                      : Eigen::Vector3d::Constant(0.3);
    for (int x = 0; x < truth.env_map.width; ++x)
      for (int k = 0; k < 3; ++k) truth.env_map.texels[(r * truth.env_map.width + x) * 3 + k] = c[k];
  }

  // Hidden scene. `site` identifies the physical surface point behind each Gaussian.
  std::vector<int> site;
  int next_site = 0;
  for (const Surfel& s : ground_surfels(spec.ground)) {
    truth.gaussians.push_back(make_gaussian(s, 0, 0, 0));
    site.push_back(next_site++);
  }
  for (const BoxSpec& b : spec.static_boxes) {
    for (const Surfel& s : box_surfels(b)) {
      truth.gaussians.push_back(make_gaussian(s, 0, 0, 0));
      site.push_back(next_site++);
    }
  }
  const KnotLayout layout(spec.spline_order, std::max(spec.spline_order, spec.frames / 3), 0.0, 1.0);
  const double df = truth.frame_interval;
  std::vector<int> transient_objects;
  for (size_t o = 0; o < spec.moving.size(); ++o) {
    const MovingObjectSpec& m = spec.moving[o];
    const auto surfels = box_surfels(m.box);
    const std::uint32_t tag = static_cast<std::uint32_t>(o + 1);
    if (m.first_frame < 0) {
      // Always visible: a mask far wider than the sequence.
      const ObjectMotion motion = truth_motion(m, layout, spec.trig_levels, 0.5, 100.0);
      for (const Surfel& s : surfels) {
        SplatGaussian g = make_gaussian(s, 0, 0, tag);
        g.motion = motion;
        truth.gaussians.push_back(std::move(g));
        site.push_back(next_site++);
      }
    } else {
      // One copy per visible frame with a narrow mask approximates a hard window.
      transient_objects.push_back(static_cast<int>(o));
      const int base = next_site;
      for (int f = m.first_frame; f <= m.last_frame; ++f) {
        const ObjectMotion motion = truth_motion(m, layout, spec.trig_levels, f * df, 0.35 * df);
        for (size_t i = 0; i < surfels.size(); ++i) {
          SplatGaussian g = make_gaussian(surfels[i], 0, 0, tag);
          g.motion = motion;
          truth.gaussians.push_back(std::move(g));
          site.push_back(base + static_cast<int>(i));
        }
      }
      next_site += static_cast<int>(surfels.size());
    }
  }
  refresh_knn(truth);

  // Ground-truth frames and labels.
  data.frames.resize(spec.frames);
  std::vector<RenderOutputs> renders(spec.frames);
  for (int f = 0; f < spec.frames; ++f) {
    renders[f] = render(truth, cameras[f], truth.normalize_time(cameras[f].timestamp));
    FrameData& fr = data.frames[f];
    fr.camera = cameras[f];
    fr.color = renders[f].color;
    for (double& v : fr.color.data) v = std::clamp(v, 0.0, 1.0);
    fr.obj_mask = threshold(renders[f].obj_mask, 0.5);
    fr.sky_mask = threshold(renders[f].transmittance, 0.5);
    fr.depth_valid = fr.sky_mask;
    for (double& v : fr.depth_valid.data) v = 1.0 - v;
    fr.held_out = f % spec.holdout_every == spec.holdout_every - 1;
  }
  for (int f = 0; f < spec.frames; ++f) {
    FrameData& fr = data.frames[f];
    if (spec.noise.mask_flip_rate > 0) {
      for (Image* m : {&fr.obj_mask, &fr.sky_mask})
        for (double& v : m->data)
          if (u01(rng) < spec.noise.mask_flip_rate) v = 1.0 - v;
    }
    double w = 1.0, q = 0.0;
    if (spec.noise.depth_regauge) {
      w = spec.noise.depth_scale_min + (spec.noise.depth_scale_max - spec.noise.depth_scale_min) * u01(rng);
      q = spec.noise.depth_shift_min + (spec.noise.depth_shift_max - spec.noise.depth_shift_min) * u01(rng);
    }
    fr.inv_depth = renders[f].inv_depth;
    for (double& v : fr.inv_depth.data) v = w * v + q;
  }

  // Flow into the next training frame (the previous one at the end).
  const auto train = data.train_indices();
  for (size_t k = 0; k < train.size() && train.size() > 1; ++k) {
    const int f = train[k];
    const int g = k + 1 < train.size() ? train[k + 1] : train[k - 1];
    FrameData& fr = data.frames[f];
    const RenderOutputs out = render(truth, cameras[f], truth.normalize_time(cameras[f].timestamp), {},
                                     truth.normalize_time(cameras[g].timestamp));
    const FlowProjection proj = render_flow_projection(out, cameras[g]);
    std::vector<FlowCorrespondence> list;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (fr.obj_mask.at(x, y) < 0.5 || proj.valid.at(x, y) < 0.5) continue;
        list.push_back({x, y, proj.coords.at(x, y, 0), proj.coords.at(x, y, 1)});
      }
    }
    if (static_cast<int>(list.size()) > spec.max_flow_per_pair) {
      std::shuffle(list.begin(), list.end(), rng);
      list.resize(spec.max_flow_per_pair);
      std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
    }
    for (auto& c : list) {
      c.u += spec.noise.flow_jitter * n01(rng);
      c.v += spec.noise.flow_jitter * n01(rng);
    }
    fr.flow = std::move(list);
    fr.flow_target = g;
  }

  // Simulated LiDAR: visible surface points, each physical site sampled once.
  {
    std::vector<int> order(spec.frames);
    for (int f = 0; f < spec.frames; ++f) order[f] = f;
    std::set<int> used;
    const int per_frame = (spec.lidar_points + spec.frames - 1) / spec.frames;
    for (int f : order) {
      const double t = truth.normalize_time(cameras[f].timestamp);
      const RenderOutputs& out = renders[f];
      std::vector<int> visible;
      for (size_t i = 0; i < truth.gaussians.size(); ++i) {
        const SplatGaussian& g = truth.gaussians[i];
        if (used.count(site[i])) continue;
        if (gaussian_opacity(g, t, truth.options) < 0.5) continue;
        const Eigen::Vector3d p = gaussian_position(g, t, truth.options);
        const auto px = cameras[f].project(p, 0.05);
        if (!px) continue;
        const int x = static_cast<int>(std::floor(px->x())), y = static_cast<int>(std::floor(px->y()));
        if (x < 0 || y < 0 || x >= spec.width || y >= spec.height) continue;
        const double cover = 1.0 - out.transmittance.at(x, y);
        if (cover < 0.5) continue;
        const double surface = cover / std::max(out.inv_depth.at(x, y), 1e-12);
        const double dist = cameras[f].to_camera(p).norm();
        if (dist > surface * 1.05 + 0.05) continue;  // occluded
        visible.push_back(static_cast<int>(i));
      }
      std::shuffle(visible.begin(), visible.end(), rng);
      int taken = 0;
      for (int i : visible) {
        if (taken >= per_frame || static_cast<int>(data.points.size()) >= spec.lidar_points) break;
        if (!used.insert(site[i]).second) continue;
        const SplatGaussian& g = truth.gaussians[i];
        LidarPoint pt;
        pt.position = gaussian_position(g, t, truth.options);
        pt.timestamp = cameras[f].timestamp;
        for (int c = 0; c < 3; ++c) pt.color[c] = g.sh[c] * kShC0 + 0.5;
        pt.tag = g.tag;
        data.points.push_back(pt);
        ++taken;
      }
    }
  }

  // Evaluation-only ground truth.
  for (size_t o = 0; o < spec.moving.size(); ++o) {
    if (spec.moving[o].first_frame < 0 && data.truth.moving_centroid.empty()) {
      data.truth.moving_tag = static_cast<std::uint32_t>(o + 1);
      for (int f = 0; f < spec.frames; ++f)
        data.truth.moving_centroid.push_back(spec.moving[o].box.center +
                                             spec.moving[o].trajectory.offset(truth.normalize_time(cameras[f].timestamp)));
    }
  }
  if (!transient_objects.empty()) {
    // Silhouette of the transient objects in every frame, visible or not.
    Scene ghost;
    ghost.time_begin = truth.time_begin;
    ghost.time_end = truth.time_end;
    ghost.frame_interval = truth.frame_interval;
    ghost.sh_degree = 0;
    ghost.options.temporal_mask = false;
    for (const auto& g : truth.gaussians)
      for (int o : transient_objects)
        if (g.tag == static_cast<std::uint32_t>(o + 1)) ghost.gaussians.push_back(g);
    for (int f = 0; f < spec.frames; ++f) {
      const RenderOutputs out = render(ghost, cameras[f], ghost.normalize_time(cameras[f].timestamp));
      data.truth.transient_region.push_back(threshold(out.obj_mask, 0.5));
    }
  }
  data.validate();
  return result;
}

Scene init_scene(const Dataset& data, const InitOptions& options) {
  std::vector<Camera> cameras;
  std::vector<Image> masks;
  for (const auto& f : data.frames) {
    cameras.push_back(f.camera);
    masks.push_back(f.obj_mask.empty() ? Image(f.camera.width, f.camera.height, 1) : f.obj_mask);
  }
  return init_from_points(data.points, cameras, masks, options);
}

std::vector<Eigen::Vector3d> tagged_centroids(const Scene& scene, const Dataset& data, std::uint32_t tag) {
  std::vector<Eigen::Vector3d> out;
  for (const auto& f : data.frames) {
    const double t = scene.normalize_time(f.camera.timestamp);
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double weight = 0.0;
    for (const auto& g : scene.gaussians) {
      if (g.tag != tag) continue;
      const double w = gaussian_opacity(g, t, scene.options);
      sum += w * gaussian_position(g, t, scene.options);
      weight += w;
    }
    out.push_back(weight > 0 ? Eigen::Vector3d(sum / weight) : Eigen::Vector3d::Constant(std::nan("")));
  }
  return out;
}

TrajectoryError trajectory_error(const std::vector<Eigen::Vector3d>& rec, const std::vector<Eigen::Vector3d>& gt) {
  if (rec.size() != gt.size() || gt.empty()) throw ShapeError("trajectory_error: track lengths differ");
  TrajectoryError e;
  Eigen::Vector3d bias = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < gt.size(); ++i) bias += rec[i] - gt[i];
  bias /= static_cast<double>(gt.size());
  for (size_t i = 0; i < gt.size(); ++i) e.rmse += (rec[i] - gt[i] - bias).squaredNorm();
  e.rmse = std::sqrt(e.rmse / gt.size());
  for (size_t i = 1; i < gt.size(); ++i) e.path_length += (gt[i] - gt[i - 1]).norm();
  return e;
}

}  // namespace splinegauss
