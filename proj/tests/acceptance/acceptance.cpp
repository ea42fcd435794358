// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "scenes.hpp"
#include "splinegauss/harness.hpp"
#include "splinegauss/io.hpp"
#include "splinegauss/losses.hpp"
#include "splinegauss/metrics.hpp"
#include "splinegauss/motion.hpp"
#include "splinegauss/renderer.hpp"
#include "splinegauss/sh.hpp"
#include "splinegauss/spline_basis.hpp"
#include "splinegauss/trainer.hpp"

using namespace splinegauss;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::vector<int> failed;

void report(int id, const char* name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) failed.push_back(id);
  std::printf("criterion %2d %-28s %s  %s (%.1f s)\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Outcome basis_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01;
  double dev = 0, pou = 0;
  const auto t0 = Clock::now();
  for (int k = 2; k <= 8; ++k) {
    for (int layout_i = 0; layout_i < 20; ++layout_i) {
      const int controls = k + static_cast<int>(u01(rng) * 8);
      const double a = -2.0 + 4.0 * u01(rng);
      const double b = a + 0.5 + 3.0 * u01(rng);
      std::vector<Eigen::Vector3d> pts(controls);
      for (auto& p : pts) p = {n01(rng), n01(rng), n01(rng)};
      const BSplineCurve curve(KnotLayout(k, controls, a, b), pts);
      for (int s = 0; s < 1000; ++s) {
        const double t = a + (b - a) * u01(rng);
        Eigen::Vector3d ref = Eigen::Vector3d::Zero();
        for (int i = 0; i < controls; ++i) ref += oracle::cox_de_boor(i, k, t, controls, a, b) * pts[i];
        dev = std::max(dev, (eval_curve(curve, t) - ref).cwiseAbs().maxCoeff());
        const BasisWindow w = basis_window(curve.layout, t);
        double sum = 0;
        for (int j = 0; j < k; ++j) sum += w.weights[j];
        pou = std::max(pou, std::abs(sum - 1.0));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {dev < 1e-10 && pou < 1e-12 && secs < 10.0,
          fmt("max deviation %.2e (< 1e-10), unity error %.2e (< 1e-12), %.1f s (< 10 s)", dev, pou, secs)};
}

Outcome basis_regression() {
  int mismatches = 0;
  for (int k = 1; k <= 6; ++k) {
    const auto ref = oracle::exact_basis_matrix(k);
    const BasisMatrix& m = basis_matrix(k);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < k; ++c) {
        const auto& e = m.exact_at(r, c);
        const auto& o = ref[r * k + c];
        if (e.numerator() != o.numerator() || e.denominator() != o.denominator()) ++mismatches;
      }
  }
  // Tabulated orders 1, 2 and 4.
  const long long m4[4][4] = {{1, 4, 1, 0}, {-3, 0, 3, 0}, {3, -6, 3, 0}, {-1, 3, -3, 1}};
  if (basis_matrix(1).exact_at(0, 0) != Rational(1)) ++mismatches;
  const long long m2[2][2] = {{1, 0}, {-1, 1}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      if (basis_matrix(2).exact_at(r, c) != Rational(m2[r][c])) ++mismatches;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (basis_matrix(4).exact_at(r, c) != Rational(m4[r][c], 6)) ++mismatches;
  return {mismatches == 0, fmt("%.0f mismatching entries over orders 1..6", mismatches)};
}

Outcome local_support() {
  std::mt19937_64 rng(102);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  long leaks = 0, grad_leaks = 0, samples = 0;
  for (int k = 2; k <= 8; ++k) {
    const int controls = k + 6;
    std::vector<Eigen::Vector3d> pts(controls);
    for (auto& p : pts) p = {n01(rng), n01(rng), n01(rng)};
    const BSplineCurve curve(KnotLayout(k, controls, 0.0, 1.0), pts);
    const KnotLayout& l = curve.layout;
    for (int j = 0; j < controls; ++j) {
      BSplineCurve moved = curve;
      moved.control_points[j] += Eigen::Vector3d(n01(rng), n01(rng), n01(rng));
      for (int s = 0; s < 500; ++s) {
        const double t = s < 2 ? static_cast<double>(s) : u01(rng);
        const bool inside = t > l.knot(j) && t < l.knot(j + k);
        ++samples;
        if (!inside && (eval_curve(moved, t) - eval_curve(curve, t)).cwiseAbs().maxCoeff() != 0.0) ++leaks;
        const BasisWindow w = basis_window(l, t);
        const std::vector<double> g = curve_control_gradient(curve, t);
        for (int i = 0; i < controls; ++i)
          if ((i < w.first || i >= w.first + k) && g[i] != 0.0) ++grad_leaks;
      }
    }
  }
  return {leaks == 0 && grad_leaks == 0,
          fmt("%.0f curve leaks, %.0f gradient leaks over %.0f samples", static_cast<double>(leaks),
              static_cast<double>(grad_leaks), static_cast<double>(samples))};
}

Eigen::Vector4d random_unit4(std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  return Eigen::Vector4d(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
}

Outcome quaternion_curve() {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01;
  double norm_err = 0, slerp_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + trial % 7, n = k + 3;
    std::vector<Eigen::Vector4d> ctrl;
    Quat q = Quat::from_vec(random_unit4(rng));
    for (int i = 0; i < n; ++i) {
      ctrl.push_back(q.vec() * (0.5 + u01(rng)));
      q = q * quat_exp(0.8 * Eigen::Vector3d(n01(rng), n01(rng), n01(rng)));
    }
    const QuatBSplineCurve curve(KnotLayout(k, n, 0.0, 1.0), ctrl);
    for (int s = 0; s < 1000; ++s) norm_err = std::max(norm_err, std::abs(eval_quat_curve(curve, u01(rng)).norm() - 1));
  }
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Eigen::Vector4d> ctrl;
    Quat q = Quat::from_vec(random_unit4(rng));
    for (int i = 0; i < 5; ++i) {
      ctrl.push_back(q.vec());
      q = q * quat_exp(Eigen::Vector3d(n01(rng), n01(rng), n01(rng)));
    }
    const QuatBSplineCurve curve(KnotLayout(2, 5, 0.0, 4.0), ctrl);
    for (int s = 0; s < 200; ++s) {
      const double t = 4.0 * u01(rng);
      const int seg = std::min(3, static_cast<int>(t));
      slerp_err = std::max(slerp_err, oracle::quat_distance(eval_quat_curve(curve, t).vec(),
                                                            oracle::slerp(ctrl[seg], ctrl[seg + 1], t - seg)));
    }
  }
  bool constant = true;
  for (int k = 2; k <= 8; ++k) {
    const Eigen::Vector4d c = random_unit4(rng) * 1.7;
    const QuatBSplineCurve flat(KnotLayout(k, k + 3, 0.0, 1.0), std::vector<Eigen::Vector4d>(k + 3, c));
    const Eigen::Vector4d first = eval_quat_curve(flat, 0.0).vec();
    for (int s = 0; s <= 1000; ++s) constant = constant && eval_quat_curve(flat, s / 1000.0).vec() == first;
  }
  return {norm_err < 1e-9 && slerp_err < 1e-9 && constant,
          fmt("unit norm error %.2e, slerp error %.2e (< 1e-9), constant curve ", norm_err, slerp_err) +
              (constant ? "exact" : "varies")};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream detail;
  for (const auto& name : grad_check_components()) {
    const GradCheckReport r = grad_check(name, 5);
    const double limit = name == "end_to_end" ? 1e-3 : 1e-4;
    pass = pass && r.worst() < limit && r.passed();
    detail << name << " " << fmt("%.1e", r.worst()) << "; ";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 300;
  detail << fmt("%.1f s (< 300 s)", secs);
  return {pass, detail.str()};
}

bool same_bits(const Image& a, const Image& b) {
  return a.same_shape(b) && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

Outcome renderer_oracle() {
  std::mt19937_64 rng(104);
  int identical = 0;
  double unity = 0;
  for (int trial = 0; trial < 20; ++trial) {
    testscene::RandomSceneOptions o;
    o.count = 40 + 5 * trial;
    o.opacity_max = 0.99;
    Scene s = testscene::random_scene(rng, o);
    const Camera cam = testscene::front_camera(32, 32);
    Rasterizer r;
    const RenderOutputs& a = r.forward(s, cam, 0.4, 0.6);
    const RenderOutputs b = r.forward_reference(s, cam, 0.4, 0.6);
    if (same_bits(a.color, b.color) && same_bits(a.obj_mask, b.obj_mask) && same_bits(a.inv_depth, b.inv_depth) &&
        same_bits(a.transmittance, b.transmittance) && same_bits(a.flow_pos, b.flow_pos) &&
        same_bits(a.flow_pos_src, b.flow_pos_src))
      ++identical;
    // White Gaussians over a black sky: color equals the summed weights.
    Scene white = s;
    for (auto& g : white.gaussians) {
      std::fill(g.sh.begin(), g.sh.end(), 0.0);
      for (int c = 0; c < 3; ++c) g.sh[c] = 0.5 / kShC0;
      std::fill(g.color_trig.sin_coeffs.begin(), g.color_trig.sin_coeffs.end(), 0.0);
      std::fill(g.color_trig.cos_coeffs.begin(), g.color_trig.cos_coeffs.end(), 0.0);
    }
    std::fill(white.env_map.texels.begin(), white.env_map.texels.end(), 0.0);
    const RenderOutputs w = render(white, cam, 0.4);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        unity = std::max(unity, std::abs(w.color.at(x, y, 0) + w.transmittance.at(x, y) - 1.0));
  }
  return {identical == 20 && unity < 1e-6,
          fmt("%.0f/20 scenes bit-identical, weight + transmittance error %.2e (< 1e-6)", identical, unity)};
}

Outcome depth_loss_check() {
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double fit_err = 0, gauge_err = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 24, h = 20;
    Image pred(w, h, 1), pseudo(w, h, 1), valid(w, h, 1);
    for (size_t i = 0; i < pred.data.size(); ++i) {
      pred.data[i] = 0.1 + u01(rng);
      pseudo.data[i] = 0.3 + u01(rng);
      valid.data[i] = u01(rng) < 0.8;
    }
    const DepthLoss d = depth_loss(pred, pseudo, valid);
    Eigen::Matrix2d ata = Eigen::Matrix2d::Zero();
    Eigen::Vector2d atb = Eigen::Vector2d::Zero();
    for (size_t i = 0; i < pred.data.size(); ++i) {
      if (valid.data[i] < 0.5) continue;
      const Eigen::Vector2d row(pred.data[i], 1.0);
      ata += row * row.transpose();
      atb += row * pseudo.data[i];
    }
    const Eigen::Vector2d sol = ata.fullPivLu().solve(atb);
    fit_err = std::max({fit_err, std::abs(sol[0] - d.scale), std::abs(sol[1] - d.shift)});
    const double a = 0.2 + 3.0 * u01(rng), b = u01(rng) - 0.5;
    Image regauged = pseudo, pred_regauged = pred;
    for (double& v : regauged.data) v = a * v + b;
    for (double& v : pred_regauged.data) v = a * v + b;
    const double scale = std::max(1.0, d.value);
    // Residuals live in pseudo-depth units: a re-gauged pseudo depth scales the loss by its slope.
    gauge_err = std::max({gauge_err, std::abs(depth_loss(pred, regauged, valid).value - a * d.value) / scale,
                          std::abs(depth_loss(pred_regauged, pseudo, valid).value - d.value) / scale});
  }
  return {fit_err < 1e-9 && gauge_err < 1e-9,
          fmt("alignment error %.2e, re-gauge error %.2e (< 1e-9)", fit_err, gauge_err)};
}

Outcome temporal_mask_check() {
  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  bool peak = true, exact_one = true;
  double edge = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const TemporalMask m(u01(rng), 0.01 + u01(rng), 0.01 + u01(rng));
    const double sigma = u01(rng);
    peak = peak && effective_opacity(m, sigma, m.mu_t) == sigma;
    edge = std::max(edge, std::abs(effective_opacity(m, sigma, m.mu_t - m.s0()) - sigma * std::exp(-0.5)));
    const int frames = 2 + trial % 200;
    const double df = 1.0 / (frames - 1);
    exact_one = exact_one && expanding_loss(TemporalMask(m.mu_t, df, df), df) == 1.0;
  }
  return {peak && edge < 1e-12 && exact_one, std::string("peak ") + (peak ? "exact" : "off") +
                                               fmt(", edge error %.2e (< 1e-12), ", edge) +
                                               "expanding loss at the frame interval " +
                                               (exact_one ? "exactly 1" : "not 1")};
}

/// Desk experiment state shared by criteria 9 and 10.
struct Desk {
  Dataset data;
  TrainConfig config;
  std::vector<int> test;
  std::map<std::string, Scene> scenes;
  std::map<std::string, double> psnr;
  std::map<std::string, double> seconds;

  const Scene& run(const std::string& name, const std::function<void(TrainConfig&)>& tweak) {
    auto it = scenes.find(name);
    if (it != scenes.end()) return it->second;
    TrainConfig c = config;
    tweak(c);
    const auto t0 = Clock::now();
    Scene s = init_scene(data, c.init);
    fit(s, data, c);
    seconds[name] = seconds_since(t0);
    psnr[name] = evaluate(s, data, test).psnr;
    std::printf("  run %-12s held-out PSNR %.3f dB, %zu Gaussians, %.0f s\n", name.c_str(), psnr[name],
                s.gaussians.size(), seconds[name]);
    std::fflush(stdout);
    return scenes.emplace(name, std::move(s)).first->second;
  }
};

std::string desk_config_path() {
  if (const char* p = std::getenv("SPLINEGAUSS_DESK_CONFIG")) return p;
  return SPLINEGAUSS_DESK_CONFIG;
}

Desk& desk() {
  static Desk d = [] {
    Desk x;
    x.data = synthesize(SyntheticSceneSpec::desk_default(), 7).dataset;
    x.config = load_train_config(desk_config_path());
    x.test = x.data.test_indices();
    return x;
  }();
  return d;
}

Outcome desk_experiment() {
  Desk& d = desk();
  const auto t0 = Clock::now();
  const Scene& full = d.run("full", [](TrainConfig&) {});
  d.run("static", [](TrainConfig& c) {
    c.motion = false;
    c.temporal_mask = false;
  });
  const Scene& nomask = d.run("no_mask", [](TrainConfig& c) { c.temporal_mask = false; });
  const double gap = d.psnr["full"] - d.psnr["static"];
  const TrajectoryError traj = trajectory_error(tagged_centroids(full, d.data, d.data.truth.moving_tag),
                                                d.data.truth.moving_centroid);
  const double tr_full = transient_region_psnr(full, d.data, d.test);
  const double tr_nomask = transient_region_psnr(nomask, d.data, d.test);
  const double secs = seconds_since(t0);
  const bool a = gap >= 3.0, b = traj.relative() < 0.05, c = tr_full > tr_nomask;
  return {a && b && c && secs < 1800,
          fmt("(a) gap %.2f dB (>= 3) ", gap) + (a ? "ok" : "no") +
              fmt("; (b) trajectory RMSE %.3f m = %.2f%% of %.2f m path (< 5%%) ", traj.rmse, 100 * traj.relative(),
                  traj.path_length) +
              (b ? "ok" : "no") + fmt("; (c) transient region %.2f vs %.2f dB without mask ", tr_full, tr_nomask) +
              (c ? "ok" : "no") + fmt("; %.0f s (< 1800 s)", secs)};
}

Outcome loss_ablation() {
  Desk& d = desk();
  d.run("full", [](TrainConfig&) {});
  d.run("photo_only", [](TrainConfig& c) {
    c.weights.lambda_d = 0;
    c.weights.lambda_f = 0;
    c.weights.lambda_r = 0;
  });
  d.run("depth_flow", [](TrainConfig& c) { c.weights.lambda_r = 0; });
  const double p0 = d.psnr["photo_only"], p1 = d.psnr["depth_flow"], p2 = d.psnr["full"];
  return {p1 >= p0 && p2 >= p1,
          fmt("photometric %.3f, + depth and flow %.3f, + rigidity %.3f dB (non-decreasing)", p0, p1, p2)};
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome determinism() {
  SyntheticSceneSpec spec = SyntheticSceneSpec::desk_default();
  spec.width = spec.height = 32;
  spec.focal = 32;
  spec.lidar_points = 600;
  const Dataset data = synthesize(spec, 3).dataset;
  TrainConfig c = load_train_config(desk_config_path());
  c.iterations = 120;
  c.densify_from = 40;
  c.densify_interval = 40;
  c.densify_until = 100;
  c.eval_interval = 60;
  c.seed = 11;
  const fs::path dir = fs::temp_directory_path() / ("splinegauss_determinism_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    Scene s = init_scene(data, c.init);
    fit(s, data, c);
    const std::string path = (dir / ("run" + std::to_string(run) + ".sgck")).string();
    save_checkpoint(s, path);
    bytes[run] = file_bytes(path);
  }
  fs::remove_all(dir);
  const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
  return {same, fmt("checkpoints of %.0f bytes ", static_cast<double>(bytes[0].size())) +
                    (same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  // Arguments: criterion numbers to run (all when none), and
  // "--expect-fail N" for known failures that should not fail the process.
  std::vector<int> only, expected;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--expect-fail" && i + 1 < argc)
      expected.push_back(std::atoi(argv[++i]));
    else
      only.push_back(std::atoi(argv[i]));
  }
  auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  if (want(1)) report(1, "basis oracle", basis_oracle);
  if (want(2)) report(2, "basis matrix regression", basis_regression);
  if (want(3)) report(3, "local support", local_support);
  if (want(4)) report(4, "quaternion curve", quaternion_curve);
  if (want(5)) report(5, "gradient suite", gradient_suite);
  if (want(6)) report(6, "renderer oracle", renderer_oracle);
  if (want(7)) report(7, "depth loss", depth_loss_check);
  if (want(8)) report(8, "temporal mask", temporal_mask_check);
  if (want(9)) report(9, "desk experiment", desk_experiment);
  if (want(10)) report(10, "loss ablation direction", loss_ablation);
  if (want(11)) report(11, "determinism", determinism);

  int unexpected = 0;
  std::string known;
  for (int id : failed) {
    if (std::find(expected.begin(), expected.end(), id) != expected.end())
      known += " " + std::to_string(id);
    else
      ++unexpected;
  }
  std::printf("%zu criteria failed", failed.size());
  if (!known.empty()) std::printf(" (expected:%s)", known.c_str());
  std::printf("\n");
  return unexpected == 0 ? 0 : 1;
}
