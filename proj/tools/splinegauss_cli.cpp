#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "splinegauss/errors.hpp"
#include "splinegauss/harness.hpp"
#include "splinegauss/io.hpp"
#include "splinegauss/metrics.hpp"
#include "splinegauss/renderer.hpp"
#include "splinegauss/trainer.hpp"

namespace fs = std::filesystem;
using namespace splinegauss;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_image(const std::string& path, const Image& img) {
  if (ends_with(path, ".pfm"))
    write_pfm(path, img);
  else
    write_png(path, img);
}

int run_synth(const std::string& spec_path, const std::string& preset, std::uint64_t seed, const std::string& out) {
  SyntheticSceneSpec spec;
  if (!spec_path.empty())
    spec = load_spec(spec_path);
  else if (preset == "desk")
    spec = SyntheticSceneSpec::desk_default();
  else if (preset == "desk_static")
    spec = SyntheticSceneSpec::desk_static();
  else
    throw FormatError("unknown preset " + preset);
  const SyntheticResult r = synthesize(spec, seed);
  save_dataset(r.dataset, out);
  save_checkpoint(r.truth, (fs::path(out) / "truth.sgck").string());
  std::ofstream(fs::path(out) / "spec.json") << spec_to_json(spec).dump(2) << "\n";
  std::printf("wrote %zu frames, %zu points to %s\n", r.dataset.frames.size(), r.dataset.points.size(), out.c_str());
  return 0;
}

int run_fit(const std::string& data_dir, const std::string& config_path, const std::string& out, int log_every) {
  const Dataset data = load_dataset(data_dir);
  const TrainConfig config = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  fs::create_directories(out);
  InitReport init;
  std::vector<Camera> cameras;
  std::vector<Image> masks;
  for (const auto& f : data.frames) {
    cameras.push_back(f.camera);
    masks.push_back(f.obj_mask);
  }
  Scene scene = init_from_points(data.points, cameras, masks, config.init, &init);
  std::printf("init: %d object, %d background Gaussians\n", init.object_count, init.background_count);
  const FitReport report = fit(scene, data, config, [&](int it, const IterationRecord& rec) {
    if (log_every > 0 && it % log_every == 0)
      std::printf("iter %d frame %d total %.6f l1 %.6f\n", it, rec.frame, rec.loss.total, rec.loss.l1);
  });
  save_checkpoint(scene, (fs::path(out) / "scene.sgck").string());
  report.write_loss_csv((fs::path(out) / "loss.csv").string());
  report.write_json((fs::path(out) / "report.json").string());
  std::ofstream(fs::path(out) / "config.json") << train_config_to_json(config).dump(2) << "\n";
  for (const auto& e : report.events) std::printf("%s\n", e.c_str());
  std::printf("final: %d Gaussians, %d objects\n", report.final_gaussians, report.final_objects);
  return 0;
}

int run_render(const std::string& ckpt, const std::string& camera, const std::string& data_dir, double time,
               const std::string& out) {
  const Scene scene = load_checkpoint(ckpt);
  Camera cam;
  bool is_index = !camera.empty() && camera.find_first_not_of("0123456789") == std::string::npos;
  if (is_index) {
    if (data_dir.empty()) throw FormatError("--camera with a frame index needs --data");
    const Dataset data = load_dataset(data_dir);
    const int idx = std::stoi(camera);
    if (idx >= static_cast<int>(data.frames.size())) throw FormatError("camera index out of range");
    cam = data.frames[idx].camera;
  } else {
    std::ifstream in(camera);
    if (!in) throw FormatError("cannot read " + camera);
    cam = camera_from_json(nlohmann::json::parse(in));
  }
  const double t = std::isnan(time) ? scene.normalize_time(cam.timestamp) : time;
  RenderOutputs o = render(scene, cam, t);
  for (double& v : o.color.data) v = std::clamp(v, 0.0, 1.0);
  write_image(out, o.color);
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, bool all_frames) {
  const Scene scene = load_checkpoint(ckpt);
  const Dataset data = load_dataset(data_dir);
  std::vector<int> frames = all_frames ? std::vector<int>{} : data.test_indices();
  if (all_frames)
    for (size_t i = 0; i < data.frames.size(); ++i) frames.push_back(static_cast<int>(i));
  const EvalResult r = evaluate(scene, data, frames);
  std::printf("frame,psnr,ssim\n");
  for (size_t i = 0; i < frames.size(); ++i) std::printf("%d,%.4f,%.5f\n", frames[i], r.frame_psnr[i], r.frame_ssim[i]);
  std::printf("mean,%.4f,%.5f\n", r.psnr, r.ssim);
  return 0;
}

int run_gradcheck(const std::string& component, std::uint64_t seed) {
  std::vector<std::string> names = component.empty() ? grad_check_components() : std::vector<std::string>{component};
  bool ok = true;
  std::printf("component,group,max_rel_error,tolerance,status\n");
  for (const auto& name : names) {
    const GradCheckReport r = grad_check(name, seed);
    for (const auto& [group, e] : r.max_rel_error)
      std::printf("%s,%s,%.3e,%.0e,%s\n", name.c_str(), group.c_str(), e, r.tolerance, e < r.tolerance ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic Gaussian splatting with spline motion"};
  app.require_subcommand(1);

  std::string spec_path, preset = "desk", out, data_dir, config_path, ckpt, camera, component;
  std::uint64_t seed = 0;
  int log_every = 100;
  double time = std::nan("");
  bool all_frames = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", spec_path, "Scene spec JSON (defaults to the preset)");
  synth->add_option("--preset", preset, "desk or desk_static")->capture_default_str();
  synth->add_option("--seed", seed, "Random seed")->capture_default_str();
  synth->add_option("--out", out, "Output directory")->required();

  auto* fitc = app.add_subcommand("fit", "Train a scene on a dataset");
  fitc->add_option("--data", data_dir, "Dataset directory")->required();
  fitc->add_option("--config", config_path, "Training config JSON");
  fitc->add_option("--out", out, "Output directory")->required();
  fitc->add_option("--log-every", log_every, "Progress line interval, 0 for none")->capture_default_str();

  auto* rend = app.add_subcommand("render", "Render a checkpoint");
  rend->add_option("--ckpt", ckpt, "Scene checkpoint")->required();
  rend->add_option("--camera", camera, "Frame index (with --data) or camera JSON file")->required();
  rend->add_option("--data", data_dir, "Dataset directory for frame cameras");
  rend->add_option("--time", time, "Normalized time; defaults to the camera timestamp");
  rend->add_option("--out", out, "Output image (.png or .pfm)")->required();

  auto* ev = app.add_subcommand("eval", "Held-out PSNR and SSIM as CSV");
  ev->add_option("--ckpt", ckpt, "Scene checkpoint")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_flag("--all", all_frames, "Evaluate every frame, not just held-out ones");

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc->add_option("--component", component, "One of the registered components; all when omitted");
  gc->add_option("--seed", seed, "Random seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return run_synth(spec_path, preset, seed, out);
    if (*fitc) return run_fit(data_dir, config_path, out, log_every);
    if (*rend) return run_render(ckpt, camera, data_dir, time, out);
    if (*ev) return run_eval(ckpt, data_dir, all_frames);
    if (*gc) return run_gradcheck(component, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
