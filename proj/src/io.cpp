#include "splinegauss/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "splinegauss/errors.hpp"

namespace splinegauss {
namespace fs = std::filesystem;
using nlohmann::json;

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("write_png: need 1 or 3 channels");
  std::vector<unsigned char> bytes(img.data.size());
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = img.width;
  pi.height = img.height;
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw FormatError("cannot write PNG " + path + ": " + pi.message);
}

Image read_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw FormatError("cannot read PNG " + path + ": " + pi.message);
  const bool color = (pi.format & PNG_FORMAT_FLAG_COLOR) != 0;
  pi.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, bytes.data(), 0, nullptr))
    throw FormatError("cannot decode PNG " + path + ": " + pi.message);
  Image img(pi.width, pi.height, channels);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("write_pfm: need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) row[x * img.channels + c] = static_cast<float>(img.at(x, y, c));
    out.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
  }
  if (!out) throw FormatError("write failed for " + path);
}

Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale == 0.0)
    throw FormatError("malformed PFM header in " + path);
  if (scale > 0) throw FormatError("big-endian PFM is not supported: " + path);
  const int channels = magic == "PF" ? 3 : 1;
  Image img(w, h, channels);
  std::vector<float> row(static_cast<size_t>(w) * channels);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size() * sizeof(float));
    if (!in) throw FormatError("truncated PFM " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) img.at(x, y, c) = row[x * channels + c];
  }
  return img;
}

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot write " + path);
  }
  template <class T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void doubles(const double* p, size_t n) { out_.write(reinterpret_cast<const char*>(p), n * sizeof(double)); }
  void finish(const std::string& path) {
    out_.flush();
    if (!out_) throw FormatError("write failed for " + path);
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError("cannot read " + path);
  }
  template <class T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw FormatError("truncated checkpoint " + path_);
    return v;
  }
  void doubles(double* p, size_t n) {
    in_.read(reinterpret_cast<char*>(p), n * sizeof(double));
    if (!in_) throw FormatError("truncated checkpoint " + path_);
  }
  size_t count(size_t limit) {
    const auto n = get<std::uint64_t>();
    if (n > limit) throw FormatError("implausible element count in " + path_);
    return static_cast<size_t>(n);
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::string path_;
};

constexpr size_t kMaxElements = size_t{1} << 32;

void put_trig(Writer& w, const TrigSeries& s) {
  w.put<std::int32_t>(s.levels);
  w.put<std::int32_t>(s.dim);
  w.doubles(s.sin_coeffs.data(), s.sin_coeffs.size());
  w.doubles(s.cos_coeffs.data(), s.cos_coeffs.size());
}

TrigSeries get_trig(Reader& r) {
  const int levels = r.get<std::int32_t>();
  const int dim = r.get<std::int32_t>();
  if (levels < 0 || dim < 0 || levels > 1024 || dim > 1024) throw FormatError("bad trig series header");
  TrigSeries s(levels, dim);
  r.doubles(s.sin_coeffs.data(), s.sin_coeffs.size());
  r.doubles(s.cos_coeffs.data(), s.cos_coeffs.size());
  return s;
}

void put_layout(Writer& w, const KnotLayout& l) {
  w.put<std::int32_t>(l.order());
  w.put<std::int32_t>(l.control_count());
  w.put<double>(l.t_min());
  w.put<double>(l.t_max());
}

KnotLayout get_layout(Reader& r) {
  const int order = r.get<std::int32_t>();
  const int count = r.get<std::int32_t>();
  const double t0 = r.get<double>();
  const double t1 = r.get<double>();
  return KnotLayout(order, count, t0, t1);
}

}  // namespace

void save_checkpoint(const Scene& scene, const std::string& path) {
  Writer w(path);
  w.put<char>('S');
  w.put<char>('G');
  w.put<char>('C');
  w.put<char>('K');
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::int32_t>(scene.sh_degree);
  w.put<double>(scene.time_begin);
  w.put<double>(scene.time_end);
  w.put<double>(scene.frame_interval);
  w.put<std::uint8_t>(scene.options.motion);
  w.put<std::uint8_t>(scene.options.temporal_mask);
  w.put<std::int32_t>(scene.env_map.height);
  w.put<std::int32_t>(scene.env_map.width);
  w.doubles(scene.env_map.texels.data(), scene.env_map.texels.size());
  w.put<std::uint64_t>(scene.gaussians.size());
  for (const auto& g : scene.gaussians) {
    w.doubles(g.mu.data(), 3);
    w.doubles(g.log_scale.data(), 3);
    w.doubles(g.rotation.data(), 4);
    w.put<double>(g.opacity_logit);
    w.put<std::uint64_t>(g.sh.size());
    w.doubles(g.sh.data(), g.sh.size());
    put_trig(w, g.color_trig);
    w.put<std::uint32_t>(g.tag);
    w.put<std::uint8_t>(g.motion.has_value());
    if (!g.motion) continue;
    const ObjectMotion& m = *g.motion;
    put_layout(w, m.position_curve.layout);
    for (const auto& p : m.position_curve.control_points) w.doubles(p.data(), 3);
    put_trig(w, m.position_trig);
    put_layout(w, m.rotation_curve.layout);
    for (const auto& q : m.rotation_curve.controls) w.doubles(q.data(), 4);
    w.put<double>(m.mask.mu_t);
    w.put<double>(m.mask.log_s0);
    w.put<double>(m.mask.log_s1);
  }
  w.finish(path);
}

Scene load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::string(magic, 4) != "SGCK") throw FormatError(path + " is not a scene checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  Scene s;
  s.sh_degree = r.get<std::int32_t>();
  s.time_begin = r.get<double>();
  s.time_end = r.get<double>();
  s.frame_interval = r.get<double>();
  s.options.motion = r.get<std::uint8_t>() != 0;
  s.options.temporal_mask = r.get<std::uint8_t>() != 0;
  const int eh = r.get<std::int32_t>();
  const int ew = r.get<std::int32_t>();
  if (eh < 0 || ew < 0 || static_cast<size_t>(eh) * ew > kMaxElements) throw FormatError("bad env map size");
  if (eh > 0 && ew > 0) {
    s.env_map = EnvMap(eh, ew, Eigen::Vector3d::Zero());
    r.doubles(s.env_map.texels.data(), s.env_map.texels.size());
  }
  const size_t n = r.count(kMaxElements);
  s.gaussians.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    SplatGaussian g;
    r.doubles(g.mu.data(), 3);
    r.doubles(g.log_scale.data(), 3);
    r.doubles(g.rotation.data(), 4);
    g.opacity_logit = r.get<double>();
    g.sh.resize(r.count(1024));
    r.doubles(g.sh.data(), g.sh.size());
    g.color_trig = get_trig(r);
    g.tag = r.get<std::uint32_t>();
    if (r.get<std::uint8_t>()) {
      const KnotLayout pl = get_layout(r);
      std::vector<Eigen::Vector3d> pts(pl.control_count());
      for (auto& p : pts) r.doubles(p.data(), 3);
      TrigSeries trig = get_trig(r);
      const KnotLayout ql = get_layout(r);
      std::vector<Eigen::Vector4d> qs(ql.control_count());
      for (auto& q : qs) r.doubles(q.data(), 4);
      TemporalMask mask;
      mask.mu_t = r.get<double>();
      mask.log_s0 = r.get<double>();
      mask.log_s1 = r.get<double>();
      g.motion = ObjectMotion(BSplineCurve(pl, std::move(pts)), std::move(trig),
                              QuatBSplineCurve(ql, std::move(qs)), mask);
    }
    s.gaussians.push_back(std::move(g));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in checkpoint " + path);
  refresh_knn(s);
  return s;
}

void require_known_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!ok.count(key)) throw FormatError(where + ": unknown key '" + key + "'");
  }
}

json camera_to_json(const Camera& c) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2)});
  return json{{"rotation", rot},
              {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
              {"fx", c.fx},
              {"fy", c.fy},
              {"cx", c.cx},
              {"cy", c.cy},
              {"width", c.width},
              {"height", c.height},
              {"timestamp", c.timestamp}};
}

Camera camera_from_json(const json& j) {
  require_known_keys(j, {"rotation", "translation", "fx", "fy", "cx", "cy", "width", "height", "timestamp"},
                     "camera");
  try {
    Camera c;
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) c.rotation(r, k) = j.at("rotation").at(r).at(k).get<double>();
    for (int k = 0; k < 3; ++k) c.translation[k] = j.at("translation").at(k).get<double>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.timestamp = j.at("timestamp").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("camera: ") + e.what());
  }
}

namespace {

#define SG_RATES(X)                                                                                 \
  X(position) X(position_final_factor) X(scale) X(rotation) X(opacity) X(sh) X(color_trig)          \
  X(spline_controls) X(motion_trig) X(quat_controls) X(mask_scales) X(env_map)
#define SG_INIT(X)                                                                                  \
  X(spline_order) X(control_count) X(trig_levels) X(color_levels) X(sh_degree) X(initial_opacity) \
      X(mask_scale_frames) X(env_height) X(env_width)
#define SG_WEIGHTS(X) X(lambda_c) X(lambda_d) X(lambda_f) X(lambda_obj) X(lambda_sky) X(lambda_r) X(lambda_s)
#define SG_CONFIG(X)                                                                                \
  X(iterations) X(densify_interval) X(densify_from) X(densify_until) X(densify_grad_threshold)      \
  X(split_scale_fraction) X(prune_opacity) X(max_gaussians) X(knn_refresh) X(eval_interval)        \
  X(seed) X(motion) X(temporal_mask) X(adam_beta1) X(adam_beta2) X(adam_eps)
#define SG_NAME(f) #f,

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

json train_config_to_json(const TrainConfig& c) {
  json j, lr, w;
#define SG_PUT(f) j[#f] = c.f;
  SG_CONFIG(SG_PUT)
#undef SG_PUT
#define SG_PUT(f) lr[#f] = c.lr.f;
  SG_RATES(SG_PUT)
#undef SG_PUT
#define SG_PUT(f) w[#f] = c.weights.f;
  SG_WEIGHTS(SG_PUT)
#undef SG_PUT
  j["learning_rates"] = lr;
  j["loss_weights"] = w;
  json init = json::object();
#define SG_PUT(f) init[#f] = c.init.f;
  SG_INIT(SG_PUT)
#undef SG_PUT
  init["env_fill"] = json::array({c.init.env_fill.x(), c.init.env_fill.y(), c.init.env_fill.z()});
  j["init"] = init;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  require_known_keys(j, {SG_CONFIG(SG_NAME) "learning_rates", "loss_weights", "init"}, "config");
  TrainConfig c;
#define SG_GET(f) read_field(j, #f, c.f, "config");
  SG_CONFIG(SG_GET)
#undef SG_GET
  if (j.contains("learning_rates")) {
    const json& lr = j.at("learning_rates");
    require_known_keys(lr, {SG_RATES(SG_NAME)}, "config.learning_rates");
#define SG_GET(f) read_field(lr, #f, c.lr.f, "config.learning_rates");
    SG_RATES(SG_GET)
#undef SG_GET
  }
  if (j.contains("init")) {
    const json& in = j.at("init");
    require_known_keys(in, {SG_INIT(SG_NAME) "env_fill"}, "config.init");
#define SG_GET(f) read_field(in, #f, c.init.f, "config.init");
    SG_INIT(SG_GET)
#undef SG_GET
    if (in.contains("env_fill")) {
      const json& e = in.at("env_fill");
      if (!e.is_array() || e.size() != 3) throw FormatError("config.init.env_fill: expected a 3-vector");
      for (int k = 0; k < 3; ++k) c.init.env_fill[k] = e[k].get<double>();
    }
  }
  if (j.contains("loss_weights")) {
    const json& w = j.at("loss_weights");
    require_known_keys(w, {SG_WEIGHTS(SG_NAME)}, "config.loss_weights");
#define SG_GET(f) read_field(w, #f, c.weights.f, "config.loss_weights");
    SG_WEIGHTS(SG_GET)
#undef SG_GET
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return train_config_from_json(j);
}

namespace {

std::string frame_name(const char* prefix, size_t f, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu.%s", prefix, f, ext);
  return buf;
}

Image binary_png(const std::string& path) {
  Image img = read_png(path);
  if (img.channels != 1) throw FormatError(path + ": mask must be grayscale");
  for (double& v : img.data) v = v > 0.5 ? 1.0 : 0.0;
  return img;
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& dir) {
  data.validate();
  fs::create_directories(dir);
  const fs::path root(dir);
  json frames = json::array();
  for (size_t f = 0; f < data.frames.size(); ++f) {
    const FrameData& fr = data.frames[f];
    json e{{"camera", camera_to_json(fr.camera)}, {"held_out", fr.held_out}, {"flow_target", fr.flow_target}};
    write_pfm((root / frame_name("color", f, "pfm")).string(), fr.color);
    write_png((root / frame_name("color", f, "png")).string(), fr.color);
    e["color"] = frame_name("color", f, "pfm");
    auto mask = [&](const Image& img, const char* prefix, const char* key) {
      if (img.empty()) return;
      write_png((root / frame_name(prefix, f, "png")).string(), img);
      e[key] = frame_name(prefix, f, "png");
    };
    mask(fr.obj_mask, "obj", "obj_mask");
    mask(fr.sky_mask, "sky", "sky_mask");
    mask(fr.depth_valid, "valid", "depth_valid");
    if (f < data.truth.transient_region.size()) mask(data.truth.transient_region[f], "transient", "transient");
    if (!fr.inv_depth.empty()) {
      write_pfm((root / frame_name("depth", f, "pfm")).string(), fr.inv_depth);
      e["inv_depth"] = frame_name("depth", f, "pfm");
    }
    if (!fr.flow.empty()) {
      std::ofstream out(root / frame_name("flow", f, "csv"));
      out << "x,y,u,v\n";
      char line[128];
      for (const auto& c : fr.flow) {
        std::snprintf(line, sizeof(line), "%d,%d,%.17g,%.17g\n", c.x, c.y, c.u, c.v);
        out << line;
      }
      if (!out) throw FormatError("cannot write flow for frame " + std::to_string(f));
      e["flow"] = frame_name("flow", f, "csv");
    }
    frames.push_back(std::move(e));
  }
  {
    std::ofstream out(root / "points.csv");
    out << "x,y,z,timestamp,r,g,b,tag\n";
    char line[256];
    for (const auto& p : data.points) {
      std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%u\n", p.position.x(),
                    p.position.y(), p.position.z(), p.timestamp, p.color.x(), p.color.y(), p.color.z(),
                    p.tag);
      out << line;
    }
    if (!out) throw FormatError("cannot write points.csv");
  }
  json centroid = json::array();
  for (const auto& c : data.truth.moving_centroid) centroid.push_back({c.x(), c.y(), c.z()});
  json j{{"format", "splinegauss-dataset"},
         {"version", 1},
         {"frames", frames},
         {"truth", {{"moving_tag", data.truth.moving_tag}, {"moving_centroid", centroid}}}};
  std::ofstream out(root / "dataset.json");
  out << j.dump(1) << '\n';
  if (!out) throw FormatError("cannot write dataset.json");
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "dataset.json");
  if (!in) throw FormatError("no dataset.json in " + dir);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset.json: ") + e.what());
  }
  require_known_keys(j, {"format", "version", "frames", "truth"}, "dataset");
  if (j.value("format", "") != "splinegauss-dataset" || j.value("version", 0) != 1)
    throw FormatError("unsupported dataset format in " + dir);
  Dataset data;
  bool any_transient = false;
  std::vector<Image> transient;
  try {
    for (const auto& e : j.at("frames")) {
      require_known_keys(e, {"camera", "held_out", "flow_target", "color", "obj_mask", "sky_mask", "depth_valid",
                             "transient", "inv_depth", "flow"},
                         "dataset frame");
      FrameData fr;
      fr.camera = camera_from_json(e.at("camera"));
      fr.held_out = e.at("held_out").get<bool>();
      fr.flow_target = e.at("flow_target").get<int>();
      fr.color = read_pfm((root / e.at("color").get<std::string>()).string());
      if (e.contains("obj_mask")) fr.obj_mask = binary_png((root / e["obj_mask"].get<std::string>()).string());
      if (e.contains("sky_mask")) fr.sky_mask = binary_png((root / e["sky_mask"].get<std::string>()).string());
      if (e.contains("depth_valid"))
        fr.depth_valid = binary_png((root / e["depth_valid"].get<std::string>()).string());
      if (e.contains("inv_depth")) fr.inv_depth = read_pfm((root / e["inv_depth"].get<std::string>()).string());
      Image region;
      if (e.contains("transient")) {
        region = binary_png((root / e["transient"].get<std::string>()).string());
        any_transient = true;
      }
      transient.push_back(std::move(region));
      if (e.contains("flow")) {
        std::ifstream fin(root / e["flow"].get<std::string>());
        std::string line;
        std::getline(fin, line);
        while (std::getline(fin, line)) {
          if (line.empty()) continue;
          FlowCorrespondence c;
          if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &c.x, &c.y, &c.u, &c.v) != 4)
            throw FormatError("malformed flow line: " + line);
          fr.flow.push_back(c);
        }
      }
      data.frames.push_back(std::move(fr));
    }
    const json& truth = j.at("truth");
    data.truth.moving_tag = truth.at("moving_tag").get<std::uint32_t>();
    for (const auto& c : truth.at("moving_centroid"))
      data.truth.moving_centroid.emplace_back(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset.json: ") + e.what());
  }
  if (any_transient) data.truth.transient_region = std::move(transient);

  std::ifstream pin(root / "points.csv");
  if (!pin) throw FormatError("no points.csv in " + dir);
  std::string line;
  std::getline(pin, line);
  while (std::getline(pin, line)) {
    if (line.empty()) continue;
    LidarPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%u", &p.position.x(), &p.position.y(),
                    &p.position.z(), &p.timestamp, &p.color.x(), &p.color.y(), &p.color.z(), &p.tag) != 8)
      throw FormatError("malformed point line: " + line);
    data.points.push_back(p);
  }
  data.validate();
  return data;
}

}  // namespace splinegauss
