#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "splinegauss/camera.hpp"
#include "splinegauss/dataset.hpp"
#include "splinegauss/image.hpp"
#include "splinegauss/scene.hpp"
#include "splinegauss/trainer.hpp"

namespace splinegauss {

/// 8-bit PNG with 1 (gray) or 3 (RGB) channels. Values are clamped to [0, 1]
/// and rounded; no transfer curve is applied.
void write_png(const std::string& path, const Image& image);
/// Reads gray or RGB PNGs (alpha is dropped) into [0, 1].
Image read_png(const std::string& path);

/// 32-bit little-endian PFM with 1 or 3 channels, rows stored bottom to top.
void write_pfm(const std::string& path, const Image& image);
Image read_pfm(const std::string& path);

/// Binary scene checkpoint, little-endian:
///   "SGCK" u32 version
///   i32 sh_degree, f64 time_begin, time_end, frame_interval, u8 motion, u8 temporal_mask
///   i32 env height, i32 env width, f64 texels[h * w * 3]
///   u64 gaussian count, then per Gaussian:
///     f64 mu[3], log_scale[3], rotation[4], opacity_logit
///     u64 n, f64 sh[n]; trig series (i32 levels, i32 dim, f64 sin[], f64 cos[])
///     u32 tag, u8 has_motion
///     with motion: layout (i32 order, i32 count, f64 t_min, t_max), f64 controls[3 count],
///                  trig series, layout, f64 quaternion controls[4 count],
///                  f64 mu_t, log_s0, log_s1
/// The neighbor cache is rebuilt on load.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const Scene& scene, const std::string& path);
Scene load_checkpoint(const std::string& path);

nlohmann::json camera_to_json(const Camera& camera);
Camera camera_from_json(const nlohmann::json& j);

/// Every TrainConfig and LossWeights field; unknown keys throw FormatError.
nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

/// Throws FormatError naming the first key of `j` not in `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                        const std::string& where);

/// Dataset directory:
///   dataset.json      frames (camera, split, flow target, file names), truth summary
///   color_NNN.pfm     float color; color_NNN.png is an 8-bit preview
///   obj_NNN.png, sky_NNN.png, valid_NNN.png, transient_NNN.png   binary masks
///   depth_NNN.pfm     pseudo inverse depth
///   flow_NNN.csv      x,y,u,v correspondences into the flow target frame
///   points.csv        x,y,z,timestamp,r,g,b,tag
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace splinegauss
