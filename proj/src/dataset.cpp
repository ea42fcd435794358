#include "splinegauss/dataset.hpp"

#include "splinegauss/errors.hpp"

namespace splinegauss {

std::vector<int> Dataset::train_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < frames.size(); ++i)
    if (!frames[i].held_out) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::test_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < frames.size(); ++i)
    if (frames[i].held_out) out.push_back(static_cast<int>(i));
  return out;
}

void Dataset::validate() const {
  if (frames.empty()) throw FormatError("dataset has no frames");
  const int w = frames[0].camera.width, h = frames[0].camera.height;
  auto check = [&](const Image& img, int channels, const char* what, size_t f) {
    if (img.empty()) return;
    if (img.width != w || img.height != h || img.channels != channels)
      throw FormatError("frame " + std::to_string(f) + ": " + what + " has the wrong shape");
  };
  for (size_t f = 0; f < frames.size(); ++f) {
    const FrameData& fr = frames[f];
    fr.camera.validate();
    if (fr.camera.width != w || fr.camera.height != h)
      throw FormatError("frame " + std::to_string(f) + ": camera size differs from frame 0");
    if (fr.color.empty()) throw FormatError("frame " + std::to_string(f) + ": missing color image");
    check(fr.color, 3, "color", f);
    check(fr.obj_mask, 1, "object mask", f);
    check(fr.sky_mask, 1, "sky mask", f);
    check(fr.inv_depth, 1, "inverse depth", f);
    check(fr.depth_valid, 1, "depth validity", f);
    if (fr.flow_target >= static_cast<int>(frames.size()))
      throw FormatError("frame " + std::to_string(f) + ": flow target out of range");
    for (const auto& c : fr.flow) {
      if (c.x < 0 || c.y < 0 || c.x >= w || c.y >= h)
        throw FormatError("frame " + std::to_string(f) + ": flow source pixel outside the image");
    }
  }
}

}  // namespace splinegauss
