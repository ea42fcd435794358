#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "splinegauss/camera.hpp"
#include "splinegauss/image.hpp"
#include "splinegauss/losses.hpp"
#include "splinegauss/scene.hpp"

namespace splinegauss {

/// One captured frame with its pseudo labels.
struct FrameData {
  Camera camera;
  Image color;        // 3 channels in [0, 1]
  Image obj_mask;     // 1 channel, binary
  Image sky_mask;     // 1 channel, binary
  Image inv_depth;    // 1 channel, arbitrary affine gauge
  Image depth_valid;  // 1 channel, binary; empty means every pixel
  int flow_target = -1;  // frame index the correspondences point into, -1 for none
  std::vector<FlowCorrespondence> flow;
  bool held_out = false;
};

/// Ground truth kept for evaluation only; training never reads it.
struct GroundTruth {
  std::uint32_t moving_tag = 0;                 // LiDAR tag of the moving object
  std::vector<Eigen::Vector3d> moving_centroid;  // per frame
  std::vector<Image> transient_region;           // per frame, 1 channel, may be empty
};

struct Dataset {
  std::vector<FrameData> frames;
  std::vector<LidarPoint> points;
  GroundTruth truth;

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
  /// Throws FormatError when frames disagree on size or labels are missing.
  void validate() const;
};

}  // namespace splinegauss
