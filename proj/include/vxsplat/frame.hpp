#pragma once

#include <vector>

#include "vxsplat/camera.hpp"
#include "vxsplat/common.hpp"
#include "vxsplat/voxel_map.hpp"

namespace vxsplat {

/// One input frame of the mapping thread: world-frame colored points, the
/// camera image and its (externally tracked) camera.
struct FrameSample {
  double timestamp = 0.0;
  std::vector<ColoredPoint> points;
  RgbImage image;
  Camera camera;

  void validate() const {
    camera.validate();
    if (image.width != camera.width || image.height != camera.height) {
      throw InputError("frame image does not match camera dimensions");
    }
  }
};

}  // namespace vxsplat
