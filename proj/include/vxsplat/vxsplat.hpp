#pragma once

#include "vxsplat/bench.hpp"
#include "vxsplat/camera.hpp"
#include "vxsplat/common.hpp"
#include "vxsplat/frame.hpp"
#include "vxsplat/gpr.hpp"
#include "vxsplat/io/config.hpp"
#include "vxsplat/io/image_io.hpp"
#include "vxsplat/io/map_file.hpp"
#include "vxsplat/io/ply.hpp"
#include "vxsplat/io/stream.hpp"
#include "vxsplat/io/trajectory.hpp"
#include "vxsplat/losses.hpp"
#include "vxsplat/optimizer.hpp"
#include "vxsplat/pipeline.hpp"
#include "vxsplat/renderer.hpp"
#include "vxsplat/scene_synth.hpp"
#include "vxsplat/spatial_index.hpp"
#include "vxsplat/splat_init.hpp"
#include "vxsplat/voxel_map.hpp"
