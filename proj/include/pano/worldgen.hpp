#ifndef PANO_WORLDGEN_HPP
#define PANO_WORLDGEN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pano/pano_ops.hpp"
#include "pano/tensor.hpp"

namespace pano {

enum class SemClass : int {
  drivable = 0,
  sidewalk = 1,
  building = 2,
  vehicle = 3,
  terrain = 4,  // catch-all background, also used for sky pixels
};
inline constexpr int kNumClasses = 5;

// Eight attribute categories, four values each; prompt token id of category i
// with value v is 4*i + v, so the 32-token vocabulary is fully reachable.
struct SceneAttributes {
  int time_of_day = 0;  // day, dusk, night, dawn
  int weather = 0;      // clear, overcast, fog, rain
  int density = 0;      // no buildings, low, medium, high
  int curve = 0;        // straight, left, right, sharp left
  int width = 0;        // road width bucket
  int vehicles = 0;     // none, few, some, many
  int style = 0;        // palette variant
  int rise = 0;         // building height bucket
};
inline constexpr int kPromptLen = 8;
inline constexpr int kPromptVocab = 32;

// Axis-aligned box obstacle standing on the ground plane.
struct Obstacle {
  SemClass cls = SemClass::building;
  double x = 0, y = 0;        // footprint center, world units
  double half_w = 1, half_d = 1;
  double height = 1;
  int id = 0;                 // texture hash key
};

struct RoadSpec {
  double curvature = 0.0;      // signed, 1/turn-radius; 0 is straight
  double half_width = 2.25;    // drivable half width
  double sidewalk_width = 1.5; // 0 disables the sidewalk band
};

struct SceneSpec {
  uint64_t seed = 0;
  int yaw_steps = 0;   // camera yaw in panorama columns of yaw_denom
  int yaw_denom = 256; // panorama width the yaw is quantized against
  RoadSpec road;
  std::vector<Obstacle> obstacles;
  SceneAttributes attrs;
};

struct WorldConfig {
  int h = 64, w = 256;
  int bev_hw = 64;
  int k = kNumClasses;
  int seam_width = 8;        // aliased band width, w/32 by default
  int err_px = 3;            // max per-view stitch misalignment, pixels
  double gain_jitter = 0.06; // max per-view photometric gain error
  double bev_extent = 16.0;  // BEV covers [-extent, extent] in both axes
};

struct RenderOut {
  TensorF rgb;        // [3,H,W] in [0,1]
  TensorF inv_depth;  // [H,W], 1/(1+distance), sky exactly 0
  TensorF labels;     // [H,W], SemClass ids as floats
};

// Per-seam misalignment: integer column offsets and photometric gains for the
// two views blended inside each of the six aliased bands.
struct StitchErr {
  std::array<int, 6> off_left{}, off_right{};
  std::array<double, 6> gain_left{}, gain_right{};
  int max_abs_off = 0;
};

struct Sample {
  SceneSpec spec;
  TensorF clean;     // [3,H,W]
  TensorF stitched;  // [3,H,W]
  TensorF depth;     // [H,W]
  TensorF mask;      // [H,W], 1 on aliased columns
  TensorF bev;       // [K,Hb,Wb] one-hot
  std::vector<int> prompt;  // kPromptLen token ids
  RegionPartition partition;
  std::string split;
  int id = 0;
};

// Scene randomization: attributes, road shape, obstacle layout, yaw. Pure
// function of (seed, pano width for yaw quantization).
SceneSpec make_scene(uint64_t seed, int pano_w, double bev_extent);

// Equirectangular ray cast of the 2.5-D world. Column u sees azimuth
// 2*pi*((u + yaw_steps) mod W)/W, rows span elevation (-pi/3, pi/3).
RenderOut render_equirect(const SceneSpec& spec, int h, int w);

StitchErr draw_stitch_err(uint64_t seed, int err_px, double gain_jitter);

// Blend the two adjacent virtual views inside each aliased band with the
// given misalignment; bit-identical to clean outside the bands, and equal to
// clean everywhere when err is all zero.
TensorF simulate_stitch(const TensorF& clean, const TensorF& inv_depth,
                        const RegionPartition& p, const StitchErr& err);

// Top-down one-hot semantic raster in the ego frame (yaw applied), ego at the
// center cell, +x (azimuth 0, panorama column 0) along increasing ix.
TensorF make_bev(const SceneSpec& spec, int hb, int wb, int k, double extent);

std::vector<int> prompt_tokens(const SceneSpec& spec);

Sample make_sample(uint64_t dataset_seed, int index, const WorldConfig& cfg);

struct DatasetIndex {
  WorldConfig cfg;
  uint64_t seed = 0;
  std::string dir;
  struct Entry {
    int id = 0;
    std::string subdir;
    std::string split;
    SceneSpec spec;
    std::vector<int> prompt;
    RegionPartition partition;
  };
  std::vector<Entry> entries;

  Sample load(int i) const;  // reads the tensor files for entry i
  std::vector<int> split_ids(const std::string& split) const;
};

void write_dataset(const std::string& dir, uint64_t seed, int n, const WorldConfig& cfg);
DatasetIndex read_dataset(const std::string& dir);

}  // namespace pano

#endif
