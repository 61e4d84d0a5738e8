#ifndef PANO_PANO_OPS_HPP
#define PANO_PANO_OPS_HPP

#include <array>
#include <vector>

#include "pano/tensor.hpp"

namespace pano {

inline constexpr double kTau = 6.283185307179586476925286766559;

// Half-open column interval on a cyclic axis of the given width; wraps when
// start + len exceeds the width.
struct Interval {
  int start = 0;
  int len = 0;
  bool contains(int col, int width) const {
    int off = ((col - start) % width + width) % width;
    return off < len;
  }
};

// Six coherent regions R_i interleaved with six aliased regions A_i, jointly
// tiling [0, W). Region i of either kind keeps its index under rolls.
struct RegionPartition {
  int width = 0;
  std::array<Interval, 6> coherent;
  std::array<Interval, 6> aliased;

  // Partition for a six-view capture rig: aliased bands of seam_width columns
  // centered between adjacent virtual view axes.
  static RegionPartition six_view(int width, int seam_width);

  bool in_aliased(int col) const;
  void validate() const;  // throws unless the 12 intervals tile [0, width)
};

// Rotation angle in radians, [0, 2*pi). Quantize to multiples of 2*pi/W
// before rolling so displacement is pixel-aligned and the roll is exact.
struct RollAngle {
  double theta = 0.0;
};

RollAngle quantize_angle(double theta, int width);

// floor(theta / 2pi * width); theta outside [0, 2pi) is wrapped first.
int angle_to_displacement(RollAngle a, int width);

// out[..., j] = in[..., (j + dw) mod W] along the last axis.
template <typename S>
Tensor<S> roll_w(const Tensor<S>& x, int dw) {
  return roll_last(x, dw);
}

RegionPartition roll_partition(const RegionPartition& p, int dw);

// Boundary columns b, each standing for the adjacent cross-boundary column
// pair ((b-1) mod W, b): the 12 interval starts plus the wrap column 0.
// Sorted, deduplicated.
std::vector<int> seam_columns(const RegionPartition& p);

}  // namespace pano

#endif
