#include "pano/pano_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pano {

RegionPartition RegionPartition::six_view(int width, int seam_width) {
  if (width < 24) throw std::invalid_argument("RegionPartition: width too small for six views");
  if (seam_width < 1 || seam_width * 6 >= width)
    throw std::invalid_argument("RegionPartition: seam_width " + std::to_string(seam_width) +
                                " does not fit width " + std::to_string(width));
  RegionPartition p;
  p.width = width;
  // View axes at azimuth i/6 of the circle; aliased bands centered midway
  // between adjacent axes, i.e. at (2i+1)/12 of the width.
  std::array<int, 6> astart{};
  for (int i = 0; i < 6; ++i) {
    const int center = static_cast<int>(std::lround(width * (2 * i + 1) / 12.0)) % width;
    astart[static_cast<size_t>(i)] = ((center - seam_width / 2) % width + width) % width;
  }
  for (int i = 0; i < 6; ++i) {
    p.aliased[static_cast<size_t>(i)] = Interval{astart[static_cast<size_t>(i)], seam_width};
    const int cstart = (astart[static_cast<size_t>(i)] + seam_width) % width;
    const int next = astart[static_cast<size_t>((i + 1) % 6)];
    const int clen = ((next - cstart) % width + width) % width;
    p.coherent[static_cast<size_t>(i)] = Interval{cstart, clen};
  }
  p.validate();
  return p;
}

bool RegionPartition::in_aliased(int col) const {
  for (const Interval& iv : aliased)
    if (iv.contains(col, width)) return true;
  return false;
}

void RegionPartition::validate() const {
  if (width <= 0) throw std::logic_error("RegionPartition: nonpositive width");
  std::vector<int> cover(static_cast<size_t>(width), 0);
  auto mark = [&](const Interval& iv) {
    if (iv.len <= 0 || iv.len > width || iv.start < 0 || iv.start >= width)
      throw std::logic_error("RegionPartition: malformed interval");
    for (int k = 0; k < iv.len; ++k) cover[static_cast<size_t>((iv.start + k) % width)]++;
  };
  for (const Interval& iv : coherent) mark(iv);
  for (const Interval& iv : aliased) mark(iv);
  for (int c = 0; c < width; ++c)
    if (cover[static_cast<size_t>(c)] != 1)
      throw std::logic_error("RegionPartition: column " + std::to_string(c) +
                             " covered " + std::to_string(cover[static_cast<size_t>(c)]) +
                             " times; intervals must tile [0,width)");
}

RollAngle quantize_angle(double theta, int width) {
  const int steps = angle_to_displacement(RollAngle{theta}, width);
  return RollAngle{steps * kTau / width};
}

int angle_to_displacement(RollAngle a, int width) {
  if (width <= 0) throw std::invalid_argument("angle_to_displacement: nonpositive width");
  double t = std::fmod(a.theta, kTau);
  if (t < 0) t += kTau;
  double y = t / kTau * width;
  // Angles produced by quantize_angle land on grid multiples of 2pi/width up
  // to rounding; snap those so floor cannot step down a cell.
  const double r = std::nearbyint(y);
  if (std::abs(y - r) <= 1e-9 * width) y = r;
  int dw = static_cast<int>(std::floor(y));
  if (dw >= width) dw = width - 1;  // guard the t -> 2pi- rounding edge
  if (dw < 0) dw = 0;
  return dw;
}

RegionPartition roll_partition(const RegionPartition& p, int dw) {
  RegionPartition out = p;
  const int w = p.width;
  auto shift = [&](Interval iv) {
    iv.start = ((iv.start - dw) % w + w) % w;
    return iv;
  };
  for (size_t i = 0; i < 6; ++i) {
    out.coherent[i] = shift(p.coherent[i]);
    out.aliased[i] = shift(p.aliased[i]);
  }
  return out;
}

std::vector<int> seam_columns(const RegionPartition& p) {
  std::vector<int> cols;
  for (const Interval& iv : p.coherent) cols.push_back(iv.start);
  for (const Interval& iv : p.aliased) cols.push_back(iv.start);
  cols.push_back(0);  // wrap boundary pair (W-1, 0)
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

}  // namespace pano
