#include "pano/worldgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "pano/pt36.hpp"

namespace pano {

namespace {

using nlohmann::json;

constexpr double kEyeHeight = 1.6;
constexpr double kElevSpan = kTau / 3.0;  // rows cover (-pi/3, pi/3)

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// deterministic integer hash for texture decisions
uint64_t texhash(uint64_t a, int64_t b, int64_t c) {
  uint64_t h = mix_seed(a, static_cast<uint64_t>(b) * 0x9e3779b97f4a7c15ull);
  return mix_seed(h, static_cast<uint64_t>(c) + 0x632be59bd9b4e019ull);
}

// triangle wave in [0,1], period 1, piecewise linear
double tri(double z) {
  const double f = z - std::floor(z);
  return 2.0 * std::abs(f - 0.5);
}

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Rgb operator*(Rgb c, double s) { return {c.r * s, c.g * s, c.b * s}; }
Rgb lerp(Rgb a, Rgb b, double t) {
  return {a.r + t * (b.r - a.r), a.g + t * (b.g - a.g), a.b + t * (b.b - a.b)};
}

struct Palette {
  Rgb terrain, asphalt, lane, sidewalk, sky_top, sky_horizon, fog;
  Rgb building_base;
  double brightness = 1.0;   // time-of-day multiplier
  double fog_density = 0.0;  // per world unit
  double window_lit = 0.0;   // probability-ish of lit windows
};

Palette make_palette(const SceneAttributes& a) {
  Palette p;
  p.terrain = {0.32, 0.36, 0.27};
  p.asphalt = {0.26, 0.26, 0.28};
  p.lane = {0.85, 0.84, 0.78};
  p.sidewalk = {0.52, 0.50, 0.47};
  static const Rgb styles[4] = {
      {0.55, 0.48, 0.42}, {0.42, 0.46, 0.55}, {0.58, 0.55, 0.50}, {0.38, 0.42, 0.40}};
  p.building_base = styles[a.style & 3];
  static const double bright[4] = {1.0, 0.72, 0.42, 0.82};  // day dusk night dawn
  p.brightness = bright[a.time_of_day & 3];
  static const double fogd[4] = {0.004, 0.010, 0.060, 0.022};  // clear overcast fog rain
  p.fog_density = fogd[a.weather & 3];
  static const Rgb sky_tops[4] = {
      {0.35, 0.55, 0.85}, {0.45, 0.40, 0.55}, {0.05, 0.06, 0.12}, {0.55, 0.45, 0.55}};
  static const Rgb sky_hors[4] = {
      {0.70, 0.80, 0.92}, {0.85, 0.55, 0.45}, {0.10, 0.11, 0.18}, {0.90, 0.70, 0.55}};
  p.sky_top = sky_tops[a.time_of_day & 3];
  p.sky_horizon = sky_hors[a.time_of_day & 3];
  if (a.weather == 1 || a.weather == 3) {  // overcast, rain: flatten the sky
    p.sky_top = lerp(p.sky_top, {0.5, 0.5, 0.52}, 0.6);
    p.sky_horizon = lerp(p.sky_horizon, {0.6, 0.6, 0.62}, 0.6);
  }
  p.fog = lerp(p.sky_horizon, {0.5, 0.5, 0.5}, 0.3);
  p.window_lit = (a.time_of_day == 2) ? 0.75 : (a.time_of_day == 1 ? 0.4 : 0.08);
  return p;
}

// signed road frame: s along the centerline, n positive to the left
struct RoadFrame {
  double s = 0, n = 0;
};

double wrap_pi(double a) {
  a = std::fmod(a + kTau / 2.0, kTau);
  if (a < 0) a += kTau;
  return a - kTau / 2.0;
}

RoadFrame road_frame(const RoadSpec& r, double x, double y) {
  if (std::abs(r.curvature) < 1e-12) return {x, y};
  const double radius = 1.0 / std::abs(r.curvature);
  const double cy = (r.curvature > 0) ? radius : -radius;
  const double dx = x, dy = y - cy;
  const double rr = std::sqrt(dx * dx + dy * dy);
  if (r.curvature > 0) {
    const double ang = wrap_pi(std::atan2(dy, dx) + kTau / 4.0);
    return {radius * ang, radius - rr};
  }
  const double ang = wrap_pi(std::atan2(dy, dx) - kTau / 4.0);
  return {-radius * ang, rr - radius};
}

// centerline point + left normal at arclength s
void road_point(const RoadSpec& r, double s, double n, double* x, double* y) {
  if (std::abs(r.curvature) < 1e-12) {
    *x = s;
    *y = n;
    return;
  }
  const double k = r.curvature;
  const double px = std::sin(k * s) / k;
  const double py = (1.0 - std::cos(k * s)) / k;
  const double nx = -std::sin(k * s), ny = std::cos(k * s);
  *x = px + n * nx;
  *y = py + n * ny;
}

struct Hit {
  double t = -1;
  SemClass cls = SemClass::terrain;
  int axis = 2;      // 0: +-x face, 1: +-y face, 2: top/ground
  int obstacle = -1; // index, -1 for ground
};

bool ray_box(double ox, double oy, double oz, double dx, double dy, double dz,
             const Obstacle& b, double* t_out, int* axis_out) {
  double tn = -1e30, tf = 1e30;
  int axis = 2;
  const double lo[3] = {b.x - b.half_w, b.y - b.half_d, 0.0};
  const double hi[3] = {b.x + b.half_w, b.y + b.half_d, b.height};
  const double o[3] = {ox, oy, oz};
  const double d[3] = {dx, dy, dz};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < lo[i] || o[i] > hi[i]) return false;
      continue;
    }
    double t1 = (lo[i] - o[i]) / d[i];
    double t2 = (hi[i] - o[i]) / d[i];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tn) {
      tn = t1;
      axis = i;
    }
    tf = std::min(tf, t2);
    if (tn > tf) return false;
  }
  if (tn <= 1e-9) return false;  // camera inside or behind
  *t_out = tn;
  *axis_out = axis;
  return true;
}

Rgb shade_pixel(const SceneSpec& spec, const Palette& pal, const Hit& hit, double px,
                double py, double pz, double dirx, double diry, double dirz) {
  Rgb col;
  const RoadSpec& road = spec.road;
  if (hit.obstacle < 0) {
    // ground plane
    const RoadFrame f = road_frame(road, px, py);
    const double hw = road.half_width;
    if (hw > 0.0 && std::abs(f.n) <= hw) {
      col = pal.asphalt * (0.9 + 0.2 * tri(f.s * 0.21));
      const bool dash = std::abs(f.n) < 0.05 * hw + 0.05 && tri(f.s / 6.0) > 0.5;
      if (dash) col = pal.lane;
    } else if (hw > 0.0 && std::abs(f.n) <= hw + road.sidewalk_width &&
               road.sidewalk_width > 0.0) {
      col = pal.sidewalk * (0.85 + 0.3 * tri(f.s * 0.5));
    } else {
      const double radius = std::sqrt(px * px + py * py);
      col = pal.terrain * (0.85 + 0.3 * tri(radius * 0.35));
    }
  } else {
    const Obstacle& ob = spec.obstacles[static_cast<size_t>(hit.obstacle)];
    if (ob.cls == SemClass::building) {
      const double tang = (hit.axis == 0) ? py : px;
      if (hit.axis == 2) {
        col = pal.building_base * 0.55;  // roof
      } else {
        col = pal.building_base * (0.8 + 0.1 * tri(tang * 0.8));
        const int64_t wx = static_cast<int64_t>(std::floor(tang / 1.1));
        const int64_t wz = static_cast<int64_t>(std::floor(pz / 1.3));
        const double fx = tang / 1.1 - std::floor(tang / 1.1);
        const double fz = pz / 1.3 - std::floor(pz / 1.3);
        const bool in_pane = fx > 0.25 && fx < 0.75 && fz > 0.3 && fz < 0.8;
        if (in_pane) {
          const uint64_t hsh = texhash(spec.seed ^ 0x77u, wx * 131 + ob.id, wz);
          const bool lit = (hsh % 1000) < static_cast<uint64_t>(pal.window_lit * 1000.0);
          col = lit ? Rgb{0.95, 0.85, 0.55} : Rgb{0.12, 0.14, 0.18};
          if (lit) return lerp(pal.fog, col, std::exp(-pal.fog_density * hit.t));
        }
      }
    } else {  // vehicle
      const uint64_t hsh = texhash(spec.seed ^ 0x3eu, ob.id, 7);
      static const Rgb bodies[5] = {{0.75, 0.2, 0.2}, {0.2, 0.35, 0.7}, {0.8, 0.8, 0.82},
                                    {0.2, 0.2, 0.22}, {0.7, 0.6, 0.2}};
      col = bodies[hsh % 5];
      if (pz < 0.3) col = col * 0.35;          // wheel band
      if (hit.axis == 2) col = col * 0.8;      // roof
    }
  }

  // lambert against a fixed sun direction, plus ambient
  static const double lx = 0.42, ly = 0.30, lz = 0.855;  // unit-ish
  double nx = 0, ny = 0, nz = 0;
  if (hit.axis == 2)
    nz = 1;
  else if (hit.axis == 0)
    nx = (dirx > 0) ? -1 : 1;
  else
    ny = (diry > 0) ? -1 : 1;
  const double diff = std::max(0.0, nx * lx + ny * ly + nz * lz);
  const double light = 0.45 + 0.55 * diff;
  col = col * (light * pal.brightness);

  // distance fog toward the horizon tint
  const double f = std::exp(-pal.fog_density * hit.t);
  col = lerp(pal.fog * pal.brightness, col, f);
  (void)dirz;
  return col;
}

}  // namespace

SceneSpec make_scene(uint64_t seed, int pano_w, double bev_extent) {
  if (pano_w < 4) throw std::invalid_argument("make_scene: pano width too small");
  Rng rng(mix_seed(seed, 0x5ce9eull));
  SceneSpec spec;
  spec.seed = seed;
  spec.yaw_denom = pano_w;
  spec.yaw_steps = static_cast<int>(rng.uniform_int(0, pano_w - 1));

  SceneAttributes& a = spec.attrs;
  a.time_of_day = static_cast<int>(rng.uniform_int(0, 3));
  a.weather = static_cast<int>(rng.uniform_int(0, 3));
  a.density = static_cast<int>(rng.uniform_int(0, 3));
  a.curve = static_cast<int>(rng.uniform_int(0, 3));
  a.width = static_cast<int>(rng.uniform_int(0, 3));
  a.vehicles = static_cast<int>(rng.uniform_int(0, 3));
  a.style = static_cast<int>(rng.uniform_int(0, 3));
  a.rise = static_cast<int>(rng.uniform_int(0, 3));

  switch (a.curve) {
    case 0: spec.road.curvature = 0.0; break;
    case 1: spec.road.curvature = rng.uniform(0.025, 0.05); break;
    case 2: spec.road.curvature = -rng.uniform(0.025, 0.05); break;
    default: spec.road.curvature = rng.uniform(0.055, 0.085); break;
  }
  static const double widths[4] = {1.5, 2.25, 3.0, 4.0};
  spec.road.half_width = widths[a.width];
  spec.road.sidewalk_width = 1.5;

  static const double rise_lo[4] = {1.5, 3.0, 6.0, 10.0};
  static const double rise_hi[4] = {3.0, 6.0, 10.0, 16.0};
  static const int bcount[4] = {0, 6, 12, 20};
  static const int vcount[4] = {0, 2, 4, 8};

  int next_id = 0;
  for (int i = 0; i < bcount[a.density]; ++i) {
    const double s = rng.uniform(-14.0, 14.0);
    const double side = (i % 2 == 0) ? 1.0 : -1.0;
    const double half_w = rng.uniform(1.0, 2.5);
    const double half_d = rng.uniform(1.0, 2.2);
    const double h = rng.uniform(rise_lo[a.rise], rise_hi[a.rise]);
    const double gap = rng.uniform(0.8, 2.0);
    const double n = side * (spec.road.half_width + spec.road.sidewalk_width + gap +
                             std::max(half_w, half_d));
    double x, y;
    road_point(spec.road, s, n, &x, &y);
    const double half = std::max(half_w, half_d);
    if (std::abs(x) > bev_extent - half - 0.25 || std::abs(y) > bev_extent - half - 0.25)
      continue;  // draws above stay consumed, so skipping keeps determinism
    spec.obstacles.push_back({SemClass::building, x, y, half_w, half_d, h, next_id++});
  }
  for (int i = 0; i < vcount[a.vehicles]; ++i) {
    const double mag = rng.uniform(3.5, 13.0);
    const double s = (i % 2 == 0) ? mag : -mag;
    const double n = ((i / 2) % 2 == 0 ? 1.0 : -1.0) * rng.uniform(0.25, 0.6) *
                     spec.road.half_width;
    const double h = rng.uniform(0.7, 0.95);
    double x, y;
    road_point(spec.road, s, n, &x, &y);
    if (std::abs(x) > bev_extent - 1.2 || std::abs(y) > bev_extent - 1.2) continue;
    spec.obstacles.push_back({SemClass::vehicle, x, y, 0.9, 0.55, h, next_id++});
  }
  return spec;
}

RenderOut render_equirect(const SceneSpec& spec, int h, int w) {
  if (w % 4 != 0) throw std::invalid_argument("render_equirect: width must be divisible by 4");
  if (h < 16) throw std::invalid_argument("render_equirect: height must be >= 16");
  if (spec.yaw_steps != 0 && spec.yaw_denom != w)
    throw std::invalid_argument("render_equirect: yaw quantized for width " +
                                std::to_string(spec.yaw_denom) + ", rendering at " +
                                std::to_string(w));
  const Palette pal = make_palette(spec.attrs);

  RenderOut out;
  out.rgb = TensorF({3, h, w}, 0.0f);
  out.inv_depth = TensorF({h, w}, 0.0f);
  out.labels = TensorF({h, w}, static_cast<float>(static_cast<int>(SemClass::terrain)));

  for (int u = 0; u < w; ++u) {
    const int c = (u + spec.yaw_steps) % w;
    const double az = kTau * static_cast<double>(c) / static_cast<double>(w);
    const double ca = std::cos(az), sa = std::sin(az);
    for (int v = 0; v < h; ++v) {
      const double elev = (0.5 - (v + 0.5) / static_cast<double>(h)) * kElevSpan;
      const double ce = std::cos(elev), se = std::sin(elev);
      const double dx = ce * ca, dy = ce * sa, dz = se;

      Hit best;
      best.t = 1e30;
      bool found = false;
      if (dz < 0) {
        best.t = -kEyeHeight / dz;
        best.cls = SemClass::terrain;  // refined below via road frame
        best.axis = 2;
        best.obstacle = -1;
        found = true;
      }
      for (size_t i = 0; i < spec.obstacles.size(); ++i) {
        double t;
        int axis;
        if (ray_box(0, 0, kEyeHeight, dx, dy, dz, spec.obstacles[i], &t, &axis) &&
            t < best.t) {
          best.t = t;
          best.cls = spec.obstacles[i].cls;
          best.axis = axis;
          best.obstacle = static_cast<int>(i);
          found = true;
        }
      }

      if (!found) {
        // sky: elevation gradient only, so an empty world stays rotationally
        // symmetric column to column
        const double tt = clampd((elev / (kElevSpan * 0.5)) * 0.5 + 0.5, 0.0, 1.0);
        Rgb sky = lerp(pal.sky_horizon, pal.sky_top, tt) * pal.brightness;
        out.rgb.at3(0, v, u) = static_cast<float>(clampd(sky.r, 0.0, 1.0));
        out.rgb.at3(1, v, u) = static_cast<float>(clampd(sky.g, 0.0, 1.0));
        out.rgb.at3(2, v, u) = static_cast<float>(clampd(sky.b, 0.0, 1.0));
        continue;  // inv depth 0, label terrain
      }

      const double px = best.t * dx, py = best.t * dy, pz = kEyeHeight + best.t * dz;
      SemClass cls = best.cls;
      if (best.obstacle < 0) {
        const RoadFrame f = road_frame(spec.road, px, py);
        const double hw = spec.road.half_width;
        if (hw > 0.0 && std::abs(f.n) <= hw)
          cls = SemClass::drivable;
        else if (hw > 0.0 && spec.road.sidewalk_width > 0.0 &&
                 std::abs(f.n) <= hw + spec.road.sidewalk_width)
          cls = SemClass::sidewalk;
        else
          cls = SemClass::terrain;
      }
      const Rgb col = shade_pixel(spec, pal, best, px, py, pz, dx, dy, dz);
      out.rgb.at3(0, v, u) = static_cast<float>(clampd(col.r, 0.0, 1.0));
      out.rgb.at3(1, v, u) = static_cast<float>(clampd(col.g, 0.0, 1.0));
      out.rgb.at3(2, v, u) = static_cast<float>(clampd(col.b, 0.0, 1.0));
      out.inv_depth.at2(v, u) = static_cast<float>(1.0 / (1.0 + best.t));
      out.labels.at2(v, u) = static_cast<float>(static_cast<int>(cls));
    }
  }
  return out;
}

StitchErr draw_stitch_err(uint64_t seed, int err_px, double gain_jitter) {
  Rng rng(mix_seed(seed, 0x57137ull));
  StitchErr e;
  e.max_abs_off = err_px;
  for (int i = 0; i < 6; ++i) {
    e.off_left[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(-err_px, err_px));
    e.off_right[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(-err_px, err_px));
    e.gain_left[static_cast<size_t>(i)] = rng.uniform(1.0 - gain_jitter, 1.0 + gain_jitter);
    e.gain_right[static_cast<size_t>(i)] = rng.uniform(1.0 - gain_jitter, 1.0 + gain_jitter);
  }
  return e;
}

TensorF simulate_stitch(const TensorF& clean, const TensorF& inv_depth,
                        const RegionPartition& p, const StitchErr& err) {
  if (clean.rank() != 3) throw std::invalid_argument("simulate_stitch: clean must be [3,H,W]");
  const int h = clean.dim(1), w = clean.dim(2);
  if (inv_depth.dims != std::vector<int>{h, w})
    throw std::invalid_argument("simulate_stitch: depth dims mismatch pano");
  if (p.width != w) throw std::invalid_argument("simulate_stitch: partition width mismatch");
  for (const Interval& iv : p.aliased)
    if (err.max_abs_off > iv.len)
      throw std::invalid_argument("simulate_stitch: offset " +
                                  std::to_string(err.max_abs_off) +
                                  " exceeds aliased band width " + std::to_string(iv.len));

  TensorF out = clean;
  for (int si = 0; si < 6; ++si) {
    const Interval& band = p.aliased[static_cast<size_t>(si)];
    const double gl = err.gain_left[static_cast<size_t>(si)];
    const double gr = err.gain_right[static_cast<size_t>(si)];
    const int ol = err.off_left[static_cast<size_t>(si)];
    const int orr = err.off_right[static_cast<size_t>(si)];
    for (int j = 0; j < band.len; ++j) {
      const int col = (band.start + j) % w;
      const double t = (j + 0.5) / static_cast<double>(band.len);
      for (int row = 0; row < h; ++row) {
        // parallax scales with inverse depth; infinitely far content (sky,
        // inv depth 0) does not displace at all
        const double par = clampd(2.0 * inv_depth.at2(row, col), 0.0, 1.0);
        const int el = static_cast<int>(std::lround(ol * par));
        const int er = static_cast<int>(std::lround(orr * par));
        const int cl = ((col + el) % w + w) % w;
        const int cr = ((col + er) % w + w) % w;
        for (int ch = 0; ch < 3; ++ch) {
          const double a = gl * clean.at3(ch, row, cl);
          const double b = gr * clean.at3(ch, row, cr);
          const double m = a + t * (b - a);
          out.at3(ch, row, col) = static_cast<float>(clampd(m, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

TensorF make_bev(const SceneSpec& spec, int hb, int wb, int k, double extent) {
  if (k < kNumClasses) throw std::invalid_argument("make_bev: need at least 5 channels");
  TensorF bev({k, hb, wb}, 0.0f);
  const double ya = kTau * static_cast<double>(spec.yaw_steps) /
                    static_cast<double>(spec.yaw_denom);
  const double cy = std::cos(ya), sy = std::sin(ya);
  for (int iy = 0; iy < hb; ++iy)
    for (int ix = 0; ix < wb; ++ix) {
      const double xe = (ix + 0.5) * (2.0 * extent / wb) - extent;
      const double ye = (iy + 0.5) * (2.0 * extent / hb) - extent;
      const double x = xe * cy - ye * sy;
      const double y = xe * sy + ye * cy;
      SemClass cls = SemClass::terrain;
      for (const Obstacle& ob : spec.obstacles) {
        if (std::abs(x - ob.x) <= ob.half_w && std::abs(y - ob.y) <= ob.half_d) {
          cls = ob.cls;
          if (cls == SemClass::vehicle) break;  // vehicles win over buildings
        }
      }
      if (cls == SemClass::terrain && spec.road.half_width > 0.0) {
        const RoadFrame f = road_frame(spec.road, x, y);
        if (std::abs(f.n) <= spec.road.half_width)
          cls = SemClass::drivable;
        else if (spec.road.sidewalk_width > 0.0 &&
                 std::abs(f.n) <= spec.road.half_width + spec.road.sidewalk_width)
          cls = SemClass::sidewalk;
      }
      bev.at3(static_cast<int>(cls), iy, ix) = 1.0f;
    }
  return bev;
}

std::vector<int> prompt_tokens(const SceneSpec& spec) {
  const SceneAttributes& a = spec.attrs;
  const int vals[kPromptLen] = {a.time_of_day, a.weather, a.density, a.curve,
                                a.width,       a.vehicles, a.style,  a.rise};
  std::vector<int> ids(kPromptLen);
  for (int i = 0; i < kPromptLen; ++i) {
    if (vals[i] < 0 || vals[i] > 3)
      throw std::invalid_argument("prompt_tokens: attribute out of range");
    ids[static_cast<size_t>(i)] = 4 * i + vals[i];
  }
  return ids;
}

Sample make_sample(uint64_t dataset_seed, int index, const WorldConfig& cfg) {
  Sample s;
  s.id = index;
  s.spec = make_scene(mix_seed(dataset_seed, static_cast<uint64_t>(index)), cfg.w,
                      cfg.bev_extent);
  RenderOut r = render_equirect(s.spec, cfg.h, cfg.w);
  s.clean = std::move(r.rgb);
  s.depth = std::move(r.inv_depth);
  s.partition = RegionPartition::six_view(cfg.w, cfg.seam_width);
  const StitchErr err = draw_stitch_err(
      mix_seed(dataset_seed, 0xa11ce ^ (static_cast<uint64_t>(index) << 1)), cfg.err_px,
      cfg.gain_jitter);
  s.stitched = simulate_stitch(s.clean, s.depth, s.partition, err);
  s.mask = TensorF({cfg.h, cfg.w}, 0.0f);
  for (int col = 0; col < cfg.w; ++col)
    if (s.partition.in_aliased(col))
      for (int row = 0; row < cfg.h; ++row) s.mask.at2(row, col) = 1.0f;
  s.bev = make_bev(s.spec, cfg.bev_hw, cfg.bev_hw, cfg.k, cfg.bev_extent);
  s.prompt = prompt_tokens(s.spec);
  const int m = index % 10;
  s.split = (m == 8) ? "val" : (m == 9) ? "test" : "train";
  return s;
}

namespace {

json partition_json(const RegionPartition& p) {
  json j;
  j["width"] = p.width;
  json co = json::array(), al = json::array();
  for (int i = 0; i < 6; ++i) {
    co.push_back({p.coherent[static_cast<size_t>(i)].start,
                  p.coherent[static_cast<size_t>(i)].len});
    al.push_back({p.aliased[static_cast<size_t>(i)].start,
                  p.aliased[static_cast<size_t>(i)].len});
  }
  j["coherent"] = co;
  j["aliased"] = al;
  return j;
}

RegionPartition partition_from_json(const json& j) {
  RegionPartition p;
  p.width = j.at("width").get<int>();
  for (size_t i = 0; i < 6; ++i) {
    p.coherent[i] = {j.at("coherent")[i][0].get<int>(), j.at("coherent")[i][1].get<int>()};
    p.aliased[i] = {j.at("aliased")[i][0].get<int>(), j.at("aliased")[i][1].get<int>()};
  }
  p.validate();
  return p;
}

json spec_json(const SceneSpec& s) {
  json j;
  j["seed"] = s.seed;
  j["yaw_steps"] = s.yaw_steps;
  j["yaw_denom"] = s.yaw_denom;
  j["curvature"] = s.road.curvature;
  j["half_width"] = s.road.half_width;
  j["sidewalk_width"] = s.road.sidewalk_width;
  j["attrs"] = {s.attrs.time_of_day, s.attrs.weather, s.attrs.density, s.attrs.curve,
                s.attrs.width,       s.attrs.vehicles, s.attrs.style,  s.attrs.rise};
  json obs = json::array();
  for (const Obstacle& o : s.obstacles)
    obs.push_back({static_cast<int>(o.cls), o.x, o.y, o.half_w, o.half_d, o.height, o.id});
  j["obstacles"] = obs;
  return j;
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  s.seed = j.at("seed").get<uint64_t>();
  s.yaw_steps = j.at("yaw_steps").get<int>();
  s.yaw_denom = j.at("yaw_denom").get<int>();
  s.road.curvature = j.at("curvature").get<double>();
  s.road.half_width = j.at("half_width").get<double>();
  s.road.sidewalk_width = j.at("sidewalk_width").get<double>();
  const auto& a = j.at("attrs");
  s.attrs = {a[0].get<int>(), a[1].get<int>(), a[2].get<int>(), a[3].get<int>(),
             a[4].get<int>(), a[5].get<int>(), a[6].get<int>(), a[7].get<int>()};
  for (const auto& o : j.at("obstacles"))
    s.obstacles.push_back({static_cast<SemClass>(o[0].get<int>()), o[1].get<double>(),
                           o[2].get<double>(), o[3].get<double>(), o[4].get<double>(),
                           o[5].get<double>(), o[6].get<int>()});
  return s;
}

std::string sample_dirname(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "samples/%04d", id);
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir, uint64_t seed, int n, const WorldConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/samples");
  json manifest;
  manifest["format"] = 1;
  manifest["seed"] = seed;
  manifest["n"] = n;
  manifest["h"] = cfg.h;
  manifest["w"] = cfg.w;
  manifest["bev_hw"] = cfg.bev_hw;
  manifest["k"] = cfg.k;
  manifest["seam_width"] = cfg.seam_width;
  manifest["err_px"] = cfg.err_px;
  manifest["gain_jitter"] = cfg.gain_jitter;
  manifest["bev_extent"] = cfg.bev_extent;
  json samples = json::array();
  for (int i = 0; i < n; ++i) {
    Sample s = make_sample(seed, i, cfg);
    const std::string sub = sample_dirname(i);
    fs::create_directories(dir + "/" + sub);
    write_pt36(dir + "/" + sub + "/clean.pt36", s.clean);
    write_pt36(dir + "/" + sub + "/stitched.pt36", s.stitched);
    write_pt36(dir + "/" + sub + "/depth.pt36", s.depth);
    write_pt36(dir + "/" + sub + "/mask.pt36", s.mask);
    write_pt36(dir + "/" + sub + "/bev.pt36", s.bev);
    TensorF prompt({kPromptLen});
    for (int t = 0; t < kPromptLen; ++t)
      prompt[t] = static_cast<float>(s.prompt[static_cast<size_t>(t)]);
    write_pt36(dir + "/" + sub + "/prompt.pt36", prompt);
    json e;
    e["id"] = i;
    e["dir"] = sub;
    e["split"] = s.split;
    e["scene"] = spec_json(s.spec);
    e["prompt"] = s.prompt;
    e["partition"] = partition_json(s.partition);
    samples.push_back(e);
  }
  manifest["samples"] = samples;
  std::ofstream f(dir + "/manifest.json", std::ios::trunc);
  if (!f) throw std::runtime_error("write_dataset: cannot open " + dir + "/manifest.json");
  f << manifest.dump(1) << "\n";
}

DatasetIndex read_dataset(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("read_dataset: no manifest.json under " + dir);
  json manifest;
  try {
    f >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error("read_dataset: malformed manifest in " + dir + ": " + e.what());
  }
  DatasetIndex idx;
  idx.dir = dir;
  idx.seed = manifest.at("seed").get<uint64_t>();
  idx.cfg.h = manifest.at("h");
  idx.cfg.w = manifest.at("w");
  idx.cfg.bev_hw = manifest.at("bev_hw");
  idx.cfg.k = manifest.at("k");
  idx.cfg.seam_width = manifest.at("seam_width");
  idx.cfg.err_px = manifest.at("err_px");
  idx.cfg.gain_jitter = manifest.at("gain_jitter");
  idx.cfg.bev_extent = manifest.at("bev_extent");
  for (const auto& e : manifest.at("samples")) {
    DatasetIndex::Entry ent;
    ent.id = e.at("id");
    ent.subdir = e.at("dir");
    ent.split = e.at("split");
    ent.spec = spec_from_json(e.at("scene"));
    ent.prompt = e.at("prompt").get<std::vector<int>>();
    ent.partition = partition_from_json(e.at("partition"));
    idx.entries.push_back(std::move(ent));
  }
  return idx;
}

Sample DatasetIndex::load(int i) const {
  const Entry& e = entries.at(static_cast<size_t>(i));
  Sample s;
  s.id = e.id;
  s.spec = e.spec;
  s.split = e.split;
  s.prompt = e.prompt;
  s.partition = e.partition;
  const std::string base = dir + "/" + e.subdir + "/";
  s.clean = read_pt36(base + "clean.pt36");
  s.stitched = read_pt36(base + "stitched.pt36");
  s.depth = read_pt36(base + "depth.pt36");
  s.mask = read_pt36(base + "mask.pt36");
  s.bev = read_pt36(base + "bev.pt36");
  return s;
}

std::vector<int> DatasetIndex::split_ids(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace pano
