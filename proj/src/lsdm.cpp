#include "pano/lsdm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include "pano/model.hpp"

namespace pano {

LsdmMode parse_lsdm_mode(const std::string& name) {
  if (name == "baseline") return LsdmMode::baseline;
  if (name == "mask") return LsdmMode::mask;
  if (name == "rota") return LsdmMode::rota;
  if (name == "lsdm") return LsdmMode::lsdm;
  throw std::invalid_argument("unknown mode: " + name);
}

std::string lsdm_mode_name(LsdmMode m) {
  switch (m) {
    case LsdmMode::baseline: return "baseline";
    case LsdmMode::mask: return "mask";
    case LsdmMode::rota: return "rota";
    case LsdmMode::lsdm: return "lsdm";
  }
  throw std::invalid_argument("bad mode enum");
}

TensorF rotate_bev(const TensorF& bev, double theta) {
  if (bev.dims.size() != 3) throw std::invalid_argument("rotate_bev wants [K,H,W]");
  const int kc = bev.dims[0], h = bev.dims[1], w = bev.dims[2];
  if (h != w) throw std::invalid_argument("rotate_bev wants a square grid");

  double th = std::fmod(theta, kTau);
  if (th < 0) th += kTau;
  double c = std::cos(th), s = std::sin(th);
  // cardinal angles must come out exact, not within float slop of exact
  if (std::fabs(s) < 1e-9) { s = 0.0; c = (c > 0) ? 1.0 : -1.0; }
  if (std::fabs(c) < 1e-9) { c = 0.0; s = (s > 0) ? 1.0 : -1.0; }

  TensorF out(bev.dims);
  const double half = w / 2.0;
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      // cell centers in world cell units, origin at grid center
      const double qx = ix + 0.5 - half;
      const double qy = iy + 0.5 - half;
      // the output cell shows the world point that sat at azimuth +theta
      // relative to it before the turn
      const double sx = qx * c - qy * s;
      const double sy = qx * s + qy * c;
      double gx = sx + half - 0.5;
      double gy = sy + half - 0.5;
      int x0 = static_cast<int>(std::floor(gx));
      int y0 = static_cast<int>(std::floor(gy));
      double tx = gx - x0, ty = gy - y0;
      if (tx > 1.0 - 1e-9) { x0 += 1; tx = 0.0; }
      if (tx < 1e-9) tx = 0.0;
      if (ty > 1.0 - 1e-9) { y0 += 1; ty = 0.0; }
      if (ty < 1e-9) ty = 0.0;
      for (int k = 0; k < kc; ++k) {
        auto at = [&](int yy, int xx) -> double {
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0;
          return bev.data[(static_cast<size_t>(k) * h + yy) * w + xx];
        };
        const double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                         ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
        out.data[(static_cast<size_t>(k) * h + iy) * w + ix] = static_cast<float>(v);
      }
    }
  }
  return out;
}

CachedGuidance make_cached(const Sample& s, AutoEncoder& ae, const WorldConfig& wc) {
  CachedGuidance c;
  c.g = make_guidance(s, ae, wc);
  TensorF x = s.stitched;
  x.dims = {1, 3, s.stitched.dims[1], s.stitched.dims[2]};
  c.z0 = ae.encode_2d(x);
  c.bev = s.bev;
  c.partition = s.partition;
  c.bev_extent = wc.bev_extent;
  return c;
}

namespace {

int latent_width(const GuidancePack& g) {
  if (g.f_depth.dims.size() != 4) throw std::invalid_argument("guidance lacks depth latents");
  return g.f_depth.dims[3];
}

// Rolls every latent-resolution tensor by j columns and every pixel-resolution
// map by the matching pixel displacement. The prompt never moves. polar_bev is
// rolled only when asked; rota replaces it with a re-encoded raster instead.
GuidancePack roll_pack(const GuidancePack& g, int j, bool with_polar) {
  const int lw = latent_width(g);
  GuidancePack r = g;
  if (j == 0) return r;
  if (g.f_img.numel() > 0) r.f_img = roll_w(g.f_img, j);
  r.f_depth = roll_w(g.f_depth, j);
  r.f_mask = roll_w(g.f_mask, j);
  const int map_w = g.ppm_depth.dims.back();
  if (map_w % lw != 0) throw std::invalid_argument("map width not divisible by latent width");
  r.ppm_depth = roll_w(g.ppm_depth, j * (map_w / lw));
  r.ppm_mask = roll_w(g.ppm_mask, j * (map_w / lw));
  if (with_polar) {
    const int aw = g.polar_bev.dims.back();
    if (aw % lw != 0) throw std::invalid_argument("polar width not divisible by latent width");
    r.polar_bev = roll_w(g.polar_bev, j * (aw / lw));
  }
  return r;
}

RolledSample roll_pixels(const Sample& s, const GuidancePack& g, double theta) {
  const int lw = latent_width(g);
  const int w = s.clean.dims.back();
  if (w % lw != 0) throw std::invalid_argument("pano width not divisible by latent width");
  const RollAngle q = quantize_angle(theta, lw);
  RolledSample r;
  r.dw_lat = angle_to_displacement(q, lw);
  r.dw_px = r.dw_lat * (w / lw);
  r.clean = roll_w(s.clean, r.dw_px);
  r.stitched = roll_w(s.stitched, r.dw_px);
  r.depth = roll_w(s.depth, r.dw_px);
  r.mask = roll_w(s.mask, r.dw_px);
  r.partition = roll_partition(s.partition, r.dw_px);
  return r;
}

}  // namespace

RolledSample apply_lsdm(const Sample& s, const GuidancePack& g, double theta) {
  RolledSample r = roll_pixels(s, g, theta);
  r.g = roll_pack(g, r.dw_lat, true);
  return r;
}

RolledSample apply_rota(const Sample& s, const GuidancePack& g, double theta,
                        const WorldConfig& wc) {
  RolledSample r = roll_pixels(s, g, theta);
  r.g = roll_pack(g, r.dw_lat, false);
  const int lw = latent_width(g);
  const double snapped = r.dw_lat * kTau / lw;
  r.g.polar_bev = bev_to_polar(rotate_bev(s.bev, snapped), BevEncoder::kRadialBins,
                               BevEncoder::kAzimuthBins, wc.bev_extent);
  return r;
}

TensorF latent_loss_weights(const RegionPartition& p, LsdmMode mode, int cz, int h, int w) {
  TensorF wts({1, cz, h, w});
  std::fill(wts.data.begin(), wts.data.end(), 1.0f);
  if (mode != LsdmMode::mask) return wts;
  if (p.width % w != 0) throw std::invalid_argument("partition width not divisible by latent width");
  const int factor = p.width / w;
  for (int v = 0; v < w; ++v) {
    bool aliased = false;
    for (int u = v * factor; u < (v + 1) * factor && !aliased; ++u)
      aliased = p.in_aliased(u);
    if (!aliased) continue;
    for (int ch = 0; ch < cz; ++ch)
      for (int row = 0; row < h; ++row)
        wts.data[(static_cast<size_t>(ch) * h + row) * w + v] = 0.0f;
  }
  return wts;
}

TrainExample lsdm_transform(const CachedGuidance& c, const LsdmConfig& cfg, int j) {
  const int lw = latent_width(c.g);
  TrainExample ex;
  const bool rolls = cfg.mode == LsdmMode::rota || cfg.mode == LsdmMode::lsdm;
  const int jj = rolls ? ((j % lw) + lw) % lw : 0;
  ex.dw_lat = jj;
  if (jj == 0) {
    ex.g = c.g;
    ex.z0 = c.z0;
    ex.partition = c.partition;
  } else {
    ex.g = roll_pack(c.g, jj, cfg.mode == LsdmMode::lsdm);
    if (cfg.mode == LsdmMode::rota) {
      const double theta = jj * kTau / lw;
      ex.g.polar_bev = bev_to_polar(rotate_bev(c.bev, theta), BevEncoder::kRadialBins,
                                    BevEncoder::kAzimuthBins, c.bev_extent);
    }
    ex.z0 = roll_w(c.z0, jj);
    ex.partition = roll_partition(c.partition, jj * (c.partition.width / lw));
  }
  ex.weights = latent_loss_weights(ex.partition, cfg.mode, c.z0.dims[1], c.z0.dims[2],
                                   c.z0.dims[3]);
  return ex;
}

Val training_loss_g(Tape<float>& t, GraphParams& p, const DenoiserConfig& cfg,
                    const NoiseSchedule& sched, const TrainExample& ex, int timestep,
                    const TensorF& eps) {
  if (eps.dims != ex.z0.dims) throw std::invalid_argument("eps shape must match z0");
  const int h = ex.z0.dims[2], w = ex.z0.dims[3];
  TensorF zt = forward_noise(ex.z0, timestep, eps, sched);
  GuidanceVals gv = bind_guidance(t, p, cfg, ex.g, h, w);
  Val temb = t.leaf(sinusoidal_temb({timestep}, cfg.temb_dim), "temb");
  Val pred = predict_noise_g(t, p, cfg, t.leaf(std::move(zt), "z_t"), temb, gv);
  return t.weighted_mse(pred, t.leaf(eps, "eps"), ex.weights);
}

// Draw order per example: rotation j (only modes that roll), timestep, noise.
// train_diffusion uses the same order after drawing the dataset index.
double training_loss(ParamRegistry& reg, const DenoiserConfig& cfg, const NoiseSchedule& sched,
                     const LsdmConfig& mode, const CachedGuidance& c, Rng& rng) {
  const int lw = latent_width(c.g);
  const bool rolls = mode.mode == LsdmMode::rota || mode.mode == LsdmMode::lsdm;
  const int j = rolls ? rng.uniform_int(0, lw - 1) : 0;
  const int timestep = rng.uniform_int(0, sched.T - 1);
  TrainExample ex = lsdm_transform(c, mode, j);
  TensorF eps = randn<float>(ex.z0.dims, rng);
  Tape<float> t;
  GraphParams p(t, reg);
  Val loss = training_loss_g(t, p, cfg, sched, ex, timestep, eps);
  return t.val(loss)[0];
}

TrainReport train_diffusion(ParamRegistry& reg, const DenoiserConfig& cfg, AutoEncoder& ae,
                            const DatasetIndex& ds, const NoiseSchedule& sched,
                            const LsdmConfig& mode, const TrainConfig& tc, std::ostream* log) {
  sched.validate();
  if (tc.steps < 1 || tc.batch < 1) throw std::invalid_argument("bad train config");
  const std::vector<int> ids = ds.split_ids("train");
  if (ids.empty()) throw std::invalid_argument("train split is empty");

  Adam opt;
  opt.lr = tc.lr;
  opt.init(reg);

  // encoders run once per sample; every rotation afterwards is a roll
  std::map<int, CachedGuidance> cache;
  const bool rolls = mode.mode == LsdmMode::rota || mode.mode == LsdmMode::lsdm;

  TrainReport rep;
  std::vector<double> losses;
  losses.reserve(tc.steps);
  const uint64_t run_salt = mix_seed(tc.seed, 0x51e9ull);
  for (int step = 0; step < tc.steps; ++step) {
    Rng rng(mix_seed(run_salt, static_cast<uint64_t>(step)));
    Tape<float> t;
    GraphParams p(t, reg);
    Val total;
    for (int b = 0; b < tc.batch; ++b) {
      const int idx = ids[rng.uniform_int(0, static_cast<int>(ids.size()) - 1)];
      auto it = cache.find(idx);
      if (it == cache.end()) {
        Sample s = ds.load(idx);
        it = cache.emplace(idx, make_cached(s, ae, ds.cfg)).first;
      }
      const CachedGuidance& c = it->second;
      const int lw = latent_width(c.g);
      const int j = rolls ? rng.uniform_int(0, lw - 1) : 0;
      const int timestep = rng.uniform_int(0, sched.T - 1);
      TrainExample ex = lsdm_transform(c, mode, j);
      TensorF eps = randn<float>(ex.z0.dims, rng);
      Val item = training_loss_g(t, p, cfg, sched, ex, timestep, eps);
      total = (b == 0) ? item : t.add(total, item);
    }
    Val loss = t.scale(total, 1.0 / tc.batch);
    t.backward(loss);
    const double lv = t.val(loss)[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("diffusion training diverged at step " + std::to_string(step));
    losses.push_back(lv);
    opt.step(reg, p.collect_grads());
    if (log && (step % tc.log_every == 0 || step + 1 == tc.steps))
      (*log) << "diff step " << step << " loss " << lv << " mode " << lsdm_mode_name(mode.mode)
             << "\n";
  }

  rep.steps = tc.steps;
  rep.final_loss = losses.back();
  const size_t tail = std::min<size_t>(100, losses.size());
  double acc = 0;
  for (size_t i = losses.size() - tail; i < losses.size(); ++i) acc += losses[i];
  rep.tail_mean_loss = acc / static_cast<double>(tail);
  return rep;
}

}  // namespace pano
