#include "pano/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace pano {

namespace {

void validate_cfg(const DenoiserConfig& cfg) {
  if (cfg.levels < 2) throw std::invalid_argument("denoiser: levels must be >= 2");
  if (cfg.base < 1 || cfg.cz < 1) throw std::invalid_argument("denoiser: bad channel config");
  if (cfg.temb_dim < 4 || cfg.temb_dim % 2 != 0)
    throw std::invalid_argument("denoiser: temb_dim must be even and >= 4");
}

void register_res_block(ParamRegistry& reg, const std::string& prefix, int c, int temb_dim,
                        Rng& rng) {
  reg.add(prefix + ".g1", init_ones({c}));
  reg.add(prefix + ".b1", init_zeros({c}));
  reg.add(prefix + ".c1.w", init_conv(c, c, 3, 3, rng));
  if (temb_dim > 0) {
    reg.add(prefix + ".temb.w", init_linear(c, temb_dim, rng));
    reg.add(prefix + ".temb.b", init_zeros({c}));
  }
  reg.add(prefix + ".g2", init_ones({c}));
  reg.add(prefix + ".b2", init_zeros({c}));
  reg.add(prefix + ".c2.w", init_conv(c, c, 3, 3, rng));
}

// gn -> silu -> conv -> (+temb bias) -> gn -> silu -> conv -> +residual.
// Interior convs carry no bias: a per-channel constant is absorbed by the
// next normalization (or by the temb projection bias), and a parameter the
// network cannot use would trip the dead-parameter scan.
Val res_block(Tape<float>& t, GraphParams& p, const std::string& prefix, Val x, Val temb,
              int c) {
  Val h = t.group_norm(x, gn_groups(c), p(prefix + ".g1"), p(prefix + ".b1"));
  h = t.silu(h);
  h = t.conv2d_circular(h, p(prefix + ".c1.w"), 1);
  if (temb.id >= 0) {
    Val tb = t.linear(temb, p(prefix + ".temb.w"), p(prefix + ".temb.b"));  // [1,c]
    h = t.add_bias_bc(h, tb);
  }
  h = t.group_norm(h, gn_groups(c), p(prefix + ".g2"), p(prefix + ".b2"));
  h = t.silu(h);
  h = t.conv2d_circular(h, p(prefix + ".c2.w"), 1);
  return t.add(x, h);
}

Val attend_tokens(Tape<float>& t, GraphParams& p, const std::string& prefix, Val x, int h,
                  int w, int c, const GuidanceVals& g, Val pd, Val pm) {
  PpmSite site = PpmSite::attach(*p.reg, prefix, c, t.val(g.txt).dims[1]);
  Val tok = t.to_tokens(x);  // [h*w, c]
  tok = ppm_attend(t, p, site, tok, g.txt, pd, pm);
  return t.from_tokens(tok, h, w);
}

}  // namespace

void register_denoiser(ParamRegistry& reg, const DenoiserConfig& cfg, uint64_t seed) {
  validate_cfg(cfg);
  Rng rng(mix_seed(seed, 0xd31full));
  const int top = cfg.levels - 1;

  reg.add("den.in.w", init_conv(cfg.base, cfg.cz, 3, 3, rng));
  reg.add("den.temb.w1", init_linear(cfg.temb_dim, cfg.temb_dim, rng));
  reg.add("den.temb.b1", init_zeros({cfg.temb_dim}));
  reg.add("den.temb.w2", init_linear(cfg.temb_dim, cfg.temb_dim, rng));
  reg.add("den.temb.b2", init_zeros({cfg.temb_dim}));

  for (int i = 0; i < top; ++i) {
    const int c = cfg.width_at(i);
    register_res_block(reg, "den.enc" + std::to_string(i) + ".rb", c, cfg.temb_dim, rng);
    reg.add("den.enc" + std::to_string(i) + ".down.w", init_conv(2 * c, c, 3, 3, rng));
  }
  register_res_block(reg, "den.mid.rb", cfg.width_at(top), cfg.temb_dim, rng);
  PpmSite::create(reg, "den.mid.ppm", cfg.width_at(top), cfg.d_txt, rng.next_u64());
  for (int i = top - 1; i >= 0; --i) {
    const int c = cfg.width_at(i);
    reg.add("den.dec" + std::to_string(i) + ".up.w", init_conv(c, 2 * c, 3, 3, rng));
    register_res_block(reg, "den.dec" + std::to_string(i) + ".rb", c, cfg.temb_dim, rng);
    if (i == top - 1) PpmSite::create(reg, "den.dec" + std::to_string(i) + ".ppm", c, cfg.d_txt, rng.next_u64());
  }
  reg.add("den.head.g", init_ones({cfg.base}));
  reg.add("den.head.b", init_zeros({cfg.base}));
  // small-random head instead of exact zero: a zero head would zero every
  // upstream gradient on the very first optimizer step
  reg.add("den.head.w", init_conv(cfg.cz, cfg.base, 3, 3, rng, 1e-4));
  reg.add("den.head.bias", init_zeros({cfg.cz}));

  reg.add("ctl.in.w", init_conv(cfg.base, cfg.ctrl_in_channels(), 3, 3, rng));
  for (int i = 0; i < top; ++i) {
    const int c = cfg.width_at(i);
    register_res_block(reg, "ctl.enc" + std::to_string(i) + ".rb", c, 0, rng);
    reg.add("ctl.inj" + std::to_string(i) + ".w",
            cfg.zero_init_injections ? init_zeros({c, c, 1, 1}) : init_conv(c, c, 1, 1, rng, 0.05));
    reg.add("ctl.enc" + std::to_string(i) + ".down.w", init_conv(2 * c, c, 3, 3, rng));
  }
  register_res_block(reg, "ctl.mid.rb", cfg.width_at(top), 0, rng);
  const int cm = cfg.width_at(top);
  reg.add("ctl.injmid.w",
          cfg.zero_init_injections ? init_zeros({cm, cm, 1, 1}) : init_conv(cm, cm, 1, 1, rng, 0.05));

  BevEncoder::register_params(reg, rng.next_u64(), cfg.bev_k, cfg.cb);
  PromptEncoder::register_params(reg, rng.next_u64(), kPromptVocab, cfg.d_txt);
}

TensorF sinusoidal_temb(const std::vector<int>& ts, int dim) {
  if (dim < 4 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_temb: dim must be even and >= 4");
  const int half = dim / 2;
  TensorF out({(int)ts.size(), dim});
  for (size_t b = 0; b < ts.size(); ++b)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / (half - 1));
      const double arg = ts[b] * freq;
      out.at2((int)b, i) = (float)std::sin(arg);
      out.at2((int)b, half + i) = (float)std::cos(arg);
    }
  return out;
}

TensorF pool_map_tokens(const TensorF& map, int th, int tw) {
  if (map.dims.size() != 2)
    throw std::invalid_argument("pool_map_tokens: expected a rank-2 map, got " +
                                shape_str(map.dims));
  const int h = map.dims[0], w = map.dims[1];
  if (th < 1 || tw < 1 || h % th != 0 || w % tw != 0)
    throw std::invalid_argument("pool_map_tokens: " + shape_str(map.dims) +
                                " does not tile a " + std::to_string(th) + "x" +
                                std::to_string(tw) + " token grid");
  const int fh = h / th, fw = w / tw;
  TensorF out({th * tw});
  for (int ty = 0; ty < th; ++ty)
    for (int tx = 0; tx < tw; ++tx) {
      double acc = 0;
      for (int dy = 0; dy < fh; ++dy)
        for (int dx = 0; dx < fw; ++dx) acc += map.at2(ty * fh + dy, tx * fw + dx);
      out[ty * tw + tx] = (float)(acc / (fh * fw));
    }
  return out;
}

GuidancePack make_guidance(const Sample& s, AutoEncoder& ae, const WorldConfig& cfg) {
  GuidancePack g;
  TensorF clean = s.clean;
  clean.dims = {1, 3, cfg.h, cfg.w};
  TensorF depth = s.depth;
  depth.dims = {1, 1, cfg.h, cfg.w};
  TensorF mask = s.mask;
  mask.dims = {1, 1, cfg.h, cfg.w};
  g.f_img = ae.encode_2d(clean);
  g.f_depth = ae.encode_2d(depth);
  g.f_mask = ae.encode_2d(mask);
  g.polar_bev = bev_to_polar(s.bev, BevEncoder::kRadialBins, BevEncoder::kAzimuthBins,
                             cfg.bev_extent);
  g.prompt = s.prompt;
  g.ppm_depth = s.depth;
  g.ppm_mask = s.mask;
  return g;
}

GuidanceVals bind_guidance(Tape<float>& t, GraphParams& p, const DenoiserConfig& cfg,
                           const GuidancePack& g, int h, int w) {
  validate_cfg(cfg);
  const std::vector<int> want = {1, cfg.cz, h, w};
  if (g.f_depth.dims != want || g.f_mask.dims != want)
    throw std::invalid_argument("guidance: depth/mask latents must be " + shape_str(want) +
                                ", got " + shape_str(g.f_depth.dims) + " and " +
                                shape_str(g.f_mask.dims));
  if (g.polar_bev.dims != std::vector<int>{cfg.bev_k, BevEncoder::kRadialBins,
                                           BevEncoder::kAzimuthBins})
    throw std::invalid_argument("guidance: polar bev must be [" + std::to_string(cfg.bev_k) +
                                "," + std::to_string(BevEncoder::kRadialBins) + "," +
                                std::to_string(BevEncoder::kAzimuthBins) + "], got " +
                                shape_str(g.polar_bev.dims));
  if (g.prompt.empty()) throw std::invalid_argument("guidance: prompt token list is empty");
  if (g.ppm_depth.dims.size() != 2 || g.ppm_mask.dims.size() != 2)
    throw std::invalid_argument("guidance: raw bias maps must be rank-2");

  GuidanceVals gv;
  gv.f_depth = t.leaf(g.f_depth);
  gv.f_mask = t.leaf(g.f_mask);
  TensorF polar = g.polar_bev;
  polar.dims = {1, cfg.bev_k, BevEncoder::kRadialBins, BevEncoder::kAzimuthBins};
  gv.f_bev = BevEncoder::encode_g(t, p, t.leaf(polar), h, w);
  gv.txt = PromptEncoder::encode_g(t, p, g.prompt);
  const int top = cfg.levels - 1;
  const int hm = h >> top, wm = w >> top;
  const int hd = h >> (top - 1), wd = w >> (top - 1);
  gv.pd_mid = t.leaf(pool_map_tokens(g.ppm_depth, hm, wm));
  gv.pm_mid = t.leaf(pool_map_tokens(g.ppm_mask, hm, wm));
  gv.pd_dec = t.leaf(pool_map_tokens(g.ppm_depth, hd, wd));
  gv.pm_dec = t.leaf(pool_map_tokens(g.ppm_mask, hd, wd));
  return gv;
}

Val predict_noise_g(Tape<float>& t, GraphParams& p, const DenoiserConfig& cfg, Val z_t,
                    Val temb, const GuidanceVals& g) {
  validate_cfg(cfg);
  const auto& zd = t.val(z_t).dims;
  if (zd.size() != 4 || zd[0] != 1 || zd[1] != cfg.cz)
    throw std::invalid_argument("denoiser: z_t must be [1," + std::to_string(cfg.cz) +
                                ",h,w], got " + shape_str(zd));
  const int h = zd[2], w = zd[3], top = cfg.levels - 1;
  if (h % (1 << top) != 0 || w % (1 << top) != 0)
    throw std::invalid_argument("denoiser: latent grid " + shape_str(zd) +
                                " not divisible by " + std::to_string(1 << top));
  const auto& td = t.val(temb).dims;
  if (td != std::vector<int>{1, cfg.temb_dim})
    throw std::invalid_argument("denoiser: temb must be [1," + std::to_string(cfg.temb_dim) +
                                "], got " + shape_str(td));
  if (t.val(g.f_depth).dims != zd)
    throw std::invalid_argument("denoiser: guidance grid " + shape_str(t.val(g.f_depth).dims) +
                                " does not match z_t grid " + shape_str(zd));

  Val emb = t.linear(temb, p("den.temb.w1"), p("den.temb.b1"));
  emb = t.silu(emb);
  emb = t.linear(emb, p("den.temb.w2"), p("den.temb.b2"));

  Val x = t.conv2d_circular(z_t, p("den.in.w"), 1);
  std::vector<Val> skips(top);
  for (int i = 0; i < top; ++i) {
    x = res_block(t, p, "den.enc" + std::to_string(i) + ".rb", x, emb, cfg.width_at(i));
    skips[i] = x;
    x = t.conv2d_circular(x, p("den.enc" + std::to_string(i) + ".down.w"), 2);
  }

  Val cx = t.concat({g.f_depth, g.f_mask, g.f_bev}, 1);
  cx = t.conv2d_circular(cx, p("ctl.in.w"), 1);
  std::vector<Val> inj(top);
  for (int i = 0; i < top; ++i) {
    cx = res_block(t, p, "ctl.enc" + std::to_string(i) + ".rb", cx, Val{}, cfg.width_at(i));
    inj[i] = t.conv2d_circular(cx, p("ctl.inj" + std::to_string(i) + ".w"), 1);
    cx = t.conv2d_circular(cx, p("ctl.enc" + std::to_string(i) + ".down.w"), 2);
  }
  cx = res_block(t, p, "ctl.mid.rb", cx, Val{}, cfg.width_at(top));
  Val injmid = t.conv2d_circular(cx, p("ctl.injmid.w"), 1);

  x = res_block(t, p, "den.mid.rb", x, emb, cfg.width_at(top));
  x = t.add(x, injmid);
  x = attend_tokens(t, p, "den.mid.ppm", x, h >> top, w >> top, cfg.width_at(top), g, g.pd_mid,
                    g.pm_mid);

  for (int i = top - 1; i >= 0; --i) {
    const int c = cfg.width_at(i);
    x = t.conv2d_circular_transposed(x, p("den.dec" + std::to_string(i) + ".up.w"), 2);
    x = t.add(x, t.add(skips[i], inj[i]));
    x = res_block(t, p, "den.dec" + std::to_string(i) + ".rb", x, emb, c);
    if (i == top - 1)
      x = attend_tokens(t, p, "den.dec" + std::to_string(i) + ".ppm", x, h >> i, w >> i, c, g,
                        g.pd_dec, g.pm_dec);
  }

  x = t.group_norm(x, gn_groups(cfg.base), p("den.head.g"), p("den.head.b"));
  x = t.silu(x);
  x = t.conv2d_circular(x, p("den.head.w"), 1);
  return t.add_bias_c(x, p("den.head.bias"));
}

TensorF predict_noise(ParamRegistry& reg, const DenoiserConfig& cfg, const TensorF& z_t, int t,
                      const GuidancePack& g) {
  if (t < 0) throw std::invalid_argument("denoiser: negative timestep");
  Tape<float> tape;
  GraphParams p(tape, reg);
  if (z_t.dims.size() != 4)
    throw std::invalid_argument("denoiser: z_t must be rank-4, got " + shape_str(z_t.dims));
  GuidanceVals gv = bind_guidance(tape, p, cfg, g, z_t.dims[2], z_t.dims[3]);
  Val temb = tape.leaf(sinusoidal_temb({t}, cfg.temb_dim));
  Val out = predict_noise_g(tape, p, cfg, tape.leaf(z_t), temb, gv);
  return tape.val(out);
}

}  // namespace pano
