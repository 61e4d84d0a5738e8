#include "pano/encoders.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include "pano/pano_ops.hpp"

namespace pano {

namespace {

// replicate single-channel input to 3 channels so depth/mask share the image
// encoder weights
TensorF to_rgb_layout(const TensorF& x) {
  if (x.rank() != 4) throw std::invalid_argument("encode_2d: want [B,C,H,W], got " + shape_str(x.dims));
  if (x.dim(1) == 3) return x;
  if (x.dim(1) != 1)
    throw std::invalid_argument("encode_2d: channels must be 1 or 3, got " + shape_str(x.dims));
  TensorF out({x.dim(0), 3, x.dim(2), x.dim(3)});
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  for (int b = 0; b < x.dim(0); ++b)
    for (int c = 0; c < 3; ++c)
      for (int64_t i = 0; i < plane; ++i)
        out.data[(static_cast<int64_t>(b) * 3 + c) * plane + i] = x.data[b * plane + i];
  return out;
}

void check_div4(const TensorF& x) {
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
    throw std::invalid_argument("encode_2d: spatial dims must be divisible by 4, got " +
                                shape_str(x.dims));
}

}  // namespace

void AutoEncoder::init(uint64_t seed) {
  Rng rng(mix_seed(seed, 0xaeull));
  reg = ParamRegistry{};
  reg.add("ae.e1.w", init_conv(16, 3, 3, 3, rng));
  reg.add("ae.e1.g", init_ones({16}));
  reg.add("ae.e1.beta", init_zeros({16}));
  reg.add("ae.e2.w", init_conv(32, 16, 3, 3, rng));
  reg.add("ae.e2.g", init_ones({32}));
  reg.add("ae.e2.beta", init_zeros({32}));
  reg.add("ae.e3.w", init_conv(cz, 32, 3, 3, rng));
  reg.add("ae.e3.b", init_zeros({cz}));
  reg.add("ae.d1.w", init_conv(32, cz, 3, 3, rng));
  reg.add("ae.d1.g", init_ones({32}));
  reg.add("ae.d1.beta", init_zeros({32}));
  reg.add("ae.d2.w", init_conv(16, 32, 3, 3, rng));
  reg.add("ae.d2.g", init_ones({16}));
  reg.add("ae.d2.beta", init_zeros({16}));
  reg.add("ae.d3.w", init_conv(16, 16, 3, 3, rng));
  reg.add("ae.d3.g", init_ones({16}));
  reg.add("ae.d3.beta", init_zeros({16}));
  reg.add("ae.d4.w", init_conv(3, 16, 3, 3, rng, 0.5));
  reg.add("ae.d4.b", init_zeros({3}));
  reg.add("latent_scale", init_ones({1}));
}

Val AutoEncoder::encode_g(Tape<float>& t, GraphParams& p, Val x) {
  Val h = t.conv2d_circular(x, p("ae.e1.w"), 2);
  h = t.silu(t.group_norm(h, gn_groups(16), p("ae.e1.g"), p("ae.e1.beta")));
  h = t.conv2d_circular(h, p("ae.e2.w"), 2);
  h = t.silu(t.group_norm(h, gn_groups(32), p("ae.e2.g"), p("ae.e2.beta")));
  return t.add_bias_c(t.conv2d_circular(h, p("ae.e3.w"), 1), p("ae.e3.b"));
}

Val AutoEncoder::decode_g(Tape<float>& t, GraphParams& p, Val z) {
  Val h = t.conv2d_circular(z, p("ae.d1.w"), 1);
  h = t.silu(t.group_norm(h, gn_groups(32), p("ae.d1.g"), p("ae.d1.beta")));
  h = t.conv2d_circular_transposed(h, p("ae.d2.w"), 2);
  h = t.silu(t.group_norm(h, gn_groups(16), p("ae.d2.g"), p("ae.d2.beta")));
  h = t.conv2d_circular_transposed(h, p("ae.d3.w"), 2);
  h = t.silu(t.group_norm(h, gn_groups(16), p("ae.d3.g"), p("ae.d3.beta")));
  return t.add_bias_c(t.conv2d_circular(h, p("ae.d4.w"), 1), p("ae.d4.b"));
}

TensorF AutoEncoder::encode_2d(const TensorF& x) {
  TensorF rgb = to_rgb_layout(x);
  check_div4(rgb);
  Tape<float> t;
  GraphParams p(t, reg);
  Val z = encode_g(t, p, t.leaf(std::move(rgb), "x"));
  TensorF out = t.val(z);
  const float s = reg.get("latent_scale")[0];
  for (auto& v : out.data) v /= s;
  return out;
}

TensorF AutoEncoder::decode_2d(const TensorF& z) {
  if (z.rank() != 4 || z.dim(1) != cz)
    throw std::invalid_argument("decode_2d: want [B," + std::to_string(cz) + ",h,w], got " +
                                shape_str(z.dims));
  TensorF zs = z;
  const float s = reg.get("latent_scale")[0];
  for (auto& v : zs.data) v *= s;
  Tape<float> t;
  GraphParams p(t, reg);
  Val x = decode_g(t, p, t.leaf(std::move(zs), "z"));
  return t.val(x);
}

TensorF AutoEncoder::reconstruct(const TensorF& x) {
  TensorF rgb = to_rgb_layout(x);
  check_div4(rgb);
  Tape<float> t;
  GraphParams p(t, reg);
  Val z = encode_g(t, p, t.leaf(std::move(rgb), "x"));
  return t.val(decode_g(t, p, z));
}

namespace {

double mean_sq_diff(const TensorF& a, const TensorF& b) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

TensorF stack4(const std::vector<const TensorF*>& imgs) {
  const TensorF& f = *imgs[0];
  TensorF out({static_cast<int>(imgs.size()), f.dim(0), f.dim(1), f.dim(2)});
  const int64_t n = f.numel();
  for (size_t b = 0; b < imgs.size(); ++b)
    for (int64_t i = 0; i < n; ++i) out.data[static_cast<int64_t>(b) * n + i] = (*imgs[b])[i];
  return out;
}

}  // namespace

AeTrainReport train_autoencoder(AutoEncoder& ae, const DatasetIndex& ds, int steps,
                                double lr, uint64_t seed, std::ostream* log) {
  const std::vector<int> train_ids = ds.split_ids("train");
  std::vector<int> val_ids = ds.split_ids("val");
  if (train_ids.empty()) throw std::runtime_error("train_autoencoder: dataset has no train split");
  if (val_ids.empty()) val_ids = train_ids;  // tiny datasets: fall back, still reported

  std::unordered_map<int, Sample> cache;
  auto sample_at = [&](int id) -> const Sample& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, ds.load(id)).first;
    return it->second;
  };

  Rng rng(mix_seed(seed, 0x7a0e5ull));
  Adam opt;
  opt.lr = lr;
  opt.init(ae.reg);
  const int kBatch = 4;

  AeTrainReport rep;
  rep.steps = steps;
  for (int step = 0; step < steps; ++step) {
    std::vector<const TensorF*> batch;
    for (int b = 0; b < kBatch; ++b) {
      const Sample& s = sample_at(train_ids[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(train_ids.size()) - 1))]);
      batch.push_back(rng.uniform() < 0.5 ? &s.stitched : &s.clean);
    }
    Tape<float> t;
    GraphParams p(t, ae.reg);
    Val x = t.leaf(stack4(batch), "batch");
    Val recon = ae.decode_g(t, p, ae.encode_g(t, p, x));
    Val loss = t.mse(recon, x);
    if (t.has_nonfinite())
      throw std::runtime_error("train_autoencoder: non-finite value at step " +
                               std::to_string(step) + " (" + t.nonfinite_node() + ")");
    t.backward(loss);
    opt.step(ae.reg, p.collect_grads(), {"latent_scale"});
    rep.final_train_mse = t.val(loss)[0];
    if (log && (step % 50 == 0 || step + 1 == steps))
      (*log) << "ae step " << step << " mse " << rep.final_train_mse << "\n";
  }

  // holdout reconstruction error on clean panoramas
  double acc = 0;
  int n_val = 0;
  for (int id : val_ids) {
    if (n_val >= 16) break;
    const Sample& s = sample_at(id);
    TensorF x({1, 3, s.clean.dim(1), s.clean.dim(2)});
    x.data = s.clean.data;
    acc += mean_sq_diff(ae.reconstruct(x), x);
    ++n_val;
  }
  rep.holdout_mse = acc / n_val;

  // fix the latent scale so diffusion sees roughly unit-variance latents
  double sum = 0, sum2 = 0;
  int64_t n = 0;
  int used = 0;
  for (int id : train_ids) {
    if (used >= 8) break;
    const Sample& s = sample_at(id);
    TensorF x({1, 3, s.clean.dim(1), s.clean.dim(2)});
    x.data = s.clean.data;
    Tape<float> t;
    GraphParams p(t, ae.reg);
    const TensorF z = t.val(ae.encode_g(t, p, t.leaf(std::move(x), "x")));
    for (float v : z.data) {
      sum += v;
      sum2 += static_cast<double>(v) * v;
    }
    n += z.numel();
    ++used;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum2 / static_cast<double>(n) - mean * mean;
  rep.latent_scale = std::sqrt(var > 1e-12 ? var : 1e-12);
  ae.reg.get("latent_scale")[0] = static_cast<float>(rep.latent_scale);
  if (log)
    (*log) << "ae holdout mse " << rep.holdout_mse << " latent scale " << rep.latent_scale
           << "\n";
  return rep;
}

TensorF bev_to_polar(const TensorF& bev, int radial_bins, int azimuth_bins, double extent) {
  if (bev.rank() != 3) throw std::invalid_argument("bev_to_polar: want [K,Hb,Wb], got " + shape_str(bev.dims));
  if (radial_bins < 1 || azimuth_bins < 1 || extent <= 0)
    throw std::invalid_argument("bev_to_polar: bad raster spec");
  const int k = bev.dim(0), hb = bev.dim(1), wb = bev.dim(2);
  TensorF out({k, radial_bins, azimuth_bins});
  for (int a = 0; a < azimuth_bins; ++a) {
    // column a is centered at azimuth 2*pi*(a+0.5)/A, matching panorama
    // column a*W/A; the half-bin offset keeps every sample ray off the grid
    // axes, so no sample point ever sits on a cell boundary and quarter-turn
    // rotations commute with column rolls bit for bit
    const double az = kTau * (static_cast<double>(a) + 0.5) / azimuth_bins;
    const double ca = std::cos(az), sa = std::sin(az);
    for (int r = 0; r < radial_bins; ++r) {
      const double rad = (r + 0.5) * extent / radial_bins;
      int ix = static_cast<int>(std::floor((rad * ca + extent) * wb / (2.0 * extent)));
      int iy = static_cast<int>(std::floor((rad * sa + extent) * hb / (2.0 * extent)));
      ix = ix < 0 ? 0 : (ix >= wb ? wb - 1 : ix);
      iy = iy < 0 ? 0 : (iy >= hb ? hb - 1 : iy);
      for (int c = 0; c < k; ++c) out.at3(c, r, a) = bev.at3(c, iy, ix);
    }
  }
  return out;
}

void BevEncoder::register_params(ParamRegistry& reg, uint64_t seed, int in_k, int cb) {
  Rng rng(mix_seed(seed, 0xbe7ull));
  reg.add("bev.c1.w", init_conv(16, in_k, 3, 3, rng));
  reg.add("bev.c1.g", init_ones({16}));
  reg.add("bev.c1.beta", init_zeros({16}));
  reg.add("bev.c2.w", init_conv(cb, 16, 3, 3, rng, 0.5));
  reg.add("bev.c2.b", init_zeros({cb}));
}

Val BevEncoder::encode_g(Tape<float>& t, GraphParams& p, Val polar, int out_h, int out_w) {
  Val h = t.conv2d_circular(polar, p("bev.c1.w"), 2);
  h = t.silu(t.group_norm(h, gn_groups(16), p("bev.c1.g"), p("bev.c1.beta")));
  h = t.add_bias_c(t.conv2d_circular(h, p("bev.c2.w"), 1), p("bev.c2.b"));
  // identity at the default raster, but keeps the latent-grid contract when the
  // latent resolution differs from half the polar raster
  return t.bilinear_resize(h, out_h, out_w);
}

void PromptEncoder::register_params(ParamRegistry& reg, uint64_t seed, int vocab, int d) {
  Rng rng(mix_seed(seed, 0x9704ull));
  reg.add("prompt.table", init_normal({vocab, d}, rng, 0.02));
}

Val PromptEncoder::encode_g(Tape<float>& t, GraphParams& p, const std::vector<int>& ids) {
  return t.embed(p("prompt.table"), ids);
}

}  // namespace pano
