#include "pano/diffusion.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace pano {

NoiseSchedule NoiseSchedule::linear(int T, double beta_lo, double beta_hi) {
  if (T < 1) throw std::invalid_argument("schedule: T must be positive");
  if (!(beta_lo > 0.0) || !(beta_hi < 1.0) || beta_hi < beta_lo)
    throw std::invalid_argument("schedule: need 0 < beta_lo <= beta_hi < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alphas_bar.resize(T);
  s.one_minus_ab.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.betas[t] = T == 1 ? beta_lo : beta_lo + (beta_hi - beta_lo) * t / (T - 1);
    prod *= 1.0 - s.betas[t];
    s.alphas_bar[t] = prod;
    s.one_minus_ab[t] = 1.0 - prod;
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (T < 1 || (int)betas.size() != T || (int)alphas_bar.size() != T ||
      (int)one_minus_ab.size() != T)
    throw std::invalid_argument("schedule: inconsistent sizes");
  double prev = 1.0 + 1e-12;
  for (int t = 0; t < T; ++t) {
    if (!(betas[t] > 0.0 && betas[t] < 1.0))
      throw std::invalid_argument("schedule: beta out of (0,1) at t=" + std::to_string(t));
    if (!(alphas_bar[t] > 0.0 && alphas_bar[t] < prev))
      throw std::invalid_argument("schedule: alpha_bar not strictly decreasing at t=" +
                                  std::to_string(t));
    prev = alphas_bar[t];
  }
  if (alphas_bar[0] < 0.99)
    throw std::invalid_argument("schedule: alpha_bar[0] should be close to 1");
}

double NoiseSchedule::ab(int t) const {
  if (t < 0 || t >= T)
    throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside [0," +
                            std::to_string(T) + ")");
  return alphas_bar[t];
}

double NoiseSchedule::omab(int t) const {
  if (t < 0 || t >= T)
    throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside [0," +
                            std::to_string(T) + ")");
  return one_minus_ab[t];
}

TensorF forward_noise(const TensorF& z0, int t, const TensorF& eps, const NoiseSchedule& s) {
  if (z0.dims != eps.dims)
    throw std::invalid_argument("forward_noise: z0 " + shape_str(z0.dims) + " vs eps " +
                                shape_str(eps.dims));
  const double sa = std::sqrt(s.ab(t));
  const double so = std::sqrt(s.omab(t));
  TensorF out(z0.dims);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (float)(sa * z0.data[i] + so * eps.data[i]);
  return out;
}

std::vector<int> subsample_schedule(int T, int steps) {
  if (T < 1) throw std::invalid_argument("subsample_schedule: T must be positive");
  if (steps < 1 || steps > T)
    throw std::invalid_argument("subsample_schedule: steps must be in [1,T], got " +
                                std::to_string(steps));
  if (steps == 1) return {T - 1};
  std::vector<int> out(steps);
  for (int i = 0; i < steps; ++i)
    out[i] = (int)std::lround((double)(T - 1) * (steps - 1 - i) / (steps - 1));
  return out;
}

NoiseFn gaussian_noise_source(uint64_t seed) {
  auto rng = std::make_shared<Rng>(mix_seed(seed, 0x5a3cull));
  return [rng](const std::vector<int>& dims) { return randn<float>(dims, *rng); };
}

TensorF sample_latent(ParamRegistry& reg, const DenoiserConfig& cfg, const NoiseSchedule& sched,
                      const SamplerConfig& scfg, const GuidancePack& g, NoiseFn noise) {
  sched.validate();
  if (!noise) throw std::invalid_argument("sample_latent: missing noise source");
  if (g.f_depth.dims.size() != 4)
    throw std::invalid_argument("sample_latent: guidance latents must be rank-4, got " +
                                shape_str(g.f_depth.dims));
  const std::vector<int> dims = {1, cfg.cz, g.f_depth.dims[2], g.f_depth.dims[3]};
  TensorF z = noise(dims);
  if (z.dims != dims)
    throw std::invalid_argument("sample_latent: noise source returned " + shape_str(z.dims) +
                                ", wanted " + shape_str(dims));
  const std::vector<int> ts = subsample_schedule(sched.T, scfg.steps);
  for (size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int s = i + 1 < ts.size() ? ts[i + 1] : -1;
    const TensorF eps_hat = predict_noise(reg, cfg, z, t, g);
    const double a = sched.ab(t);
    const double b = sched.ab_ext(s);
    const double sqa = std::sqrt(a), sqb = std::sqrt(b);
    const double som_b = std::sqrt(std::max(0.0, 1.0 - b));
    // shared trajectory mean: z_s = sqrt(ab_s) z0_hat + sqrt(1-ab_s) eps_hat
    double sigma = 0.0;
    if (scfg.kind == SamplerKind::ancestral && b < 1.0) {
      const double var = (1.0 - b) / (1.0 - a) * (1.0 - a / b);
      sigma = std::sqrt(std::max(0.0, var));
    }
    TensorF next(dims);
    for (size_t k = 0; k < next.data.size(); ++k) {
      const double z0_hat = (z.data[k] - std::sqrt(1.0 - a) * eps_hat.data[k]) / sqa;
      next.data[k] = (float)(sqb * z0_hat + som_b * eps_hat.data[k]);
    }
    if (sigma > 0.0) {
      TensorF xi = noise(dims);
      for (size_t k = 0; k < next.data.size(); ++k)
        next.data[k] = (float)(next.data[k] + sigma * xi.data[k]);
    }
    z = std::move(next);
  }
  return z;
}

TensorF sample_pano(ParamRegistry& reg, const DenoiserConfig& cfg, AutoEncoder& ae,
                    const NoiseSchedule& sched, const SamplerConfig& scfg, const GuidancePack& g,
                    NoiseFn noise) {
  if (cfg.cz != ae.cz)
    throw std::invalid_argument("sample_pano: denoiser latent channels " +
                                std::to_string(cfg.cz) + " do not match autoencoder " +
                                std::to_string(ae.cz));
  TensorF z = sample_latent(reg, cfg, sched, scfg, g, std::move(noise));
  TensorF px = ae.decode_2d(z);  // [1,3,H,W]
  TensorF out({px.dims[1], px.dims[2], px.dims[3]});
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::min(1.0f, std::max(0.0f, px.data[i]));
  return out;
}

}  // namespace pano
