#ifndef PANO_DIFFUSION_HPP
#define PANO_DIFFUSION_HPP

#include <functional>
#include <vector>

#include "pano/denoiser.hpp"

namespace pano {

// Forward-process schedule. one_minus_ab[t] is stored as the literal double
// complement 1.0 - alphas_bar[t]; with round-to-nearest that makes
// alphas_bar[t] + one_minus_ab[t] == 1.0 exactly for every t, which the
// variance-preserving identity tests assert with zero tolerance.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas_bar;
  std::vector<double> one_minus_ab;

  static NoiseSchedule linear(int T = 1000, double beta_lo = 1e-4, double beta_hi = 2e-2);

  void validate() const;
  double ab(int t) const;
  double omab(int t) const;
  // t = -1 addresses the state before time 0 (fully clean): ab = 1. The final
  // sampler step uses it.
  double ab_ext(int t) const { return t < 0 ? 1.0 : ab(t); }
};

// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps.
TensorF forward_noise(const TensorF& z0, int t, const TensorF& eps, const NoiseSchedule& s);

// Evenly spaced descending timesteps; the last entry is always 0. steps == T
// gives the identity schedule T-1..0; steps == 1 is the single jump from T-1.
std::vector<int> subsample_schedule(int T, int steps);

enum class SamplerKind { ancestral, deterministic };

struct SamplerConfig {
  int steps = 20;
  SamplerKind kind = SamplerKind::ancestral;
};

// All sampler randomness flows through this, so tests can record, replay, and
// roll the exact noise a run consumed. Called once for the initial latent and
// once per ancestral step with nonzero posterior variance.
using NoiseFn = std::function<TensorF(const std::vector<int>& dims)>;

NoiseFn gaussian_noise_source(uint64_t seed);

// Reverse diffusion in latent space conditioned on g (its f_img is ignored).
// Both kinds share the same trajectory mean, so the ancestral sampler with
// zero injected noise reproduces the deterministic sampler exactly; the
// ancestral kind adds the schedule's posterior sigma on top.
TensorF sample_latent(ParamRegistry& reg, const DenoiserConfig& cfg, const NoiseSchedule& sched,
                      const SamplerConfig& scfg, const GuidancePack& g, NoiseFn noise);

// sample_latent, decoded through the frozen autoencoder and clipped to [0,1].
// Returns [3,H,W].
TensorF sample_pano(ParamRegistry& reg, const DenoiserConfig& cfg, AutoEncoder& ae,
                    const NoiseSchedule& sched, const SamplerConfig& scfg, const GuidancePack& g,
                    NoiseFn noise);

}  // namespace pano

#endif
