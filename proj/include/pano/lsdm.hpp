#ifndef PANO_LSDM_HPP
#define PANO_LSDM_HPP

#include <iosfwd>
#include <map>
#include <string>

#include "pano/diffusion.hpp"

namespace pano {

// Training-time seam treatment. baseline trains on the stitched panoramas as
// they are; mask additionally zeroes the loss on aliased columns; rota rolls
// the pixel inputs and rotates the raw top-down map before encoding; lsdm
// rolls the pixel inputs and applies the matching circular shift to the BEV
// features (realized as a roll of the polar raster, which commutes exactly
// with the BEV encoder).
enum class LsdmMode { baseline, mask, rota, lsdm };

LsdmMode parse_lsdm_mode(const std::string& name);
std::string lsdm_mode_name(LsdmMode m);

struct LsdmConfig {
  LsdmMode mode = LsdmMode::lsdm;
};

// Rotates a [K,H,W] top-down raster by theta about its center (bilinear,
// zeros outside). Cardinal angles resolve exactly: rotating by pi equals
// flipping both axes bit-for-bit.
TensorF rotate_bev(const TensorF& bev, double theta);

// Per-sample state the trainer reuses across steps: the frozen encoder runs
// once per sample, and every wrap-around rotation of the encoded latents is
// recovered by rolling them (exact, because the encoder commutes with
// pixel rolls on its stride grid).
struct CachedGuidance {
  GuidancePack g;    // unrotated guidance
  TensorF z0;        // [1,cz,h,w] latent of the stitched panorama
  TensorF bev;       // raw [K,Hb,Wb] one-hot map (rota re-encodes from this)
  RegionPartition partition;
  double bev_extent = 16.0;
};

CachedGuidance make_cached(const Sample& s, AutoEncoder& ae, const WorldConfig& wc);

// A sample with a synchronized wrap-around rotation applied everywhere:
// pixel tensors rolled by dw_px, latent guidance rolled by dw_px/4, polar
// raster by its own azimuth scale, partition rolled, prompt untouched.
struct RolledSample {
  TensorF clean, stitched, depth, mask;
  GuidancePack g;
  RegionPartition partition;
  int dw_px = 0;
  int dw_lat = 0;
};

// theta is quantized to the latent column grid (multiples of 2*pi / latent
// width) so the pixel, polar, and latent displacements are all integers and
// every roll is exact. Angles are wrapped mod 2*pi first.
RolledSample apply_lsdm(const Sample& s, const GuidancePack& g, double theta);

// The naive ablation: same pixel rolls, but the raw top-down map is rotated
// by theta (bilinear) and re-rasterized to polar form instead of rolling the
// BEV features.
RolledSample apply_rota(const Sample& s, const GuidancePack& g, double theta,
                        const WorldConfig& wc);

// Loss weights on the latent grid: 1 everywhere, except that mask mode zeroes
// every latent column whose pixel footprint touches an aliased region.
TensorF latent_loss_weights(const RegionPartition& p, LsdmMode mode, int cz, int h, int w);

// One transformed training example drawn from the cache: the mode decides the
// rotation law and the loss weights. j is the rotation in latent columns.
struct TrainExample {
  GuidancePack g;
  TensorF z0;
  TensorF weights;
  RegionPartition partition;
  int dw_lat = 0;
};

TrainExample lsdm_transform(const CachedGuidance& c, const LsdmConfig& mode, int j);

// Graph for one example's loss: z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps enters
// as a leaf, the denoiser predicts eps_hat, and the loss is the weighted mean
// square error against eps.
Val training_loss_g(Tape<float>& t, GraphParams& p, const DenoiserConfig& cfg,
                    const NoiseSchedule& sched, const TrainExample& ex, int timestep,
                    const TensorF& eps);

// Value wrapper drawing (j, t, eps) from rng exactly the way the trainer does.
double training_loss(ParamRegistry& reg, const DenoiserConfig& cfg, const NoiseSchedule& sched,
                     const LsdmConfig& mode, const CachedGuidance& c, Rng& rng);

struct TrainConfig {
  int steps = 30000;
  int batch = 16;
  double lr = 2e-4;
  uint64_t seed = 0;
  int log_every = 50;
};

struct TrainReport {
  int steps = 0;
  double final_loss = 0;
  double tail_mean_loss = 0;  // mean over the last up-to-100 steps
};

// Trains the denoiser registry on the train split with the selected mode.
// Deterministic given seed in fixed-order execution; throws std::runtime_error
// naming the step if the loss turns non-finite.
TrainReport train_diffusion(ParamRegistry& reg, const DenoiserConfig& cfg, AutoEncoder& ae,
                            const DatasetIndex& ds, const NoiseSchedule& sched,
                            const LsdmConfig& mode, const TrainConfig& tc, std::ostream* log);

}  // namespace pano

#endif
