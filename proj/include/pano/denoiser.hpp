#ifndef PANO_DENOISER_HPP
#define PANO_DENOISER_HPP

#include <string>
#include <vector>

#include "pano/encoders.hpp"
#include "pano/model.hpp"
#include "pano/ppm.hpp"
#include "pano/worldgen.hpp"

namespace pano {

// Conditional noise predictor: a small U-Net over latents built entirely from
// circular convolutions and content-only normalization, so the whole network
// commutes exactly with horizontal rolls whose latent displacement is a
// multiple of 2^(levels-1). A ControlNet-style side branch consumes the
// spatial guidance and feeds the main branch through zero-initialized 1x1
// projections; prompt conditioning enters through depth/mask-gated attention
// at the bottleneck and the first decoder level.
struct DenoiserConfig {
  int cz = 4;        // latent channels of the diffusion state
  int base = 32;     // channels at the top level; level i has base << i
  int levels = 3;    // resolutions; levels-1 stride-2 downsamples
  int temb_dim = 128;
  int d_txt = 64;    // prompt embedding width
  int bev_k = kNumClasses;
  int cb = 8;        // encoded guidance-map channels
  bool zero_init_injections = true;

  int ctrl_in_channels() const { return 2 * cz + cb; }
  int width_at(int level) const { return base << level; }
};

// Everything the denoiser may condition on. Spatial features live on the
// latent grid; polar_bev is the pre-encoder polar raster (its encoder trains
// with the denoiser); ppm_depth / ppm_mask are the raw pixel-space maps the
// attention biases are pooled from. f_img is the clean-image latent: it only
// ever defines the diffusion target z_0 and is never fed to the network
// (feeding it would hand the denoiser an identity shortcut).
struct GuidancePack {
  TensorF f_img;
  TensorF f_depth;
  TensorF f_mask;
  TensorF polar_bev;
  std::vector<int> prompt;
  TensorF ppm_depth;
  TensorF ppm_mask;
};

// Encodes a dataset sample into a GuidancePack using the frozen autoencoder.
GuidancePack make_guidance(const Sample& s, AutoEncoder& ae, const WorldConfig& cfg);

// Registers every trainable parameter of the conditional denoiser (main
// branch "den.", control branch "ctl.", BEV front end "bev.", prompt table
// "prompt.") into reg.
void register_denoiser(ParamRegistry& reg, const DenoiserConfig& cfg, uint64_t seed);

// [B, dim] sinusoidal features of integer timesteps (value-level; t is not
// differentiated through).
TensorF sinusoidal_temb(const std::vector<int>& ts, int dim);

// Box-mean pooling of a [H,W] map onto a (th x tw) token grid, flattened
// row-major to [th*tw]. Exact under source rolls by multiples of W/tw.
TensorF pool_map_tokens(const TensorF& map, int th, int tw);

// Graph-side guidance: leaves plus the in-graph encoders, bound to the level
// grids of a concrete latent size.
struct GuidanceVals {
  Val f_depth, f_mask;  // [1,cz,h,w] leaves
  Val f_bev;            // [1,cb,h,w]
  Val txt;              // [L,d_txt]
  Val pd_mid, pm_mid;   // pooled bias maps on the bottleneck token grid
  Val pd_dec, pm_dec;   // pooled bias maps on the first decoder token grid
};

// Validates shapes against (cfg, h, w) and builds the graph-side guidance.
GuidanceVals bind_guidance(Tape<float>& t, GraphParams& p, const DenoiserConfig& cfg,
                           const GuidancePack& g, int h, int w);

// Full conditional U-Net forward for one item: z_t [1,cz,h,w], temb [1,temb_dim].
Val predict_noise_g(Tape<float>& t, GraphParams& p, const DenoiserConfig& cfg, Val z_t,
                    Val temb, const GuidanceVals& g);

// Value-level convenience: builds a throwaway tape around predict_noise_g.
TensorF predict_noise(ParamRegistry& reg, const DenoiserConfig& cfg, const TensorF& z_t,
                      int t, const GuidancePack& g);

}  // namespace pano

#endif
