#ifndef PANO_ENCODERS_HPP
#define PANO_ENCODERS_HPP

#include <iosfwd>
#include <string>
#include <vector>

#include "pano/model.hpp"
#include "pano/worldgen.hpp"

namespace pano {

inline int gn_groups(int channels) { return channels < 8 ? channels : 8; }

// Deterministic convolutional autoencoder: 3 -> 16 -> 32 channels with two
// stride-2 circular convs (x4 spatial compression), latent channels cz, and
// a mirrored transposed-conv decoder. Trained once, then frozen for the
// diffusion stage; depth and mask share the image weights by channel
// replication.
struct AutoEncoder {
  ParamRegistry reg;
  int cz = 4;

  void init(uint64_t seed);

  Val encode_g(Tape<float>& t, GraphParams& p, Val x);  // [B,3,H,W] -> [B,cz,H/4,W/4]
  Val decode_g(Tape<float>& t, GraphParams& p, Val z);  // inverse shape map

  // frozen-value paths; input [B,1,H,W] or [B,3,H,W] (1 channel replicated,
  // shared weights). Latents are divided by the stored latent_scale so the
  // diffusion stage sees roughly unit-variance channels.
  TensorF encode_2d(const TensorF& x);
  TensorF decode_2d(const TensorF& z);
  TensorF reconstruct(const TensorF& x);  // decode(encode(x)) without scaling

  double latent_scale() const { return reg.get("latent_scale")[0]; }

  void save(const std::string& dir) const { reg.save(dir); }
  void load(const std::string& dir) { reg.load(dir); }
};

struct AeTrainReport {
  int steps = 0;
  double final_train_mse = 0;
  double holdout_mse = 0;
  double latent_scale = 1;
};

// Trains on clean and stitched panoramas of the train split, measures the
// holdout MSE on val-split clean panoramas, then freezes and stores the
// latent scale. Deterministic given seed.
AeTrainReport train_autoencoder(AutoEncoder& ae, const DatasetIndex& ds, int steps,
                                double lr, uint64_t seed, std::ostream* log);

// Resamples a one-hot BEV map onto a (radius x azimuth) raster by nearest
// cell, so feature columns are azimuth-aligned with panorama columns and a
// column roll of the result corresponds to a yaw of the scene.
TensorF bev_to_polar(const TensorF& bev, int radial_bins, int azimuth_bins, double extent);

// Circular conv stack over the polar raster: [B,K,32,128] -> [B,cb,16,64],
// matching the latent grid. Registers its parameters under "bev." in the
// caller's registry (trained with the diffusion stage).
struct BevEncoder {
  static constexpr int kRadialBins = 32;
  static constexpr int kAzimuthBins = 128;
  static void register_params(ParamRegistry& reg, uint64_t seed, int in_k, int cb);
  static Val encode_g(Tape<float>& t, GraphParams& p, Val polar, int out_h = 16, int out_w = 64);
};

// Learnable token embedding standing in for a text encoder; registers
// "prompt.table" [vocab, d].
struct PromptEncoder {
  static void register_params(ParamRegistry& reg, uint64_t seed, int vocab, int d);
  static Val encode_g(Tape<float>& t, GraphParams& p, const std::vector<int>& ids);
};

}  // namespace pano

#endif
