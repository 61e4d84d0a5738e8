#ifndef PANO_EVAL_HPP
#define PANO_EVAL_HPP

#include <iosfwd>
#include <string>
#include <vector>

#include "pano/encoders.hpp"

namespace pano {

// Windowed structural similarity between two [C,H,W] images on a [0,1] value
// range: win x win windows tile the image, wrapping horizontally (the last
// window column reaches across the seam when win does not divide W); leftover
// bottom rows are ignored. Population statistics per window, constants
// c1=0.01^2, c2=0.03^2, mean over windows and channels. ssim(x,x) is exactly 1.
double ssim(const TensorF& a, const TensorF& b, int win = 8);

// Pooled-latent feature row for one [3,H,W] panorama: encode with the frozen
// autoencoder, average each latent channel over a 2x2 spatial grid. Length
// ae.cz * 4.
std::vector<float> eval_features(AutoEncoder& ae, const TensorF& pano);
// Stacks eval_features rows into [n, cz*4].
TensorF feature_matrix(AutoEncoder& ae, const std::vector<TensorF>& panos);

// Gaussian-approximation distance between two feature sets a:[n,d], b:[m,d]
// (n, m >= 2): |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)). The matrix
// square root comes from a Jacobi eigendecomposition of sqrt(Sa) Sb sqrt(Sa)
// (symmetrized); eigenvalues below -1e-8 are rejected, small negatives are
// clipped to zero. Result clamped to >= 0 against rounding.
double frechet_distance(const TensorF& a, const TensorF& b);

// Seam conspicuousness of a [C,H,W] panorama: the mean absolute horizontal
// neighbour difference across region-boundary column pairs divided by the same
// statistic over all interior column pairs. 1.0 means seams are statistically
// indistinguishable from the interior. A constant image (0/0) is 1.0 by
// convention; a zero interior with a live seam is +infinity. Column sums are
// accumulated in sorted order, so the score is invariant under a synchronized
// roll of the panorama and its partition, bit for bit.
double seam_incoherence(const TensorF& pano, const RegionPartition& p);

// Tiny circular-convolution semantic probe: panorama -> per-pixel class
// logits. A constant elevation channel is appended to the RGB input (rows are
// not a wrap axis, so this costs no roll equivariance).
struct SegConfig {
  int classes = kNumClasses;
  int width = 16;  // first-stage channel count; the middle stage doubles it
};

void register_segmenter(ParamRegistry& reg, const SegConfig& cfg, uint64_t seed);
// x: [1,3,H,W] with H,W even -> logits [1,classes,H,W]
Val seg_logits_g(Tape<float>& t, GraphParams& p, const SegConfig& cfg, Val x);
// Argmax class ids as a [H,W] float map (matching label rasters).
TensorF seg_predict(ParamRegistry& reg, const SegConfig& cfg, const TensorF& pano);

struct SegTrainConfig {
  int steps = 300;
  double lr = 2e-3;
  uint64_t seed = 0;
  int log_every = 50;
};

// Pixel cross-entropy training on (panorama, label raster) pairs; one image
// per step, round-robin order shuffled per epoch by the seed. Deterministic
// given the seed; throws std::runtime_error naming the step on non-finite loss.
void train_segmenter(ParamRegistry& reg, const SegConfig& cfg, const std::vector<TensorF>& panos,
                     const std::vector<TensorF>& labels, const SegTrainConfig& tc,
                     std::ostream* log);

struct IouReport {
  double iou_drivable = 0;
  double iou_mean = 0;
  std::vector<double> per_class;  // classes with an empty union carry -1
};

// Intersection-over-union of seg predictions against label rasters, pooled
// over the whole set; the mean skips classes absent from both.
IouReport segmentation_iou(ParamRegistry& reg, const SegConfig& cfg,
                           const std::vector<TensorF>& panos,
                           const std::vector<TensorF>& labels);

// One method's metric row. Direction conventions live in rank_aggregate.
struct MetricRow {
  double ssim = 0;
  double fdist = 0;
  double seam = 0;
  double iou_drivable = 0;
  double iou_mean = 0;
};

// rank = 1 + number of strictly better methods, so ties share the best rank.
std::vector<int> rank_column(const std::vector<double>& vals, bool higher_better);

struct RankedReport {
  std::vector<std::string> methods;
  std::vector<MetricRow> rows;
  std::vector<std::vector<int>> ranks;  // [method][metric], metric order as in MetricRow
  std::vector<int> rank_sum;
};

// Direction per metric: ssim up, fdist down, seam down, iou up, iou_mean up.
RankedReport rank_aggregate(const std::vector<std::string>& methods,
                            const std::vector<MetricRow>& rows);

struct AugmentationResult {
  double miou_base = 0;
  double miou_aug = 0;
};

// Trains the probe twice under the same budget: real data only, then real
// plus generated; reports held-out mIoU for both.
AugmentationResult augmentation_experiment(
    const std::vector<TensorF>& real_panos, const std::vector<TensorF>& real_labels,
    const std::vector<TensorF>& synth_panos, const std::vector<TensorF>& synth_labels,
    const std::vector<TensorF>& test_panos, const std::vector<TensorF>& test_labels,
    const SegConfig& cfg, const SegTrainConfig& tc);

}  // namespace pano

#endif
