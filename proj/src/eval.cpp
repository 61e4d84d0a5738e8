#include "pano/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "pano/pano_ops.hpp"

namespace pano {

namespace {

constexpr double kSsimC1 = 1e-4;  // (0.01)^2 on a unit value range
constexpr double kSsimC2 = 9e-4;  // (0.03)^2

// --- small dense symmetric linear algebra, row-major double ---

std::vector<double> matmul_dd(const std::vector<double>& a, const std::vector<double>& b, int n) {
  std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double aik = a[static_cast<size_t>(i) * n + k];
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * n + j] += aik * b[static_cast<size_t>(k) * n + j];
    }
  return c;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. A is destroyed;
// eigenvalues land in eig, eigenvector j in column j of V. Plenty for the
// d <= 32 feature covariances this module sees.
void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eig, std::vector<double>& vec) {
  vec.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vec[static_cast<size_t>(i) * n + i] = 1.0;
  double frob2 = 0;
  for (double x : a) frob2 += x * x;
  const double stop = 1e-30 * std::max(1.0, frob2);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off2 = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off2 += 2.0 * a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
    if (off2 <= stop) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<size_t>(p) * n + q];
        if (apq == 0.0) continue;
        const double theta = (a[static_cast<size_t>(q) * n + q] - a[static_cast<size_t>(p) * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {  // rows p,q of J^T A
          const double akp = a[static_cast<size_t>(p) * n + k];
          const double akq = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * akp - s * akq;
          a[static_cast<size_t>(q) * n + k] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {  // columns p,q of (J^T A) J
          const double akp = a[static_cast<size_t>(k) * n + p];
          const double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {  // V <- V J
          const double vkp = vec[static_cast<size_t>(k) * n + p];
          const double vkq = vec[static_cast<size_t>(k) * n + q];
          vec[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
          vec[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
  }
  eig.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) eig[i] = a[static_cast<size_t>(i) * n + i];
}

// Eigenvalues of a covariance-like matrix must not be meaningfully negative;
// tiny negatives from rounding are clipped to zero.
double checked_nonneg(double lambda, double scale, const char* what) {
  if (lambda < -1e-8 * std::max(1.0, scale))
    throw std::invalid_argument(std::string(what) + ": matrix is not positive semi-definite");
  return std::max(lambda, 0.0);
}

std::vector<double> psd_sqrt(const std::vector<double>& a, int n) {
  std::vector<double> eig, vec;
  jacobi_eigen(a, n, eig, vec);
  double scale = 0;
  for (double l : eig) scale = std::max(scale, std::abs(l));
  std::vector<double> root(static_cast<size_t>(n) * n, 0.0);
  // V diag(sqrt(l)) V^T
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int k = 0; k < n; ++k) {
        const double l = checked_nonneg(eig[static_cast<size_t>(k)], scale, "frechet_distance");
        acc += vec[static_cast<size_t>(i) * n + k] * std::sqrt(l) * vec[static_cast<size_t>(j) * n + k];
      }
      root[static_cast<size_t>(i) * n + j] = acc;
    }
  return root;
}

struct Moments {
  std::vector<double> mu;
  std::vector<double> cov;  // d x d, sample covariance (n-1 normalizer)
};

Moments moments_of(const TensorF& x, const char* side) {
  if (x.rank() != 2) throw std::invalid_argument(std::string("frechet_distance: ") + side + " must be [n,d]");
  const int n = x.dims[0], d = x.dims[1];
  if (n < 2) throw std::invalid_argument(std::string("frechet_distance: ") + side + " needs at least 2 rows");
  Moments m;
  m.mu.assign(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m.mu[static_cast<size_t>(j)] += x.at2(i, j);
  for (double& v : m.mu) v /= n;
  m.cov.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double dj = x.at2(i, j) - m.mu[static_cast<size_t>(j)];
      for (int k = j; k < d; ++k)
        m.cov[static_cast<size_t>(j) * d + k] += dj * (x.at2(i, k) - m.mu[static_cast<size_t>(k)]);
    }
  for (int j = 0; j < d; ++j)
    for (int k = j; k < d; ++k) {
      const double v = m.cov[static_cast<size_t>(j) * d + k] / (n - 1);
      m.cov[static_cast<size_t>(j) * d + k] = v;
      m.cov[static_cast<size_t>(k) * d + j] = v;
    }
  return m;
}

// mean absolute difference between column c and its left neighbour, wrap
// aware; accumulation order is fixed by (channel, row), so the value of a
// given column pair does not depend on where a roll has moved it.
double column_pair_mad(const TensorF& p, int c) {
  const int ch = p.dims[0], h = p.dims[1], w = p.dims[2];
  const int left = (c - 1 + w) % w;
  double acc = 0;
  for (int k = 0; k < ch; ++k)
    for (int r = 0; r < h; ++r) acc += std::abs(static_cast<double>(p.at3(k, r, c)) - static_cast<double>(p.at3(k, r, left)));
  return acc / (static_cast<double>(ch) * h);
}

}  // namespace

double ssim(const TensorF& a, const TensorF& b, int win) {
  if (a.rank() != 3 || b.rank() != 3 || a.dims != b.dims)
    throw std::invalid_argument("ssim: inputs must be [C,H,W] with identical shapes");
  if (win < 2) throw std::invalid_argument("ssim: window must be >= 2");
  const int ch = a.dims[0], h = a.dims[1], w = a.dims[2];
  if (h < win || w < win) throw std::invalid_argument("ssim: image smaller than window");
  const int ny = h / win;                   // leftover bottom rows are ignored
  const int nx = (w + win - 1) / win;       // last window wraps across the seam
  const double n = static_cast<double>(win) * win;
  double total = 0;
  int64_t count = 0;
  for (int c = 0; c < ch; ++c)
    for (int by = 0; by < ny; ++by)
      for (int bx = 0; bx < nx; ++bx) {
        const int y0 = by * win, x0 = bx * win;
        double sa = 0, sb = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const int x = (x0 + j) % w;
            sa += a.at3(c, y0 + i, x);
            sb += b.at3(c, y0 + i, x);
          }
        const double ma = sa / n, mb = sb / n;
        double va = 0, vb = 0, vab = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const int x = (x0 + j) % w;
            const double da = a.at3(c, y0 + i, x) - ma;
            const double db = b.at3(c, y0 + i, x) - mb;
            va += da * da;
            vb += db * db;
            vab += da * db;
          }
        va /= n;
        vb /= n;
        vab /= n;
        total += ((2.0 * ma * mb + kSsimC1) * (2.0 * vab + kSsimC2)) /
                 ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
        ++count;
      }
  return total / static_cast<double>(count);
}

std::vector<float> eval_features(AutoEncoder& ae, const TensorF& pano) {
  if (pano.rank() != 3 || pano.dims[0] != 3)
    throw std::invalid_argument("eval_features: want [3,H,W], got " + shape_str(pano.dims));
  TensorF x({1, 3, pano.dims[1], pano.dims[2]});
  x.data = pano.data;
  TensorF z = ae.encode_2d(x);
  const int cz = z.dims[1], h = z.dims[2], w = z.dims[3];
  if (h < 2 || w < 2) throw std::invalid_argument("eval_features: latent too small to pool");
  std::vector<float> out(static_cast<size_t>(cz) * 4, 0.0f);
  const int h0 = h / 2, w0 = w / 2;
  for (int c = 0; c < cz; ++c)
    for (int qy = 0; qy < 2; ++qy)
      for (int qx = 0; qx < 2; ++qx) {
        const int ys = qy == 0 ? 0 : h0, ye = qy == 0 ? h0 : h;
        const int xs = qx == 0 ? 0 : w0, xe = qx == 0 ? w0 : w;
        double acc = 0;
        for (int y = ys; y < ye; ++y)
          for (int x2 = xs; x2 < xe; ++x2) acc += z.at4(0, c, y, x2);
        out[static_cast<size_t>(c) * 4 + qy * 2 + qx] =
            static_cast<float>(acc / (static_cast<double>(ye - ys) * (xe - xs)));
      }
  return out;
}

TensorF feature_matrix(AutoEncoder& ae, const std::vector<TensorF>& panos) {
  if (panos.empty()) throw std::invalid_argument("feature_matrix: no panoramas");
  std::vector<float> first = eval_features(ae, panos[0]);
  TensorF out({static_cast<int>(panos.size()), static_cast<int>(first.size())});
  for (size_t i = 0; i < panos.size(); ++i) {
    std::vector<float> row = i == 0 ? first : eval_features(ae, panos[i]);
    for (size_t j = 0; j < row.size(); ++j) out.at2(static_cast<int>(i), static_cast<int>(j)) = row[j];
  }
  return out;
}

double frechet_distance(const TensorF& a, const TensorF& b) {
  Moments ma = moments_of(a, "a");
  Moments mb = moments_of(b, "b");
  if (a.dims[1] != b.dims[1]) throw std::invalid_argument("frechet_distance: feature dims differ");
  const int d = a.dims[1];

  double mean_term = 0;
  for (int j = 0; j < d; ++j) {
    const double dj = ma.mu[static_cast<size_t>(j)] - mb.mu[static_cast<size_t>(j)];
    mean_term += dj * dj;
  }
  double tr_a = 0, tr_b = 0;
  for (int j = 0; j < d; ++j) {
    tr_a += ma.cov[static_cast<size_t>(j) * d + j];
    tr_b += mb.cov[static_cast<size_t>(j) * d + j];
  }

  // tr((Sa Sb)^(1/2)) via the symmetric similar form sqrt(Sa) Sb sqrt(Sa)
  std::vector<double> ra = psd_sqrt(ma.cov, d);
  std::vector<double> prod = matmul_dd(matmul_dd(ra, mb.cov, d), ra, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double v = 0.5 * (prod[static_cast<size_t>(i) * d + j] + prod[static_cast<size_t>(j) * d + i]);
      prod[static_cast<size_t>(i) * d + j] = v;
      prod[static_cast<size_t>(j) * d + i] = v;
    }
  std::vector<double> eig, vec;
  jacobi_eigen(prod, d, eig, vec);
  double scale = 0;
  for (double l : eig) scale = std::max(scale, std::abs(l));
  double tr_sqrt = 0;
  for (double l : eig) tr_sqrt += std::sqrt(checked_nonneg(l, scale, "frechet_distance"));

  return std::max(0.0, mean_term + tr_a + tr_b - 2.0 * tr_sqrt);
}

double seam_incoherence(const TensorF& pano, const RegionPartition& p) {
  if (pano.rank() != 3) throw std::invalid_argument("seam_incoherence: want [C,H,W]");
  const int w = pano.dims[2];
  if (p.width != w) throw std::invalid_argument("seam_incoherence: partition width mismatch");
  std::vector<int> seams = seam_columns(p);
  std::vector<char> is_seam(static_cast<size_t>(w), 0);
  for (int c : seams) is_seam[static_cast<size_t>(c)] = 1;
  std::vector<double> num_vals, den_vals;
  num_vals.reserve(seams.size());
  den_vals.reserve(static_cast<size_t>(w) - seams.size());
  for (int c = 0; c < w; ++c) (is_seam[static_cast<size_t>(c)] ? num_vals : den_vals).push_back(column_pair_mad(pano, c));
  if (den_vals.empty()) return 1.0;  // every column is a boundary: no interior baseline
  const double num = sorted_sum(num_vals) / static_cast<double>(num_vals.size());
  const double den = sorted_sum(den_vals) / static_cast<double>(den_vals.size());
  if (den == 0.0) return num == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

// --- segmentation probe ---

namespace {

void validate_seg_cfg(const SegConfig& cfg) {
  if (cfg.classes < 2) throw std::invalid_argument("segmenter: need at least 2 classes");
  if (cfg.width < 4 || cfg.width % 4 != 0)
    throw std::invalid_argument("segmenter: width must be a positive multiple of 4");
}

void check_pair(const TensorF& pano, const TensorF& label, int classes) {
  if (pano.rank() != 3 || pano.dims[0] != 3)
    throw std::invalid_argument("segmenter: panorama must be [3,H,W]");
  if (label.rank() != 2 || label.dims[0] != pano.dims[1] || label.dims[1] != pano.dims[2])
    throw std::invalid_argument("segmenter: label raster must be [H,W] matching the panorama");
  for (float v : label.data) {
    const int id = static_cast<int>(v);
    if (id < 0 || id >= classes || static_cast<float>(id) != v)
      throw std::invalid_argument("segmenter: label ids must be integers in [0,classes)");
  }
}

std::vector<int> label_tokens(const TensorF& label) {
  std::vector<int> out(label.data.size());
  for (size_t i = 0; i < label.data.size(); ++i) out[i] = static_cast<int>(label.data[i]);
  return out;
}

}  // namespace

void register_segmenter(ParamRegistry& reg, const SegConfig& cfg, uint64_t seed) {
  validate_seg_cfg(cfg);
  Rng rng(mix_seed(seed, 0x5e6ull));
  const int w = cfg.width;
  reg.add("seg.in.w", init_conv(w, 4, 3, 3, rng));  // rgb + elevation channel
  reg.add("seg.enc.g1", init_ones({w}));
  reg.add("seg.enc.b1", init_zeros({w}));
  reg.add("seg.down.w", init_conv(2 * w, w, 3, 3, rng));
  reg.add("seg.enc.g2", init_ones({2 * w}));
  reg.add("seg.enc.b2", init_zeros({2 * w}));
  reg.add("seg.mid.w", init_conv(2 * w, 2 * w, 3, 3, rng));
  reg.add("seg.mid.g", init_ones({2 * w}));
  reg.add("seg.mid.b", init_zeros({2 * w}));
  reg.add("seg.up.w", init_conv(w, 2 * w, 3, 3, rng));
  reg.add("seg.dec.g1", init_ones({w}));
  reg.add("seg.dec.b1", init_zeros({w}));
  reg.add("seg.dec.w", init_conv(w, 2 * w, 3, 3, rng));  // input is up + skip
  reg.add("seg.dec.g2", init_ones({w}));
  reg.add("seg.dec.b2", init_zeros({w}));
  reg.add("seg.head.w", init_conv(cfg.classes, w, 3, 3, rng));
  reg.add("seg.head.b", init_zeros({cfg.classes}));
}

Val seg_logits_g(Tape<float>& t, GraphParams& p, const SegConfig& cfg, Val x) {
  const TensorF& xv = t.val(x);
  if (xv.rank() != 4 || xv.dims[0] != 1 || xv.dims[1] != 3)
    throw std::invalid_argument("seg_logits_g: want [1,3,H,W], got " + shape_str(xv.dims));
  const int h = xv.dims[2], w = xv.dims[3];
  if (h < 4 || w < 4 || h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("seg_logits_g: spatial dims must be even and >= 4");
  const int cw = cfg.width;

  // rows are not a wrap axis, so the probe may know its elevation outright
  TensorF elev({1, 1, h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) elev.at4(0, 0, r, c) = static_cast<float>(r) / static_cast<float>(h - 1);
  Val hx = t.concat({x, t.leaf(std::move(elev), "elevation")}, 1);

  hx = t.conv2d_circular(hx, p("seg.in.w"), 1);
  hx = t.silu(t.group_norm(hx, gn_groups(cw), p("seg.enc.g1"), p("seg.enc.b1")));
  Val skip = hx;
  hx = t.conv2d_circular(hx, p("seg.down.w"), 2);
  hx = t.silu(t.group_norm(hx, gn_groups(2 * cw), p("seg.enc.g2"), p("seg.enc.b2")));
  hx = t.conv2d_circular(hx, p("seg.mid.w"), 1);
  hx = t.silu(t.group_norm(hx, gn_groups(2 * cw), p("seg.mid.g"), p("seg.mid.b")));
  hx = t.conv2d_circular_transposed(hx, p("seg.up.w"), 2);
  hx = t.silu(t.group_norm(hx, gn_groups(cw), p("seg.dec.g1"), p("seg.dec.b1")));
  hx = t.concat({hx, skip}, 1);
  hx = t.conv2d_circular(hx, p("seg.dec.w"), 1);
  hx = t.silu(t.group_norm(hx, gn_groups(cw), p("seg.dec.g2"), p("seg.dec.b2")));
  hx = t.conv2d_circular(hx, p("seg.head.w"), 1);
  return t.add_bias_c(hx, p("seg.head.b"));
}

TensorF seg_predict(ParamRegistry& reg, const SegConfig& cfg, const TensorF& pano) {
  if (pano.rank() != 3 || pano.dims[0] != 3)
    throw std::invalid_argument("seg_predict: want [3,H,W]");
  Tape<float> t;
  GraphParams p(t, reg);
  TensorF x({1, 3, pano.dims[1], pano.dims[2]});
  x.data = pano.data;
  Val logits = seg_logits_g(t, p, cfg, t.leaf(std::move(x), "pano"));
  const TensorF& lv = t.val(logits);
  const int k = lv.dims[1], h = lv.dims[2], w = lv.dims[3];
  TensorF pred({h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int best = 0;
      float bv = lv.at4(0, 0, r, c);
      for (int cl = 1; cl < k; ++cl) {
        const float v = lv.at4(0, cl, r, c);
        if (v > bv) {
          bv = v;
          best = cl;
        }
      }
      pred.at2(r, c) = static_cast<float>(best);
    }
  return pred;
}

void train_segmenter(ParamRegistry& reg, const SegConfig& cfg, const std::vector<TensorF>& panos,
                     const std::vector<TensorF>& labels, const SegTrainConfig& tc,
                     std::ostream* log) {
  if (panos.empty() || panos.size() != labels.size())
    throw std::invalid_argument("train_segmenter: need matching non-empty pano/label sets");
  if (tc.steps < 1) throw std::invalid_argument("train_segmenter: steps must be >= 1");
  for (size_t i = 0; i < panos.size(); ++i) check_pair(panos[i], labels[i], cfg.classes);

  Adam opt;
  opt.lr = tc.lr;
  opt.init(reg);
  const int n = static_cast<int>(panos.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int step = 0; step < tc.steps; ++step) {
    if (step % n == 0) {  // fresh epoch: reshuffle the visit order
      Rng rng(mix_seed(mix_seed(tc.seed, 0x5e61ull), static_cast<uint64_t>(step / n)));
      for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
    }
    const int idx = order[static_cast<size_t>(step % n)];

    Tape<float> t;
    GraphParams p(t, reg);
    TensorF x({1, 3, panos[static_cast<size_t>(idx)].dims[1], panos[static_cast<size_t>(idx)].dims[2]});
    x.data = panos[static_cast<size_t>(idx)].data;
    Val logits = seg_logits_g(t, p, cfg, t.leaf(std::move(x), "pano"));
    Val loss = t.cross_entropy_rows(t.to_tokens(logits), label_tokens(labels[static_cast<size_t>(idx)]));
    t.backward(loss);
    const double lv = t.val(loss)[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("segmenter training diverged at step " + std::to_string(step));
    opt.step(reg, p.collect_grads());
    if (log && (step % tc.log_every == 0 || step + 1 == tc.steps))
      (*log) << "seg step " << step << " loss " << lv << "\n";
  }
}

IouReport segmentation_iou(ParamRegistry& reg, const SegConfig& cfg,
                           const std::vector<TensorF>& panos,
                           const std::vector<TensorF>& labels) {
  if (panos.empty() || panos.size() != labels.size())
    throw std::invalid_argument("segmentation_iou: need matching non-empty pano/label sets");
  std::vector<int64_t> inter(static_cast<size_t>(cfg.classes), 0);
  std::vector<int64_t> uni(static_cast<size_t>(cfg.classes), 0);
  for (size_t i = 0; i < panos.size(); ++i) {
    check_pair(panos[i], labels[i], cfg.classes);
    TensorF pred = seg_predict(reg, cfg, panos[i]);
    for (size_t j = 0; j < pred.data.size(); ++j) {
      const int pc = static_cast<int>(pred.data[j]);
      const int gc = static_cast<int>(labels[i].data[j]);
      if (pc == gc) {
        ++inter[static_cast<size_t>(pc)];
        ++uni[static_cast<size_t>(pc)];
      } else {
        ++uni[static_cast<size_t>(pc)];
        ++uni[static_cast<size_t>(gc)];
      }
    }
  }
  IouReport rep;
  rep.per_class.assign(static_cast<size_t>(cfg.classes), -1.0);
  double acc = 0;
  int present = 0;
  for (int c = 0; c < cfg.classes; ++c)
    if (uni[static_cast<size_t>(c)] > 0) {
      rep.per_class[static_cast<size_t>(c)] =
          static_cast<double>(inter[static_cast<size_t>(c)]) / static_cast<double>(uni[static_cast<size_t>(c)]);
      acc += rep.per_class[static_cast<size_t>(c)];
      ++present;
    }
  rep.iou_mean = present > 0 ? acc / present : 0.0;
  rep.iou_drivable = rep.per_class[0] < 0 ? 0.0 : rep.per_class[0];
  return rep;
}

std::vector<int> rank_column(const std::vector<double>& vals, bool higher_better) {
  std::vector<int> ranks(vals.size(), 1);
  for (size_t i = 0; i < vals.size(); ++i)
    for (size_t j = 0; j < vals.size(); ++j) {
      const bool better = higher_better ? vals[j] > vals[i] : vals[j] < vals[i];
      if (better) ++ranks[i];
    }
  return ranks;
}

RankedReport rank_aggregate(const std::vector<std::string>& methods,
                            const std::vector<MetricRow>& rows) {
  if (methods.empty() || methods.size() != rows.size())
    throw std::invalid_argument("rank_aggregate: need one metric row per method");
  const size_t n = methods.size();
  struct Col {
    std::vector<double> vals;
    bool up;
  };
  std::vector<Col> cols(5);
  for (size_t i = 0; i < n; ++i) {
    cols[0].vals.push_back(rows[i].ssim);
    cols[1].vals.push_back(rows[i].fdist);
    cols[2].vals.push_back(rows[i].seam);
    cols[3].vals.push_back(rows[i].iou_drivable);
    cols[4].vals.push_back(rows[i].iou_mean);
  }
  cols[0].up = true;
  cols[1].up = false;
  cols[2].up = false;
  cols[3].up = true;
  cols[4].up = true;

  RankedReport rep;
  rep.methods = methods;
  rep.rows = rows;
  rep.ranks.assign(n, std::vector<int>(5, 0));
  rep.rank_sum.assign(n, 0);
  for (size_t k = 0; k < cols.size(); ++k) {
    std::vector<int> r = rank_column(cols[k].vals, cols[k].up);
    for (size_t i = 0; i < n; ++i) {
      rep.ranks[i][k] = r[i];
      rep.rank_sum[i] += r[i];
    }
  }
  return rep;
}

AugmentationResult augmentation_experiment(
    const std::vector<TensorF>& real_panos, const std::vector<TensorF>& real_labels,
    const std::vector<TensorF>& synth_panos, const std::vector<TensorF>& synth_labels,
    const std::vector<TensorF>& test_panos, const std::vector<TensorF>& test_labels,
    const SegConfig& cfg, const SegTrainConfig& tc) {
  if (synth_panos.size() != synth_labels.size())
    throw std::invalid_argument("augmentation_experiment: synth pano/label sizes differ");
  AugmentationResult res;

  ParamRegistry base;
  register_segmenter(base, cfg, tc.seed);
  train_segmenter(base, cfg, real_panos, real_labels, tc, nullptr);
  res.miou_base = segmentation_iou(base, cfg, test_panos, test_labels).iou_mean;

  std::vector<TensorF> panos = real_panos;
  std::vector<TensorF> labels = real_labels;
  panos.insert(panos.end(), synth_panos.begin(), synth_panos.end());
  labels.insert(labels.end(), synth_labels.begin(), synth_labels.end());
  ParamRegistry aug;
  register_segmenter(aug, cfg, tc.seed);
  train_segmenter(aug, cfg, panos, labels, tc, nullptr);
  res.miou_aug = segmentation_iou(aug, cfg, test_panos, test_labels).iou_mean;
  return res;
}

}  // namespace pano
