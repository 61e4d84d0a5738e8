#ifndef PANO_TENSOR_HPP
#define PANO_TENSOR_HPP

#include <cstdint>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pano {

// Accumulation-order policy for reductions inside ops.
//  fixed_order: documented deterministic order; reductions whose operand order
//               would otherwise depend on a horizontal roll (group stats) are
//               made order-invariant, so rolled inputs give bit-identical
//               results. Default.
//  fast:        plain row-major accumulation with unrolled partial sums;
//               results may differ from fixed_order at the rounding level.
enum class ExecMode { fixed_order, fast };
ExecMode exec_mode();
void set_exec_mode(ExecMode m);

std::string shape_str(const std::vector<int>& dims);

template <typename S>
struct Tensor {
  std::vector<int> dims;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)), data(count(dims), S(0)) {}
  Tensor(std::vector<int> d, S fill) : dims(std::move(d)), data(count(dims), fill) {}

  static int64_t count(const std::vector<int>& d) {
    int64_t n = 1;
    for (int e : d) {
      if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(d));
      n *= e;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<size_t>(i)]; }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  S operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // Row-major element access for the common ranks.
  S& at2(int i, int j) { return data[static_cast<size_t>(i) * dims[1] + j]; }
  S at2(int i, int j) const { return data[static_cast<size_t>(i) * dims[1] + j]; }
  S& at3(int c, int h, int w) {
    return data[(static_cast<size_t>(c) * dims[1] + h) * dims[2] + w];
  }
  S at3(int c, int h, int w) const {
    return data[(static_cast<size_t>(c) * dims[1] + h) * dims[2] + w];
  }
  S& at4(int b, int c, int h, int w) {
    return data[((static_cast<size_t>(b) * dims[1] + c) * static_cast<size_t>(dims[2]) + h) * dims[3] + w];
  }
  S at4(int b, int c, int h, int w) const {
    return data[((static_cast<size_t>(b) * dims[1] + c) * static_cast<size_t>(dims[2]) + h) * dims[3] + w];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.dims = dims;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Deterministic RNG. mt19937_64 is fully pinned by the standard; the uniform
// and normal transforms are hand-rolled here so draws are bit-stable across
// standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

  uint64_t next_u64() { return eng_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 eng_;
  uint64_t seed_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 step; used to derive independent child seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename S>
Tensor<S> randn(std::vector<int> dims, Rng& rng, double stddev = 1.0) {
  Tensor<S> t(std::move(dims));
  for (auto& v : t.data) v = static_cast<S>(rng.normal() * stddev);
  return t;
}

// Order-invariant sum: sorting makes the accumulation order independent of
// any permutation of the inputs (equal values are interchangeable).
double sorted_sum(std::vector<double>& scratch);

// Circular roll along the last axis: out[..., j] = in[..., (j + dw) mod W].
template <typename S>
Tensor<S> roll_last(const Tensor<S>& x, int dw) {
  if (x.rank() < 1) throw std::invalid_argument("roll_last: rank-0 tensor");
  int w = x.dims.back();
  int d = ((dw % w) + w) % w;
  Tensor<S> out(x.dims);
  int64_t rows = x.numel() / w;
  for (int64_t r = 0; r < rows; ++r) {
    const S* src = x.data.data() + r * w;
    S* dst = out.data.data() + r * w;
    for (int j = 0; j < w; ++j) dst[j] = src[(j + d) % w];
  }
  return out;
}

template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace pano

#endif
