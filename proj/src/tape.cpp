#include "pano/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace pano {

namespace {
std::atomic<ExecMode> g_exec_mode{ExecMode::fixed_order};
}

ExecMode exec_mode() { return g_exec_mode.load(std::memory_order_relaxed); }
void set_exec_mode(ExecMode m) { g_exec_mode.store(m, std::memory_order_relaxed); }

std::string shape_str(const std::vector<int>& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

double sorted_sum(std::vector<double>& scratch) {
  std::sort(scratch.begin(), scratch.end());
  double acc = 0.0;
  for (double v : scratch) acc += v;
  return acc;
}

namespace {

int mod_pos(int a, int m) {
  int r = a % m;
  return r < 0 ? r + m : r;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

template <typename S>
int Tape<S>::check(Val x) const {
  if (x.id < 0 || x.id >= static_cast<int>(nodes_.size()))
    throw std::out_of_range("tape: value handle " + std::to_string(x.id) + " is not on this graph");
  return x.id;
}

template <typename S>
Val Tape<S>::push(Node n) {
  if (check_finite_ && nonfinite_node_.empty()) {
    const Tensor<S>& t = n.ext ? *n.ext : n.value;
    if (!all_finite(t)) nonfinite_node_ = n.name + "#" + std::to_string(nodes_.size());
  }
  nodes_.push_back(std::move(n));
  return Val{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
Val Tape<S>::leaf(Tensor<S> v, std::string name) {
  Node n;
  n.value = std::move(v);
  n.name = std::move(name);
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::param(const Tensor<S>* p, std::string name) {
  require(p != nullptr, "tape: null parameter");
  Node n;
  n.ext = p;
  n.name = std::move(name);
  return push(std::move(n));
}

template <typename S>
const Tensor<S>& Tape<S>::val(Val x) const {
  return v(check(x));
}

template <typename S>
const Tensor<S>& Tape<S>::grad(Val x) const {
  const Node& n = nodes_[static_cast<size_t>(check(x))];
  if (n.grad.data.empty())
    throw std::logic_error("tape: no gradient recorded for node " + std::to_string(x.id) +
                           " (run backward first)");
  return n.grad;
}

// ---------------------------------------------------------------------------
// conv2d_circular

template <typename S>
Val Tape<S>::conv2d_circular(Val xv, Val kv, int stride) {
  const Tensor<S>& x = v(check(xv));
  const Tensor<S>& k = v(check(kv));
  require(x.rank() == 4, "conv2d_circular: input must be [B,C,H,W], got " + shape_str(x.dims));
  require(k.rank() == 4, "conv2d_circular: kernel must be [O,C,kh,kw], got " + shape_str(k.dims));
  require(x.dim(1) == k.dim(1), "conv2d_circular: input channels " + shape_str(x.dims) +
                                    " do not match kernel input channels " + shape_str(k.dims));
  const int kh = k.dim(2), kw = k.dim(3);
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d_circular: kernel extents must be odd, got " + shape_str(k.dims));
  require(stride >= 1, "conv2d_circular: stride must be >= 1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = k.dim(0);
  require(stride == 1 || W % stride == 0,
          "conv2d_circular: stride " + std::to_string(stride) + " must divide width " + std::to_string(W));
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int HO = (H + stride - 1) / stride, WO = W / stride;
  const bool fast = exec_mode() == ExecMode::fast;

  Tensor<S> y({B, O, HO, WO});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int p = 0; p < HO; ++p)
        for (int q = 0; q < WO; ++q) {
          if (!fast) {
            S acc = 0;
            for (int c = 0; c < C; ++c)
              for (int u = 0; u < kh; ++u) {
                const int ih = p * stride + u - ph;
                if (ih < 0 || ih >= H) continue;
                for (int vv = 0; vv < kw; ++vv) {
                  const int iw = mod_pos(q * stride + vv - pw, W);
                  acc += x.at4(b, c, ih, iw) * k.at4(o, c, u, vv);
                }
              }
            y.at4(b, o, p, q) = acc;
          } else {
            S a0 = 0, a1 = 0;
            for (int c = 0; c < C; ++c)
              for (int u = 0; u < kh; ++u) {
                const int ih = p * stride + u - ph;
                if (ih < 0 || ih >= H) continue;
                for (int vv = 0; vv < kw; ++vv) {
                  const int iw = mod_pos(q * stride + vv - pw, W);
                  const S t = x.at4(b, c, ih, iw) * k.at4(o, c, u, vv);
                  if (vv & 1)
                    a1 += t;
                  else
                    a0 += t;
                }
              }
            y.at4(b, o, p, q) = a0 + a1;
          }
        }

  Node n;
  n.value = std::move(y);
  n.name = "conv2d_circular";
  n.inputs = {xv.id, kv.id};
  n.back = [stride, ph, pw, kh, kw](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& x = t.v(node.inputs[0]);
    const Tensor<S>& k = t.v(node.inputs[1]);
    Tensor<S>& dx = t.g(node.inputs[0]);
    Tensor<S>& dk = t.g(node.inputs[1]);
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = k.dim(0), HO = go.dim(2), WO = go.dim(3);
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o)
        for (int p = 0; p < HO; ++p)
          for (int q = 0; q < WO; ++q) {
            const S gov = go.at4(b, o, p, q);
            if (gov == S(0)) continue;
            for (int c = 0; c < C; ++c)
              for (int u = 0; u < kh; ++u) {
                const int ih = p * stride + u - ph;
                if (ih < 0 || ih >= H) continue;
                for (int vv = 0; vv < kw; ++vv) {
                  const int iw = mod_pos(q * stride + vv - pw, W);
                  dx.at4(b, c, ih, iw) += gov * k.at4(o, c, u, vv);
                  dk.at4(o, c, u, vv) += gov * x.at4(b, c, ih, iw);
                }
              }
          }
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// conv2d_circular_transposed (gather form, so a roll of the input by m maps
// to a roll of the output by stride*m with bit-identical arithmetic)

template <typename S>
Val Tape<S>::conv2d_circular_transposed(Val xv, Val kv, int stride) {
  const Tensor<S>& x = v(check(xv));
  const Tensor<S>& k = v(check(kv));
  require(x.rank() == 4, "conv2d_circular_transposed: input must be [B,C,H,W], got " + shape_str(x.dims));
  require(k.rank() == 4, "conv2d_circular_transposed: kernel must be [O,C,kh,kw], got " + shape_str(k.dims));
  require(x.dim(1) == k.dim(1),
          "conv2d_circular_transposed: input channels " + shape_str(x.dims) +
              " do not match kernel input channels " + shape_str(k.dims));
  const int kh = k.dim(2), kw = k.dim(3);
  require(kh % 2 == 1 && kw % 2 == 1,
          "conv2d_circular_transposed: kernel extents must be odd, got " + shape_str(k.dims));
  require(stride >= 1, "conv2d_circular_transposed: stride must be >= 1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = k.dim(0);
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int HO = H * stride, WO = W * stride;

  Tensor<S> y({B, O, HO, WO});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int p = 0; p < HO; ++p)
        for (int q = 0; q < WO; ++q) {
          S acc = 0;
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < kh; ++u) {
              const int pn = p - u + ph;
              if (pn < 0 || pn % stride != 0) continue;
              const int ih = pn / stride;
              if (ih >= H) continue;
              for (int vv = 0; vv < kw; ++vv) {
                const int a = q - vv + pw;
                if (mod_pos(a, stride) != 0) continue;
                const int j = (a - mod_pos(a, stride)) / stride;  // exact
                const int iw = mod_pos(j, W);
                acc += x.at4(b, c, ih, iw) * k.at4(o, c, u, vv);
              }
            }
          y.at4(b, o, p, q) = acc;
        }

  Node n;
  n.value = std::move(y);
  n.name = "conv2d_circular_transposed";
  n.inputs = {xv.id, kv.id};
  n.back = [stride, ph, pw, kh, kw](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& x = t.v(node.inputs[0]);
    const Tensor<S>& k = t.v(node.inputs[1]);
    Tensor<S>& dx = t.g(node.inputs[0]);
    Tensor<S>& dk = t.g(node.inputs[1]);
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = k.dim(0), HO = go.dim(2), WO = go.dim(3);
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
              const S xv_ = x.at4(b, c, i, j);
              S dxa = 0;
              for (int u = 0; u < kh; ++u) {
                const int p = i * stride + u - ph;
                if (p < 0 || p >= HO) continue;
                for (int vv = 0; vv < kw; ++vv) {
                  const int q = mod_pos(j * stride + vv - pw, WO);
                  const S gov = go.at4(b, o, p, q);
                  dxa += gov * k.at4(o, c, u, vv);
                  dk.at4(o, c, u, vv) += gov * xv_;
                }
              }
              dx.at4(b, c, i, j) += dxa;
            }
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// linear / matmul

template <typename S>
Val Tape<S>::linear(Val xv, Val wv, Val bv) {
  const Tensor<S>& x = v(check(xv));
  const Tensor<S>& w = v(check(wv));
  const Tensor<S>& b = v(check(bv));
  require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
          "linear: expected x:[N,din], w:[dout,din], b:[dout], got " + shape_str(x.dims) + " " +
              shape_str(w.dims) + " " + shape_str(b.dims));
  require(x.dim(1) == w.dim(1) && w.dim(0) == b.dim(0),
          "linear: shape mismatch " + shape_str(x.dims) + " vs " + shape_str(w.dims) + " vs " +
              shape_str(b.dims));
  const int N = x.dim(0), DI = x.dim(1), DO = w.dim(0);
  Tensor<S> y({N, DO});
  for (int i = 0; i < N; ++i)
    for (int o = 0; o < DO; ++o) {
      S acc = b[o];
      for (int k = 0; k < DI; ++k) acc += x.at2(i, k) * w.at2(o, k);
      y.at2(i, o) = acc;
    }
  Node n;
  n.value = std::move(y);
  n.name = "linear";
  n.inputs = {xv.id, wv.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& x = t.v(node.inputs[0]);
    const Tensor<S>& w = t.v(node.inputs[1]);
    Tensor<S>& dx = t.g(node.inputs[0]);
    Tensor<S>& dw = t.g(node.inputs[1]);
    Tensor<S>& db = t.g(node.inputs[2]);
    const int N = x.dim(0), DI = x.dim(1), DO = w.dim(0);
    for (int i = 0; i < N; ++i)
      for (int o = 0; o < DO; ++o) {
        const S gov = go.at2(i, o);
        db[o] += gov;
        for (int k = 0; k < DI; ++k) {
          dx.at2(i, k) += gov * w.at2(o, k);
          dw.at2(o, k) += gov * x.at2(i, k);
        }
      }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::matmul(Val av, Val bv) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: shape mismatch " + shape_str(a.dims) + " x " + shape_str(b.dims));
  const int N = a.dim(0), K = a.dim(1), M = b.dim(1);
  Tensor<S> y({N, M});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < M; ++j) {
      S acc = 0;
      for (int k = 0; k < K; ++k) acc += a.at2(i, k) * b.at2(k, j);
      y.at2(i, j) = acc;
    }
  Node n;
  n.value = std::move(y);
  n.name = "matmul";
  n.inputs = {av.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& a = t.v(node.inputs[0]);
    const Tensor<S>& b = t.v(node.inputs[1]);
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    const int N = a.dim(0), K = a.dim(1), M = b.dim(1);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < M; ++j) {
        const S gov = go.at2(i, j);
        for (int k = 0; k < K; ++k) {
          da.at2(i, k) += gov * b.at2(k, j);
          db.at2(k, j) += gov * a.at2(i, k);
        }
      }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::matmul_nt(Val av, Val bv) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_nt: shape mismatch " + shape_str(a.dims) + " x " + shape_str(b.dims) + "^T");
  const int N = a.dim(0), K = a.dim(1), M = b.dim(0);
  Tensor<S> y({N, M});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < M; ++j) {
      S acc = 0;
      for (int k = 0; k < K; ++k) acc += a.at2(i, k) * b.at2(j, k);
      y.at2(i, j) = acc;
    }
  Node n;
  n.value = std::move(y);
  n.name = "matmul_nt";
  n.inputs = {av.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& a = t.v(node.inputs[0]);
    const Tensor<S>& b = t.v(node.inputs[1]);
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    const int N = a.dim(0), K = a.dim(1), M = b.dim(0);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < M; ++j) {
        const S gov = go.at2(i, j);
        for (int k = 0; k < K; ++k) {
          da.at2(i, k) += gov * b.at2(j, k);
          db.at2(j, k) += gov * a.at2(i, k);
        }
      }
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// softmax over the last axis of [N,L]

template <typename S>
Val Tape<S>::softmax_rows(Val xv) {
  const Tensor<S>& x = v(check(xv));
  require(x.rank() == 2, "softmax_rows: expected [N,L], got " + shape_str(x.dims));
  const int N = x.dim(0), L = x.dim(1);
  Tensor<S> y({N, L});
  for (int i = 0; i < N; ++i) {
    S m = x.at2(i, 0);
    for (int j = 1; j < L; ++j) m = std::max(m, x.at2(i, j));
    double sum = 0.0;
    for (int j = 0; j < L; ++j) {
      const double e = std::exp(static_cast<double>(x.at2(i, j) - m));
      y.at2(i, j) = static_cast<S>(e);
      sum += e;
    }
    for (int j = 0; j < L; ++j) y.at2(i, j) = static_cast<S>(y.at2(i, j) / sum);
  }
  Node n;
  n.value = std::move(y);
  n.name = "softmax_rows";
  n.inputs = {xv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& y = node.value;
    Tensor<S>& dx = t.g(node.inputs[0]);
    const int N = y.dim(0), L = y.dim(1);
    for (int i = 0; i < N; ++i) {
      double dot = 0.0;
      for (int j = 0; j < L; ++j) dot += static_cast<double>(go.at2(i, j)) * y.at2(i, j);
      for (int j = 0; j < L; ++j)
        dx.at2(i, j) += static_cast<S>(y.at2(i, j) * (static_cast<double>(go.at2(i, j)) - dot));
    }
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// group_norm
//
// Statistics are shared across the full spatial extent, so the output is
// invariant (in value) under horizontal rolls of the input. In fixed_order
// mode the cross-column reduction is made order-invariant by accumulating
// per-column partials in a canonical order and summing them sorted; a roll
// permutes the partials, which leaves the sorted sum bit-identical.

template <typename S>
Val Tape<S>::group_norm(Val xv, int groups, Val gv, Val bv, double eps) {
  const Tensor<S>& x = v(check(xv));
  const Tensor<S>& gamma = v(check(gv));
  const Tensor<S>& beta = v(check(bv));
  require(x.rank() == 4, "group_norm: expected [B,C,H,W], got " + shape_str(x.dims));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(groups >= 1 && C % groups == 0,
          "group_norm: groups " + std::to_string(groups) + " must divide channels " + std::to_string(C));
  require(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
          "group_norm: gamma/beta must be [C]");
  const int gs = C / groups;
  const int64_t n = static_cast<int64_t>(gs) * H * W;
  const bool fast = exec_mode() == ExecMode::fast;

  Tensor<S> y({B, C, H, W});
  std::vector<double> mu(static_cast<size_t>(B) * groups), inv(static_cast<size_t>(B) * groups);
  std::vector<double> col(static_cast<size_t>(W));
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < groups; ++g) {
      const int c0 = g * gs;
      double mean = 0.0, var = 0.0;
      if (!fast) {
        for (int w = 0; w < W; ++w) {
          double acc = 0.0;
          for (int c = c0; c < c0 + gs; ++c)
            for (int h = 0; h < H; ++h) acc += static_cast<double>(x.at4(b, c, h, w));
          col[static_cast<size_t>(w)] = acc;
        }
        mean = sorted_sum(col) / static_cast<double>(n);
        for (int w = 0; w < W; ++w) {
          double acc = 0.0;
          for (int c = c0; c < c0 + gs; ++c)
            for (int h = 0; h < H; ++h) {
              const double d = static_cast<double>(x.at4(b, c, h, w)) - mean;
              acc += d * d;
            }
          col[static_cast<size_t>(w)] = acc;
        }
        var = sorted_sum(col) / static_cast<double>(n);
      } else {
        double acc = 0.0;
        for (int c = c0; c < c0 + gs; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) acc += static_cast<double>(x.at4(b, c, h, w));
        mean = acc / static_cast<double>(n);
        acc = 0.0;
        for (int c = c0; c < c0 + gs; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              const double d = static_cast<double>(x.at4(b, c, h, w)) - mean;
              acc += d * d;
            }
        var = acc / static_cast<double>(n);
      }
      const double iv = 1.0 / std::sqrt(var + eps);
      mu[static_cast<size_t>(b) * groups + g] = mean;
      inv[static_cast<size_t>(b) * groups + g] = iv;
      for (int c = c0; c < c0 + gs; ++c) {
        const double ga = static_cast<double>(gamma[c]), be = static_cast<double>(beta[c]);
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            y.at4(b, c, h, w) =
                static_cast<S>((static_cast<double>(x.at4(b, c, h, w)) - mean) * iv * ga + be);
      }
    }

  Node n2;
  n2.value = std::move(y);
  n2.name = "group_norm";
  n2.inputs = {xv.id, gv.id, bv.id};
  n2.back = [groups, mu, inv](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& x = t.v(node.inputs[0]);
    const Tensor<S>& gamma = t.v(node.inputs[1]);
    Tensor<S>& dx = t.g(node.inputs[0]);
    Tensor<S>& dgamma = t.g(node.inputs[1]);
    Tensor<S>& dbeta = t.g(node.inputs[2]);
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int gs = C / groups;
    const double n = static_cast<double>(gs) * H * W;
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < groups; ++g) {
        const int c0 = g * gs;
        const double mean = mu[static_cast<size_t>(b) * groups + g];
        const double iv = inv[static_cast<size_t>(b) * groups + g];
        double s1 = 0.0, s2 = 0.0;
        for (int c = c0; c < c0 + gs; ++c) {
          const double ga = static_cast<double>(gamma[c]);
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              const double xh = (static_cast<double>(x.at4(b, c, h, w)) - mean) * iv;
              const double gg = ga * static_cast<double>(go.at4(b, c, h, w));
              s1 += gg;
              s2 += gg * xh;
            }
        }
        for (int c = c0; c < c0 + gs; ++c) {
          const double ga = static_cast<double>(gamma[c]);
          double dg = 0.0, db = 0.0;
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              const double xh = (static_cast<double>(x.at4(b, c, h, w)) - mean) * iv;
              const double gov = static_cast<double>(go.at4(b, c, h, w));
              dx.at4(b, c, h, w) +=
                  static_cast<S>(iv * (ga * gov - s1 / n - xh * (s2 / n)));
              dg += gov * xh;
              db += gov;
            }
          dgamma[c] += static_cast<S>(dg);
          dbeta[c] += static_cast<S>(db);
        }
      }
  };
  return push(std::move(n2));
}

// ---------------------------------------------------------------------------
// silu

template <typename S>
Val Tape<S>::silu(Val xv) {
  const Tensor<S>& x = v(check(xv));
  Tensor<S> y(x.dims);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double xd = static_cast<double>(x[i]);
    y[i] = static_cast<S>(xd / (1.0 + std::exp(-xd)));
  }
  Node n;
  n.value = std::move(y);
  n.name = "silu";
  n.inputs = {xv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& x = t.v(node.inputs[0]);
    Tensor<S>& dx = t.g(node.inputs[0]);
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double xd = static_cast<double>(x[i]);
      const double sg = 1.0 / (1.0 + std::exp(-xd));
      dx[i] += static_cast<S>(static_cast<double>(go[i]) * sg * (1.0 + xd * (1.0 - sg)));
    }
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// bilinear_resize

template <typename S>
Val Tape<S>::bilinear_resize(Val xv, int oh, int ow) {
  const Tensor<S>& x = v(check(xv));
  require(x.rank() == 4, "bilinear_resize: expected [B,C,H,W], got " + shape_str(x.dims));
  require(oh >= 1 && ow >= 1, "bilinear_resize: output extents must be positive");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double sy = static_cast<double>(H) / oh, sx = static_cast<double>(W) / ow;

  struct Tap {
    int y0, y1, x0, x1;
    double fy, fx;
  };
  std::vector<Tap> taps(static_cast<size_t>(oh) * ow);
  for (int p = 0; p < oh; ++p)
    for (int q = 0; q < ow; ++q) {
      const double srcy = (p + 0.5) * sy - 0.5;
      const double srcx = (q + 0.5) * sx - 0.5;
      const double fy0 = std::floor(srcy), fx0 = std::floor(srcx);
      Tap t;
      t.fy = srcy - fy0;
      t.fx = srcx - fx0;
      const int iy0 = static_cast<int>(fy0);
      t.y0 = std::clamp(iy0, 0, H - 1);
      t.y1 = std::clamp(iy0 + 1, 0, H - 1);
      const int ix0 = static_cast<int>(fx0);
      t.x0 = mod_pos(ix0, W);
      t.x1 = mod_pos(ix0 + 1, W);
      taps[static_cast<size_t>(p) * ow + q] = t;
    }

  Tensor<S> y({B, C, oh, ow});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < oh; ++p)
        for (int q = 0; q < ow; ++q) {
          const Tap& t = taps[static_cast<size_t>(p) * ow + q];
          const double v00 = x.at4(b, c, t.y0, t.x0), v01 = x.at4(b, c, t.y0, t.x1);
          const double v10 = x.at4(b, c, t.y1, t.x0), v11 = x.at4(b, c, t.y1, t.x1);
          const double top = v00 + t.fx * (v01 - v00);
          const double bot = v10 + t.fx * (v11 - v10);
          y.at4(b, c, p, q) = static_cast<S>(top + t.fy * (bot - top));
        }

  Node n;
  n.value = std::move(y);
  n.name = "bilinear_resize";
  n.inputs = {xv.id};
  n.back = [taps, oh, ow](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& x = t.v(node.inputs[0]);
    Tensor<S>& dx = t.g(node.inputs[0]);
    const int B = x.dim(0), C = x.dim(1);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int p = 0; p < oh; ++p)
          for (int q = 0; q < ow; ++q) {
            const Tap& tp = taps[static_cast<size_t>(p) * ow + q];
            const double gov = static_cast<double>(go.at4(b, c, p, q));
            dx.at4(b, c, tp.y0, tp.x0) += static_cast<S>(gov * (1 - tp.fx) * (1 - tp.fy));
            dx.at4(b, c, tp.y0, tp.x1) += static_cast<S>(gov * tp.fx * (1 - tp.fy));
            dx.at4(b, c, tp.y1, tp.x0) += static_cast<S>(gov * (1 - tp.fx) * tp.fy);
            dx.at4(b, c, tp.y1, tp.x1) += static_cast<S>(gov * tp.fx * tp.fy);
          }
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// losses and reductions

template <typename S>
Val Tape<S>::mse(Val av, Val bv) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.same_shape(b), "mse: shape mismatch " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  Tensor<S> y({1});
  y[0] = static_cast<S>(acc / static_cast<double>(a.numel()));
  Node n;
  n.value = std::move(y);
  n.name = "mse";
  n.inputs = {av.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const double gov = static_cast<double>(node.grad[0]);
    const Tensor<S>& a = t.v(node.inputs[0]);
    const Tensor<S>& b = t.v(node.inputs[1]);
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    const double c = 2.0 * gov / static_cast<double>(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) {
      const double d = c * (static_cast<double>(a[i]) - static_cast<double>(b[i]));
      da[i] += static_cast<S>(d);
      db[i] -= static_cast<S>(d);
    }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::cross_entropy_rows(Val xv, std::vector<int> labels) {
  const Tensor<S>& x = v(check(xv));
  require(x.rank() == 2, "cross_entropy_rows: expected [N,K], got " + shape_str(x.dims));
  const int N = x.dim(0), K = x.dim(1);
  require(static_cast<int>(labels.size()) == N,
          "cross_entropy_rows: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(N) + " rows");
  for (int lb : labels)
    require(lb >= 0 && lb < K, "cross_entropy_rows: label " + std::to_string(lb) +
                                   " outside [0," + std::to_string(K) + ")");
  Tensor<S> probs({N, K});
  double acc = 0.0;
  for (int i = 0; i < N; ++i) {
    S m = x.at2(i, 0);
    for (int j = 1; j < K; ++j) m = std::max(m, x.at2(i, j));
    double sum = 0.0;
    for (int j = 0; j < K; ++j) {
      const double e = std::exp(static_cast<double>(x.at2(i, j) - m));
      probs.at2(i, j) = static_cast<S>(e);
      sum += e;
    }
    for (int j = 0; j < K; ++j) probs.at2(i, j) = static_cast<S>(probs.at2(i, j) / sum);
    acc += std::log(sum) + static_cast<double>(m) - static_cast<double>(x.at2(i, labels[i]));
  }
  Tensor<S> y({1});
  y[0] = static_cast<S>(acc / N);
  Node n;
  n.value = std::move(y);
  n.name = "cross_entropy_rows";
  n.inputs = {xv.id};
  n.back = [probs = std::move(probs), labels = std::move(labels)](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const double gov = static_cast<double>(node.grad[0]);
    Tensor<S>& dx = t.g(node.inputs[0]);
    const int N = probs.dim(0), K = probs.dim(1);
    const double c = gov / N;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < K; ++j) {
        double d = static_cast<double>(probs.at2(i, j));
        if (j == labels[static_cast<size_t>(i)]) d -= 1.0;
        dx.at2(i, j) += static_cast<S>(c * d);
      }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::weighted_mse(Val av, Val bv, Tensor<S> weights) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.same_shape(b) && a.dims == weights.dims,
          "weighted_mse: shape mismatch " + shape_str(a.dims) + " vs " + shape_str(b.dims) +
              " vs weights " + shape_str(weights.dims));
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += static_cast<double>(weights[i]) * d * d;
  }
  Tensor<S> y({1});
  y[0] = static_cast<S>(acc / static_cast<double>(a.numel()));
  Node n;
  n.value = std::move(y);
  n.name = "weighted_mse";
  n.inputs = {av.id, bv.id};
  n.back = [w = std::move(weights)](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const double gov = static_cast<double>(node.grad[0]);
    const Tensor<S>& a = t.v(node.inputs[0]);
    const Tensor<S>& b = t.v(node.inputs[1]);
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    const double c = 2.0 * gov / static_cast<double>(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) {
      const double d = c * static_cast<double>(w[i]) *
                       (static_cast<double>(a[i]) - static_cast<double>(b[i]));
      da[i] += static_cast<S>(d);
      db[i] -= static_cast<S>(d);
    }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::reduce_sum(Val xv) {
  const Tensor<S>& x = v(check(xv));
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x[i]);
  Tensor<S> y({1});
  y[0] = static_cast<S>(acc);
  Node n;
  n.value = std::move(y);
  n.name = "reduce_sum";
  n.inputs = {xv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const S gov = node.grad[0];
    Tensor<S>& dx = t.g(node.inputs[0]);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += gov;
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise and broadcast ops

template <typename S>
Val Tape<S>::add(Val av, Val bv) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.same_shape(b), "add: shape mismatch " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  Tensor<S> y(a.dims);
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  Node n;
  n.value = std::move(y);
  n.name = "add";
  n.inputs = {av.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    for (int64_t i = 0; i < go.numel(); ++i) {
      da[i] += go[i];
      db[i] += go[i];
    }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::mul(Val av, Val bv) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.same_shape(b), "mul: shape mismatch " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  Tensor<S> y(a.dims);
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
  Node n;
  n.value = std::move(y);
  n.name = "mul";
  n.inputs = {av.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& a = t.v(node.inputs[0]);
    const Tensor<S>& b = t.v(node.inputs[1]);
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    for (int64_t i = 0; i < go.numel(); ++i) {
      da[i] += go[i] * b[i];
      db[i] += go[i] * a[i];
    }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::emax(Val av, Val bv) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.same_shape(b), "emax: shape mismatch " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  Tensor<S> y(a.dims);
  for (int64_t i = 0; i < a.numel(); ++i) y[i] = std::max(a[i], b[i]);
  Node n;
  n.value = std::move(y);
  n.name = "emax";
  n.inputs = {av.id, bv.id};
  // Subgradient routes to the attaining branch; exact ties split 50/50 so the
  // zero-initialized prior paths (where both branches coincide) still train.
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& a = t.v(node.inputs[0]);
    const Tensor<S>& b = t.v(node.inputs[1]);
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    for (int64_t i = 0; i < go.numel(); ++i) {
      if (a[i] > b[i])
        da[i] += go[i];
      else if (b[i] > a[i])
        db[i] += go[i];
      else {
        da[i] += go[i] * S(0.5);
        db[i] += go[i] * S(0.5);
      }
    }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::add_bias_c(Val xv, Val bv) {
  const Tensor<S>& x = v(check(xv));
  const Tensor<S>& b = v(check(bv));
  require(x.rank() == 4 && b.rank() == 1 && b.dim(0) == x.dim(1),
          "add_bias_c: expected x:[B,C,H,W], b:[C], got " + shape_str(x.dims) + " and " +
              shape_str(b.dims));
  Tensor<S> y(x.dims);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (int bb = 0; bb < B; ++bb)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) y.at4(bb, c, h, w) = x.at4(bb, c, h, w) + b[c];
  Node n;
  n.value = std::move(y);
  n.name = "add_bias_c";
  n.inputs = {xv.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& dx = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    const int B = go.dim(0), C = go.dim(1), H = go.dim(2), W = go.dim(3);
    for (int bb = 0; bb < B; ++bb)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            dx.at4(bb, c, h, w) += go.at4(bb, c, h, w);
            acc += static_cast<double>(go.at4(bb, c, h, w));
          }
        db[c] += static_cast<S>(acc);
      }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::add_bias_bc(Val xv, Val bv) {
  const Tensor<S>& x = v(check(xv));
  const Tensor<S>& b = v(check(bv));
  require(x.rank() == 4 && b.rank() == 2 && b.dim(0) == x.dim(0) && b.dim(1) == x.dim(1),
          "add_bias_bc: expected x:[B,C,H,W], b:[B,C], got " + shape_str(x.dims) + " and " +
              shape_str(b.dims));
  Tensor<S> y(x.dims);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (int bb = 0; bb < B; ++bb)
    for (int c = 0; c < C; ++c) {
      const S bias = b.at2(bb, c);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) y.at4(bb, c, h, w) = x.at4(bb, c, h, w) + bias;
    }
  Node n;
  n.value = std::move(y);
  n.name = "add_bias_bc";
  n.inputs = {xv.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& dx = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    const int B = go.dim(0), C = go.dim(1), H = go.dim(2), W = go.dim(3);
    for (int bb = 0; bb < B; ++bb)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            dx.at4(bb, c, h, w) += go.at4(bb, c, h, w);
            acc += static_cast<double>(go.at4(bb, c, h, w));
          }
        db.at2(bb, c) += static_cast<S>(acc);
      }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::scale(Val xv, double c) {
  const Tensor<S>& x = v(check(xv));
  Tensor<S> y(x.dims);
  const S cs = static_cast<S>(c);
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * cs;
  Node n;
  n.value = std::move(y);
  n.name = "scale";
  n.inputs = {xv.id};
  n.back = [cs](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& dx = t.g(node.inputs[0]);
    for (int64_t i = 0; i < go.numel(); ++i) dx[i] += go[i] * cs;
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::scale_by(Val xv, Val sv) {
  const Tensor<S>& x = v(check(xv));
  const Tensor<S>& s = v(check(sv));
  require(s.numel() == 1, "scale_by: scale must be [1], got " + shape_str(s.dims));
  Tensor<S> y(x.dims);
  const S sc = s[0];
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * sc;
  Node n;
  n.value = std::move(y);
  n.name = "scale_by";
  n.inputs = {xv.id, sv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& x = t.v(node.inputs[0]);
    const S sc = t.v(node.inputs[1])[0];
    Tensor<S>& dx = t.g(node.inputs[0]);
    Tensor<S>& ds = t.g(node.inputs[1]);
    double acc = 0.0;
    for (int64_t i = 0; i < go.numel(); ++i) {
      dx[i] += go[i] * sc;
      acc += static_cast<double>(go[i]) * x[i];
    }
    ds[0] += static_cast<S>(acc);
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::outer(Val av, Val bv) {
  const Tensor<S>& a = v(check(av));
  const Tensor<S>& b = v(check(bv));
  require(a.rank() == 1 && b.rank() == 1,
          "outer: expected [N] and [L], got " + shape_str(a.dims) + " and " + shape_str(b.dims));
  const int N = a.dim(0), L = b.dim(0);
  Tensor<S> y({N, L});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < L; ++j) y.at2(i, j) = a[i] * b[j];
  Node n;
  n.value = std::move(y);
  n.name = "outer";
  n.inputs = {av.id, bv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    const Tensor<S>& a = t.v(node.inputs[0]);
    const Tensor<S>& b = t.v(node.inputs[1]);
    Tensor<S>& da = t.g(node.inputs[0]);
    Tensor<S>& db = t.g(node.inputs[1]);
    const int N = a.dim(0), L = b.dim(0);
    for (int i = 0; i < N; ++i) {
      double acc = 0.0;
      for (int j = 0; j < L; ++j) acc += static_cast<double>(go.at2(i, j)) * b[j];
      da[i] += static_cast<S>(acc);
    }
    for (int j = 0; j < L; ++j) {
      double acc = 0.0;
      for (int i = 0; i < N; ++i) acc += static_cast<double>(go.at2(i, j)) * a[i];
      db[j] += static_cast<S>(acc);
    }
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
Val Tape<S>::concat(const std::vector<Val>& xs, int axis) {
  require(!xs.empty(), "concat: no inputs");
  std::vector<int> ids;
  const Tensor<S>& first = v(check(xs[0]));
  const int rank = first.rank();
  require(axis >= 0 && axis < rank, "concat: axis out of range");
  std::vector<int> out_dims = first.dims;
  int64_t axis_total = 0;
  for (Val xv : xs) {
    const Tensor<S>& t = v(check(xv));
    require(t.rank() == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis)
        require(t.dims[static_cast<size_t>(d)] == first.dims[static_cast<size_t>(d)],
                "concat: shape mismatch " + shape_str(t.dims) + " vs " + shape_str(first.dims));
    axis_total += t.dim(axis);
    ids.push_back(xv.id);
  }
  out_dims[static_cast<size_t>(axis)] = static_cast<int>(axis_total);

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first.dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= first.dim(d);

  Tensor<S> y(out_dims);
  int64_t offset = 0;
  for (Val xv : xs) {
    const Tensor<S>& t = v(xv.id);
    const int64_t block = t.dim(axis) * inner;
    for (int64_t ou = 0; ou < outer; ++ou) {
      const S* src = t.data.data() + ou * block;
      S* dst = y.data.data() + ou * (axis_total * inner) + offset;
      std::copy(src, src + block, dst);
    }
    offset += block;
  }

  Node n;
  n.value = std::move(y);
  n.name = "concat";
  n.inputs = ids;
  n.back = [outer, inner, axis_total](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    int64_t offset = 0;
    for (int input : node.inputs) {
      Tensor<S>& dx = t.g(input);
      const int64_t block = dx.numel() / outer;
      for (int64_t ou = 0; ou < outer; ++ou) {
        const S* src = go.data.data() + ou * (axis_total * inner) + offset;
        S* dst = dx.data.data() + ou * block;
        for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
      }
      offset += block;
    }
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::reshape(Val xv, std::vector<int> dims) {
  const Tensor<S>& x = v(check(xv));
  require(Tensor<S>::count(dims) == x.numel(),
          "reshape: element count mismatch " + shape_str(x.dims) + " -> " + shape_str(dims));
  Tensor<S> y;
  y.dims = dims;
  y.data = x.data;
  Node n;
  n.value = std::move(y);
  n.name = "reshape";
  n.inputs = {xv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& dx = t.g(node.inputs[0]);
    for (int64_t i = 0; i < go.numel(); ++i) dx[i] += go[i];
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::to_tokens(Val xv) {
  const Tensor<S>& x = v(check(xv));
  require(x.rank() == 4 && x.dim(0) == 1,
          "to_tokens: expected [1,C,H,W], got " + shape_str(x.dims));
  const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> y({H * W, C});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) y.at2(h * W + w, c) = x.at4(0, c, h, w);
  Node n;
  n.value = std::move(y);
  n.name = "to_tokens";
  n.inputs = {xv.id};
  n.back = [](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& dx = t.g(node.inputs[0]);
    const int C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) dx.at4(0, c, h, w) += go.at2(h * W + w, c);
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::from_tokens(Val tv, int h, int w) {
  const Tensor<S>& t = v(check(tv));
  require(t.rank() == 2 && t.dim(0) == h * w,
          "from_tokens: expected [" + std::to_string(h * w) + ",C], got " + shape_str(t.dims));
  const int C = t.dim(1);
  Tensor<S> y({1, C, h, w});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) y.at4(0, c, i, j) = t.at2(i * w + j, c);
  Node n;
  n.value = std::move(y);
  n.name = "from_tokens";
  n.inputs = {tv.id};
  n.back = [h, w](Tape& tp, int id) {
    const auto& node = tp.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& dt = tp.g(node.inputs[0]);
    const int C = dt.dim(1);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) dt.at2(i * w + j, c) += go.at4(0, c, i, j);
  };
  return push(std::move(n));
}

template <typename S>
Val Tape<S>::embed(Val tablev, std::vector<int> ids) {
  const Tensor<S>& table = v(check(tablev));
  require(table.rank() == 2, "embed: table must be [V,d], got " + shape_str(table.dims));
  const int V = table.dim(0), D = table.dim(1);
  for (int id : ids)
    require(id >= 0 && id < V,
            "embed: token id " + std::to_string(id) + " out of vocabulary [0," + std::to_string(V) + ")");
  const int L = static_cast<int>(ids.size());
  Tensor<S> y({L, D});
  for (int l = 0; l < L; ++l)
    for (int d = 0; d < D; ++d) y.at2(l, d) = table.at2(ids[static_cast<size_t>(l)], d);
  Node n;
  n.value = std::move(y);
  n.name = "embed";
  n.inputs = {tablev.id};
  n.back = [ids](Tape& t, int id) {
    const auto& node = t.nodes_[static_cast<size_t>(id)];
    const Tensor<S>& go = node.grad;
    Tensor<S>& dtab = t.g(node.inputs[0]);
    const int D = dtab.dim(1);
    for (size_t l = 0; l < ids.size(); ++l)
      for (int d = 0; d < D; ++d) dtab.at2(ids[l], d) += go.at2(static_cast<int>(l), d);
  };
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

template <typename S>
void Tape<S>::backward(Val loss) {
  const int lid = check(loss);
  require(v(lid).numel() == 1, "backward: loss must be a scalar, got " + shape_str(v(lid).dims));
  for (int id = 0; id <= lid; ++id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor<S>& value = n.ext ? *n.ext : n.value;
    n.grad = Tensor<S>(value.dims, S(0));
  }
  nodes_[static_cast<size_t>(lid)].grad[0] = S(1);
  for (int id = lid; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.back) n.back(*this, id);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace pano
