#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "pano/ppm.hpp"

using namespace pano;

namespace {

struct BruteInputs {
  int n, l, d, d_txt;
  std::vector<double> x, c, depth, mask;        // row-major
  std::vector<double> wq, wk, wv, wproj;        // [out,in] row-major
  std::vector<double> phi_d, phi_m;
  double lambda1 = 0, lambda2 = 0;
};

BruteInputs random_inputs(uint64_t seed, int n, int l, int d, int d_txt) {
  Rng rng(seed);
  BruteInputs b;
  b.n = n;
  b.l = l;
  b.d = d;
  b.d_txt = d_txt;
  auto fill = [&](std::vector<double>& v, int count) {
    v.resize(count);
    for (auto& e : v) e = rng.normal();
  };
  fill(b.x, n * d);
  fill(b.c, l * d_txt);
  fill(b.depth, n);
  fill(b.mask, n);
  fill(b.wq, d * d);
  fill(b.wk, d * d_txt);
  fill(b.wv, d * d_txt);
  fill(b.wproj, d * d);
  fill(b.phi_d, d_txt);
  fill(b.phi_m, d_txt);
  return b;
}

// independent plain-loop evaluation of the biased attention block
std::vector<double> brute_force(const BruteInputs& b) {
  const int n = b.n, l = b.l, d = b.d, dt = b.d_txt;
  std::vector<double> q(n * d, 0.0), k(l * d, 0.0), v(l * d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < d; ++o)
      for (int j = 0; j < d; ++j) q[i * d + o] += b.x[i * d + j] * b.wq[o * d + j];
  for (int i = 0; i < l; ++i)
    for (int o = 0; o < d; ++o)
      for (int j = 0; j < dt; ++j) {
        k[i * d + o] += b.c[i * dt + j] * b.wk[o * dt + j];
        v[i * d + o] += b.c[i * dt + j] * b.wv[o * dt + j];
      }
  std::vector<double> out(n * d, 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(l);
    for (int j = 0; j < l; ++j) {
      double a = 0;
      for (int e = 0; e < d; ++e) a += q[i * d + e] * k[j * d + e];
      a /= std::sqrt(static_cast<double>(d));
      double gd = 0, gm = 0;
      for (int e = 0; e < dt; ++e) {
        gd += b.c[j * dt + e] * b.phi_d[e];
        gm += b.c[j * dt + e] * b.phi_m[e];
      }
      const double ad = a + b.lambda1 * b.depth[i] * gd;
      const double am = a + b.lambda2 * b.mask[i] * gm;
      row[j] = ad > am ? ad : am;
    }
    double mx = row[0];
    for (double e : row) mx = std::max(mx, e);
    double z = 0;
    for (int j = 0; j < l; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (int j = 0; j < l; ++j) row[j] /= z;
    std::vector<double> att(d, 0.0);
    for (int j = 0; j < l; ++j)
      for (int e = 0; e < d; ++e) att[e] += row[j] * v[j * d + e];
    for (int o = 0; o < d; ++o) {
      double p = 0;
      for (int e = 0; e < d; ++e) p += att[e] * b.wproj[o * d + e];
      out[i * d + o] = p + b.x[i * d + o];
    }
  }
  return out;
}

template <typename S>
Tensor<S> tt(const std::vector<double>& v, std::vector<int> dims) {
  Tensor<S> t(std::move(dims));
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<S>(v[i]);
  return t;
}

// runs the graph under test from a BruteInputs draw, in the given precision
template <typename S>
Tensor<S> run_graph(const BruteInputs& b, Tensor<S>* attn = nullptr) {
  Tape<S> t;
  PpmWeights w{t.leaf(tt<S>(b.wq, {b.d, b.d}), "wq"),
               t.leaf(tt<S>(b.wk, {b.d, b.d_txt}), "wk"),
               t.leaf(tt<S>(b.wv, {b.d, b.d_txt}), "wv"),
               t.leaf(tt<S>(b.wproj, {b.d, b.d}), "wproj"),
               t.leaf(tt<S>(b.phi_d, {b.d_txt}), "phi_d"),
               t.leaf(tt<S>(b.phi_m, {b.d_txt}), "phi_m"),
               t.leaf(Tensor<S>({1}, static_cast<S>(b.lambda1)), "l1"),
               t.leaf(Tensor<S>({1}, static_cast<S>(b.lambda2)), "l2")};
  Val attn_v;
  Val out = ppm_attend_graph(t, t.leaf(tt<S>(b.x, {b.n, b.d}), "x"),
                             t.leaf(tt<S>(b.c, {b.l, b.d_txt}), "c"),
                             t.leaf(tt<S>(b.depth, {b.n}), "depth"),
                             t.leaf(tt<S>(b.mask, {b.n}), "mask"), w, &attn_v);
  if (attn) *attn = t.val(attn_v);
  return t.val(out);
}

}  // namespace

TEST_CASE("zero lambdas reduce to plain cross attention against the oracle") {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    BruteInputs b = random_inputs(seed, 6, 3, 4, 4);
    b.lambda1 = 0;
    b.lambda2 = 0;
    const std::vector<double> want = brute_force(b);
    Tensor<double> got = run_graph<double>(b);
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(std::abs(got[static_cast<int64_t>(i)] - want[i]) < 1e-6);
    // float path stays within runtime rounding of the same oracle
    TensorF gotf = run_graph<float>(b);
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(std::abs(gotf[static_cast<int64_t>(i)] - want[i]) < 1e-4);
  }
}

TEST_CASE("biased attention matches the oracle with nonzero lambdas") {
  for (uint64_t seed : {11u, 12u, 13u}) {
    BruteInputs b = random_inputs(seed, 8, 4, 8, 6);  // rectangular prompt width
    b.lambda1 = 0.9;
    b.lambda2 = -0.6;
    const std::vector<double> want = brute_force(b);
    Tensor<double> got = run_graph<double>(b);
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(std::abs(got[static_cast<int64_t>(i)] - want[i]) < 1e-9);
    TensorF gotf = run_graph<float>(b);
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(std::abs(gotf[static_cast<int64_t>(i)] - want[i]) < 1e-4);
  }
}

TEST_CASE("identical maps gates and lambdas collapse the max to a single bias") {
  BruteInputs b = random_inputs(21, 6, 3, 4, 4);
  b.mask = b.depth;
  b.phi_m = b.phi_d;
  b.lambda1 = b.lambda2 = 0.8;
  Tensor<double> got = run_graph<double>(b);

  // single-bias reference: with identical branches the max is the branch
  const std::vector<double> want = brute_force(b);
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(std::abs(got[static_cast<int64_t>(i)] - want[i]) < 1e-9);
}

TEST_CASE("attention rows sum to one for random lambdas") {
  for (uint64_t seed : {31u, 32u, 33u, 34u}) {
    BruteInputs b = random_inputs(seed, 10, 5, 6, 6);
    Rng rng(seed ^ 0xf00d);
    b.lambda1 = rng.normal() * 2.0;
    b.lambda2 = rng.normal() * 2.0;
    TensorF attn;
    run_graph<float>(b, &attn);
    REQUIRE(attn.dims == std::vector<int>{10, 5});
    for (int i = 0; i < 10; ++i) {
      double s = 0;
      for (int j = 0; j < 5; ++j) s += attn.at2(i, j);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("rolling tokens and maps together rolls the output rows") {
  // tokens laid out on a 4x8 grid, rolled by dw columns
  const int h = 4, w = 8, d = 6, n = h * w;
  BruteInputs b = random_inputs(41, n, 4, d, 6);
  b.lambda1 = 0.7;
  b.lambda2 = 0.4;

  auto roll_rows = [&](const std::vector<double>& v, int per_row, int dw) {
    std::vector<double> out(v.size());
    for (int vv = 0; vv < h; ++vv)
      for (int u = 0; u < w; ++u)
        for (int e = 0; e < per_row; ++e)
          out[(vv * w + u) * per_row + e] = v[(vv * w + (u + dw) % w) * per_row + e];
    return out;
  };

  TensorF base = run_graph<float>(b);
  for (int dw : {1, 3, 5}) {
    BruteInputs r = b;
    r.x = roll_rows(b.x, d, dw);
    r.depth = roll_rows(b.depth, 1, dw);
    r.mask = roll_rows(b.mask, 1, dw);
    TensorF got = run_graph<float>(r);
    for (int vv = 0; vv < h; ++vv)
      for (int u = 0; u < w; ++u)
        for (int e = 0; e < d; ++e)
          CHECK(got[(static_cast<int64_t>(vv) * w + u) * d + e] ==
                base[(static_cast<int64_t>(vv) * w + (u + dw) % w) * d + e]);
  }
}

TEST_CASE("gated bias varies across prompt tokens and shifts the output") {
  BruteInputs b = random_inputs(51, 6, 4, 4, 4);
  b.lambda1 = 1.1;

  // bias row spread: lambda1 * depth[n] * gate_d(l) not constant in l
  for (int i = 0; i < b.n; ++i) {
    if (std::abs(b.depth[i]) < 1e-6) continue;
    double lo = 1e30, hi = -1e30;
    for (int j = 0; j < b.l; ++j) {
      double gd = 0;
      for (int e = 0; e < b.d_txt; ++e) gd += b.c[j * b.d_txt + e] * b.phi_d[e];
      const double entry = b.lambda1 * b.depth[i] * gd;
      lo = std::min(lo, entry);
      hi = std::max(hi, entry);
    }
    CHECK(hi - lo > 0.0);
  }

  BruteInputs plain = b;
  plain.lambda1 = 0;
  plain.lambda2 = 0;
  TensorF with_bias = run_graph<float>(b);
  TensorF without = run_graph<float>(plain);
  double diff = 0;
  for (int64_t i = 0; i < with_bias.numel(); ++i)
    diff = std::max(diff, std::abs(static_cast<double>(with_bias[i]) - without[i]));
  CHECK(diff > 1e-4);
}

TEST_CASE("site registration and registry binding work end to end") {
  ParamRegistry reg;
  PpmSite site = PpmSite::create(reg, "net.mid.ppm", 8, 6, 7);
  CHECK(reg.get("net.mid.ppm.wq").dims == std::vector<int>{8, 8});
  CHECK(reg.get("net.mid.ppm.wk").dims == std::vector<int>{8, 6});
  CHECK(reg.get("net.mid.ppm.lambda1")[0] == 0.0f);
  CHECK(reg.get("net.mid.ppm.lambda2")[0] == 0.0f);
  for (int64_t i = 0; i < reg.get("net.mid.ppm.wproj").numel(); ++i)
    CHECK(reg.get("net.mid.ppm.wproj")[i] == 0.0f);

  Rng rng(3);
  Tape<float> t;
  GraphParams p(t, reg);
  Val x = t.leaf(randn<float>({12, 8}, rng), "x");
  Val c = t.leaf(randn<float>({4, 6}, rng), "c");
  Val dm = t.leaf(randn<float>({12}, rng), "d");
  Val mm = t.leaf(randn<float>({12}, rng), "m");
  Val out = ppm_attend(t, p, site, x, c, dm, mm);
  CHECK(t.val(out).dims == std::vector<int>{12, 8});

  // zero wproj at init: block is an exact identity on x
  for (int64_t i = 0; i < t.val(out).numel(); ++i) CHECK(t.val(out)[i] == t.val(x)[i]);

  // attach validates presence and shape
  CHECK_THROWS_AS(PpmSite::attach(reg, "net.other", 8, 6), std::out_of_range);
  CHECK_THROWS_AS(PpmSite::attach(reg, "net.mid.ppm", 4, 6), std::invalid_argument);
  PpmSite again = PpmSite::attach(reg, "net.mid.ppm", 8, 6);
  CHECK(again.d == 8);

  // shape errors
  Val bad = t.leaf(randn<float>({12, 4}, rng), "bad");
  CHECK_THROWS_AS(ppm_attend(t, p, site, bad, c, dm, mm), std::invalid_argument);
  Val short_map = t.leaf(randn<float>({5}, rng), "short");
  CHECK_THROWS_AS(ppm_attend(t, p, site, x, c, short_map, mm), std::invalid_argument);
}

TEST_CASE("lambdas receive gradient from the tied start") {
  ParamRegistry reg;
  PpmSite site = PpmSite::create(reg, "ppm", 6, 6, 9);
  // nonzero wproj so loss gradient reaches the attention matrix
  Rng rng(17);
  reg.get("ppm.wproj") = randn<float>({6, 6}, rng, 0.3);

  Tape<float> t;
  GraphParams p(t, reg);
  Val x = t.leaf(randn<float>({9, 6}, rng), "x");
  Val c = t.leaf(randn<float>({3, 6}, rng), "c");
  Val dm = t.leaf(randn<float>({9}, rng), "d");
  Val mm = t.leaf(randn<float>({9}, rng), "m");
  Val out = ppm_attend(t, p, site, x, c, dm, mm);
  t.backward(t.mse(out, t.leaf(TensorF({9, 6}, 0.0f), "target")));

  double g1 = 0, g2 = 0;
  std::vector<TensorF> grads = p.collect_grads();
  for (size_t i = 0; i < reg.names.size(); ++i) {
    if (reg.names[i] == "ppm.lambda1") g1 = grads[i][0];
    if (reg.names[i] == "ppm.lambda2") g2 = grads[i][0];
  }
  CHECK(g1 != 0.0);
  CHECK(g2 != 0.0);
}
