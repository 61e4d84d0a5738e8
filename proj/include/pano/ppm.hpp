#ifndef PANO_PPM_HPP
#define PANO_PPM_HPP

#include <cmath>
#include <stdexcept>
#include <string>

#include "pano/model.hpp"

namespace pano {

// Prompt cross-attention with depth- and mask-biased logits.
//
// Spatial tokens x:[N,d] attend to prompt tokens c:[L,d_txt]. Plain scaled
// dot-product logits A = q k^T / sqrt(d) receive two additive biases built
// from per-token spatial maps: M'[n,l] = map[n] * (c_l . phi), one for depth
// and one for the aliased-region mask, scaled by learnable lambda1/lambda2.
// The per-entry maximum of the two biased logit matrices goes through the row
// softmax, and the attended values return through a projection plus residual.
//
// The map-to-matrix lift uses a learned per-prompt-token gate (c_l . phi): a
// gateless broadcast would make the bias constant along l, which the row
// softmax cancels, turning the whole mechanism into a no-op.
//
// lambda1 = lambda2 = 0 at init, so training starts at baseline attention;
// gradient still reaches both lambdas because the two biased matrices tie
// exactly at 0 and the max gradient splits 50/50 across tied branches.
struct PpmSite {
  std::string prefix;  // parameter name prefix, e.g. "net.mid.ppm"
  int d = 0;           // spatial token width
  int d_txt = 0;       // prompt token width

  // registers wq [d,d], wk [d,d_txt], wv [d,d_txt], wproj [d,d] (zero), phi_d
  // and phi_m [d_txt], lambda1/lambda2 [1] (zero)
  static PpmSite create(ParamRegistry& reg, const std::string& prefix, int d, int d_txt,
                        uint64_t seed);
  // binds to parameters already present under prefix (checkpoint reload path)
  static PpmSite attach(const ParamRegistry& reg, const std::string& prefix, int d, int d_txt);
};

struct PpmWeights {
  Val wq, wk, wv, wproj, phi_d, phi_m, lambda1, lambda2;
};

// Core graph, scalar-generic so the finite-difference harness can run it in
// double precision. x:[N,d], c:[L,d_txt], depth_n/mask_n:[N]. Returns [N,d];
// optionally exposes the attention matrix ([N,L], row-stochastic).
template <typename S>
Val ppm_attend_graph(Tape<S>& t, Val x, Val c, Val depth_n, Val mask_n, const PpmWeights& w,
                     Val* attn_out = nullptr) {
  const auto& xd = t.val(x).dims;
  const auto& cd = t.val(c).dims;
  if (xd.size() != 2 || cd.size() != 2)
    throw std::invalid_argument("ppm_attend: x and c must be rank-2 token matrices, got " +
                                shape_str(xd) + " and " + shape_str(cd));
  const int n = xd[0], d = xd[1], l = cd[0], d_txt = cd[1];
  if (t.val(depth_n).numel() != n || t.val(mask_n).numel() != n)
    throw std::invalid_argument(
        "ppm_attend: depth/mask token maps must have one entry per spatial token (" +
        std::to_string(n) + "), got " + shape_str(t.val(depth_n).dims) + " and " +
        shape_str(t.val(mask_n).dims));

  Val q = t.matmul_nt(x, w.wq);  // [N,d]
  Val k = t.matmul_nt(c, w.wk);  // [L,d]
  Val v = t.matmul_nt(c, w.wv);  // [L,d]
  Val logits = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));

  // per-prompt-token gate values phi(c_l) = c_l . phi  -> [L]
  Val gate_d = t.reshape(t.matmul(c, t.reshape(w.phi_d, {d_txt, 1})), {l});
  Val gate_m = t.reshape(t.matmul(c, t.reshape(w.phi_m, {d_txt, 1})), {l});
  Val bias_d = t.outer(t.reshape(depth_n, {n}), gate_d);  // [N,L]
  Val bias_m = t.outer(t.reshape(mask_n, {n}), gate_m);

  Val a_d = t.add(logits, t.scale_by(bias_d, w.lambda1));
  Val a_m = t.add(logits, t.scale_by(bias_m, w.lambda2));
  Val attn = t.softmax_rows(t.emax(a_d, a_m));
  if (attn_out) *attn_out = attn;
  return t.add(t.matmul_nt(t.matmul(attn, v), w.wproj), x);
}

// Registry-bound form used by the denoiser.
Val ppm_attend(Tape<float>& t, GraphParams& p, const PpmSite& site, Val x, Val c, Val depth_n,
               Val mask_n, Val* attn_out = nullptr);

}  // namespace pano

#endif
