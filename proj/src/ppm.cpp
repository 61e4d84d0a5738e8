#include "pano/ppm.hpp"

namespace pano {

PpmSite PpmSite::create(ParamRegistry& reg, const std::string& prefix, int d, int d_txt,
                        uint64_t seed) {
  Rng rng(mix_seed(seed, 0x99a7ull));
  reg.add(prefix + ".wq", init_linear(d, d, rng));
  reg.add(prefix + ".wk", init_linear(d, d_txt, rng));
  reg.add(prefix + ".wv", init_linear(d, d_txt, rng));
  // zero projection: the block starts as an exact identity and grows in
  reg.add(prefix + ".wproj", init_zeros({d, d}));
  // gates must start nonzero or the lambdas would never receive gradient
  reg.add(prefix + ".phi_d", init_normal({d_txt}, rng, 0.5));
  reg.add(prefix + ".phi_m", init_normal({d_txt}, rng, 0.5));
  reg.add(prefix + ".lambda1", init_zeros({1}));
  reg.add(prefix + ".lambda2", init_zeros({1}));
  return PpmSite{prefix, d, d_txt};
}

PpmSite PpmSite::attach(const ParamRegistry& reg, const std::string& prefix, int d, int d_txt) {
  for (const char* f : {".wq", ".wk", ".wv", ".wproj", ".phi_d", ".phi_m", ".lambda1", ".lambda2"})
    if (!reg.has(prefix + f)) throw std::out_of_range("PpmSite: registry missing " + prefix + f);
  if (reg.get(prefix + ".wq").dims != std::vector<int>{d, d} ||
      reg.get(prefix + ".wk").dims != std::vector<int>{d, d_txt})
    throw std::invalid_argument("PpmSite: parameter shapes under " + prefix +
                                " do not match d=" + std::to_string(d) +
                                " d_txt=" + std::to_string(d_txt));
  return PpmSite{prefix, d, d_txt};
}

Val ppm_attend(Tape<float>& t, GraphParams& p, const PpmSite& site, Val x, Val c, Val depth_n,
               Val mask_n, Val* attn_out) {
  const auto& xd = t.val(x).dims;
  const auto& cd = t.val(c).dims;
  if (xd.size() != 2 || xd[1] != site.d)
    throw std::invalid_argument("ppm_attend: x must be [N," + std::to_string(site.d) + "], got " +
                                shape_str(xd));
  if (cd.size() != 2 || cd[1] != site.d_txt)
    throw std::invalid_argument("ppm_attend: c must be [L," + std::to_string(site.d_txt) +
                                "], got " + shape_str(cd));
  const std::string& pre = site.prefix;
  PpmWeights w{p(pre + ".wq"),    p(pre + ".wk"),      p(pre + ".wv"),
               p(pre + ".wproj"), p(pre + ".phi_d"),   p(pre + ".phi_m"),
               p(pre + ".lambda1"), p(pre + ".lambda2")};
  return ppm_attend_graph(t, x, c, depth_n, mask_n, w, attn_out);
}

}  // namespace pano
