#ifndef PANO_MODEL_HPP
#define PANO_MODEL_HPP

#include <map>
#include <string>
#include <vector>

#include "pano/tape.hpp"

namespace pano {

// Ordered, named parameter store. Order of registration is the canonical
// order for checkpoints, optimizer state, and gradient reduction.
struct ParamRegistry {
  std::vector<std::string> names;
  std::vector<TensorF> values;
  std::map<std::string, int> index;

  TensorF& add(const std::string& name, TensorF init);
  TensorF& get(const std::string& name);
  const TensorF& get(const std::string& name) const;
  bool has(const std::string& name) const { return index.count(name) > 0; }
  int64_t total_params() const;

  // Checkpoint: <dir>/params.txt (name, shape, file per line) plus one PT36
  // tensor file per parameter, in registry order.
  void save(const std::string& dir) const;
  void load(const std::string& dir);  // names/shapes must match registration
};

// init helpers (all deterministic in the given rng)
TensorF init_conv(int out_c, int in_c, int kh, int kw, Rng& rng, double gain = 1.0);
TensorF init_linear(int out_d, int in_d, Rng& rng, double gain = 1.0);
TensorF init_zeros(std::vector<int> dims);
TensorF init_ones(std::vector<int> dims);
TensorF init_normal(std::vector<int> dims, Rng& rng, double std_dev);

// Binds registry parameters into one graph on demand, so model code can say
// p("enc.c1.w") and reuse the same Val for repeated access.
struct GraphParams {
  Tape<float>* tape = nullptr;
  ParamRegistry* reg = nullptr;
  std::map<std::string, Val> bound;

  GraphParams(Tape<float>& t, ParamRegistry& r) : tape(&t), reg(&r) {}

  Val operator()(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    Val v = tape->param(&reg->get(name), name);
    bound.emplace(name, v);
    return v;
  }

  // gradients for every registry parameter, zeros where unused, in order
  std::vector<TensorF> collect_grads() {
    std::vector<TensorF> out;
    out.reserve(reg->values.size());
    for (size_t i = 0; i < reg->values.size(); ++i) {
      auto it = bound.find(reg->names[i]);
      if (it == bound.end()) {
        out.push_back(TensorF(reg->values[i].dims, 0.0f));
      } else {
        out.push_back(tape->grad(it->second));
      }
    }
    return out;
  }
};

// Adaptive moment estimation with bias correction; state arrays are parallel
// to the registry order.
struct Adam {
  double lr = 2e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<TensorF> m, v;

  void init(const ParamRegistry& reg);
  // masked: parameters whose name starts with any prefix in `frozen` are
  // skipped (their state also stays untouched)
  void step(ParamRegistry& reg, const std::vector<TensorF>& grads,
            const std::vector<std::string>& frozen = {});
};

}  // namespace pano

#endif
