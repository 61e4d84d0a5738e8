#ifndef PANO_GRADCHECK_HPP
#define PANO_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "pano/tape.hpp"

namespace pano {

// Central-difference oracle for backward implementations, double precision.
//
// build(tape, leaves) must construct the op under test from the given leaves
// (one per input tensor, in order) and return its output. The harness probes
// analytic gradients of loss = sum(output * r) for a fixed random r against
// (loss(x+eps) - loss(x-eps)) / (2 eps), element by element.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "input i, flat index j"
};

inline GradCheckResult finite_diff_check(
    const std::function<Val(Tape<double>&, const std::vector<Val>&)>& build,
    std::vector<Tensor<double>> inputs, uint64_t seed, double eps = 1e-5) {
  Rng rng(mix_seed(seed, 0x67726164));

  auto forward_loss = [&](const std::vector<Tensor<double>>& ins,
                          Tensor<double>* r_out) -> double {
    Tape<double> tape(false);
    std::vector<Val> leaves;
    leaves.reserve(ins.size());
    for (const auto& t : ins) leaves.push_back(tape.leaf(t));
    Val y = build(tape, leaves);
    Tensor<double> r = r_out && r_out->numel() > 0
                           ? *r_out
                           : randn<double>(tape.val(y).dims, rng);
    if (r_out && r_out->numel() == 0) *r_out = r;
    Val loss = tape.reduce_sum(tape.mul(y, tape.leaf(r, "probe")));
    return tape.val(loss)[0];
  };

  // Analytic pass.
  Tensor<double> r;
  Tape<double> tape(false);
  std::vector<Val> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Val y = build(tape, leaves);
  r = randn<double>(tape.val(y).dims, rng);
  Val loss = tape.reduce_sum(tape.mul(y, tape.leaf(r, "probe")));
  tape.backward(loss);

  GradCheckResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& analytic = tape.grad(leaves[i]);
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      const double keep = inputs[i][j];
      inputs[i][j] = keep + eps;
      const double up = forward_loss(inputs, &r);
      inputs[i][j] = keep - eps;
      const double dn = forward_loss(inputs, &r);
      inputs[i][j] = keep;
      const double num = (up - dn) / (2.0 * eps);
      const double ana = analytic[j];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(i) + ", flat index " + std::to_string(j);
      }
    }
  }
  return res;
}

}  // namespace pano

#endif
