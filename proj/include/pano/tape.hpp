#ifndef PANO_TAPE_HPP
#define PANO_TAPE_HPP

#include <functional>
#include <string>
#include <vector>

#include "pano/tensor.hpp"

namespace pano {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Val {
  int id = -1;
};

// Reverse-mode autodiff over value-semantic tensors. Append-only record of
// operations; node inputs always precede the node, so creation order is a
// topological order and backward() is a single reverse sweep.
//
// Leaves come in two flavors: owned constants (leaf) and external parameters
// (param) that reference tensors owned by a model. Gradients accumulate per
// node and are read back after backward().
template <typename S>
class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  Val leaf(Tensor<S> v, std::string name = "leaf");
  Val param(const Tensor<S>* p, std::string name = "param");

  const Tensor<S>& val(Val v) const;
  const Tensor<S>& grad(Val v) const;

  // x:[B,C,H,W], k:[O,C,kh,kw], odd kernel, horizontal circular padding,
  // vertical zero padding. stride > 1 requires W % stride == 0.
  Val conv2d_circular(Val x, Val k, int stride = 1);
  // Adjoint layout: x:[B,C,H,W] -> [B,O,H*s,W*s], k:[O,C,kh,kw].
  Val conv2d_circular_transposed(Val x, Val k, int stride);
  // x:[N,din], w:[dout,din], b:[dout] -> [N,dout]
  Val linear(Val x, Val w, Val b);
  Val matmul(Val a, Val b);     // [N,K]x[K,M]
  Val matmul_nt(Val a, Val b);  // [N,K]x[M,K] -> [N,M]
  Val softmax_rows(Val x);      // [N,L], softmax over L
  // x:[B,C,H,W], per-(batch,group) statistics over (C/groups, H, W).
  Val group_norm(Val x, int groups, Val gamma, Val beta, double eps = 1e-5);
  Val silu(Val x);
  // Half-pixel sampling, horizontal circular, vertical clamped, lerp form
  // (so constant maps resize to the same constant exactly).
  Val bilinear_resize(Val x, int oh, int ow);
  Val mse(Val a, Val b);                              // -> [1]
  Val weighted_mse(Val a, Val b, Tensor<S> weights);  // -> [1], weights constant
  // x:[N,K] logits, labels in [0,K) -> [1], mean of -log softmax(x)[label]
  Val cross_entropy_rows(Val x, std::vector<int> labels);
  Val concat(const std::vector<Val>& xs, int axis);
  Val add(Val a, Val b);
  Val mul(Val a, Val b);
  Val emax(Val a, Val b);  // element-wise max; gradient splits 50/50 on exact ties
  Val add_bias_c(Val x, Val b);   // x:[B,C,H,W] + b:[C]
  Val add_bias_bc(Val x, Val b);  // x:[B,C,H,W] + b:[B,C]
  Val scale(Val x, double c);
  Val scale_by(Val x, Val s);  // s:[1]
  Val outer(Val a, Val b);     // a:[N], b:[L] -> [N,L]
  Val reduce_sum(Val x);       // -> [1]
  Val reshape(Val x, std::vector<int> dims);
  Val to_tokens(Val x);                  // [1,C,H,W] -> [H*W, C]
  Val from_tokens(Val t, int h, int w);  // [h*w, C] -> [1,C,h,w]
  Val embed(Val table, std::vector<int> ids);  // table:[V,d] -> [L,d]

  void backward(Val loss);

  bool has_nonfinite() const { return !nonfinite_node_.empty(); }
  const std::string& nonfinite_node() const { return nonfinite_node_; }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor<S> value;               // owned value (empty when ext is set)
    const Tensor<S>* ext = nullptr;
    Tensor<S> grad;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> back;
    std::string name;
  };

  const Tensor<S>& v(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.ext ? *n.ext : n.value;
  }
  Tensor<S>& g(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  int check(Val x) const;
  Val push(Node n);

  std::vector<Node> nodes_;
  bool check_finite_ = true;
  std::string nonfinite_node_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pano

#endif
