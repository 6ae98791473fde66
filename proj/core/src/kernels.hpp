#ifndef FRAD_SRC_KERNELS_HPP
#define FRAD_SRC_KERNELS_HPP

#include <vector>

#include "frad/tape.hpp"

namespace frad::kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, long long stride,
              long long padding);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                 Tensor& xhat_out, Tensor& invstd_out);
Tensor softmax(const Tensor& x);
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor& probs_out);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor& probs_out);

// Accumulates d(root)/d(parent) into the parents of `node`. Parent grads are
// zero-initialized on first touch by the caller.
void backprop_node(const Node& node, std::vector<Node>& nodes,
                   const std::vector<unsigned char>& track);

}  // namespace frad::kernels

#endif
