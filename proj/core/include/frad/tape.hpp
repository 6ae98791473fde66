#ifndef FRAD_TAPE_HPP
#define FRAD_TAPE_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frad/tensor.hpp"

namespace frad {

enum class Op {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kConv1d,
  kLinear,
  kRelu,
  kGelu,
  kTanh,
  kLayerNorm,
  kSoftmax,
  kAttention,
  kMeanPool,
  kSum,
  kL2Norm,
  kMse,
  kCrossEntropy,
  kCosineSim,
  kSlice,
  kConcat,
  kReshape,
  kMaskFill,
};

const char* op_name(Op op);

// Per-op constants recorded at forward time.
struct OpAttrs {
  long long stride = 0;
  long long padding = 0;
  long long dim = 0;
  long long start = 0;
  long long end = 0;
  double eps = 0.0;
  std::vector<int> labels;            // cross-entropy targets
  std::vector<std::uint8_t> mask;     // mask-fill row selector
  std::vector<std::size_t> shape;     // reshape target
};

using NodeId = std::size_t;

struct Node {
  Op op = Op::kLeaf;
  std::vector<NodeId> parents;
  Tensor value;
  std::optional<Tensor> grad;
  bool requires_grad = false;
  OpAttrs attrs;
  std::vector<Tensor> saved;  // forward intermediates reused by backward
};

// Graphs are built in training or frozen mode. Frozen mode is for models
// whose parameters must not receive gradients; parameter leaves bound on a
// frozen tape never track grad while data leaves can still opt in.
enum class TapeMode { kTraining, kFrozen };

class Tape;

// Lightweight handle to a node on a tape.
struct Value {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& tensor() const;
  const Tensor* grad() const;  // nullptr when absent
};

// Append-only reverse-mode autodiff tape. Node ids are dense and
// topologically ordered (parents always precede children), construction and
// backward are single-threaded per tape, and no op mutates an input tensor.
class Tape {
 public:
  explicit Tape(TapeMode mode = TapeMode::kTraining) : mode_(mode) {}

  TapeMode mode() const { return mode_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }

  // Instrumentation. Topology checking asserts that backward never reads a
  // node's grad before all of its consumers have accumulated into it;
  // finite checking scans every forward result for NaN/Inf.
  void set_topology_check(bool on) { check_topology_ = on; }
  void set_finite_check(bool on) { check_finite_ = on; }

  Value leaf(Tensor t, bool requires_grad = false);
  Value param(Tensor t);     // requires grad in training mode, frozen otherwise
  Value constant(Tensor t) { return leaf(std::move(t), false); }

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value matmul(Value a, Value b);
  // x: [T, c_in], w: [c_out, c_in, k], b: [c_out] -> [t_out, c_out]
  Value conv1d(Value x, Value w, Value b, long long stride, long long padding);
  // x: [T, in], w: [in, out], b: [out] -> [T, out]
  Value linear(Value x, Value w, Value b);
  Value relu(Value x);
  Value gelu(Value x);
  Value tanh(Value x);
  // x: [T, d], gain/bias: [d]; row-wise normalization
  Value layernorm(Value x, Value gain, Value bias, double eps = 1e-5);
  Value softmax(Value x);  // over last dimension
  // q, k, v: [T, d] -> softmax(q k^T / sqrt(d)) v
  Value attention(Value q, Value k, Value v);
  Value mean_pool(Value x);  // [T, d] -> [1, d], mean over time
  Value sum(Value x);        // -> scalar
  Value l2_norm(Value x);    // Frobenius over all entries -> scalar
  Value mse(Value a, Value b);
  Value cross_entropy(Value logits, std::vector<int> labels);  // mean NLL
  Value cosine_similarity(Value a, Value b);
  Value slice(Value x, long long dim, long long start, long long end);
  Value concat(std::span<const Value> xs, long long dim);
  Value reshape(Value x, std::vector<std::size_t> shape);
  // x: [T, d], fill: [d]; rows with mask[t] != 0 are replaced by fill
  Value mask_fill(Value x, Value fill, std::vector<std::uint8_t> mask);

  // Reverse-mode sweep from a scalar root. Populates grad for every
  // grad-tracking node reachable from the root; leaves every other node's
  // grad absent. Repeated calls overwrite previous grads.
  void backward(Value root);

 private:
  friend struct Value;

  NodeId push(Op op, std::vector<NodeId> parents, Tensor value, OpAttrs attrs = {},
              std::vector<Tensor> saved = {});
  void check_same_tape(Value v) const;

  TapeMode mode_;
  std::vector<Node> nodes_;
  bool check_topology_ = false;
  bool check_finite_ = false;
};

}  // namespace frad

#endif
