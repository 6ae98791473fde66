#include "frad/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "kernels.hpp"

namespace frad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;

[[noreturn]] void shape_fail(const char* op, const Tensor& a) {
  throw ShapeError(std::string(op) + ": invalid shape " + shape_str(a.shape));
}

[[noreturn]] void shape_fail2(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " and " +
                   shape_str(b.shape));
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kConv1d: return "conv1d";
    case Op::kLinear: return "linear";
    case Op::kRelu: return "relu";
    case Op::kGelu: return "gelu";
    case Op::kTanh: return "tanh";
    case Op::kLayerNorm: return "layernorm";
    case Op::kSoftmax: return "softmax";
    case Op::kAttention: return "attention";
    case Op::kMeanPool: return "mean-pool";
    case Op::kSum: return "sum";
    case Op::kL2Norm: return "l2-norm";
    case Op::kMse: return "mse";
    case Op::kCrossEntropy: return "cross-entropy";
    case Op::kCosineSim: return "cosine-similarity";
    case Op::kSlice: return "slice";
    case Op::kConcat: return "concat";
    case Op::kReshape: return "reshape";
    case Op::kMaskFill: return "mask-fill";
  }
  return "?";
}

const Tensor& Value::tensor() const { return tape->node(id).value; }

const Tensor* Value::grad() const {
  const auto& g = tape->node(id).grad;
  return g ? &*g : nullptr;
}

NodeId Tape::push(Op op, std::vector<NodeId> parents, Tensor value, OpAttrs attrs,
                  std::vector<Tensor> saved) {
  Node n;
  n.op = op;
  n.parents = std::move(parents);
  n.value = std::move(value);
  n.attrs = std::move(attrs);
  n.saved = std::move(saved);
  n.requires_grad = false;
  for (NodeId p : n.parents) {
    if (nodes_[p].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (check_finite_ && !n.value.all_finite()) {
    throw std::runtime_error(std::string("non-finite result from op ") + op_name(op));
  }
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

void Tape::check_same_tape(Value v) const {
  if (v.tape != this) throw std::logic_error("value belongs to a different tape");
}

Value Tape::leaf(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(t);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{this, nodes_.size() - 1};
}

Value Tape::param(Tensor t) { return leaf(std::move(t), mode_ == TapeMode::kTraining); }

Value Tape::add(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (!ta.same_shape(tb)) shape_fail2("add", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += tb.data[i];
  return Value{this, push(Op::kAdd, {a.id, b.id}, std::move(out))};
}

Value Tape::sub(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (!ta.same_shape(tb)) shape_fail2("sub", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= tb.data[i];
  return Value{this, push(Op::kSub, {a.id, b.id}, std::move(out))};
}

Value Tape::mul(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (!ta.same_shape(tb)) shape_fail2("mul", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= tb.data[i];
  return Value{this, push(Op::kMul, {a.id, b.id}, std::move(out))};
}

Value Tape::matmul(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) {
    shape_fail2("matmul", ta, tb);
  }
  return Value{this, push(Op::kMatMul, {a.id, b.id}, kernels::matmul(ta, tb))};
}

Value Tape::conv1d(Value x, Value w, Value b, long long stride, long long padding) {
  check_same_tape(x);
  check_same_tape(w);
  check_same_tape(b);
  const Tensor& tx = x.tensor();
  const Tensor& tw = w.tensor();
  const Tensor& tb = b.tensor();
  if (tx.rank() != 2 || tw.rank() != 3 || tx.shape[1] != tw.shape[1]) {
    shape_fail2("conv1d", tx, tw);
  }
  if (tb.rank() != 1 || tb.shape[0] != tw.shape[0]) shape_fail2("conv1d", tw, tb);
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv1d: bad stride/padding");
  const long long t_in = static_cast<long long>(tx.shape[0]);
  const long long kk = static_cast<long long>(tw.shape[2]);
  const long long span = t_in + 2 * padding - kk;
  if (span < 0 || span % stride != 0) {
    throw ShapeError("conv1d: input " + shape_str(tx.shape) + " incompatible with kernel " +
                     shape_str(tw.shape) + " stride " + std::to_string(stride) + " padding " +
                     std::to_string(padding));
  }
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.padding = padding;
  return Value{this, push(Op::kConv1d, {x.id, w.id, b.id},
                          kernels::conv1d(tx, tw, tb, stride, padding), std::move(attrs))};
}

Value Tape::linear(Value x, Value w, Value b) {
  check_same_tape(x);
  check_same_tape(w);
  check_same_tape(b);
  const Tensor& tx = x.tensor();
  const Tensor& tw = w.tensor();
  const Tensor& tb = b.tensor();
  if (tx.rank() != 2 || tw.rank() != 2 || tx.shape[1] != tw.shape[0]) {
    shape_fail2("linear", tx, tw);
  }
  if (tb.rank() != 1 || tb.shape[0] != tw.shape[1]) shape_fail2("linear", tw, tb);
  return Value{this, push(Op::kLinear, {x.id, w.id, b.id}, kernels::linear(tx, tw, tb))};
}

Value Tape::relu(Value x) {
  check_same_tape(x);
  Tensor out = x.tensor();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return Value{this, push(Op::kRelu, {x.id}, std::move(out))};
}

Value Tape::gelu(Value x) {
  check_same_tape(x);
  Tensor out = x.tensor();
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return Value{this, push(Op::kGelu, {x.id}, std::move(out))};
}

Value Tape::tanh(Value x) {
  check_same_tape(x);
  Tensor out = x.tensor();
  for (double& v : out.data) v = std::tanh(v);
  return Value{this, push(Op::kTanh, {x.id}, std::move(out))};
}

Value Tape::layernorm(Value x, Value gain, Value bias, double eps) {
  check_same_tape(x);
  check_same_tape(gain);
  check_same_tape(bias);
  const Tensor& tx = x.tensor();
  const Tensor& tg = gain.tensor();
  const Tensor& tb = bias.tensor();
  if (tx.rank() != 2 || tg.rank() != 1 || tg.shape[0] != tx.shape[1]) {
    shape_fail2("layernorm", tx, tg);
  }
  if (!tg.same_shape(tb)) shape_fail2("layernorm", tg, tb);
  Tensor xhat, invstd;
  Tensor out = kernels::layernorm(tx, tg, tb, eps, xhat, invstd);
  OpAttrs attrs;
  attrs.eps = eps;
  return Value{this, push(Op::kLayerNorm, {x.id, gain.id, bias.id}, std::move(out),
                          std::move(attrs), {std::move(xhat), std::move(invstd)})};
}

Value Tape::softmax(Value x) {
  check_same_tape(x);
  const Tensor& tx = x.tensor();
  if (tx.rank() < 1) shape_fail("softmax", tx);
  return Value{this, push(Op::kSoftmax, {x.id}, kernels::softmax(tx))};
}

Value Tape::attention(Value q, Value k, Value v) {
  check_same_tape(q);
  check_same_tape(k);
  check_same_tape(v);
  const Tensor& tq = q.tensor();
  const Tensor& tk = k.tensor();
  const Tensor& tv = v.tensor();
  if (tq.rank() != 2 || !tq.same_shape(tk) || !tq.same_shape(tv)) {
    shape_fail2("attention", tq, tk);
  }
  Tensor probs;
  Tensor out = kernels::attention(tq, tk, tv, probs);
  return Value{this, push(Op::kAttention, {q.id, k.id, v.id}, std::move(out), {},
                          {std::move(probs)})};
}

Value Tape::mean_pool(Value x) {
  check_same_tape(x);
  const Tensor& tx = x.tensor();
  if (tx.rank() != 2) shape_fail("mean-pool", tx);
  const std::size_t t = tx.shape[0], d = tx.shape[1];
  Tensor out = Tensor::zeros({1, d});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.data[j] += tx.data[i * d + j];
  }
  const double inv = 1.0 / static_cast<double>(t);
  for (double& o : out.data) o *= inv;
  return Value{this, push(Op::kMeanPool, {x.id}, std::move(out))};
}

Value Tape::sum(Value x) {
  check_same_tape(x);
  double s = 0.0;
  for (double v : x.tensor().data) s += v;
  return Value{this, push(Op::kSum, {x.id}, Tensor::scalar(s))};
}

Value Tape::l2_norm(Value x) {
  check_same_tape(x);
  double s = 0.0;
  for (double v : x.tensor().data) s += v * v;
  return Value{this, push(Op::kL2Norm, {x.id}, Tensor::scalar(std::sqrt(s)))};
}

Value Tape::mse(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (!ta.same_shape(tb)) shape_fail2("mse", ta, tb);
  double s = 0.0;
  for (std::size_t i = 0; i < ta.numel(); ++i) {
    const double d = ta.data[i] - tb.data[i];
    s += d * d;
  }
  return Value{this, push(Op::kMse, {a.id, b.id},
                          Tensor::scalar(s / static_cast<double>(ta.numel())))};
}

Value Tape::cross_entropy(Value logits, std::vector<int> labels) {
  check_same_tape(logits);
  const Tensor& tl = logits.tensor();
  if (tl.rank() != 2 || tl.shape[0] != labels.size()) {
    throw ShapeError("cross-entropy: logits " + shape_str(tl.shape) + " need one label per row, got " +
                     std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= tl.shape[1]) {
      throw std::invalid_argument("cross-entropy: label out of range");
    }
  }
  Tensor probs;
  Tensor out = kernels::cross_entropy(tl, labels, probs);
  OpAttrs attrs;
  attrs.labels = std::move(labels);
  return Value{this, push(Op::kCrossEntropy, {logits.id}, std::move(out), std::move(attrs),
                          {std::move(probs)})};
}

Value Tape::cosine_similarity(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.numel() != tb.numel()) shape_fail2("cosine-similarity", ta, tb);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < ta.numel(); ++i) {
    dot += ta.data[i] * tb.data[i];
    na += ta.data[i] * ta.data[i];
    nb += tb.data[i] * tb.data[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const double s = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (na * nb);
  return Value{this, push(Op::kCosineSim, {a.id, b.id}, Tensor::scalar(s), {},
                          {Tensor::row({dot, na, nb})})};
}

Value Tape::slice(Value x, long long dim, long long start, long long end) {
  check_same_tape(x);
  const Tensor& tx = x.tensor();
  const long long rank = static_cast<long long>(tx.rank());
  if (rank < 1 || rank > 2 || dim < 0 || dim >= rank) shape_fail("slice", tx);
  const long long extent = static_cast<long long>(tx.shape[dim]);
  if (start < 0 || end <= start || end > extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(end) +
                     ") out of bounds for " + shape_str(tx.shape));
  }
  OpAttrs attrs;
  attrs.dim = dim;
  attrs.start = start;
  attrs.end = end;
  Tensor out;
  if (rank == 1) {
    out = Tensor::zeros({static_cast<std::size_t>(end - start)});
    for (long long i = start; i < end; ++i) out.data[i - start] = tx.data[i];
  } else if (dim == 0) {
    const std::size_t cols = tx.shape[1];
    out = Tensor::zeros({static_cast<std::size_t>(end - start), cols});
    for (long long i = start; i < end; ++i) {
      for (std::size_t j = 0; j < cols; ++j) out.data[(i - start) * cols + j] = tx.data[i * cols + j];
    }
  } else {
    const std::size_t rows = tx.shape[0], cols = tx.shape[1];
    out = Tensor::zeros({rows, static_cast<std::size_t>(end - start)});
    for (std::size_t i = 0; i < rows; ++i) {
      for (long long j = start; j < end; ++j) {
        out.data[i * (end - start) + (j - start)] = tx.data[i * cols + j];
      }
    }
  }
  return Value{this, push(Op::kSlice, {x.id}, std::move(out), std::move(attrs))};
}

Value Tape::concat(std::span<const Value> xs, long long dim) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  for (Value v : xs) check_same_tape(v);
  const Tensor& first = xs[0].tensor();
  std::vector<NodeId> parents;
  parents.reserve(xs.size());
  for (Value v : xs) parents.push_back(v.id);

  Tensor out;
  if (first.rank() == 1 || dim == 0) {
    std::size_t total = 0;
    for (Value v : xs) {
      const Tensor& t = v.tensor();
      if (t.rank() != first.rank() || (t.rank() == 2 && t.shape[1] != first.shape[1])) {
        shape_fail2("concat", first, t);
      }
      total += t.shape[0];
    }
    out = first.rank() == 1 ? Tensor::zeros({total}) : Tensor::zeros({total, first.shape[1]});
    std::size_t off = 0;
    for (Value v : xs) {
      const Tensor& t = v.tensor();
      for (std::size_t i = 0; i < t.numel(); ++i) out.data[off + i] = t.data[i];
      off += t.numel();
    }
  } else if (dim == 1 && first.rank() == 2) {
    const std::size_t rows = first.shape[0];
    std::size_t total_cols = 0;
    for (Value v : xs) {
      const Tensor& t = v.tensor();
      if (t.rank() != 2 || t.shape[0] != rows) shape_fail2("concat", first, t);
      total_cols += t.shape[1];
    }
    out = Tensor::zeros({rows, total_cols});
    std::size_t col_off = 0;
    for (Value v : xs) {
      const Tensor& t = v.tensor();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < t.shape[1]; ++j) {
          out.data[i * total_cols + col_off + j] = t.data[i * t.shape[1] + j];
        }
      }
      col_off += t.shape[1];
    }
  } else {
    shape_fail("concat", first);
  }
  OpAttrs attrs;
  attrs.dim = dim;
  return Value{this, push(Op::kConcat, std::move(parents), std::move(out), std::move(attrs))};
}

Value Tape::reshape(Value x, std::vector<std::size_t> shape) {
  check_same_tape(x);
  const Tensor& tx = x.tensor();
  if (shape_numel(shape) != tx.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(tx.shape) + " as " + shape_str(shape));
  }
  Tensor out(shape, tx.data);
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return Value{this, push(Op::kReshape, {x.id}, std::move(out), std::move(attrs))};
}

Value Tape::mask_fill(Value x, Value fill, std::vector<std::uint8_t> mask) {
  check_same_tape(x);
  check_same_tape(fill);
  const Tensor& tx = x.tensor();
  const Tensor& tf = fill.tensor();
  if (tx.rank() != 2 || tf.rank() != 1 || tf.shape[0] != tx.shape[1] ||
      mask.size() != tx.shape[0]) {
    shape_fail2("mask-fill", tx, tf);
  }
  Tensor out = tx;
  const std::size_t d = tx.shape[1];
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = tf.data[j];
  }
  OpAttrs attrs;
  attrs.mask = std::move(mask);
  return Value{this, push(Op::kMaskFill, {x.id, fill.id}, std::move(out), std::move(attrs))};
}

void Tape::backward(Value root) {
  check_same_tape(root);
  const Tensor& rt = root.tensor();
  if (!rt.is_scalar()) {
    throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(rt.shape));
  }
  // Overwrite semantics: every call starts from a clean slate.
  for (Node& n : nodes_) n.grad.reset();

  if (!nodes_[root.id].requires_grad) return;

  // Mark the grad-tracking subgraph reachable from the root.
  std::vector<unsigned char> track(nodes_.size(), 0);
  std::vector<NodeId> stack{root.id};
  track[root.id] = 1;
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    for (NodeId p : nodes_[id].parents) {
      if (!track[p] && nodes_[p].requires_grad) {
        track[p] = 1;
        stack.push_back(p);
      }
    }
  }

  std::vector<std::size_t> pending;
  if (check_topology_) {
    pending.assign(nodes_.size(), 0);
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!track[id]) continue;
      for (NodeId p : nodes_[id].parents) {
        if (track[p]) ++pending[p];
      }
    }
  }

  nodes_[root.id].grad = Tensor::full(rt.shape, 1.0);
  for (std::size_t idx = root.id + 1; idx-- > 0;) {
    if (!track[idx] || !nodes_[idx].grad) continue;
    if (check_topology_ && pending[idx] != 0) {
      throw std::logic_error("backward: grad of node " + std::to_string(idx) +
                             " read before all consumers finished");
    }
    kernels::backprop_node(nodes_[idx], nodes_, track);
    if (check_topology_) {
      for (NodeId p : nodes_[idx].parents) {
        if (track[p]) --pending[p];
      }
    }
  }
}

}  // namespace frad
