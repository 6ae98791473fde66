#include "kernels.hpp"

#include <cmath>
#include <cstddef>

namespace frad::kernels {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

Tensor& grad_ref(Node& n) {
  if (!n.grad) n.grad = Tensor::zeros(n.value.shape);
  return *n.grad;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = out.data.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, long long stride,
              long long padding) {
  const long long t_in = static_cast<long long>(x.shape[0]);
  const long long c_in = static_cast<long long>(x.shape[1]);
  const long long c_out = static_cast<long long>(w.shape[0]);
  const long long kk = static_cast<long long>(w.shape[2]);
  const long long t_out = (t_in + 2 * padding - kk) / stride + 1;
  Tensor out = Tensor::zeros({static_cast<std::size_t>(t_out), static_cast<std::size_t>(c_out)});
  const double* X = x.data.data();
  const double* W = w.data.data();
  double* O = out.data.data();
  for (long long t = 0; t < t_out; ++t) {
    double* orow = O + t * c_out;
    for (long long co = 0; co < c_out; ++co) orow[co] = b.data[co];
    for (long long k = 0; k < kk; ++k) {
      const long long ti = t * stride + k - padding;
      if (ti < 0 || ti >= t_in) continue;
      const double* xrow = X + ti * c_in;
      for (long long co = 0; co < c_out; ++co) {
        const double* wrow = W + (co * c_in) * kk + k;
        double acc = 0.0;
        for (long long ci = 0; ci < c_in; ++ci) acc += wrow[ci * kk] * xrow[ci];
        orow[co] += acc;
      }
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul(x, w);
  const std::size_t rows = out.shape[0], cols = out.shape[1];
  for (std::size_t i = 0; i < rows; ++i) {
    double* orow = out.data.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) orow[j] += b.data[j];
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                 Tensor& xhat_out, Tensor& invstd_out) {
  const std::size_t rows = x.shape[0], d = x.shape[1];
  Tensor out = Tensor::zeros(x.shape);
  xhat_out = Tensor::zeros(x.shape);
  invstd_out = Tensor::zeros({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x.data.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double invstd = 1.0 / std::sqrt(var + eps);
    invstd_out.data[i] = invstd;
    double* hr = xhat_out.data.data() + i * d;
    double* orw = out.data.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * invstd;
      orw[j] = hr[j] * gain.data[j] + bias.data[j];
    }
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const std::size_t d = x.shape.back();
  const std::size_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x.data.data() + i * d;
    double* orw = out.data.data() + i * d;
    double m = xr[0];
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      orw[j] = std::exp(xr[j] - m);
      z += orw[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < d; ++j) orw[j] *= inv;
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor& probs_out) {
  const std::size_t t = q.shape[0], d = q.shape[1];
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor scores = Tensor::zeros({t, t});
  for (std::size_t i = 0; i < t; ++i) {
    const double* qr = q.data.data() + i * d;
    for (std::size_t j = 0; j < t; ++j) {
      const double* kr = k.data.data() + j * d;
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += qr[p] * kr[p];
      scores.data[i * t + j] = s * scale;
    }
  }
  probs_out = softmax(scores);
  return matmul(probs_out, v);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor& probs_out) {
  const std::size_t n = logits.shape[0], c = logits.shape[1];
  probs_out = Tensor::zeros(logits.shape);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* lr = logits.data.data() + i * c;
    double* pr = probs_out.data.data() + i * c;
    double m = lr[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, lr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      pr[j] = std::exp(lr[j] - m);
      z += pr[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < c; ++j) pr[j] *= inv;
    const double lse = m + std::log(z);
    loss += lse - lr[static_cast<std::size_t>(labels[i])];
  }
  return Tensor::scalar(loss / static_cast<double>(n));
}

namespace {

void backprop_matmul(const Node& node, std::vector<Node>& nodes,
                     const std::vector<unsigned char>& track) {
  const Tensor& a = nodes[node.parents[0]].value;
  const Tensor& b = nodes[node.parents[1]].value;
  const Tensor& dout = *node.grad;
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (track[node.parents[0]]) {
    Tensor& da = grad_ref(nodes[node.parents[0]]);
    for (std::size_t i = 0; i < m; ++i) {
      const double* drow = dout.data.data() + i * n;
      double* darow = da.data.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b.data.data() + p * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += drow[j] * brow[j];
        darow[p] += s;
      }
    }
  }
  if (track[node.parents[1]]) {
    Tensor& db = grad_ref(nodes[node.parents[1]]);
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data.data() + i * k;
      const double* drow = dout.data.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        double* dbrow = db.data.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * drow[j];
      }
    }
  }
}

void backprop_conv1d(const Node& node, std::vector<Node>& nodes,
                     const std::vector<unsigned char>& track) {
  const Tensor& x = nodes[node.parents[0]].value;
  const Tensor& w = nodes[node.parents[1]].value;
  const Tensor& dout = *node.grad;
  const long long stride = node.attrs.stride, padding = node.attrs.padding;
  const long long t_in = static_cast<long long>(x.shape[0]);
  const long long c_in = static_cast<long long>(x.shape[1]);
  const long long c_out = static_cast<long long>(w.shape[0]);
  const long long kk = static_cast<long long>(w.shape[2]);
  const long long t_out = static_cast<long long>(dout.shape[0]);

  const bool want_dx = track[node.parents[0]];
  const bool want_dw = track[node.parents[1]];
  const bool want_db = track[node.parents[2]];
  Tensor* dx = want_dx ? &grad_ref(nodes[node.parents[0]]) : nullptr;
  Tensor* dw = want_dw ? &grad_ref(nodes[node.parents[1]]) : nullptr;
  Tensor* db = want_db ? &grad_ref(nodes[node.parents[2]]) : nullptr;

  for (long long t = 0; t < t_out; ++t) {
    const double* drow = dout.data.data() + t * c_out;
    if (want_db) {
      for (long long co = 0; co < c_out; ++co) db->data[co] += drow[co];
    }
    if (!want_dx && !want_dw) continue;
    for (long long k = 0; k < kk; ++k) {
      const long long ti = t * stride + k - padding;
      if (ti < 0 || ti >= t_in) continue;
      const double* xrow = x.data.data() + ti * c_in;
      double* dxrow = want_dx ? dx->data.data() + ti * c_in : nullptr;
      for (long long co = 0; co < c_out; ++co) {
        const double dv = drow[co];
        const double* wrow = w.data.data() + (co * c_in) * kk + k;
        if (want_dx) {
          for (long long ci = 0; ci < c_in; ++ci) dxrow[ci] += wrow[ci * kk] * dv;
        }
        if (want_dw) {
          double* dwrow = dw->data.data() + (co * c_in) * kk + k;
          for (long long ci = 0; ci < c_in; ++ci) dwrow[ci * kk] += xrow[ci] * dv;
        }
      }
    }
  }
}

void backprop_linear(const Node& node, std::vector<Node>& nodes,
                     const std::vector<unsigned char>& track) {
  const Tensor& x = nodes[node.parents[0]].value;
  const Tensor& w = nodes[node.parents[1]].value;
  const Tensor& dout = *node.grad;
  const std::size_t m = x.shape[0], k = x.shape[1], n = w.shape[1];
  if (track[node.parents[0]]) {
    Tensor& dx = grad_ref(nodes[node.parents[0]]);
    for (std::size_t i = 0; i < m; ++i) {
      const double* drow = dout.data.data() + i * n;
      double* dxrow = dx.data.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* wrow = w.data.data() + p * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += drow[j] * wrow[j];
        dxrow[p] += s;
      }
    }
  }
  if (track[node.parents[1]]) {
    Tensor& dw = grad_ref(nodes[node.parents[1]]);
    for (std::size_t i = 0; i < m; ++i) {
      const double* xrow = x.data.data() + i * k;
      const double* drow = dout.data.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = xrow[p];
        double* dwrow = dw.data.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) dwrow[j] += xv * drow[j];
      }
    }
  }
  if (track[node.parents[2]]) {
    Tensor& db = grad_ref(nodes[node.parents[2]]);
    for (std::size_t i = 0; i < m; ++i) {
      const double* drow = dout.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) db.data[j] += drow[j];
    }
  }
}

void backprop_layernorm(const Node& node, std::vector<Node>& nodes,
                        const std::vector<unsigned char>& track) {
  const Tensor& dout = *node.grad;
  const Tensor& gain = nodes[node.parents[1]].value;
  const Tensor& xhat = node.saved[0];
  const Tensor& invstd = node.saved[1];
  const std::size_t rows = dout.shape[0], d = dout.shape[1];
  const bool want_dx = track[node.parents[0]];
  const bool want_dg = track[node.parents[1]];
  const bool want_db = track[node.parents[2]];
  Tensor* dx = want_dx ? &grad_ref(nodes[node.parents[0]]) : nullptr;
  Tensor* dg = want_dg ? &grad_ref(nodes[node.parents[1]]) : nullptr;
  Tensor* db = want_db ? &grad_ref(nodes[node.parents[2]]) : nullptr;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* dr = dout.data.data() + i * d;
    const double* hr = xhat.data.data() + i * d;
    if (want_dg || want_db) {
      for (std::size_t j = 0; j < d; ++j) {
        if (want_dg) dg->data[j] += dr[j] * hr[j];
        if (want_db) db->data[j] += dr[j];
      }
    }
    if (want_dx) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dg_j = dr[j] * gain.data[j];
        m1 += dg_j;
        m2 += dg_j * hr[j];
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      double* dxr = dx->data.data() + i * d;
      const double is = invstd.data[i];
      for (std::size_t j = 0; j < d; ++j) {
        const double dg_j = dr[j] * gain.data[j];
        dxr[j] += is * (dg_j - m1 - hr[j] * m2);
      }
    }
  }
}

void backprop_softmax(const Node& node, std::vector<Node>& nodes,
                      const std::vector<unsigned char>& track) {
  if (!track[node.parents[0]]) return;
  const Tensor& y = node.value;
  const Tensor& dout = *node.grad;
  Tensor& dx = grad_ref(nodes[node.parents[0]]);
  const std::size_t d = y.shape.back();
  const std::size_t rows = y.numel() / d;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* yr = y.data.data() + i * d;
    const double* dr = dout.data.data() + i * d;
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += yr[j] * dr[j];
    double* dxr = dx.data.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) dxr[j] += yr[j] * (dr[j] - dot);
  }
}

void backprop_attention(const Node& node, std::vector<Node>& nodes,
                        const std::vector<unsigned char>& track) {
  const Tensor& q = nodes[node.parents[0]].value;
  const Tensor& k = nodes[node.parents[1]].value;
  const Tensor& v = nodes[node.parents[2]].value;
  const Tensor& probs = node.saved[0];
  const Tensor& dout = *node.grad;
  const std::size_t t = q.shape[0], d = q.shape[1];
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  // dv = P^T dout
  if (track[node.parents[2]]) {
    Tensor& dv = grad_ref(nodes[node.parents[2]]);
    for (std::size_t i = 0; i < t; ++i) {
      const double* pr = probs.data.data() + i * t;
      const double* dr = dout.data.data() + i * d;
      for (std::size_t j = 0; j < t; ++j) {
        const double pv = pr[j];
        double* dvr = dv.data.data() + j * d;
        for (std::size_t p = 0; p < d; ++p) dvr[p] += pv * dr[p];
      }
    }
  }
  if (!track[node.parents[0]] && !track[node.parents[1]]) return;

  // dS = P o (dP - rowdot(dP, P)), dP = dout v^T
  Tensor ds = Tensor::zeros({t, t});
  for (std::size_t i = 0; i < t; ++i) {
    const double* dr = dout.data.data() + i * d;
    const double* pr = probs.data.data() + i * t;
    double* dsr = ds.data.data() + i * t;
    double rowdot = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      const double* vr = v.data.data() + j * d;
      double dp = 0.0;
      for (std::size_t p = 0; p < d; ++p) dp += dr[p] * vr[p];
      dsr[j] = dp;
      rowdot += dp * pr[j];
    }
    for (std::size_t j = 0; j < t; ++j) dsr[j] = pr[j] * (dsr[j] - rowdot) * scale;
  }
  if (track[node.parents[0]]) {
    Tensor& dq = grad_ref(nodes[node.parents[0]]);
    for (std::size_t i = 0; i < t; ++i) {
      const double* dsr = ds.data.data() + i * t;
      double* dqr = dq.data.data() + i * d;
      for (std::size_t j = 0; j < t; ++j) {
        const double sv = dsr[j];
        const double* kr = k.data.data() + j * d;
        for (std::size_t p = 0; p < d; ++p) dqr[p] += sv * kr[p];
      }
    }
  }
  if (track[node.parents[1]]) {
    Tensor& dk = grad_ref(nodes[node.parents[1]]);
    for (std::size_t i = 0; i < t; ++i) {
      const double* dsr = ds.data.data() + i * t;
      const double* qr = q.data.data() + i * d;
      for (std::size_t j = 0; j < t; ++j) {
        const double sv = dsr[j];
        double* dkr = dk.data.data() + j * d;
        for (std::size_t p = 0; p < d; ++p) dkr[p] += sv * qr[p];
      }
    }
  }
}

void backprop_cosine(const Node& node, std::vector<Node>& nodes,
                     const std::vector<unsigned char>& track) {
  const Tensor& a = nodes[node.parents[0]].value;
  const Tensor& b = nodes[node.parents[1]].value;
  const double dot = node.saved[0].data[0];
  const double na = node.saved[0].data[1];
  const double nb = node.saved[0].data[2];
  if (na == 0.0 || nb == 0.0) {
    // Degenerate input: similarity is pinned to 0, gradient is defined as 0.
    if (track[node.parents[0]]) grad_ref(nodes[node.parents[0]]);
    if (track[node.parents[1]]) grad_ref(nodes[node.parents[1]]);
    return;
  }
  const double dy = node.grad->data[0];
  const double s = dot / (na * nb);
  const std::size_t n = a.numel();
  if (track[node.parents[0]]) {
    Tensor& da = grad_ref(nodes[node.parents[0]]);
    const double c1 = 1.0 / (na * nb), c2 = s / (na * na);
    for (std::size_t i = 0; i < n; ++i) da.data[i] += dy * (b.data[i] * c1 - a.data[i] * c2);
  }
  if (track[node.parents[1]]) {
    Tensor& db = grad_ref(nodes[node.parents[1]]);
    const double c1 = 1.0 / (na * nb), c2 = s / (nb * nb);
    for (std::size_t i = 0; i < n; ++i) db.data[i] += dy * (a.data[i] * c1 - b.data[i] * c2);
  }
}

}  // namespace

void backprop_node(const Node& node, std::vector<Node>& nodes,
                   const std::vector<unsigned char>& track) {
  switch (node.op) {
    case Op::kLeaf:
      return;
    case Op::kAdd: {
      const Tensor& dout = *node.grad;
      for (int side = 0; side < 2; ++side) {
        if (!track[node.parents[side]]) continue;
        Tensor& dp = grad_ref(nodes[node.parents[side]]);
        for (std::size_t i = 0; i < dout.numel(); ++i) dp.data[i] += dout.data[i];
      }
      return;
    }
    case Op::kSub: {
      const Tensor& dout = *node.grad;
      if (track[node.parents[0]]) {
        Tensor& da = grad_ref(nodes[node.parents[0]]);
        for (std::size_t i = 0; i < dout.numel(); ++i) da.data[i] += dout.data[i];
      }
      if (track[node.parents[1]]) {
        Tensor& db = grad_ref(nodes[node.parents[1]]);
        for (std::size_t i = 0; i < dout.numel(); ++i) db.data[i] -= dout.data[i];
      }
      return;
    }
    case Op::kMul: {
      const Tensor& dout = *node.grad;
      const Tensor& a = nodes[node.parents[0]].value;
      const Tensor& b = nodes[node.parents[1]].value;
      if (track[node.parents[0]]) {
        Tensor& da = grad_ref(nodes[node.parents[0]]);
        for (std::size_t i = 0; i < dout.numel(); ++i) da.data[i] += dout.data[i] * b.data[i];
      }
      if (track[node.parents[1]]) {
        Tensor& db = grad_ref(nodes[node.parents[1]]);
        for (std::size_t i = 0; i < dout.numel(); ++i) db.data[i] += dout.data[i] * a.data[i];
      }
      return;
    }
    case Op::kMatMul:
      backprop_matmul(node, nodes, track);
      return;
    case Op::kConv1d:
      backprop_conv1d(node, nodes, track);
      return;
    case Op::kLinear:
      backprop_linear(node, nodes, track);
      return;
    case Op::kRelu: {
      if (!track[node.parents[0]]) return;
      const Tensor& x = nodes[node.parents[0]].value;
      const Tensor& dout = *node.grad;
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        if (x.data[i] > 0.0) dx.data[i] += dout.data[i];
      }
      return;
    }
    case Op::kGelu: {
      if (!track[node.parents[0]]) return;
      const Tensor& x = nodes[node.parents[0]].value;
      const Tensor& dout = *node.grad;
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double xv = x.data[i];
        const double cdf = 0.5 * (1.0 + std::erf(xv * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
        dx.data[i] += dout.data[i] * (cdf + xv * pdf);
      }
      return;
    }
    case Op::kTanh: {
      if (!track[node.parents[0]]) return;
      const Tensor& y = node.value;
      const Tensor& dout = *node.grad;
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      for (std::size_t i = 0; i < y.numel(); ++i) {
        dx.data[i] += dout.data[i] * (1.0 - y.data[i] * y.data[i]);
      }
      return;
    }
    case Op::kLayerNorm:
      backprop_layernorm(node, nodes, track);
      return;
    case Op::kSoftmax:
      backprop_softmax(node, nodes, track);
      return;
    case Op::kAttention:
      backprop_attention(node, nodes, track);
      return;
    case Op::kMeanPool: {
      if (!track[node.parents[0]]) return;
      const Tensor& x = nodes[node.parents[0]].value;
      const Tensor& dout = *node.grad;
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      const std::size_t t = x.shape[0], d = x.shape[1];
      const double inv = 1.0 / static_cast<double>(t);
      for (std::size_t i = 0; i < t; ++i) {
        double* dxr = dx.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dxr[j] += dout.data[j] * inv;
      }
      return;
    }
    case Op::kSum: {
      if (!track[node.parents[0]]) return;
      const double dy = node.grad->data[0];
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      for (double& g : dx.data) g += dy;
      return;
    }
    case Op::kL2Norm: {
      if (!track[node.parents[0]]) return;
      const double norm = node.value.data[0];
      if (norm == 0.0) {
        grad_ref(nodes[node.parents[0]]);  // tie-broken zero gradient at the origin
        return;
      }
      const double dy = node.grad->data[0];
      const Tensor& x = nodes[node.parents[0]].value;
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      const double c = dy / norm;
      for (std::size_t i = 0; i < x.numel(); ++i) dx.data[i] += c * x.data[i];
      return;
    }
    case Op::kMse: {
      const Tensor& a = nodes[node.parents[0]].value;
      const Tensor& b = nodes[node.parents[1]].value;
      const double dy = node.grad->data[0];
      const double c = 2.0 * dy / static_cast<double>(a.numel());
      if (track[node.parents[0]]) {
        Tensor& da = grad_ref(nodes[node.parents[0]]);
        for (std::size_t i = 0; i < a.numel(); ++i) da.data[i] += c * (a.data[i] - b.data[i]);
      }
      if (track[node.parents[1]]) {
        Tensor& db = grad_ref(nodes[node.parents[1]]);
        for (std::size_t i = 0; i < a.numel(); ++i) db.data[i] -= c * (a.data[i] - b.data[i]);
      }
      return;
    }
    case Op::kCrossEntropy: {
      if (!track[node.parents[0]]) return;
      const Tensor& probs = node.saved[0];
      const double dy = node.grad->data[0];
      Tensor& dl = grad_ref(nodes[node.parents[0]]);
      const std::size_t n = probs.shape[0], c = probs.shape[1];
      const double inv = dy / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* pr = probs.data.data() + i * c;
        double* dr = dl.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dr[j] += inv * pr[j];
        dr[static_cast<std::size_t>(node.attrs.labels[i])] -= inv;
      }
      return;
    }
    case Op::kCosineSim:
      backprop_cosine(node, nodes, track);
      return;
    case Op::kSlice: {
      if (!track[node.parents[0]]) return;
      const Tensor& dout = *node.grad;
      const Tensor& x = nodes[node.parents[0]].value;
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      const long long start = node.attrs.start;
      if (x.rank() == 1) {
        for (std::size_t i = 0; i < dout.numel(); ++i) dx.data[start + i] += dout.data[i];
        return;
      }
      const std::size_t cols = x.shape[1];
      if (node.attrs.dim == 0) {
        for (std::size_t i = 0; i < dout.shape[0]; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            dx.data[(start + i) * cols + j] += dout.data[i * dout.shape[1] + j];
          }
        }
      } else {
        for (std::size_t i = 0; i < dout.shape[0]; ++i) {
          for (std::size_t j = 0; j < dout.shape[1]; ++j) {
            dx.data[i * cols + start + j] += dout.data[i * dout.shape[1] + j];
          }
        }
      }
      return;
    }
    case Op::kConcat: {
      const Tensor& dout = *node.grad;
      if (node.attrs.dim == 0 || dout.rank() == 1) {
        std::size_t offset = 0;
        for (NodeId pid : node.parents) {
          const std::size_t n = nodes[pid].value.numel();
          if (track[pid]) {
            Tensor& dp = grad_ref(nodes[pid]);
            for (std::size_t i = 0; i < n; ++i) dp.data[i] += dout.data[offset + i];
          }
          offset += n;
        }
      } else {
        const std::size_t rows = dout.shape[0], out_cols = dout.shape[1];
        std::size_t col_off = 0;
        for (NodeId pid : node.parents) {
          const std::size_t c = nodes[pid].value.shape[1];
          if (track[pid]) {
            Tensor& dp = grad_ref(nodes[pid]);
            for (std::size_t i = 0; i < rows; ++i) {
              for (std::size_t j = 0; j < c; ++j) {
                dp.data[i * c + j] += dout.data[i * out_cols + col_off + j];
              }
            }
          }
          col_off += c;
        }
      }
      return;
    }
    case Op::kReshape: {
      if (!track[node.parents[0]]) return;
      const Tensor& dout = *node.grad;
      Tensor& dx = grad_ref(nodes[node.parents[0]]);
      for (std::size_t i = 0; i < dout.numel(); ++i) dx.data[i] += dout.data[i];
      return;
    }
    case Op::kMaskFill: {
      const Tensor& dout = *node.grad;
      const std::size_t t = dout.shape[0], d = dout.shape[1];
      const auto& mask = node.attrs.mask;
      if (track[node.parents[0]]) {
        Tensor& dx = grad_ref(nodes[node.parents[0]]);
        for (std::size_t i = 0; i < t; ++i) {
          if (mask[i]) continue;
          for (std::size_t j = 0; j < d; ++j) dx.data[i * d + j] += dout.data[i * d + j];
        }
      }
      if (track[node.parents[1]]) {
        Tensor& df = grad_ref(nodes[node.parents[1]]);
        for (std::size_t i = 0; i < t; ++i) {
          if (!mask[i]) continue;
          for (std::size_t j = 0; j < d; ++j) df.data[j] += dout.data[i * d + j];
        }
      }
      return;
    }
  }
}

}  // namespace frad::kernels
