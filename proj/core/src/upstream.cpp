#include "frad/upstream.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "binio.hpp"
#include "frad/kmeans.hpp"
#include "frad/optim.hpp"
#include "frad/rng.hpp"

namespace frad {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kShortSupport = 8;  // time-resolution channels of the first conv

void validate_config(const UpstreamConfig& c) {
  if (c.n_samples <= 0 || c.n_samples % 64 != 0) {
    throw std::invalid_argument("encoder config: input length must be a positive multiple of 64");
  }
  if (c.conv_channels[0] <= 0 || c.conv_channels[1] <= 0 || c.conv_channels[2] <= 0 ||
      c.n_blocks < 1 || c.n_heads < 1 || c.ff_dim < 1) {
    throw std::invalid_argument("encoder config: dimensions must be positive");
  }
  if (c.model_dim() % c.n_heads != 0) {
    throw std::invalid_argument("encoder config: model dim must divide evenly into heads");
  }
  if (c.mask_ratio < 0.0 || c.mask_ratio >= 1.0) {
    throw std::invalid_argument("encoder config: mask ratio must be in [0, 1)");
  }
  for (int layer = 0; layer < 3; ++layer) {
    if (c.conv_kernel[layer] <= 0 || c.conv_padding[layer] < 0 ||
        2 * c.conv_padding[layer] != c.conv_kernel[layer] - c.conv_stride) {
      throw std::invalid_argument(
          "encoder config: each conv layer needs padding = (kernel - stride) / 2 "
          "so three stride-4 layers map the input onto 64-sample frames");
    }
  }
}

Tensor random_normal(Rng& rng, std::vector<std::size_t> shape, double std) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal() * std;
  return t;
}

Tensor xavier(Rng& rng, std::size_t in, std::size_t out) {
  return random_normal(rng, {in, out}, std::sqrt(2.0 / static_cast<double>(in + out)));
}

Tensor sinusoid_table(int frames, int dim) {
  Tensor pos = Tensor::zeros({static_cast<std::size_t>(frames), static_cast<std::size_t>(dim)});
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < dim; i += 2) {
      const double rate = std::pow(10000.0, static_cast<double>(i) / dim);
      pos.at(t, i) = std::sin(t / rate);
      if (i + 1 < dim) pos.at(t, i + 1) = std::cos(t / rate);
    }
  }
  return pos;
}

// Walks bound parameter values in the same order parameters() emits them.
struct ParamCursor {
  const std::vector<Value>& v;
  std::size_t i = 0;
  Value next() { return v[i++]; }
};

// Distinct frame subset of the given size, from this stream.
std::vector<std::uint8_t> draw_mask(Rng& rng, int frames, int n_masked) {
  std::vector<int> order(frames);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::uint8_t> mask(frames, 0);
  for (int i = 0; i < n_masked; ++i) mask[order[i]] = 1;
  return mask;
}

int masked_frame_count(const UpstreamConfig& c) {
  return std::max(1, static_cast<int>(c.mask_ratio * c.frames()));
}

}  // namespace

const char* arch_name(Arch arch) { return arch == Arch::kA ? "a" : "b"; }

UpstreamConfig UpstreamConfig::arch_a() { return UpstreamConfig{}; }

UpstreamConfig UpstreamConfig::arch_b() {
  UpstreamConfig c;
  c.arch = Arch::kB;
  c.n_heads = 2;
  c.ff_dim = 256;
  return c;
}

std::vector<Tensor*> UpstreamModel::parameters() {
  std::vector<Tensor*> ps;
  for (ConvLayer& c : convs) {
    ps.push_back(&c.w);
    ps.push_back(&c.b);
  }
  ps.push_back(&conv_ln_g);
  ps.push_back(&conv_ln_b);
  ps.push_back(&mask_embed);
  if (config.arch == Arch::kB) {
    ps.push_back(&cls_w);
    ps.push_back(&cls_b);
  }
  for (EncoderBlock& blk : blocks) {
    for (Tensor* t : {&blk.ln1_g, &blk.ln1_b, &blk.wq, &blk.bq, &blk.wk, &blk.bk, &blk.wv,
                      &blk.bv, &blk.wo, &blk.bo, &blk.ln2_g, &blk.ln2_b, &blk.ff_w1, &blk.ff_b1,
                      &blk.ff_w2, &blk.ff_b2}) {
      ps.push_back(t);
    }
  }
  return ps;
}

std::vector<const Tensor*> UpstreamModel::parameters() const {
  auto mut = const_cast<UpstreamModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::uint64_t UpstreamModel::param_checksum() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (const Tensor* t : parameters()) {
    for (double d : t->data) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

UpstreamModel init_upstream(const UpstreamConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  UpstreamModel m;
  m.config = cfg;
  Rng rng(derive_seed(seed, "encoder-init"));

  const std::size_t dim = cfg.model_dim();
  int c_in = 1;
  for (int layer = 0; layer < 3; ++layer) {
    const std::size_t c_out = cfg.conv_channels[layer];
    const int k = cfg.conv_kernel[layer];
    ConvLayer conv;
    if (layer == 0 && k >= 2 * kShortSupport) {
      // Multi-resolution start for the audio-facing layer. Even channels
      // form a windowed-cosine filterbank tiling DC to Nyquist: a random
      // full-length kernel is broadband no matter how many taps it has, so
      // selectivity has to be placed in the init for the narrowband cues
      // (pitch and resonance positions) to reach the frame features at all.
      // Odd channels start from a short support at a random offset and keep
      // the sharp time resolution. Training is free to reshape both.
      conv.w = Tensor::zeros({c_out, 1, static_cast<std::size_t>(k)});
      const std::size_t n_bands = c_out / 2;
      const double nyquist = 0.5;  // cycles per sample
      for (std::size_t c = 0; c < c_out; ++c) {
        if (c % 2 == 0 && n_bands > 0) {
          const std::size_t band = c / 2;
          const double fc = (band + 0.5) * nyquist / static_cast<double>(n_bands);
          const double center = 0.5 * (k - 1);
          double norm_sq = 0.0;
          for (int t = 0; t < k; ++t) {
            const double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * t / (k - 1));
            const double v = hann * std::cos(2.0 * kPi * fc * (t - center));
            conv.w.data[c * k + t] = v;
            norm_sq += v * v;
          }
          // Match the squared norm a He-initialised kernel has in
          // expectation, so the filterbank rows drive the layer at the
          // same scale as the random ones.
          const double scale = std::sqrt(2.0 / norm_sq);
          for (int t = 0; t < k; ++t) {
            conv.w.data[c * k + t] *= scale;
          }
        } else {
          const int support = kShortSupport;
          const int offset = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(k - support + 1)));
          const double std_dev = std::sqrt(2.0 / support);
          for (int t = 0; t < support; ++t) {
            conv.w.data[c * k + offset + t] = rng.normal() * std_dev;
          }
        }
      }
    } else {
      conv.w = random_normal(rng, {c_out, static_cast<std::size_t>(c_in), static_cast<std::size_t>(k)},
                             std::sqrt(2.0 / static_cast<double>(c_in * k)));
    }
    conv.b = Tensor::zeros({c_out});
    m.convs.push_back(std::move(conv));
    c_in = cfg.conv_channels[layer];
  }
  m.conv_ln_g = Tensor::full({dim}, 1.0);
  m.conv_ln_b = Tensor::zeros({dim});
  m.mask_embed = random_normal(rng, {dim}, 0.1);
  if (cfg.arch == Arch::kB) {
    m.cls_w = xavier(rng, dim, cfg.kmeans_k);
    m.cls_b = Tensor::zeros({static_cast<std::size_t>(cfg.kmeans_k)});
  }
  for (int b = 0; b < cfg.n_blocks; ++b) {
    EncoderBlock blk;
    blk.ln1_g = Tensor::full({dim}, 1.0);
    blk.ln1_b = Tensor::zeros({dim});
    blk.wq = xavier(rng, dim, dim);
    blk.bq = Tensor::zeros({dim});
    blk.wk = xavier(rng, dim, dim);
    blk.bk = Tensor::zeros({dim});
    blk.wv = xavier(rng, dim, dim);
    blk.bv = Tensor::zeros({dim});
    blk.wo = xavier(rng, dim, dim);
    blk.bo = Tensor::zeros({dim});
    blk.ln2_g = Tensor::full({dim}, 1.0);
    blk.ln2_b = Tensor::zeros({dim});
    blk.ff_w1 = xavier(rng, dim, cfg.ff_dim);
    blk.ff_b1 = Tensor::zeros({static_cast<std::size_t>(cfg.ff_dim)});
    blk.ff_w2 = xavier(rng, cfg.ff_dim, dim);
    blk.ff_b2 = Tensor::zeros({dim});
    m.blocks.push_back(std::move(blk));
  }
  m.pos = sinusoid_table(cfg.frames(), cfg.model_dim());
  return m;
}

BoundParams bind_params(Tape& tape, const UpstreamModel& model) {
  BoundParams bp;
  for (const Tensor* t : model.parameters()) bp.values.push_back(tape.param(*t));
  return bp;
}

std::vector<Value> build_features_with(Tape& tape, const UpstreamModel& model,
                                       const BoundParams& params, Value wave,
                                       const std::vector<std::uint8_t>* mask) {
  const UpstreamConfig& cfg = model.config;
  ParamCursor cur{params.values};

  Value x = wave;
  for (int layer = 0; layer < 3; ++layer) {
    Value w = cur.next(), b = cur.next();
    x = tape.conv1d(x, w, b, cfg.conv_stride, cfg.conv_padding[layer]);
    x = tape.gelu(x);
  }
  Value ln_g = cur.next(), ln_b = cur.next();
  Value h1 = tape.layernorm(x, ln_g, ln_b);

  Value mask_embed = cur.next();
  if (cfg.arch == Arch::kB) {
    cur.next();  // cls_w, cls_b: pretraining-only, not part of the feature path
    cur.next();
  }

  // Every reported layer is standardized through the same constant layernorm;
  // the residual stream between blocks stays raw (pre-norm convention). The
  // gain of 6 sets the feature scale so that downstream linear heads reach
  // confident logits within their small, fixed step budget.
  Value feat_g = tape.constant(Tensor::full({static_cast<std::size_t>(cfg.model_dim())}, 6.0));
  Value feat_b = tape.constant(Tensor::zeros({static_cast<std::size_t>(cfg.model_dim())}));

  std::vector<Value> layers;
  layers.push_back(tape.layernorm(h1, feat_g, feat_b));

  Value stream = mask ? tape.mask_fill(h1, mask_embed, *mask) : h1;
  stream = tape.add(stream, tape.constant(model.pos));

  const long long head_dim = cfg.model_dim() / cfg.n_heads;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    Value ln1_g = cur.next(), ln1_b = cur.next();
    Value wq = cur.next(), bq = cur.next(), wk = cur.next(), bk = cur.next();
    Value wv = cur.next(), bv = cur.next(), wo = cur.next(), bo = cur.next();
    Value ln2_g = cur.next(), ln2_b = cur.next();
    Value ff_w1 = cur.next(), ff_b1 = cur.next(), ff_w2 = cur.next(), ff_b2 = cur.next();

    Value a = tape.layernorm(stream, ln1_g, ln1_b);
    Value q = tape.linear(a, wq, bq);
    Value k = tape.linear(a, wk, bk);
    Value v = tape.linear(a, wv, bv);
    std::vector<Value> heads;
    heads.reserve(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
      Value qh = tape.slice(q, 1, h * head_dim, (h + 1) * head_dim);
      Value kh = tape.slice(k, 1, h * head_dim, (h + 1) * head_dim);
      Value vh = tape.slice(v, 1, h * head_dim, (h + 1) * head_dim);
      heads.push_back(tape.attention(qh, kh, vh));
    }
    Value attn = cfg.n_heads == 1 ? heads[0] : tape.concat(heads, 1);
    attn = tape.linear(attn, wo, bo);
    stream = tape.add(stream, attn);

    Value f = tape.layernorm(stream, ln2_g, ln2_b);
    f = tape.linear(f, ff_w1, ff_b1);
    f = tape.gelu(f);
    f = tape.linear(f, ff_w2, ff_b2);
    stream = tape.add(stream, f);
    layers.push_back(tape.layernorm(stream, feat_g, feat_b));
  }
  return layers;
}

std::vector<Value> build_features(Tape& tape, const UpstreamModel& model, Value wave,
                                  const std::vector<std::uint8_t>* mask) {
  return build_features_with(tape, model, bind_params(tape, model), wave, mask);
}

LayerFeatures extract_features(const UpstreamModel& model, const Waveform& wave) {
  if (wave.samples.size() != static_cast<std::size_t>(model.config.n_samples)) {
    throw ShapeError("feature extraction: wave length " + std::to_string(wave.samples.size()) +
                     " does not match encoder input length " +
                     std::to_string(model.config.n_samples));
  }
  Tape tape(TapeMode::kFrozen);
  Value x = tape.leaf(Tensor({wave.samples.size(), 1}, wave.samples), false);
  const auto values = build_features(tape, model, x);
  LayerFeatures out;
  out.layers.reserve(values.size());
  for (Value v : values) out.layers.push_back(v.tensor());
  return out;
}

namespace {

// Frame-level pseudo-labels for every train and val utterance, clustered
// on the frontend features of the freshly initialized model.
struct PseudoLabels {
  std::vector<std::vector<int>> train, val;
};

Tensor frontend_features(const UpstreamModel& model, const Waveform& wave) {
  Tape tape(TapeMode::kFrozen);
  Value x = tape.leaf(Tensor({wave.samples.size(), 1}, wave.samples), false);
  return build_features(tape, model, x)[0].tensor();
}

PseudoLabels make_pseudo_labels(const UpstreamModel& model, const Dataset& data,
                                std::uint64_t seed) {
  const UpstreamConfig& cfg = model.config;
  const std::size_t frames = cfg.frames();
  const std::size_t dim = cfg.model_dim();

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng sample_rng(derive_seed(seed, "cluster-sample"));
  sample_rng.shuffle(order);
  const std::size_t n_sample = std::min<std::size_t>(cfg.kmeans_sample, order.size());

  std::vector<Tensor> cached(data.train.size());
  Tensor points = Tensor::zeros({n_sample * frames, dim});
  for (std::size_t i = 0; i < n_sample; ++i) {
    const std::size_t u = order[i];
    cached[u] = frontend_features(model, data.train[u].wave);
    std::copy(cached[u].data.begin(), cached[u].data.end(),
              points.data.begin() + i * frames * dim);
  }
  const KMeans km = kmeans_fit(points, cfg.kmeans_k, cfg.kmeans_iters, derive_seed(seed, "cluster"));

  PseudoLabels out;
  out.train.resize(data.train.size());
  out.val.resize(data.val.size());
  for (std::size_t u = 0; u < data.train.size(); ++u) {
    if (cached[u].numel() == 0) cached[u] = frontend_features(model, data.train[u].wave);
    out.train[u] = kmeans_assign(km, cached[u]);
  }
  for (std::size_t u = 0; u < data.val.size(); ++u) {
    out.val[u] = kmeans_assign(km, frontend_features(model, data.val[u].wave));
  }
  return out;
}

std::vector<int> masked_frames(const std::vector<std::uint8_t>& mask) {
  std::vector<int> out;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask[t]) out.push_back(static_cast<int>(t));
  }
  return out;
}

Tensor tensor_row_of(const Tensor& m, int row) {
  const std::size_t d = m.shape[1];
  Tensor r = Tensor::zeros({1, d});
  std::copy(m.data.begin() + row * d, m.data.begin() + (row + 1) * d, r.data.begin());
  return r;
}

// Contrastive loss for one already-built batch: each masked position must
// pick its own frontend target out of distractors drawn from the pool of
// all batch targets, scored by temperature-scaled cosine similarity.
// Targets come from the initial model's frontend, computed once before any
// update (a fixed teacher, the same role the pseudo-label table plays for
// the classification objective). If targets instead tracked the evolving
// frontend, the encoder could drift toward whichever narrow feature makes
// the matching easy and silently discard the rest of the signal; a fixed
// teacher keeps the blocks accountable for everything the initial frontend
// heard. Distractors from the target's own 16-frame segment grid cell are
// excluded — those rows are near-duplicates of the target, and telling
// them apart is noise, not signal. The grid is an architecture constant,
// so the exclusion stays self-supervised.
Value contrastive_loss(Tape& tape, const UpstreamConfig& cfg,
                       const std::vector<std::vector<Value>>& batch_layers,
                       const std::vector<const Tensor*>& batch_targets,
                       const std::vector<std::vector<int>>& batch_masked, Rng& distractor_rng) {
  struct PoolEntry {
    Tensor target;  // fixed-teacher frontend row
    std::size_t utt;
    int cell;
  };
  const int cell_span =
      std::max(1, cfg.frames() / static_cast<int>(kSegmentsPerClip));
  std::vector<PoolEntry> pool;
  std::vector<std::pair<std::size_t, int>> positions;  // (utt, frame) per pool row
  for (std::size_t u = 0; u < batch_layers.size(); ++u) {
    const Tensor& h1 = *batch_targets[u];
    for (int t : batch_masked[u]) {
      pool.push_back({tensor_row_of(h1, t), u, t / cell_span});
      positions.push_back({u, t});
    }
  }

  // Valid distractor indices per position, with a uniform candidate count
  // across the batch so the logit rows concatenate.
  std::vector<std::vector<std::size_t>> valid(pool.size());
  std::size_t min_valid = pool.size();
  for (std::size_t p = 0; p < pool.size(); ++p) {
    for (std::size_t q = 0; q < pool.size(); ++q) {
      if (q == p) continue;
      if (pool[q].utt == pool[p].utt && pool[q].cell == pool[p].cell) continue;
      valid[p].push_back(q);
    }
    min_valid = std::min(min_valid, valid[p].size());
  }
  if (min_valid == 0) {
    // Degenerate mini-batch (everything in one grid cell): fall back to
    // everyone-but-self so the objective stays defined.
    for (std::size_t p = 0; p < pool.size(); ++p) {
      valid[p].clear();
      for (std::size_t q = 0; q < pool.size(); ++q) {
        if (q != p) valid[p].push_back(q);
      }
    }
    min_valid = pool.size() - 1;
  }
  const int n_cand = 1 + std::min<int>(cfg.n_distractors, static_cast<int>(min_valid));

  Value inv_temp = tape.constant(Tensor::full({1, static_cast<std::size_t>(n_cand)},
                                              1.0 / cfg.temperature));
  std::vector<Value> logit_rows;
  logit_rows.reserve(pool.size());
  for (std::size_t p = 0; p < pool.size(); ++p) {
    const Value h_top = batch_layers[pool[p].utt].back();
    const int frame = positions[p].second;
    Value pred = tape.slice(h_top, 0, frame, frame + 1);
    std::vector<Value> logits;
    logits.reserve(n_cand);
    auto scored = [&](const Tensor& cand) {
      Value c = tape.cosine_similarity(pred, tape.constant(cand));
      return tape.reshape(c, {1, 1});
    };
    logits.push_back(scored(pool[p].target));
    // Partial Fisher-Yates over this position's valid list.
    auto& cands = valid[p];
    for (int d = 1; d < n_cand; ++d) {
      const std::size_t j = d - 1 + distractor_rng.bounded(cands.size() - (d - 1));
      std::swap(cands[d - 1], cands[j]);
      logits.push_back(scored(pool[cands[d - 1]].target));
    }
    Value row = logits.size() == 1 ? logits[0] : tape.concat(logits, 1);
    logit_rows.push_back(tape.mul(row, inv_temp));
  }
  Value all = logit_rows.size() == 1 ? logit_rows[0] : tape.concat(logit_rows, 0);
  return tape.cross_entropy(all, std::vector<int>(pool.size(), 0));
}

// Pseudo-label cross-entropy at masked positions for one built batch.
Value pseudo_label_loss(Tape& tape, const BoundParams& bp, const UpstreamModel& model,
                        const std::vector<std::vector<Value>>& batch_layers,
                        const std::vector<std::vector<int>>& batch_masked,
                        const std::vector<const std::vector<int>*>& batch_labels) {
  // cls_w/cls_b sit right after the frontend group: 3 conv pairs + 2 LN + mask embed.
  const std::size_t cls_at = 9;
  Value cls_w = bp.values[cls_at], cls_b = bp.values[cls_at + 1];
  std::vector<Value> rows;
  std::vector<int> labels;
  for (std::size_t u = 0; u < batch_layers.size(); ++u) {
    Value logits = tape.linear(batch_layers[u].back(), cls_w, cls_b);
    for (int t : batch_masked[u]) {
      rows.push_back(tape.slice(logits, 0, t, t + 1));
      labels.push_back((*batch_labels[u])[t]);
    }
  }
  (void)model;
  Value all = rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  return tape.cross_entropy(all, std::move(labels));
}

}  // namespace

PretrainStats pretrain(UpstreamModel& model, const Dataset& data, int steps, std::uint64_t seed) {
  if (model.frozen) {
    throw std::invalid_argument("pretrain: model is already frozen");
  }
  if (data.train.empty() || data.val.empty()) {
    throw std::invalid_argument("pretrain: dataset has empty splits");
  }
  const UpstreamConfig& cfg = model.config;
  const int frames = cfg.frames();
  const int n_masked = masked_frame_count(cfg);

  PseudoLabels pseudo;
  if (cfg.arch == Arch::kB) pseudo = make_pseudo_labels(model, data, seed);

  // Fixed-teacher targets for the contrastive objective: frontend features
  // of every train and val utterance under the initial parameters.
  std::vector<Tensor> teacher_train, teacher_val;
  if (cfg.arch == Arch::kA) {
    teacher_train.reserve(data.train.size());
    teacher_val.reserve(data.val.size());
    for (const Utterance& u : data.train) teacher_train.push_back(frontend_features(model, u.wave));
    for (const Utterance& u : data.val) teacher_val.push_back(frontend_features(model, u.wave));
  }

  // Held-out masked-objective loss with masks (and distractor draws) fixed
  // per validation utterance, so start/end values are comparable.
  auto val_loss = [&]() {
    double total = 0.0;
    for (std::size_t u = 0; u < data.val.size(); ++u) {
      Rng mask_rng(derive_seed(seed, "val-mask", u));
      const auto mask = draw_mask(mask_rng, frames, n_masked);
      Tape tape(TapeMode::kFrozen);
      Value x = tape.leaf(Tensor({data.val[u].wave.samples.size(), 1}, data.val[u].wave.samples),
                          false);
      BoundParams bp = bind_params(tape, model);
      auto layers = build_features_with(tape, model, bp, x, &mask);
      std::vector<std::vector<Value>> batch_layers{layers};
      std::vector<std::vector<int>> batch_masked{masked_frames(mask)};
      Value loss;
      if (cfg.arch == Arch::kA) {
        Rng dis_rng(derive_seed(seed, "val-distractor", u));
        std::vector<const Tensor*> batch_targets{&teacher_val[u]};
        loss = contrastive_loss(tape, cfg, batch_layers, batch_targets, batch_masked, dis_rng);
      } else {
        std::vector<const std::vector<int>*> labels{&pseudo.val[u]};
        loss = pseudo_label_loss(tape, bp, model, batch_layers, batch_masked, labels);
      }
      total += loss.tensor().at(0);
    }
    return total / static_cast<double>(data.val.size());
  };

  PretrainStats stats;
  stats.val_loss_start = val_loss();

  Adam adam(model.parameters(), {.lr = cfg.lr});
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(derive_seed(seed, "batch-order"));
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(data.train.size()));

  for (int step = 0; step < steps; ++step) {
    Tape tape(TapeMode::kTraining);
    BoundParams bp = bind_params(tape, model);

    std::vector<std::vector<Value>> batch_layers;
    std::vector<const Tensor*> batch_targets;
    std::vector<std::vector<int>> batch_masked;
    std::vector<const std::vector<int>*> batch_labels;
    for (int j = 0; j < batch; ++j) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t u = order[cursor++];
      Rng mask_rng(derive_seed(seed, "mask", static_cast<std::uint64_t>(step) * batch + j));
      const auto mask = draw_mask(mask_rng, frames, n_masked);
      Value x = tape.leaf(Tensor({data.train[u].wave.samples.size(), 1},
                                 data.train[u].wave.samples),
                          false);
      batch_layers.push_back(build_features_with(tape, model, bp, x, &mask));
      batch_masked.push_back(masked_frames(mask));
      if (cfg.arch == Arch::kA) batch_targets.push_back(&teacher_train[u]);
      if (cfg.arch == Arch::kB) batch_labels.push_back(&pseudo.train[u]);
    }

    Value loss;
    if (cfg.arch == Arch::kA) {
      Rng dis_rng(derive_seed(seed, "distractor", step));
      loss = contrastive_loss(tape, cfg, batch_layers, batch_targets, batch_masked, dis_rng);
    } else {
      loss = pseudo_label_loss(tape, bp, model, batch_layers, batch_masked, batch_labels);
    }
    tape.backward(loss);

    std::vector<const Tensor*> grads;
    grads.reserve(bp.values.size());
    for (Value v : bp.values) grads.push_back(v.grad());
    adam.step(grads);
    stats.step_losses.push_back(loss.tensor().at(0));
  }

  stats.val_loss_end = steps > 0 ? val_loss() : stats.val_loss_start;
  model.frozen = true;
  return stats;
}

void save_upstream(const UpstreamModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  binio::write_magic(os, "FRUP1");
  const UpstreamConfig& c = m.config;
  binio::write_u8(os, c.arch == Arch::kA ? 0 : 1);
  binio::write_u32(os, static_cast<std::uint32_t>(c.n_samples));
  for (int ch : c.conv_channels) binio::write_u32(os, static_cast<std::uint32_t>(ch));
  for (int k : c.conv_kernel) binio::write_u32(os, static_cast<std::uint32_t>(k));
  binio::write_u32(os, static_cast<std::uint32_t>(c.conv_stride));
  for (int pd : c.conv_padding) binio::write_u32(os, static_cast<std::uint32_t>(pd));
  binio::write_u32(os, static_cast<std::uint32_t>(c.n_blocks));
  binio::write_u32(os, static_cast<std::uint32_t>(c.n_heads));
  binio::write_u32(os, static_cast<std::uint32_t>(c.ff_dim));
  binio::write_f64(os, c.mask_ratio);
  binio::write_u32(os, static_cast<std::uint32_t>(c.n_distractors));
  binio::write_f64(os, c.temperature);
  binio::write_u32(os, static_cast<std::uint32_t>(c.kmeans_k));
  binio::write_u32(os, static_cast<std::uint32_t>(c.kmeans_iters));
  binio::write_u32(os, static_cast<std::uint32_t>(c.kmeans_sample));
  binio::write_u32(os, static_cast<std::uint32_t>(c.batch_size));
  binio::write_f64(os, c.lr);
  binio::write_u8(os, m.frozen ? 1 : 0);
  for (const Tensor* t : m.parameters()) binio::write_f64s(os, t->data);
  if (!os) throw std::runtime_error("write failed: " + path);
}

UpstreamModel load_upstream(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  binio::expect_magic(is, "FRUP1");
  UpstreamConfig c;
  c.arch = binio::read_u8(is) == 0 ? Arch::kA : Arch::kB;
  c.n_samples = static_cast<int>(binio::read_u32(is));
  for (int& ch : c.conv_channels) ch = static_cast<int>(binio::read_u32(is));
  for (int& k : c.conv_kernel) k = static_cast<int>(binio::read_u32(is));
  c.conv_stride = static_cast<int>(binio::read_u32(is));
  for (int& pd : c.conv_padding) pd = static_cast<int>(binio::read_u32(is));
  c.n_blocks = static_cast<int>(binio::read_u32(is));
  c.n_heads = static_cast<int>(binio::read_u32(is));
  c.ff_dim = static_cast<int>(binio::read_u32(is));
  c.mask_ratio = binio::read_f64(is);
  c.n_distractors = static_cast<int>(binio::read_u32(is));
  c.temperature = binio::read_f64(is);
  c.kmeans_k = static_cast<int>(binio::read_u32(is));
  c.kmeans_iters = static_cast<int>(binio::read_u32(is));
  c.kmeans_sample = static_cast<int>(binio::read_u32(is));
  c.batch_size = static_cast<int>(binio::read_u32(is));
  c.lr = binio::read_f64(is);
  const bool frozen = binio::read_u8(is) != 0;

  UpstreamModel m = init_upstream(c, 0);
  for (Tensor* t : m.parameters()) {
    std::vector<double> data = binio::read_f64s(is);
    if (data.size() != t->numel()) {
      throw std::runtime_error("checkpoint parameter size mismatch in " + path);
    }
    t->data = std::move(data);
  }
  m.frozen = frozen;
  return m;
}

}  // namespace frad
