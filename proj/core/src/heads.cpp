#include "frad/heads.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "binio.hpp"
#include "frad/optim.hpp"
#include "frad/parallel.hpp"
#include "frad/rng.hpp"

namespace frad {

namespace {

std::vector<double> softmax_plain(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> mean_pool_rows(const Tensor& m) {
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += m.at(r, c);
  }
  for (double& v : out) v /= static_cast<double>(rows);
  return out;
}

std::vector<double> affine(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.rows(), out = w.cols();
  std::vector<double> y(b.data.begin(), b.data.end());
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    for (std::size_t o = 0; o < out; ++o) y[o] += xi * w.at(i, o);
  }
  (void)out;
  return y;
}

int argmax(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

LayerFeatures head_features(const DownstreamHead& head, const UpstreamModel& upstream,
                            const Waveform& wave) {
  return extract_features(upstream, apply_preproc(wave, head.preproc));
}

// Class prediction for one waveform through the plain-math path.
int predict_class(const DownstreamHead& head, const UpstreamModel& upstream,
                  const Waveform& wave) {
  const Tensor z = weighted_sum(head_features(head, upstream, wave), head.layer_weights);
  return argmax(affine(mean_pool_rows(z), head.w, head.b));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

int class_count(Task task, const DatasetConfig& cfg) {
  switch (task) {
    case Task::kKS: return cfg.n_keywords;
    case Task::kSID: return cfg.n_speakers;
    case Task::kPRA: return static_cast<int>(kSegmentClasses);
    case Task::kASV: return cfg.n_speakers;  // training-time classifier classes
  }
  return 0;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  binio::write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) binio::write_u64(os, d);
  binio::write_f64s(os, t.data);
}

Tensor read_tensor(std::istream& is) {
  const std::uint32_t rank = binio::read_u32(is);
  std::vector<std::size_t> shape(rank);
  for (std::size_t& d : shape) d = static_cast<std::size_t>(binio::read_u64(is));
  std::vector<double> data = binio::read_f64s(is);
  if (rank == 0 && data.empty()) return Tensor();  // an absent (e.g. aux) tensor
  if (data.size() != shape_numel(shape)) {
    throw std::runtime_error("head checkpoint tensor payload does not match its shape");
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

const char* task_name(Task task) {
  switch (task) {
    case Task::kKS: return "ks";
    case Task::kSID: return "sid";
    case Task::kPRA: return "pra";
    case Task::kASV: return "asv";
  }
  return "?";
}

Waveform apply_preproc(const Waveform& wave, Preproc preproc, double coeff) {
  if (preproc == Preproc::kIdentity) return wave;
  Waveform out;
  out.samples.resize(wave.samples.size());
  for (std::size_t i = 0; i < wave.samples.size(); ++i) {
    out.samples[i] = wave.samples[i] - (i > 0 ? coeff * wave.samples[i - 1] : 0.0);
  }
  return out;
}

std::vector<double> effective_weights(const LayerWeights& lw) {
  return softmax_plain(lw.logits.data);
}

Tensor weighted_sum(const LayerFeatures& features, const LayerWeights& lw) {
  if (features.layers.empty() || lw.logits.numel() != features.layers.size()) {
    throw ShapeError("weighted sum: " + std::to_string(lw.logits.numel()) +
                     " weights for " + std::to_string(features.layers.size()) + " layers");
  }
  const std::vector<double> w = effective_weights(lw);
  Tensor z = Tensor::zeros(features.layers[0].shape);
  for (std::size_t l = 0; l < features.layers.size(); ++l) {
    if (!features.layers[l].same_shape(z)) {
      throw ShapeError("weighted sum: layer shapes differ, " + shape_str(z.shape) + " vs " +
                       shape_str(features.layers[l].shape));
    }
    for (std::size_t i = 0; i < z.numel(); ++i) z.data[i] += w[l] * features.layers[l].data[i];
  }
  return z;
}

Value weighted_sum_graph(Tape& tape, std::span<const Value> layers, Value logits) {
  if (layers.empty() || logits.tensor().numel() != layers.size()) {
    throw ShapeError("weighted sum: " + std::to_string(logits.tensor().numel()) +
                     " weights for " + std::to_string(layers.size()) + " layers");
  }
  const std::vector<std::size_t> shape = layers[0].tensor().shape;
  const std::size_t flat = shape_numel(shape);
  std::vector<Value> rows;
  rows.reserve(layers.size());
  for (const Value& l : layers) rows.push_back(tape.reshape(l, {1, flat}));
  Value stacked = rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
  Value mix = tape.softmax(tape.reshape(logits, {1, layers.size()}));
  return tape.reshape(tape.matmul(mix, stacked), shape);
}

std::vector<Tensor*> DownstreamHead::parameters() {
  std::vector<Tensor*> ps{&layer_weights.logits, &w, &b};
  if (task == Task::kASV) {
    ps.push_back(&aux_w);
    ps.push_back(&aux_b);
  }
  return ps;
}

EvalSet eval_set_from(Task task, std::span<const Utterance> items) {
  EvalSet set;
  for (const Utterance& u : items) {
    switch (task) {
      case Task::kKS:
        set.waves.push_back(u.wave);
        set.labels.push_back(u.keyword_label);
        break;
      case Task::kSID:
        set.waves.push_back(u.wave);
        set.labels.push_back(u.speaker_label);
        break;
      case Task::kPRA:
        set.waves.push_back(u.wave);
        set.frame_labels.push_back(u.frame_labels);
        break;
      case Task::kASV:
        throw std::invalid_argument("verification needs trial pairs, not single utterances");
    }
  }
  return set;
}

TrainedHead train_head(Task task, const UpstreamModel& upstream, const Dataset& data, int epochs,
                       std::uint64_t seed) {
  if (!upstream.frozen) {
    throw std::invalid_argument("downstream training requires a frozen upstream model");
  }
  if (epochs < 0) throw std::invalid_argument("downstream training: negative epoch count");
  if (data.train.empty() || data.val.empty()) {
    throw std::invalid_argument("downstream training: dataset has empty splits");
  }

  const std::size_t dim = upstream.config.model_dim();
  const std::size_t n_layers = upstream.n_layers();
  const int classes = class_count(task, data.config);

  TrainedHead out;
  DownstreamHead& head = out.head;
  head.task = task;
  head.layer_weights.logits = Tensor::zeros({n_layers});  // uniform mix to start
  Rng rng(derive_seed(seed, "head-init"));
  const std::size_t main_out = task == Task::kASV ? kAsvEmbedDim : static_cast<std::size_t>(classes);
  // Classifier weights start at zero: uniform probabilities and maximal
  // cross-entropy gradient, instead of a confidently wrong random classifier
  // the short training budget would first have to unlearn.
  head.w = Tensor::zeros({dim, main_out});
  head.b = Tensor::zeros({main_out});
  if (task == Task::kASV) {
    // The embedding projection cannot also be zero (its gradient flows
    // through the classifier above it and would never wake up), so it keeps
    // a random init and only the classifier on top starts cold.
    for (double& v : head.w.data) {
      v = rng.normal() * std::sqrt(2.0 / static_cast<double>(dim + main_out));
    }
    head.aux_w = Tensor::zeros({kAsvEmbedDim, static_cast<std::size_t>(classes)});
    head.aux_b = Tensor::zeros({static_cast<std::size_t>(classes)});
  }

  // The encoder is frozen, so features are computed once up front.
  std::vector<LayerFeatures> cached(data.train.size());
  parallel_for(data.train.size(), [&](std::size_t i) {
    cached[i] = head_features(head, upstream, data.train[i].wave);
  });

  auto label_of = [&](const Utterance& u) {
    return task == Task::kKS ? u.keyword_label : u.speaker_label;
  };

  Adam adam(head.parameters(), {.lr = 1e-3});
  constexpr int kBatch = 16;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng erng(derive_seed(seed, "epoch", static_cast<std::uint64_t>(epoch)));
    erng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += kBatch) {
      const std::size_t stop = std::min(order.size(), start + kBatch);

      Tape tape(TapeMode::kTraining);
      std::vector<Value> bound;
      for (Tensor* p : head.parameters()) bound.push_back(tape.param(*p));
      const Value logits_v = bound[0], w_v = bound[1], b_v = bound[2];

      std::vector<Value> rows;
      std::vector<int> labels;
      for (std::size_t s = start; s < stop; ++s) {
        const std::size_t u = order[s];
        std::vector<Value> layer_vals;
        for (const Tensor& t : cached[u].layers) layer_vals.push_back(tape.constant(t));
        Value z = weighted_sum_graph(tape, layer_vals, logits_v);
        if (task == Task::kPRA) {
          rows.push_back(tape.linear(z, w_v, b_v));
          labels.insert(labels.end(), data.train[u].frame_labels.begin(),
                        data.train[u].frame_labels.end());
        } else {
          Value pooled = tape.mean_pool(z);
          Value logit_row = tape.linear(pooled, w_v, b_v);
          if (task == Task::kASV) logit_row = tape.linear(logit_row, bound[3], bound[4]);
          rows.push_back(logit_row);
          labels.push_back(label_of(data.train[u]));
        }
      }
      Value all = rows.size() == 1 ? rows[0] : tape.concat(rows, 0);
      Value loss = tape.cross_entropy(all, std::move(labels));
      tape.backward(loss);

      std::vector<const Tensor*> grads;
      for (const Value& v : bound) grads.push_back(v.grad());
      adam.step(grads);
    }
  }

  if (task == Task::kASV) {
    // Verification accuracy needs a calibrated threshold; report the
    // training-time speaker-classifier accuracy on validation instead.
    int hits = 0;
    for (const Utterance& u : data.val) {
      const auto emb = asv_embedding(head, upstream, u.wave);
      hits += argmax(affine(emb, head.aux_w, head.aux_b)) == u.speaker_label ? 1 : 0;
    }
    out.clean_metric = 100.0 * hits / static_cast<double>(data.val.size());
  } else {
    out.clean_metric = evaluate(task, head, upstream, eval_set_from(task, data.val));
  }
  return out;
}

std::vector<double> asv_embedding(const DownstreamHead& head, const UpstreamModel& upstream,
                                  const Waveform& wave) {
  const Tensor z = weighted_sum(head_features(head, upstream, wave), head.layer_weights);
  return affine(mean_pool_rows(z), head.w, head.b);
}

double calibrate_asv(DownstreamHead& head, const UpstreamModel& upstream,
                     std::span<const TrialPair> trials) {
  std::size_t n_target = 0, n_nontarget = 0;
  for (const TrialPair& t : trials) (t.same_speaker ? n_target : n_nontarget) += 1;
  if (n_target < 20 || n_nontarget < 20) {
    throw std::invalid_argument("threshold calibration needs at least 20 trials of each class");
  }

  std::vector<double> scores(trials.size());
  parallel_for(trials.size(), [&](std::size_t i) {
    scores[i] = cosine(asv_embedding(head, upstream, trials[i].wave_a),
                       asv_embedding(head, upstream, trials[i].wave_b));
  });

  std::vector<double> target, nontarget;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    (trials[i].same_speaker ? target : nontarget).push_back(scores[i]);
  }

  // Candidate thresholds: midpoints between adjacent distinct scores plus
  // sentinels past both ends. tau minimizes |FAR - FRR|, then total error,
  // then takes the lowest tau, so calibration is deterministic.
  std::vector<double> all = scores;
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> candidates{all.front() - 1.0};
  for (std::size_t i = 0; i + 1 < all.size(); ++i) {
    candidates.push_back(0.5 * (all[i] + all[i + 1]));
  }
  candidates.push_back(all.back() + 1.0);

  double best_tau = candidates.front();
  double best_gap = std::numeric_limits<double>::infinity();
  double best_total = std::numeric_limits<double>::infinity();
  for (double tau : candidates) {
    double frr = 0.0, far = 0.0;
    for (double s : target) frr += s < tau ? 1.0 : 0.0;
    for (double s : nontarget) far += s >= tau ? 1.0 : 0.0;
    frr /= static_cast<double>(target.size());
    far /= static_cast<double>(nontarget.size());
    const double gap = std::abs(far - frr), total = far + frr;
    if (gap < best_gap || (gap == best_gap && total < best_total)) {
      best_gap = gap;
      best_total = total;
      best_tau = tau;
    }
  }
  head.tau = best_tau;
  head.has_tau = true;
  return best_tau;
}

double evaluate(Task task, const DownstreamHead& head, const UpstreamModel& upstream,
                const EvalSet& items) {
  switch (task) {
    case Task::kKS:
    case Task::kSID: {
      if (items.waves.empty()) throw std::invalid_argument("empty evaluation set");
      if (items.labels.size() != items.waves.size()) {
        throw std::invalid_argument("evaluation labels do not match item count");
      }
      std::vector<std::uint8_t> hit(items.waves.size());
      parallel_for(items.waves.size(), [&](std::size_t i) {
        hit[i] = predict_class(head, upstream, items.waves[i]) == items.labels[i] ? 1 : 0;
      });
      const double hits = std::accumulate(hit.begin(), hit.end(), 0.0);
      return 100.0 * hits / static_cast<double>(items.waves.size());
    }
    case Task::kPRA: {
      if (items.waves.empty()) throw std::invalid_argument("empty evaluation set");
      if (items.frame_labels.size() != items.waves.size()) {
        throw std::invalid_argument("evaluation labels do not match item count");
      }
      std::vector<std::size_t> wrong(items.waves.size(), 0);
      std::vector<std::size_t> total(items.waves.size(), 0);
      parallel_for(items.waves.size(), [&](std::size_t i) {
        const Tensor z =
            weighted_sum(head_features(head, upstream, items.waves[i]), head.layer_weights);
        const auto& labels = items.frame_labels[i];
        if (labels.size() != z.rows()) {
          throw std::invalid_argument("frame labels do not match frame count");
        }
        for (std::size_t f = 0; f < z.rows(); ++f) {
          std::vector<double> row(z.data.begin() + f * z.cols(),
                                  z.data.begin() + (f + 1) * z.cols());
          wrong[i] += argmax(affine(row, head.w, head.b)) == labels[f] ? 0 : 1;
          ++total[i];
        }
      });
      const double bad = std::accumulate(wrong.begin(), wrong.end(), 0.0);
      const double n = std::accumulate(total.begin(), total.end(), 0.0);
      return 100.0 * bad / n;
    }
    case Task::kASV: {
      if (items.trials.empty()) throw std::invalid_argument("empty evaluation set");
      if (!head.has_tau) {
        throw std::invalid_argument("verification requires a calibrated threshold");
      }
      std::vector<std::uint8_t> hit(items.trials.size());
      parallel_for(items.trials.size(), [&](std::size_t i) {
        const double s = cosine(asv_embedding(head, upstream, items.trials[i].wave_a),
                                asv_embedding(head, upstream, items.trials[i].wave_b));
        hit[i] = (s >= head.tau) == items.trials[i].same_speaker ? 1 : 0;
      });
      const double hits = std::accumulate(hit.begin(), hit.end(), 0.0);
      return 100.0 * hits / static_cast<double>(items.trials.size());
    }
  }
  throw std::invalid_argument("unknown task");
}

void save_head(const DownstreamHead& head, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  binio::write_magic(os, "FRHD1");
  binio::write_u8(os, static_cast<std::uint8_t>(head.task));
  binio::write_u8(os, static_cast<std::uint8_t>(head.preproc));
  binio::write_f64(os, head.tau);
  binio::write_u8(os, head.has_tau ? 1 : 0);
  write_tensor(os, head.layer_weights.logits);
  write_tensor(os, head.w);
  write_tensor(os, head.b);
  write_tensor(os, head.aux_w);
  write_tensor(os, head.aux_b);
  if (!os) throw std::runtime_error("write failed: " + path);
}

DownstreamHead load_head(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  binio::expect_magic(is, "FRHD1");
  DownstreamHead head;
  head.task = static_cast<Task>(binio::read_u8(is));
  head.preproc = static_cast<Preproc>(binio::read_u8(is));
  head.tau = binio::read_f64(is);
  head.has_tau = binio::read_u8(is) != 0;
  head.layer_weights.logits = read_tensor(is);
  head.w = read_tensor(is);
  head.b = read_tensor(is);
  head.aux_w = read_tensor(is);
  head.aux_b = read_tensor(is);
  return head;
}

}  // namespace frad
