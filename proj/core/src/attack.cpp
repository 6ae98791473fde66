#include "frad/attack.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "frad/parallel.hpp"
#include "frad/rng.hpp"
#include "frad/tensor.hpp"

namespace frad {

namespace {

double l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void validate_attack_config(const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0)) {
    throw std::invalid_argument("attack budget: epsilon must be non-negative, got " +
                                std::to_string(cfg.epsilon));
  }
  // A zero budget is a degenerate-but-legal config (every step clips back to
  // the input), so the step-size bound only applies when there is a band to
  // step inside.
  if (cfg.epsilon > 0.0 && !(cfg.alpha > 0.0 && cfg.alpha <= cfg.epsilon)) {
    throw std::invalid_argument("attack budget: step size must lie in (0, epsilon], got alpha " +
                                std::to_string(cfg.alpha) + " with epsilon " +
                                std::to_string(cfg.epsilon));
  }
  if (cfg.n_iters < 0) {
    throw std::invalid_argument("attack budget: iteration count must be non-negative, got " +
                                std::to_string(cfg.n_iters));
  }
}

const char* scenario_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kLimitedKnowledge: return "limited_knowledge";
    case ScenarioKind::kZeroKnowledge: return "zero_knowledge";
    case ScenarioKind::kGaussian: return "gaussian";
    case ScenarioKind::kClean: return "clean";
  }
  return "?";
}

void validate_scenario(const Scenario& s) {
  if (s.target_model == nullptr) {
    throw std::invalid_argument("scenario: a target model is required");
  }
  switch (s.kind) {
    case ScenarioKind::kLimitedKnowledge:
      if (s.attack_model != s.target_model) {
        throw std::invalid_argument(
            "scenario: limited knowledge reads gradients from the target itself, so attack and "
            "target must be the same model");
      }
      break;
    case ScenarioKind::kZeroKnowledge:
      if (s.attack_model == nullptr) {
        throw std::invalid_argument(
            "scenario: zero knowledge needs a substitute model to approximate gradients");
      }
      if (s.attack_model == s.target_model ||
          s.attack_model->config.arch == s.target_model->config.arch) {
        throw std::invalid_argument(
            "scenario: the zero-knowledge substitute must be a different architecture from the "
            "target");
      }
      break;
    case ScenarioKind::kGaussian:
    case ScenarioKind::kClean:
      if (s.attack_model != nullptr) {
        throw std::invalid_argument("scenario: gradient-free scenarios carry no attack model");
      }
      break;
  }
}

Tensor averaged_embedding(const UpstreamModel& model, const Waveform& wave) {
  const LayerFeatures feats = extract_features(model, wave);
  Tensor acc = feats.layers[0];
  for (std::size_t k = 1; k < feats.layers.size(); ++k) {
    const Tensor& layer = feats.layers[k];
    for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += layer.data[i];
  }
  const double inv = 1.0 / static_cast<double>(feats.layers.size());
  for (double& v : acc.data) v *= inv;
  return acc;
}

Value averaged_embedding_graph(Tape& tape, const UpstreamModel& model, Value wave) {
  const std::vector<Value> layers = build_features(tape, model, wave);
  Value acc = layers[0];
  for (std::size_t k = 1; k < layers.size(); ++k) acc = tape.add(acc, layers[k]);
  const double inv = 1.0 / static_cast<double>(layers.size());
  return tape.mul(acc, tape.constant(Tensor::full(acc.tensor().shape, inv)));
}

Waveform clip_linf(const Waveform& t, const Waveform& origin, double epsilon) {
  if (t.samples.size() != origin.samples.size()) {
    throw std::invalid_argument("clip: waveform length " + std::to_string(t.samples.size()) +
                                " does not match origin length " +
                                std::to_string(origin.samples.size()));
  }
  if (!(epsilon >= 0.0)) {
    throw std::invalid_argument("clip: band half-width must be non-negative, got " +
                                std::to_string(epsilon));
  }
  Waveform out = t;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double o = origin.samples[i];
    double v = out.samples[i];
    if (v > o + epsilon) {
      v = o + epsilon;
    } else if (v < o - epsilon) {
      v = o - epsilon;
    }
    if (v > 1.0) {
      v = 1.0;
    } else if (v < -1.0) {
      v = -1.0;
    }
    // o + epsilon rounds to the nearest double, which can land half an ulp
    // outside the band; walk back so the budget holds to the last bit.
    while (std::abs(v - o) > epsilon) v = std::nextafter(v, o);
    out.samples[i] = v;
  }
  return out;
}

AttackResult bim_attack(const UpstreamModel& attack_model, const Waveform& x,
                        const AttackConfig& cfg) {
  validate_attack_config(cfg);
  if (!attack_model.frozen) {
    throw std::invalid_argument("bim attack: the attack model must be frozen; pretrain it first");
  }

  AttackResult out;
  out.adversarial = x;

  // With no iterations or no budget the input never moves; skip the forward
  // passes and report the identity outcome exactly. (Every in-loop distance
  // would be zero anyway: the waveform stays put, so its embedding does too.)
  if (cfg.n_iters == 0 || cfg.epsilon == 0.0) {
    out.loss_trace.assign(static_cast<std::size_t>(cfg.n_iters) + 1, 0.0);
    return out;
  }

  const std::size_t n = x.samples.size();
  const Tensor anchor = averaged_embedding(attack_model, x);
  Rng kick_rng(derive_seed(cfg.seed, "ascent-kick"));
  out.loss_trace.reserve(static_cast<std::size_t>(cfg.n_iters) + 1);

  for (int iter = 0; iter < cfg.n_iters; ++iter) {
    Tape tape(TapeMode::kFrozen);
    Value wave = tape.leaf(Tensor({n, 1}, out.adversarial.samples), true);
    Value z = averaged_embedding_graph(tape, attack_model, wave);
    Value loss = tape.l2_norm(tape.sub(tape.constant(anchor), z));
    out.loss_trace.push_back(loss.tensor().data[0]);
    tape.backward(loss);

    const Tensor* grad = wave.grad();
    bool moved = false;
    Waveform stepped = out.adversarial;
    if (grad != nullptr) {
      for (std::size_t i = 0; i < n; ++i) {
        const double g = grad->data[i];
        if (g > 0.0) {
          stepped.samples[i] += cfg.alpha;
          moved = true;
        } else if (g < 0.0) {
          stepped.samples[i] -= cfg.alpha;
          moved = true;
        }
      }
    }
    if (!moved) {
      // The first iteration starts at the anchor itself: the feature distance
      // is exactly zero and so is its gradient. Break the tie with a seeded
      // +-alpha kick; clipping keeps the kick inside the budget.
      for (double& s : stepped.samples) s += kick_rng.bounded(2) == 0 ? -cfg.alpha : cfg.alpha;
    }
    out.adversarial = clip_linf(stepped, x, cfg.epsilon);
  }

  // One more forward pass so the trace ends with the distance the returned
  // waveform actually achieves.
  const Tensor final_embed = averaged_embedding(attack_model, out.adversarial);
  double fs = 0.0;
  for (std::size_t i = 0; i < final_embed.numel(); ++i) {
    const double d = anchor.data[i] - final_embed.data[i];
    fs += d * d;
  }
  out.loss_trace.push_back(std::sqrt(fs));

  double dd = 0.0;
  double li = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = out.adversarial.samples[i] - x.samples[i];
    dd += d * d;
    if (std::abs(d) > li) li = std::abs(d);
  }
  const double sig = l2(x.samples);
  out.linf = li;
  if (sig > 0.0) {
    out.nsr = std::sqrt(dd) / sig;
  } else {
    out.nsr = dd == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return out;
}

AttackResult gaussian_control(const Waveform& x, double target_nsr, std::uint64_t seed) {
  if (!(target_nsr >= 0.0)) {
    throw std::invalid_argument("gaussian control: noise-to-signal target must be non-negative, got " +
                                std::to_string(target_nsr));
  }
  const double sig = l2(x.samples);
  if (sig == 0.0) {
    throw std::invalid_argument(
        "gaussian control: a silent input has no defined noise-to-signal ratio");
  }

  AttackResult out;
  out.adversarial = x;
  if (target_nsr == 0.0) return out;

  Rng rng(seed);
  std::vector<double> noise(x.samples.size());
  double nn = 0.0;
  do {  // an all-zero draw is a measure-zero event, but guard the division
    nn = 0.0;
    for (double& v : noise) {
      v = rng.normal();
      nn += v * v;
    }
  } while (nn == 0.0);
  const double scale = target_nsr * sig / std::sqrt(nn);

  double dd = 0.0;
  double li = 0.0;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    double v = x.samples[i] + scale * noise[i];
    if (v > 1.0) {
      v = 1.0;
    } else if (v < -1.0) {
      v = -1.0;
    }
    out.adversarial.samples[i] = v;
    const double d = v - x.samples[i];
    dd += d * d;
    if (std::abs(d) > li) li = std::abs(d);
  }
  out.nsr = std::sqrt(dd) / sig;
  out.linf = li;
  return out;
}

std::vector<AttackResult> run_scenario(const Scenario& s, const AttackConfig& cfg,
                                       const std::vector<const Waveform*>& items,
                                       const std::vector<double>* matched_nsr) {
  validate_scenario(s);
  validate_attack_config(cfg);
  for (const Waveform* w : items) {
    if (w == nullptr) throw std::invalid_argument("scenario: null utterance in the batch");
  }
  if (s.kind == ScenarioKind::kGaussian) {
    if (matched_nsr == nullptr || matched_nsr->size() != items.size()) {
      throw std::invalid_argument(
          "scenario: the gaussian control needs one matched noise-to-signal ratio per utterance");
    }
  } else if (matched_nsr != nullptr) {
    throw std::invalid_argument(
        "scenario: only the gaussian control takes matched noise-to-signal ratios");
  }

  std::vector<AttackResult> results(items.size());
  switch (s.kind) {
    case ScenarioKind::kClean:
      for (std::size_t i = 0; i < items.size(); ++i) results[i].adversarial = *items[i];
      break;
    case ScenarioKind::kLimitedKnowledge:
    case ScenarioKind::kZeroKnowledge:
      parallel_for(items.size(), [&](std::size_t i) {
        // Per-item seeds keep kick directions independent across utterances
        // while staying reproducible regardless of worker count.
        AttackConfig item_cfg = cfg;
        item_cfg.seed = derive_seed(cfg.seed, "attack-item", i);
        results[i] = bim_attack(*s.attack_model, *items[i], item_cfg);
      });
      break;
    case ScenarioKind::kGaussian:
      parallel_for(items.size(), [&](std::size_t i) {
        results[i] =
            gaussian_control(*items[i], (*matched_nsr)[i], derive_seed(cfg.seed, "gaussian-item", i));
      });
      break;
  }
  return results;
}

}  // namespace frad
