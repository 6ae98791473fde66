#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "frad/dataset.hpp"
#include "frad/tensor.hpp"
#include "frad/upstream.hpp"

using namespace frad;

namespace {

// Full-length input, slimmed width: cheap enough for gradient probes but
// the same topology as the shipped presets.
UpstreamConfig mini_config(Arch arch) {
  UpstreamConfig c = arch == Arch::kA ? UpstreamConfig::arch_a() : UpstreamConfig::arch_b();
  c.conv_channels[0] = 8;
  c.conv_channels[1] = 12;
  c.conv_channels[2] = 16;
  c.n_blocks = 2;
  c.ff_dim = 32;
  c.n_distractors = 4;
  c.kmeans_k = 6;
  c.kmeans_sample = 8;
  c.kmeans_iters = 5;
  c.batch_size = 4;
  return c;
}

const Dataset& tiny_data() {
  static const Dataset ds = [] {
    DatasetConfig c;
    c.n_keywords = 4;
    c.n_speakers = 8;
    c.n_train = 32;
    c.n_val = 32;
    c.n_test = 32;
    c.master_seed = 17;
    return generate_dataset(c);
  }();
  return ds;
}

// Scalar probe the gradient checks differentiate: the Frobenius norm of the
// top-layer features.
double probe_loss(const UpstreamModel& m, const std::vector<double>& samples) {
  Tape tape(TapeMode::kFrozen);
  Value x = tape.leaf(Tensor({samples.size(), 1}, samples), false);
  const auto layers = build_features(tape, m, x);
  return tape.l2_norm(layers.back()).tensor().at(0);
}

}  // namespace

TEST_CASE("initialization is deterministic and parameter shapes line up") {
  const UpstreamConfig cfg = mini_config(Arch::kA);
  UpstreamModel a = init_upstream(cfg, 3);
  UpstreamModel b = init_upstream(cfg, 3);
  UpstreamModel c = init_upstream(cfg, 4);
  CHECK(a.param_checksum() == b.param_checksum());
  CHECK(a.param_checksum() != c.param_checksum());

  CHECK(a.convs.size() == 3);
  CHECK(a.convs[0].w.shape == std::vector<std::size_t>{8, 1, 64});
  CHECK(a.convs[2].w.shape == std::vector<std::size_t>{16, 12, 8});
  CHECK(a.blocks.size() == 2);
  CHECK(a.blocks[0].ff_w1.shape == std::vector<std::size_t>{16, 32});
  CHECK(a.pos.shape == std::vector<std::size_t>{64, 16});
  CHECK_FALSE(a.frozen);

  // Arch b carries the pseudo-label classifier as extra parameters.
  UpstreamModel mb = init_upstream(mini_config(Arch::kB), 3);
  CHECK(mb.parameters().size() == a.parameters().size() + 2);
  CHECK(mb.cls_w.shape == std::vector<std::size_t>{16, 6});
}

TEST_CASE("config validation rejects broken geometry") {
  UpstreamConfig cfg = mini_config(Arch::kA);
  cfg.n_samples = 1000;  // not a multiple of 64
  CHECK_THROWS_AS(init_upstream(cfg, 1), std::invalid_argument);
  cfg = mini_config(Arch::kA);
  cfg.n_heads = 5;  // 16 % 5 != 0
  CHECK_THROWS_AS(init_upstream(cfg, 1), std::invalid_argument);
  cfg = mini_config(Arch::kA);
  cfg.mask_ratio = 1.0;
  CHECK_THROWS_AS(init_upstream(cfg, 1), std::invalid_argument);
}

TEST_CASE("feature extraction is deterministic with the documented layout") {
  const UpstreamModel m = init_upstream(mini_config(Arch::kA), 5);
  const Waveform& wave = tiny_data().test[0].wave;
  const LayerFeatures f1 = extract_features(m, wave);
  const LayerFeatures f2 = extract_features(m, wave);

  REQUIRE(f1.layers.size() == 3);  // frontend + 2 blocks
  for (std::size_t l = 0; l < f1.layers.size(); ++l) {
    CHECK(f1.layers[l].shape == std::vector<std::size_t>{64, 16});
    CHECK(f1.layers[l].data == f2.layers[l].data);
    CHECK(f1.layers[l].all_finite());
  }

  Waveform bad;
  bad.samples.assign(100, 0.0);
  CHECK_THROWS_AS(extract_features(m, bad), ShapeError);
}

TEST_CASE("input gradients match finite differences at sampled positions") {
  const UpstreamModel m = init_upstream(mini_config(Arch::kA), 9);
  const std::vector<double>& samples = tiny_data().test[1].wave.samples;

  Tape tape(TapeMode::kTraining);
  Value x = tape.leaf(Tensor({samples.size(), 1}, samples), true);
  const auto layers = build_features(tape, m, x);
  Value loss = tape.l2_norm(layers.back());
  tape.backward(loss);
  REQUIRE(x.grad() != nullptr);
  const Tensor& grad = *x.grad();

  const double h = 1e-5;
  for (int i = 0; i < 24; ++i) {
    const std::size_t p = (static_cast<std::size_t>(i) * 613 + 31) % samples.size();
    std::vector<double> plus = samples, minus = samples;
    plus[p] += h;
    minus[p] -= h;
    const double fd = (probe_loss(m, plus) - probe_loss(m, minus)) / (2.0 * h);
    const double rel = std::abs(grad.at(p) - fd) / std::max(1.0, std::abs(fd));
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("every probed input sample influences the features") {
  const UpstreamModel m = init_upstream(mini_config(Arch::kA), 6);
  const Waveform& wave = tiny_data().test[2].wave;
  const LayerFeatures base = extract_features(m, wave);

  for (int i = 0; i < 16; ++i) {
    Waveform bumped = wave;
    bumped.samples[static_cast<std::size_t>(i) * 256 + 17] += 0.01;
    const LayerFeatures f = extract_features(m, bumped);
    CHECK(max_abs_diff(f.layers.back().data, base.layers.back().data) > 0.0);
  }
}

TEST_CASE("masking changes the stream but not the reported frontend layer") {
  const UpstreamModel m = init_upstream(mini_config(Arch::kA), 8);
  const std::vector<double>& samples = tiny_data().test[3].wave.samples;
  std::vector<std::uint8_t> mask(64, 0);
  for (int t = 0; t < 10; ++t) mask[t * 6] = 1;

  Tape tape(TapeMode::kFrozen);
  Value x = tape.leaf(Tensor({samples.size(), 1}, samples), false);
  const auto plain = build_features(tape, m, x);
  const auto masked = build_features(tape, m, x, &mask);
  CHECK(plain[0].tensor().data == masked[0].tensor().data);
  CHECK(max_abs_diff(plain.back().tensor().data, masked.back().tensor().data) > 0.0);
}

TEST_CASE("contrastive pretraining runs, freezes, and refuses to rerun") {
  UpstreamModel m = init_upstream(mini_config(Arch::kA), 21);
  const std::uint64_t before = m.param_checksum();
  const PretrainStats stats = pretrain(m, tiny_data(), 4, 100);

  CHECK(stats.step_losses.size() == 4);
  for (double l : stats.step_losses) CHECK(std::isfinite(l));
  CHECK(std::isfinite(stats.val_loss_start));
  CHECK(std::isfinite(stats.val_loss_end));
  CHECK(m.frozen);
  CHECK(m.param_checksum() != before);
  CHECK_THROWS_AS(pretrain(m, tiny_data(), 1, 100), std::invalid_argument);
}

TEST_CASE("zero pretraining steps freeze the initialization untouched") {
  UpstreamModel m = init_upstream(mini_config(Arch::kA), 22);
  const std::uint64_t before = m.param_checksum();
  const PretrainStats stats = pretrain(m, tiny_data(), 0, 100);
  CHECK(m.frozen);
  CHECK(m.param_checksum() == before);
  CHECK(stats.val_loss_start == stats.val_loss_end);
  CHECK(stats.step_losses.empty());
}

TEST_CASE("pretraining is deterministic in its seed") {
  UpstreamModel a = init_upstream(mini_config(Arch::kA), 23);
  UpstreamModel b = init_upstream(mini_config(Arch::kA), 23);
  pretrain(a, tiny_data(), 3, 55);
  pretrain(b, tiny_data(), 3, 55);
  CHECK(a.param_checksum() == b.param_checksum());
}

TEST_CASE("pseudo-label pretraining runs and freezes") {
  UpstreamModel m = init_upstream(mini_config(Arch::kB), 31);
  const PretrainStats stats = pretrain(m, tiny_data(), 2, 200);
  CHECK(stats.step_losses.size() == 2);
  for (double l : stats.step_losses) CHECK(std::isfinite(l));
  CHECK(m.frozen);
}

TEST_CASE("contrastive training improves the held-out masked objective") {
  UpstreamModel m = init_upstream(mini_config(Arch::kA), 40);
  const PretrainStats stats = pretrain(m, tiny_data(), 60, 77);
  CHECK(stats.val_loss_end < stats.val_loss_start);
}

TEST_CASE("checkpoint round trip reproduces features bitwise") {
  const std::string path = "/tmp/frad_test_upstream.bin";
  UpstreamModel m = init_upstream(mini_config(Arch::kB), 12);
  pretrain(m, tiny_data(), 2, 9);
  save_upstream(m, path);
  const UpstreamModel back = load_upstream(path);

  CHECK(back.config.arch == Arch::kB);
  CHECK(back.config.n_heads == m.config.n_heads);
  CHECK(back.frozen);
  CHECK(back.param_checksum() == m.param_checksum());
  const Waveform& wave = tiny_data().val[0].wave;
  const LayerFeatures fa = extract_features(m, wave);
  const LayerFeatures fb = extract_features(back, wave);
  for (std::size_t l = 0; l < fa.layers.size(); ++l) {
    CHECK(fa.layers[l].data == fb.layers[l].data);
  }
  std::remove(path.c_str());
}

TEST_CASE("loading a non-checkpoint file fails on the magic tag") {
  const std::string path = "/tmp/frad_test_upstream_bogus.bin";
  FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("NOT A CHECKPOINT", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_upstream(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("the two shipped presets are genuinely different encoders") {
  const UpstreamConfig ca = UpstreamConfig::arch_a();
  const UpstreamConfig cb = UpstreamConfig::arch_b();
  const UpstreamModel a = init_upstream(ca, 1);
  const UpstreamModel b = init_upstream(cb, 2);

  std::size_t count_a = 0, count_b = 0;
  for (const Tensor* t : a.parameters()) count_a += t->numel();
  for (const Tensor* t : b.parameters()) count_b += t->numel();
  CHECK(count_a != count_b);

  // Layer-averaged features of the same audio should not be near-duplicates.
  double mean_cos = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Waveform& wave = tiny_data().test[i].wave;
    const LayerFeatures fa = extract_features(a, wave);
    const LayerFeatures fb = extract_features(b, wave);
    auto averaged = [](const LayerFeatures& f) {
      std::vector<double> avg(f.layers[0].numel(), 0.0);
      for (const Tensor& t : f.layers) {
        for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += t.data[j];
      }
      for (double& v : avg) v /= static_cast<double>(f.layers.size());
      return avg;
    };
    const auto va = averaged(fa), vb = averaged(fb);
    double dot = 0.0;
    for (std::size_t j = 0; j < va.size(); ++j) dot += va[j] * vb[j];
    mean_cos += dot / (l2_norm(va) * l2_norm(vb));
  }
  mean_cos /= 4.0;
  CHECK(std::abs(mean_cos) < 0.99);
}
