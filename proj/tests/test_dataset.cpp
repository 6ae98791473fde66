#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "frad/dataset.hpp"
#include "frad/tensor.hpp"

using namespace frad;

namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.n_keywords = 4;
  c.n_speakers = 8;
  c.n_train = 32;
  c.n_val = 32;
  c.n_test = 32;
  c.master_seed = 7;
  return c;
}

const Dataset& small_dataset() {
  static const Dataset ds = generate_dataset(small_config());
  return ds;
}

// ---- independent spectral oracle ------------------------------------------
// Iterative radix-2 FFT, written here from scratch so keyword separability
// is judged by arithmetic that shares nothing with the generator.

void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> w(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> cur(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * cur;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        cur *= w;
      }
    }
  }
}

// Per-segment unit-normalized magnitude spectra, concatenated in order.
// Normalizing each segment discards speaker loudness; keeping the segments
// in sequence keeps keywords distinct even when they share segment sets.
std::vector<double> spectral_signature(const Waveform& wave) {
  constexpr std::size_t kSeg = 1024;
  std::vector<double> feat;
  for (std::size_t s = 0; s < wave.samples.size() / kSeg; ++s) {
    std::vector<std::complex<double>> buf(kSeg);
    for (std::size_t i = 0; i < kSeg; ++i) buf[i] = wave.samples[s * kSeg + i];
    fft_inplace(buf);
    std::vector<double> mag(kSeg / 2);
    double norm = 0.0;
    for (std::size_t i = 0; i < mag.size(); ++i) {
      mag[i] = std::abs(buf[i + 1]);  // skip DC
      norm += mag[i] * mag[i];
    }
    norm = std::sqrt(norm);
    for (double& m : mag) m /= norm;
    feat.insert(feat.end(), mag.begin(), mag.end());
  }
  return feat;
}

// ---------------------------------------------------------------------------

}  // namespace

TEST_CASE("config minimums are enforced") {
  auto broken = small_config();
  broken.n_keywords = 3;
  CHECK_THROWS_AS(generate_dataset(broken), std::invalid_argument);
  broken = small_config();
  broken.n_speakers = 7;
  CHECK_THROWS_AS(generate_dataset(broken), std::invalid_argument);
  broken = small_config();
  broken.n_val = 31;
  CHECK_THROWS_AS(generate_dataset(broken), std::invalid_argument);
}

TEST_CASE("splits have the configured sizes and well-formed utterances") {
  const Dataset& ds = small_dataset();
  CHECK(ds.train.size() == 32);
  CHECK(ds.val.size() == 32);
  CHECK(ds.test.size() == 32);

  auto check_split = [&](const std::vector<Utterance>& split) {
    for (const Utterance& u : split) {
      CHECK(u.wave.samples.size() == kWaveSamples);
      CHECK(u.keyword_label >= 0);
      CHECK(u.keyword_label < 4);
      CHECK(u.speaker_label >= 0);
      CHECK(u.speaker_label < 8);
      CHECK(u.frame_labels.size() == kFrameCount);
      double peak = 0.0;
      bool finite = true;
      for (double s : u.wave.samples) {
        peak = std::max(peak, std::abs(s));
        finite = finite && std::isfinite(s);
      }
      CHECK(finite);
      CHECK(peak > 0.5);
      CHECK(peak < 0.7);
    }
  };
  check_split(ds.train);
  check_split(ds.val);
  check_split(ds.test);
}

TEST_CASE("keyword and speaker labels stay balanced within each split") {
  const Dataset& ds = small_dataset();
  auto spread = [](const std::vector<Utterance>& split, bool keyword, int classes) {
    std::vector<int> counts(classes, 0);
    for (const Utterance& u : split) ++counts[keyword ? u.keyword_label : u.speaker_label];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    return *hi - *lo;
  };
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    CHECK(spread(*split, true, 4) <= 1);
    CHECK(spread(*split, false, 8) <= 1);
  }
}

TEST_CASE("frame labels follow the keyword's segment template") {
  const DatasetConfig cfg = small_config();
  const Dataset& ds = small_dataset();
  for (const Utterance& u : ds.train) {
    const auto tpl = keyword_segments(cfg, u.keyword_label);
    for (std::size_t f = 0; f < kFrameCount; ++f) {
      CHECK(u.frame_labels[f] == tpl[f / (kFrameCount / kSegmentsPerClip)]);
    }
  }
}

TEST_CASE("keyword templates are distinct sequences") {
  DatasetConfig cfg = small_config();
  cfg.n_keywords = 10;
  std::set<std::array<int, kSegmentsPerClip>> seen;
  for (int k = 0; k < 10; ++k) {
    const auto tpl = keyword_segments(cfg, k);
    for (int s : tpl) {
      CHECK(s >= 0);
      CHECK(s < static_cast<int>(kSegmentClasses));
    }
    CHECK(seen.insert(tpl).second);
  }
  CHECK_THROWS_AS(keyword_segments(cfg, 10), std::invalid_argument);
  CHECK_THROWS_AS(keyword_segments(cfg, -1), std::invalid_argument);
}

TEST_CASE("same keyword shares its label track across speakers, not its wave") {
  const Dataset& ds = small_dataset();
  const Utterance* a = nullptr;
  const Utterance* b = nullptr;
  for (const Utterance& u : ds.train) {
    if (u.keyword_label != 0) continue;
    if (!a) {
      a = &u;
    } else if (u.speaker_label != a->speaker_label) {
      b = &u;
      break;
    }
  }
  REQUIRE(a != nullptr);
  REQUIRE(b != nullptr);
  CHECK(a->frame_labels == b->frame_labels);
  CHECK(a->wave.samples != b->wave.samples);
}

TEST_CASE("stored seeds regenerate the stored waves exactly") {
  const DatasetConfig cfg = small_config();
  const Dataset& ds = small_dataset();
  for (int i : {0, 5, 31}) {
    const Utterance& u = ds.val[i];
    const Utterance redo = synthesize_utterance(cfg, u.keyword_label, u.speaker_label, u.seed);
    CHECK(redo.wave.samples == u.wave.samples);
    CHECK(redo.frame_labels == u.frame_labels);
  }
}

TEST_CASE("generation is deterministic in the master seed") {
  const Dataset again = generate_dataset(small_config());
  CHECK(again.train[0].wave.samples == small_dataset().train[0].wave.samples);
  CHECK(again.test[31].wave.samples == small_dataset().test[31].wave.samples);

  DatasetConfig other = small_config();
  other.master_seed = 8;
  const Dataset different = generate_dataset(other);
  CHECK(different.train[0].wave.samples != small_dataset().train[0].wave.samples);
}

TEST_CASE("file round trip is bit-exact") {
  const std::string path = "/tmp/frad_test_dataset.bin";
  const Dataset& ds = small_dataset();
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);

  CHECK(back.config.n_keywords == ds.config.n_keywords);
  CHECK(back.config.master_seed == ds.config.master_seed);
  REQUIRE(back.train.size() == ds.train.size());
  REQUIRE(back.test.size() == ds.test.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].wave.samples == ds.train[i].wave.samples);
    CHECK(back.train[i].keyword_label == ds.train[i].keyword_label);
    CHECK(back.train[i].speaker_label == ds.train[i].speaker_label);
    CHECK(back.train[i].frame_labels == ds.train[i].frame_labels);
    CHECK(back.train[i].seed == ds.train[i].seed);
  }
  std::remove(path.c_str());
}

TEST_CASE("loading a non-dataset file fails on the magic tag") {
  const std::string path = "/tmp/frad_test_bogus.bin";
  FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("BOGUS and then some", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("trial planning avoids self-pairs and repeats") {
  std::vector<TrialCandidate> pool;
  for (std::size_t i = 0; i < 12; ++i) pool.push_back({i, static_cast<int>(i / 3)});

  const auto plans = plan_trials(pool, pool, 10, 10, 77);
  REQUIRE(plans.size() == 20);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  int same = 0;
  for (const TrialPlan& p : plans) {
    const auto& a = pool[p.enroll_pos];
    const auto& b = pool[p.test_pos];
    CHECK(a.id != b.id);
    CHECK((a.speaker == b.speaker) == p.same_speaker);
    const auto key = std::minmax(a.id, b.id);
    CHECK(seen.insert({key.first, key.second}).second);
    same += p.same_speaker ? 1 : 0;
  }
  CHECK(same == 10);
}

TEST_CASE("trial planning rejects impossible requests") {
  std::vector<TrialCandidate> one_speaker{{0, 5}, {1, 5}, {2, 5}};
  CHECK_THROWS_AS(plan_trials(one_speaker, one_speaker, 0, 1, 3), std::invalid_argument);
  CHECK_THROWS_AS(plan_trials(one_speaker, one_speaker, -1, 0, 3), std::invalid_argument);
  CHECK(plan_trials(one_speaker, one_speaker, 0, 0, 3).empty());
  std::vector<TrialCandidate> empty;
  CHECK_THROWS_AS(plan_trials(empty, empty, 1, 1, 3), std::invalid_argument);
}

TEST_CASE("generated trials draw both sides from the test split") {
  const Dataset& ds = small_dataset();
  const auto trials = generate_trials(ds, 6, 6, 5);
  REQUIRE(trials.size() == 12);

  auto find_speaker = [&](const Waveform& w) {
    for (const Utterance& u : ds.test) {
      if (u.wave.samples == w.samples) return u.speaker_label;
    }
    return -1;
  };
  int same = 0;
  for (const TrialPair& t : trials) {
    const int sa = find_speaker(t.wave_a);
    const int sb = find_speaker(t.wave_b);
    CHECK(sa >= 0);
    CHECK(sb >= 0);
    CHECK((sa == sb) == t.same_speaker);
    same += t.same_speaker ? 1 : 0;
  }
  CHECK(same == 6);
}

TEST_CASE("keyword classes separate under an independent spectral classifier") {
  // Nearest-centroid on per-segment magnitude spectra, centroids from the
  // train split. This is the floor the learned pipeline has to beat.
  DatasetConfig cfg;
  cfg.n_keywords = 10;
  cfg.n_speakers = 20;
  cfg.n_train = 128;
  cfg.n_val = 32;
  cfg.n_test = 64;
  cfg.master_seed = 42;
  const Dataset ds = generate_dataset(cfg);

  std::map<int, std::vector<double>> centroid;
  std::map<int, int> counts;
  for (const Utterance& u : ds.train) {
    const auto sig = spectral_signature(u.wave);
    auto& c = centroid[u.keyword_label];
    if (c.empty()) c.assign(sig.size(), 0.0);
    for (std::size_t i = 0; i < sig.size(); ++i) c[i] += sig[i];
    ++counts[u.keyword_label];
  }
  for (auto& [k, c] : centroid) {
    for (double& v : c) v /= counts[k];
  }

  int hits = 0;
  for (const Utterance& u : ds.test) {
    const auto sig = spectral_signature(u.wave);
    int best = -1;
    double best_d = 0.0;
    for (const auto& [k, c] : centroid) {
      double d = 0.0;
      for (std::size_t i = 0; i < sig.size(); ++i) d += (sig[i] - c[i]) * (sig[i] - c[i]);
      if (best < 0 || d < best_d) {
        best = k;
        best_d = d;
      }
    }
    hits += best == u.keyword_label ? 1 : 0;
  }
  const double accuracy = static_cast<double>(hits) / static_cast<double>(ds.test.size());
  CHECK(accuracy > 0.8);
}
