#include "frad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "binio.hpp"
#include "frad/parallel.hpp"
#include "frad/rng.hpp"

namespace frad {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::size_t kSegmentLen = kWaveSamples / kSegmentsPerClip;  // 1024 samples
constexpr int kMaxHarmonics = 24;
constexpr double kMaxPartialHz = 1900.0;  // keep partials clear of Nyquist (2 kHz)
constexpr double kFormantGain = 5.0;
constexpr double kFormantBandHz = 120.0;
constexpr double kFormantSkirt = 0.08;   // damping for harmonics away from the formant
constexpr double kFormantFloorHz = 460.0;  // below this, harmonics escape formant shaping
constexpr double kFormantSpeakerMix = 0.25;  // how much speaker timbre tints the formant band
constexpr double kSpeakerResGain = 2.2;    // each speaker's own resonance inside the voicing band
constexpr double kSpeakerResBandHz = 110.0;
constexpr double kSpeakerHiGain = 0.55;  // the speaker's high resonance, rides above the skirt
constexpr double kSpeakerHiBandHz = 70.0;
constexpr double kNoiseSnrDb = 20.0;

// The 8 segment classes: a formant-band emphasis plus an amplitude
// modulation pattern. Formants separate the classes spectrally; the mild
// AM gives each class temporal texture without hollowing out the band
// energy that frame-level probes depend on.
constexpr double kSegFormantHz[kSegmentClasses] = {470, 660, 850, 1040, 1230, 1420, 1610, 1800};
constexpr double kSegAmRateHz[kSegmentClasses] = {4, 6, 8, 10, 12, 14, 16, 18};
constexpr double kSegAmDepth[kSegmentClasses] = {0.12, 0.06, 0.10, 0.08, 0.12, 0.06, 0.10, 0.08};

struct SpeakerProfile {
  double f0 = 0.0;
  double res_hz = 0.0;   // the speaker's own voice-quality resonance
  double hi_hz = 0.0;    // a second, weaker resonance up in formant country
  double voicing = 1.0;  // level of the voicing band relative to the formants
  double amp[kMaxHarmonics] = {};    // voicing band: tilt slope times residual
  double resid[kMaxHarmonics] = {};  // slope-free per-harmonic residual
  double phase[kMaxHarmonics] = {};
};

// Fractional part of (i+1)·g for an irrational g: a low-discrepancy ramp
// that spreads one voice cue across speakers with no clustering.
double spread(int i, double g) {
  const double v = (i + 1) * g;
  return v - std::floor(v);
}

// Speaker identity is deliberately multi-cue: fundamental frequency
// (log-spaced), a voice-quality resonance inside the voicing band, spectral
// tilt, voicing-to-formant balance, and a fixed per-harmonic residual. The
// first four are stratified with mutually incommensurate ramps, so two
// speakers adjacent in pitch land far apart in the other cues and every
// pair is separated by a wide margin somewhere.
SpeakerProfile speaker_profile(const DatasetConfig& cfg, int speaker) {
  SpeakerProfile sp;
  const double lo = 80.0, hi = 225.0;  // every f0 keeps partials below the formant floor
  const double frac = cfg.n_speakers > 1
                          ? static_cast<double>(speaker) / (cfg.n_speakers - 1)
                          : 0.0;
  sp.f0 = lo * std::pow(hi / lo, frac);
  sp.res_hz = 120.0 + 300.0 * spread(speaker, 0.6180339887498949);   // golden ratio
  const double tilt = 0.85 + 0.14 * spread(speaker, 0.41421356237309515);  // sqrt 2
  sp.voicing = 0.62 + 0.48 * spread(speaker, 0.7320508075688772);    // sqrt 3
  sp.hi_hz = 520.0 + 1260.0 * spread(speaker, 0.23606797749979);     // sqrt 5
  Rng rng(derive_seed(cfg.master_seed, "speaker-template", static_cast<std::uint64_t>(speaker)));
  for (int h = 0; h < kMaxHarmonics; ++h) {
    sp.resid[h] = std::exp(rng.uniform(-1.0, 0.0));
    sp.amp[h] = std::pow(tilt, h) * sp.resid[h];
  }
  for (int h = 0; h < kMaxHarmonics; ++h) sp.phase[h] = rng.uniform(0.0, 2.0 * kPi);
  return sp;
}

// Keyword templates use pairwise-distinct segment MULTISETS, not just
// distinct orderings: clip-level pooling averages frame features over time,
// so two keywords sharing the same bag of segments would collapse to the
// same pooled spectrum and no pooled classifier could tell them apart.
std::vector<std::array<int, kSegmentsPerClip>> keyword_templates(const DatasetConfig& cfg) {
  std::vector<std::array<int, kSegmentsPerClip>> templates;
  std::vector<std::array<int, kSegmentsPerClip>> bags;  // sorted copies
  templates.reserve(cfg.n_keywords);
  for (int k = 0; k < cfg.n_keywords; ++k) {
    Rng rng(derive_seed(cfg.master_seed, "keyword-template", static_cast<std::uint64_t>(k)));
    std::array<int, kSegmentsPerClip> tpl{};
    for (int attempt = 0;; ++attempt) {
      for (int i = 0; i < kSegmentsPerClip; ++i) {
        tpl[i] = static_cast<int>(rng.bounded(kSegmentClasses));
      }
      std::array<int, kSegmentsPerClip> bag = tpl;
      std::sort(bag.begin(), bag.end());
      if (std::find(bags.begin(), bags.end(), bag) == bags.end()) {
        bags.push_back(bag);
        break;
      }
      if (attempt > 4000) throw std::runtime_error("keyword template space exhausted");
    }
    templates.push_back(tpl);
  }
  return templates;
}

void validate_config(const DatasetConfig& cfg) {
  if (cfg.n_keywords < 4 || cfg.n_speakers < 8 || cfg.n_train < 32 || cfg.n_val < 32 ||
      cfg.n_test < 32) {
    throw std::invalid_argument(
        "dataset config below minimums (need >= 4 keywords, >= 8 speakers, >= 32 per split)");
  }
  // 4 segment slots over 8 classes give 330 distinct multisets; stay well
  // clear of that so distinct-bag template sampling always terminates.
  if (cfg.n_keywords > 64) {
    throw std::invalid_argument("dataset config: at most 64 keywords are supported");
  }
}

}  // namespace

std::array<int, kSegmentsPerClip> keyword_segments(const DatasetConfig& cfg, int keyword) {
  validate_config(cfg);
  if (keyword < 0 || keyword >= cfg.n_keywords) {
    throw std::invalid_argument("keyword id out of range");
  }
  return keyword_templates(cfg)[keyword];
}

Utterance synthesize_utterance(const DatasetConfig& cfg, int keyword, int speaker,
                               std::uint64_t utterance_seed) {
  const SpeakerProfile sp = speaker_profile(cfg, speaker);
  const auto tpl = keyword_templates(cfg)[keyword];

  // All per-utterance randomness comes from this stream, in a fixed draw
  // order, so the waveform is a pure function of (config, labels, seed).
  Rng rng(utterance_seed);
  const double f0 = sp.f0 * (1.0 + rng.uniform(-0.003, 0.003));
  const double phase_jitter = rng.uniform(0.0, 2.0 * kPi);
  const double peak_target = 0.6 * (1.0 + rng.uniform(-0.04, 0.04));

  const int n_harm = std::min<int>(kMaxHarmonics, static_cast<int>(kMaxPartialHz / f0));

  // Per-segment harmonic amplitudes, split into two bands. Below the formant
  // floor the speaker owns the spectrum outright (pitch and low-harmonic
  // timbre, untouched by segment class). Above it the segment class owns it:
  // a resonance around the segment's formant, boosted near the peak and
  // damped to a skirt elsewhere, with only a trace of speaker timbre mixed
  // in. Keeping the bands near-additive is what lets linear probes read
  // speaker and content independently from pooled features.
  double amp[kSegmentsPerClip][kMaxHarmonics];
  for (int seg = 0; seg < kSegmentsPerClip; ++seg) {
    const double fc = kSegFormantHz[tpl[seg]];
    for (int h = 0; h < n_harm; ++h) {
      const double fh = (h + 1) * f0;
      if (fh < kFormantFloorHz) {
        const double dr = (fh - sp.res_hz) / kSpeakerResBandHz;
        amp[seg][h] = sp.voicing * sp.amp[h] * (1.0 + kSpeakerResGain * std::exp(-dr * dr));
      } else {
        // Tinted by the slope-free residual only: a tilt term here would make
        // a band's level depend on the harmonic index, which varies with f0,
        // and content classes would inherit speaker-sized variance. The
        // speaker's high resonance rides additively on the skirt — well below
        // a lit formant, well above an unlit one.
        const double d = (fh - fc) / kFormantBandHz;
        const double dh = (fh - sp.hi_hz) / kSpeakerHiBandHz;
        amp[seg][h] = std::pow(sp.resid[h], kFormantSpeakerMix) *
                      (kFormantSkirt + kFormantGain * std::exp(-d * d) +
                       kSpeakerHiGain * std::exp(-dh * dh));
      }
    }
  }

  Utterance utt;
  utt.keyword_label = keyword;
  utt.speaker_label = speaker;
  utt.seed = utterance_seed;
  utt.frame_labels.resize(kFrameCount);
  for (std::size_t j = 0; j < kFrameCount; ++j) {
    utt.frame_labels[j] = tpl[j / (kFrameCount / kSegmentsPerClip)];
  }

  std::vector<double>& x = utt.wave.samples;
  x.assign(kWaveSamples, 0.0);
  const double dt = 1.0 / Waveform::kSampleRate;
  for (std::size_t i = 0; i < kWaveSamples; ++i) {
    const std::size_t seg = i / kSegmentLen;
    const int cls = tpl[seg];
    const double t = i * dt;
    const double t_local = (i - seg * kSegmentLen) * dt;
    const double env =
        1.0 - kSegAmDepth[cls] * 0.5 * (1.0 - std::cos(2.0 * kPi * kSegAmRateHz[cls] * t_local));
    double s = 0.0;
    for (int h = 0; h < n_harm; ++h) {
      s += amp[seg][h] *
           std::sin(2.0 * kPi * (h + 1) * f0 * t + sp.phase[h] + phase_jitter);
    }
    x[i] = s * env;
  }

  // 20 dB SNR background noise.
  double power = 0.0;
  for (double v : x) power += v * v;
  const double rms = std::sqrt(power / kWaveSamples);
  const double noise_std = rms / std::pow(10.0, kNoiseSnrDb / 20.0);
  for (double& v : x) v += noise_std * rng.normal();

  // Peak-normalize with per-utterance level variation, then quantize
  // through f32 so the on-disk format round-trips bit-exactly.
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::fabs(v));
  const double scale = peak > 0.0 ? peak_target / peak : 1.0;
  for (double& v : x) {
    v = static_cast<double>(static_cast<float>(v * scale));
    v = std::clamp(v, -1.0, 1.0);
  }
  return utt;
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  validate_config(cfg);
  keyword_templates(cfg);  // fail fast if template generation cannot succeed

  Dataset ds;
  ds.config = cfg;
  std::uint64_t global_index = 0;
  struct SplitSpec {
    const char* name;
    int count;
    std::vector<Utterance>* out;
  };
  const SplitSpec splits[] = {
      {"train", cfg.n_train, &ds.train},
      {"val", cfg.n_val, &ds.val},
      {"test", cfg.n_test, &ds.test},
  };
  for (const auto& split : splits) {
    // Balanced label marginals with a per-split shuffled joint assignment,
    // so keyword and speaker are not correlated through the item index.
    std::vector<int> keywords(split.count), speakers(split.count);
    for (int i = 0; i < split.count; ++i) {
      keywords[i] = i % cfg.n_keywords;
      speakers[i] = i % cfg.n_speakers;
    }
    Rng kw_rng(derive_seed(cfg.master_seed, std::string("assign-kw-") + split.name));
    Rng sp_rng(derive_seed(cfg.master_seed, std::string("assign-sp-") + split.name));
    kw_rng.shuffle(keywords);
    sp_rng.shuffle(speakers);

    std::vector<std::uint64_t> seeds(split.count);
    for (int i = 0; i < split.count; ++i) {
      seeds[i] = derive_seed(cfg.master_seed, "utt", global_index++);
    }
    split.out->resize(split.count);
    parallel_for(static_cast<std::size_t>(split.count), [&](std::size_t i) {
      (*split.out)[i] = synthesize_utterance(cfg, keywords[i], speakers[i], seeds[i]);
    });
  }
  return ds;
}

std::vector<TrialPlan> plan_trials(std::span<const TrialCandidate> enroll,
                                   std::span<const TrialCandidate> test, int n_target,
                                   int n_nontarget, std::uint64_t seed) {
  if (n_target < 0 || n_nontarget < 0) throw std::invalid_argument("negative trial count");
  std::vector<TrialPlan> plans;
  if (n_target == 0 && n_nontarget == 0) return plans;
  if (enroll.empty() || test.empty()) {
    throw std::invalid_argument("insufficient utterances for requested trials");
  }

  Rng rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> used;  // unordered id pairs
  auto draw = [&](bool want_same, int count) {
    long long attempts = 0;
    const long long cap = 2000LL * (count + 1) + 10000;
    int made = 0;
    while (made < count) {
      if (++attempts > cap) {
        throw std::invalid_argument("insufficient utterances for requested trials");
      }
      const std::size_t a = rng.bounded(enroll.size());
      const std::size_t b = rng.bounded(test.size());
      if (enroll[a].id == test[b].id) continue;
      if ((enroll[a].speaker == test[b].speaker) != want_same) continue;
      auto key = std::minmax(enroll[a].id, test[b].id);
      if (!used.insert({key.first, key.second}).second) continue;
      plans.push_back({a, b, want_same});
      ++made;
    }
  };
  draw(true, n_target);
  draw(false, n_nontarget);
  return plans;
}

std::vector<TrialPair> generate_trials(const Dataset& ds, int n_target, int n_nontarget,
                                       std::uint64_t seed) {
  std::vector<TrialCandidate> cands;
  cands.reserve(ds.test.size());
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    cands.push_back({i, ds.test[i].speaker_label});
  }
  const auto plans = plan_trials(cands, cands, n_target, n_nontarget, seed);
  std::vector<TrialPair> out;
  out.reserve(plans.size());
  for (const auto& p : plans) {
    out.push_back({ds.test[p.enroll_pos].wave, ds.test[p.test_pos].wave, p.same_speaker});
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  binio::write_magic(os, "FRAD1");
  binio::write_u32(os, static_cast<std::uint32_t>(ds.config.n_keywords));
  binio::write_u32(os, static_cast<std::uint32_t>(ds.config.n_speakers));
  binio::write_u32(os, static_cast<std::uint32_t>(ds.config.n_train));
  binio::write_u32(os, static_cast<std::uint32_t>(ds.config.n_val));
  binio::write_u32(os, static_cast<std::uint32_t>(ds.config.n_test));
  binio::write_u32(os, Waveform::kSampleRate);
  binio::write_u32(os, kWaveSamples);
  binio::write_u64(os, ds.config.master_seed);
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    for (const Utterance& u : *split) {
      binio::write_u64(os, u.seed);
      binio::write_u32(os, static_cast<std::uint32_t>(u.keyword_label));
      binio::write_u32(os, static_cast<std::uint32_t>(u.speaker_label));
      binio::write_u32(os, static_cast<std::uint32_t>(u.frame_labels.size()));
      for (int label : u.frame_labels) binio::write_u8(os, static_cast<std::uint8_t>(label));
      for (double v : u.wave.samples) binio::write_f32(os, static_cast<float>(v));
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  binio::expect_magic(is, "FRAD1");
  Dataset ds;
  ds.config.n_keywords = static_cast<int>(binio::read_u32(is));
  ds.config.n_speakers = static_cast<int>(binio::read_u32(is));
  ds.config.n_train = static_cast<int>(binio::read_u32(is));
  ds.config.n_val = static_cast<int>(binio::read_u32(is));
  ds.config.n_test = static_cast<int>(binio::read_u32(is));
  const std::uint32_t rate = binio::read_u32(is);
  const std::uint32_t n_samples = binio::read_u32(is);
  if (rate != Waveform::kSampleRate || n_samples != kWaveSamples) {
    throw std::runtime_error("dataset file has unsupported sample geometry");
  }
  ds.config.master_seed = binio::read_u64(is);
  for (auto* split : {&ds.train, &ds.val, &ds.test}) {
    const int count = split == &ds.train   ? ds.config.n_train
                      : split == &ds.val   ? ds.config.n_val
                                           : ds.config.n_test;
    split->resize(count);
    for (Utterance& u : *split) {
      u.seed = binio::read_u64(is);
      u.keyword_label = static_cast<int>(binio::read_u32(is));
      u.speaker_label = static_cast<int>(binio::read_u32(is));
      u.frame_labels.resize(binio::read_u32(is));
      for (int& label : u.frame_labels) label = binio::read_u8(is);
      u.wave.samples.resize(n_samples);
      for (double& v : u.wave.samples) v = static_cast<double>(binio::read_f32(is));
    }
  }
  return ds;
}

}  // namespace frad
