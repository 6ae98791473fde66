#ifndef FRAD_DATASET_HPP
#define FRAD_DATASET_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace frad {

// One second-ish of 4 kHz audio. Fixed length keeps every model input and
// every frame-label sequence the same shape.
struct Waveform {
  std::vector<double> samples;

  static constexpr int kSampleRate = 4000;
  double duration() const { return static_cast<double>(samples.size()) / kSampleRate; }
};

constexpr std::size_t kWaveSamples = 4096;   // fixed clip length
constexpr std::size_t kFrameSize = 64;       // samples per label frame
constexpr std::size_t kFrameCount = kWaveSamples / kFrameSize;  // 64 frames
constexpr int kSegmentClasses = 8;           // frame-label vocabulary
constexpr int kSegmentsPerClip = 4;          // a keyword is 4 segments

struct Utterance {
  Waveform wave;
  int keyword_label = 0;
  int speaker_label = 0;
  std::vector<int> frame_labels;  // one class id per 64-sample frame
  std::uint64_t seed = 0;         // per-utterance stream; regenerates the wave
};

struct DatasetConfig {
  int n_keywords = 10;
  int n_speakers = 20;
  int n_train = 512;
  int n_val = 64;
  int n_test = 200;
  std::uint64_t master_seed = 42;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Utterance> train, val, test;
};

// A verification trial: does wave_b come from the same speaker as the
// enrollment wave_a?
struct TrialPair {
  Waveform wave_a, wave_b;
  bool same_speaker = false;
};

// Index-level trial planning, so callers can pair enrollment audio with
// modified (e.g. attacked) test audio without regenerating pair structure.
struct TrialCandidate {
  std::size_t id;  // globally unique per utterance; forbids self-pairs
  int speaker;
};
struct TrialPlan {
  std::size_t enroll_pos, test_pos;  // positions into the candidate lists
  bool same_speaker;
};

// Deterministic synthesis of the full corpus: every utterance is a
// speaker-specific harmonic carrier shaped by a keyword-specific sequence
// of formant/AM segments, plus seeded background noise at 20 dB SNR.
// Validates minimum sizes (n_keywords >= 4, n_speakers >= 8, each split
// count >= 32) and throws std::invalid_argument below them.
Dataset generate_dataset(const DatasetConfig& config);

// Pure function: the exact wave an utterance with this seed and these
// labels carries inside generate_dataset's output.
Utterance synthesize_utterance(const DatasetConfig& config, int keyword, int speaker,
                               std::uint64_t utterance_seed);

// The 4-segment template behind a keyword class (for tests and tooling).
std::array<int, kSegmentsPerClip> keyword_segments(const DatasetConfig& config, int keyword);

std::vector<TrialPlan> plan_trials(std::span<const TrialCandidate> enroll,
                                   std::span<const TrialCandidate> test, int n_target,
                                   int n_nontarget, std::uint64_t seed);

// Trials over the clean test split: n_target same-speaker and n_nontarget
// different-speaker pairs, no pair repeated.
std::vector<TrialPair> generate_trials(const Dataset& dataset, int n_target, int n_nontarget,
                                       std::uint64_t seed);

// Flat binary export/import ("FRAD1"), bit-exact round trip.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace frad

#endif
