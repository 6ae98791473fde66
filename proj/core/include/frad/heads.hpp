#ifndef FRAD_HEADS_HPP
#define FRAD_HEADS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "frad/dataset.hpp"
#include "frad/tape.hpp"
#include "frad/tensor.hpp"
#include "frad/upstream.hpp"

namespace frad {

// The four downstream probes riding on frozen encoder features: keyword
// spotting, speaker identification, frame labeling, and speaker
// verification.
enum class Task { kKS, kSID, kPRA, kASV };
const char* task_name(Task task);  // "ks" / "sid" / "pra" / "asv"

// Optional waveform pre-processing in front of clean evaluation. Attacked
// audio never passes through here: adversaries work on the raw signal.
enum class Preproc { kIdentity, kPreEmphasis };
Waveform apply_preproc(const Waveform& wave, Preproc preproc, double coeff = 0.97);

// Trainable softmax-parameterized mixing weights over encoder layers. The
// softmax keeps the effective weights on the simplex by construction.
struct LayerWeights {
  Tensor logits;  // [n_layers]
};
std::vector<double> effective_weights(const LayerWeights& lw);

// z = sum_i softmax(logits)_i * h_i, plain-math and graph versions.
Tensor weighted_sum(const LayerFeatures& features, const LayerWeights& lw);
Value weighted_sum_graph(Tape& tape, std::span<const Value> layers, Value logits);

struct DownstreamHead {
  Task task = Task::kKS;
  Preproc preproc = Preproc::kIdentity;
  LayerWeights layer_weights;
  Tensor w, b;  // KS: [dim,K]; SID: [dim,S]; PRA: [dim,classes]; ASV: [dim,32] embedding
  // ASV only: training-time speaker classifier on top of the embedding.
  Tensor aux_w, aux_b;
  double tau = 0.0;  // ASV cosine decision threshold
  bool has_tau = false;

  std::vector<Tensor*> parameters();
};

constexpr int kAsvEmbedDim = 32;

// One bundle of things a head can be scored on. Only the fields the task
// consumes need to be filled; waves may be attacked variants as long as the
// labels describe the original items.
struct EvalSet {
  std::vector<Waveform> waves;                 // KS / SID / PRA
  std::vector<int> labels;                     // KS / SID
  std::vector<std::vector<int>> frame_labels;  // PRA
  std::vector<TrialPair> trials;               // ASV
};
EvalSet eval_set_from(Task task, std::span<const Utterance> items);

struct TrainedHead {
  DownstreamHead head;
  // Clean validation metric: accuracy % for KS/SID, frame error rate % for
  // PRA, speaker-classification accuracy % for ASV (verification accuracy
  // exists only after calibrate_asv).
  double clean_metric = 0.0;
};

// Joint training of the head and its layer weights on frozen features
// (Adam, lr 1e-3, batch 16). The upstream model is read-only throughout.
// Throws std::invalid_argument when the upstream is not frozen.
TrainedHead train_head(Task task, const UpstreamModel& upstream, const Dataset& data, int epochs,
                       std::uint64_t seed);

// Verification embedding of one waveform (mean-pooled mixed features
// through the embedding projection). [kAsvEmbedDim] values.
std::vector<double> asv_embedding(const DownstreamHead& head, const UpstreamModel& upstream,
                                  const Waveform& wave);

// Sets head.tau to the equal-error-rate point of cosine scores on clean
// validation trials. Requires >= 20 trials of each class. Returns tau.
double calibrate_asv(DownstreamHead& head, const UpstreamModel& upstream,
                     std::span<const TrialPair> trials);

// Task metric in [0, 100]: accuracy % (KS/SID/ASV), frame error rate %
// (PRA). Pure function of its inputs; parallel over items. Throws
// std::invalid_argument("empty evaluation set") when the task's items are
// missing, and for ASV without a calibrated threshold.
double evaluate(Task task, const DownstreamHead& head, const UpstreamModel& upstream,
                const EvalSet& items);

// Head checkpoint file "FRHD1", bit-exact round trip.
void save_head(const DownstreamHead& head, const std::string& path);
DownstreamHead load_head(const std::string& path);

}  // namespace frad

#endif
