#ifndef FRAD_UPSTREAM_HPP
#define FRAD_UPSTREAM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "frad/dataset.hpp"
#include "frad/tape.hpp"
#include "frad/tensor.hpp"

namespace frad {

enum class Arch { kA, kB };
const char* arch_name(Arch arch);  // "a" / "b"

// Geometry and pretraining hyperparameters of an encoder. The two shipped
// presets share the conv frontend geometry but differ in head count,
// feed-forward width, init seed, and pretraining objective.
struct UpstreamConfig {
  Arch arch = Arch::kA;
  int n_samples = 4096;                 // input length, divisible by 64
  int conv_channels[3] = {64, 48, 64};  // last entry is the model dim
  // The first layer reads raw audio, so its kernel sets the frontend's
  // frequency resolution (~sample_rate / kernel); upper layers refine
  // already-selective channels and can stay short.
  int conv_kernel[3] = {64, 8, 8};
  int conv_stride = 4;
  int conv_padding[3] = {30, 2, 2};
  int n_blocks = 3;
  int n_heads = 4;
  int ff_dim = 128;

  double mask_ratio = 0.30;
  int n_distractors = 8;    // contrastive candidates (arch a)
  double temperature = 0.1; // contrastive logit scale (arch a)
  int kmeans_k = 16;        // pseudo-label inventory (arch b)
  int kmeans_iters = 20;
  int kmeans_sample = 64;   // utterances clustered for pseudo-labels
  int batch_size = 16;
  double lr = 1e-3;

  int model_dim() const { return conv_channels[2]; }
  int frames() const { return n_samples / 64; }
  int n_layers() const { return 1 + n_blocks; }

  static UpstreamConfig arch_a();
  static UpstreamConfig arch_b();
};

struct ConvLayer {
  Tensor w, b;  // w: [c_out, c_in, kernel]
};

struct EncoderBlock {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

// Per-layer hidden features h_1..h_n: the conv-frontend output plus each
// encoder block's output, all [frames, dim].
struct LayerFeatures {
  std::vector<Tensor> layers;
};

struct UpstreamModel {
  UpstreamConfig config;
  std::vector<ConvLayer> convs;  // 3
  Tensor conv_ln_g, conv_ln_b;   // frontend layernorm
  Tensor mask_embed;             // [dim], replaces masked frames in pretraining
  Tensor cls_w, cls_b;           // pseudo-label classifier (arch b only)
  std::vector<EncoderBlock> blocks;
  Tensor pos;  // sinusoidal position table [frames, dim]; constant, not trained
  bool frozen = false;

  int n_layers() const { return config.n_layers(); }
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  // FNV-1a over all parameter bytes; the freeze-invariance fingerprint.
  std::uint64_t param_checksum() const;
};

UpstreamModel init_upstream(const UpstreamConfig& config, std::uint64_t seed);

// Parameter leaves bound to a tape in parameters() order, so training code
// can map leaf gradients back to the owning tensors one-to-one.
struct BoundParams {
  std::vector<Value> values;
};
BoundParams bind_params(Tape& tape, const UpstreamModel& model);

// Wires the encoder graph from already-bound parameters. wave is a
// [n_samples, 1] value; mask (optional) marks frames whose post-frontend
// features are replaced by the mask embedding before the blocks run. The
// returned layer values are h_1 (unmasked frontend output) and each block
// output computed from the (possibly masked) stream.
std::vector<Value> build_features_with(Tape& tape, const UpstreamModel& model,
                                       const BoundParams& params, Value wave,
                                       const std::vector<std::uint8_t>* mask = nullptr);

// Convenience: bind and wire in one call.
std::vector<Value> build_features(Tape& tape, const UpstreamModel& model, Value wave,
                                  const std::vector<std::uint8_t>* mask = nullptr);

// Evaluation-mode extraction: deterministic, never touches params. Throws
// on a wave whose length differs from config.n_samples.
LayerFeatures extract_features(const UpstreamModel& model, const Waveform& wave);

struct PretrainStats {
  double val_loss_start = 0.0;
  double val_loss_end = 0.0;
  std::vector<double> step_losses;
};

// Masked-objective pretraining (contrastive for arch a, pseudo-label
// cross-entropy for arch b). Freezes the model on return; throws
// std::invalid_argument when the model is already frozen.
PretrainStats pretrain(UpstreamModel& model, const Dataset& data, int steps, std::uint64_t seed);

// Checkpoint file "FRUP1": config, then flat f64 parameters in
// parameters() order. Reload reproduces extract_features bitwise.
void save_upstream(const UpstreamModel& model, const std::string& path);
UpstreamModel load_upstream(const std::string& path);

}  // namespace frad

#endif
