#ifndef FRAD_ATTACK_HPP
#define FRAD_ATTACK_HPP

#include <cstdint>
#include <vector>

#include "frad/dataset.hpp"
#include "frad/tape.hpp"
#include "frad/upstream.hpp"

namespace frad {

// Iterative signed-gradient attack budget. alpha defaults to epsilon / 5 so
// ten steps can walk the full band and back.
struct AttackConfig {
  double epsilon = 0.002;  // L-inf budget in waveform units
  double alpha = 0.002 / 5.0;
  int n_iters = 10;
  std::uint64_t seed = 0;
};

void validate_attack_config(const AttackConfig& cfg);

struct AttackResult {
  Waveform adversarial;
  double nsr = 0.0;   // ||x_adv - x||_2 / ||x||_2
  double linf = 0.0;  // max |x_adv - x|
  // Feature distance at x^0 (always zero) and after each step: n_iters + 1
  // entries for a run that iterates, empty-budget runs included.
  std::vector<double> loss_trace;
};

enum class ScenarioKind { kLimitedKnowledge, kZeroKnowledge, kGaussian, kClean };

const char* scenario_name(ScenarioKind kind);

// A threat model instance: who is attacked, and through whose gradients.
// limited_knowledge attacks the target through its own internals, so the
// attack model must BE the target; zero_knowledge approximates gradients
// through a substitute of a different architecture; gaussian and clean are
// gradient-free controls and carry no attack model at all.
struct Scenario {
  ScenarioKind kind = ScenarioKind::kClean;
  const UpstreamModel* attack_model = nullptr;
  const UpstreamModel* target_model = nullptr;
};

void validate_scenario(const Scenario& s);

// Equal-weight mean over every reported feature layer.
Tensor averaged_embedding(const UpstreamModel& model, const Waveform& wave);

// Graph-building flavor, differentiable back to the waveform leaf.
Value averaged_embedding_graph(Tape& tape, const UpstreamModel& model, Value wave);

// Each sample moved to the nearest point of [origin - eps, origin + eps],
// then into the valid audio range [-1, +1]. The band bound holds bitwise.
Waveform clip_linf(const Waveform& t, const Waveform& origin, double epsilon);

// Iterative feature-distance ascent: anchor the clean embedding once, then
// repeat { step along sign of the input gradient of ||z_a - z~_a||, clip }.
AttackResult bim_attack(const UpstreamModel& attack_model, const Waveform& x,
                        const AttackConfig& cfg);

// Noise control: standard normal noise rescaled so the noise-to-signal
// ratio matches target_nsr exactly, then range-clamped. The L-inf norm is
// reported but deliberately unconstrained.
AttackResult gaussian_control(const Waveform& x, double target_nsr, std::uint64_t seed);

// Runs one scenario over a batch of utterances (in parallel). For the
// gaussian control, matched_nsr supplies the per-utterance NSR to match,
// index-aligned with items; other scenarios must pass nullptr.
std::vector<AttackResult> run_scenario(const Scenario& s, const AttackConfig& cfg,
                                       const std::vector<const Waveform*>& items,
                                       const std::vector<double>* matched_nsr = nullptr);

}  // namespace frad

#endif
