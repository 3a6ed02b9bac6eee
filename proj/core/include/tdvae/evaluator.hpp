#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdvae/model.hpp"
#include "tdvae/trainer.hpp"
#include "tdvae/worlds.hpp"

namespace tdvae {

// Monte Carlo likelihood estimate in nats per timestep-dimension. se is the
// Monte Carlo standard error of value (0 when K = 1: a single replica
// carries no spread information).
struct NllEstimate {
  double value = 0;
  double se = 0;
  std::size_t samples = 0;  // K
};

// Both bounds computed from one shared set of importance weights: the
// sample-mean bound (negative ELBO under the proposal) and the log-sum-exp
// importance estimate. At K = 1 the two coincide exactly.
struct NllReport {
  NllEstimate neg_elbo;
  NllEstimate is_nll;
};

// Per-replica log importance weights log p(x, z_k) - log q(z_k | x) for one
// sequence (xs rows must have batch dimension 1). The proposal q is the
// model's encoder: the filtering/meanfield encoder head, or the belief head
// p_B for the sequential variant. The joint p factors as a standard-normal
// start, the transition chain, and the decoder. Beliefs are encoded once and
// the rows replicated, so cost is one LSTM pass plus K z-chains.
// Errors: K = 0; variants without a tractable per-step joint (jumpy,
// hierarchical, next-step).
std::vector<double> importance_log_weights(const SequenceModel& model,
                                           const std::vector<Tensor>& xs,
                                           std::size_t K, Rng& rng);

// neg_elbo = -mean(lw) / (T*D); is_nll = -(logsumexp(lw) - log K) / (T*D).
NllReport estimate_nll(const SequenceModel& model,
                       const std::vector<Tensor>& xs, std::size_t K, Rng& rng);

// The log-sum-exp half of estimate_nll.
NllEstimate estimate_nll_importance(const SequenceModel& model,
                                    const std::vector<Tensor>& xs,
                                    std::size_t K, Rng& rng);

// estimate_nll over every sequence of a batch. Sequence i draws its K
// replica chains from an independent stream derived from `seed`, so results
// do not depend on evaluation order or thread count.
std::vector<NllReport> batch_nll(const SequenceModel& model,
                                 const SequenceBatch& data, std::size_t K,
                                 std::uint64_t seed, std::size_t threads = 1);

// Exact log-likelihood (total nats over the whole sequence) of one scalar
// sequence under the linear-Gaussian world, by the prediction-error
// decomposition of the scalar Kalman filter. Callers divide by length for
// per-step comparisons. Errors on non-positive p0/r or negative q (q = 0,
// a constant latent, is legal).
double kalman_log_likelihood(const LinearGaussianConfig& cfg,
                             const std::vector<double>& xs);

// Linear classifier readout of a feature set, averaged over seeds.
struct ProbeReport {
  double train_accuracy = 0;  // mean over seeds
  double test_accuracy = 0;   // mean over seeds
  std::vector<double> seed_accuracies;  // per-seed test accuracy
  std::string model_id;
};

// Logistic regression trained by full-batch gradient descent on
// standardized features, one run per seed with an 80/20 shuffle split.
// Measures linear decodability of a binary label from belief vectors.
// Errors: size mismatch, labels outside {0,1}, single-class labels.
ProbeReport probe_belief(const std::vector<std::vector<double>>& features,
                         const std::vector<int>& labels,
                         const std::vector<std::uint64_t>& seeds,
                         const std::string& model_id);

// Least-squares fit of A*cos(f*t + phi) + B over a frequency grid with
// ternary refinement. t counts samples from 0.
struct FrequencyFit {
  bool has_frequency = false;  // false: series is constant
  double frequency = 0;        // radians per step
  double amplitude = 0;        // A >= 0
  double phase = 0;            // phi at t = 0
  double offset = 0;           // B
  double residual = 0;         // rms of the fit residual
};

// Errors: fewer than 20 points. A constant series returns
// has_frequency = false with offset set.
FrequencyFit fit_rollout_frequency(const std::vector<double>& series);

// Shift-sign agreement between consecutive frames and a conditioning
// direction (+1 rightward, -1 leftward). Per pair, the shift is the argmax
// of circular cross-correlation over column shifts; pairs with zero
// estimated shift or a blank frame are excluded.
struct DirectionReport {
  double fraction = 0;            // matching pairs / pairs_used
  std::size_t pairs_used = 0;
  std::size_t blank_frames = 0;   // frames with no pixel mass, flagged
};

// frames: row-major rows x cols each. Errors: fewer than 2 frames, frame
// size mismatch, direction not in {-1, +1}, or no usable pair.
DirectionReport direction_consistency(
    const std::vector<std::vector<double>>& frames, std::size_t rows,
    std::size_t cols, int direction);

// Belief state after consuming the first `context` observations of one
// stored sequence (one tensor per layer, batch 1). Feed to rollout_jumpy.
BeliefState belief_at(const SequenceModel& model, const SequenceBatch& data,
                      std::size_t seq, std::size_t context);

// Belief vectors at time t for every sequence (layers concatenated), for
// probe training. Sequences are processed in fixed-size chunks; `threads`
// splits the chunks across workers with bit-identical output.
std::vector<std::vector<double>> belief_features(const SequenceModel& model,
                                                 const SequenceBatch& data,
                                                 std::size_t t,
                                                 std::size_t threads = 1);

// Per-sequence loss (LossBreakdown total, nats per timestep-dimension) over
// a held-out batch. Sequence i draws its noise and time pairs from streams
// indexed off `seed`, so values are reproducible and independent of
// evaluation order or thread count.
std::vector<double> held_out_losses(const SequenceModel& model,
                                    const SequenceBatch& data,
                                    const PairScheme& scheme,
                                    std::size_t pairs_per_step,
                                    std::uint64_t seed,
                                    std::size_t threads = 1);

// 8-bit binary PGM (P5). Values are clamped to [0,1] and scaled to 255.
void write_pgm(const std::string& path, const std::vector<double>& pixels,
               std::size_t rows, std::size_t cols);

// End-to-end belief-quality comparison on the frequency-relation world.
// Per seed, one jumpy model (mixture pair scheme, jump fed to the
// transition and smoothing heads) and one next-step predictor with the same
// belief LSTM width are trained from scratch; the belief vector at
// probe_time is then probed for the frequency-relation label on a shared
// held-out set.
struct ProbeExperiment {
  std::size_t hidden = 16;  // belief LSTM width for both objectives
  std::size_t latent = 8;
  std::size_t dmap_hidden = 50;
  std::size_t steps = 8000;
  std::size_t dataset_size = 4000;
  std::size_t batch = 16;
  std::size_t pairs_per_step = 4;
  std::size_t probe_count = 1000;      // held-out sequences for the probe
  std::size_t probe_time = 119;        // belief index fed to the classifier
  std::uint64_t data_seed = 424242;    // held-out set generation
  std::vector<std::uint64_t> seeds;    // one trained model pair per entry
  std::size_t threads = 1;
};

struct ProbeComparison {
  ProbeReport tdvae;     // seed_accuracies hold per-seed mean test accuracy
  ProbeReport nextstep;
  double gap = 0;        // tdvae minus next-step mean test accuracy
  double pooled_se = 0;  // two-sample pooled standard error of the gap
};

ProbeComparison run_probe_experiment(const ProbeExperiment& cfg);

}  // namespace tdvae
