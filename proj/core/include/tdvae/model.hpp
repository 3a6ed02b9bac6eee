#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdvae/distributions.hpp"
#include "tdvae/layers.hpp"

namespace tdvae {

enum class Variant {
  FilteringBaseline,
  MeanfieldBaseline,
  SequentialTdvae,
  JumpyTdvae,
  HierarchicalTdvae,
  NextstepPredictor,
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

enum class DecoderKind { GaussianScalar, BernoulliPixels };

std::string decoder_name(DecoderKind d);
DecoderKind parse_decoder(const std::string& name);

// Architecture description. Serialized verbatim into checkpoints; two
// configs that compare equal always produce identical parameter layouts.
struct ModelConfig {
  Variant variant = Variant::SequentialTdvae;
  std::size_t obs_dim = 1;
  std::size_t latent = 8;   // per layer
  std::size_t belief = 50;  // LSTM hidden size per layer
  std::size_t layers = 1;
  std::size_t dmap_hidden = 50;
  DecoderKind decoder = DecoderKind::GaussianScalar;
  std::vector<std::size_t> preproc_hidden;  // empty: observations used raw
  std::vector<std::size_t> decoder_hidden;  // bernoulli-pixels MLP hiddens
  bool condition_on_dt = false;
  std::size_t max_delta = 1;  // one-hot width when condition_on_dt

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TimePair {
  std::size_t t1 = 0, t2 = 0;
  std::size_t delta() const { return t2 - t1; }
};

// Jump-interval distribution for sample_time_pairs.
struct PairScheme {
  enum class Kind { Uniform, Mixture, Mnist } kind = Kind::Uniform;
  std::size_t max_delta = 1;  // uniform only; mixture is 120, mnist is 4

  std::size_t support() const;  // largest delta the scheme can emit
  static PairScheme uniform(std::size_t max_delta) {
    return {Kind::Uniform, max_delta};
  }
  static PairScheme mixture() { return {Kind::Mixture, 120}; }
  static PairScheme mnist() { return {Kind::Mnist, 4}; }
  static PairScheme parse(const std::string& text);
  std::string str() const;
};

std::vector<TimePair> sample_time_pairs(std::size_t T, const PairScheme& scheme,
                                        std::size_t count, Rng& rng);

// Per-layer, per-timestep belief codes from the recurrent encoder;
// beliefs[l][t] and cells[l][t] are [batch x width].
struct BeliefTrajectory {
  std::vector<std::vector<Tensor>> beliefs;
  std::vector<std::vector<Tensor>> cells;
  std::size_t layer_count() const { return beliefs.size(); }
  std::size_t length() const { return beliefs.empty() ? 0 : beliefs[0].size(); }
};

// Belief codes at one timestep, one tensor per layer.
using BeliefState = std::vector<Tensor>;

// Signed five-term decomposition. Fields other than recon hold raw mean
// log-densities; recon holds the mean negative reconstruction log-density.
// Always: total = recon - belief_t1 - transition + belief_t2 + smoothing.
struct LossBreakdown {
  double recon = 0;
  double belief_t1 = 0;
  double transition = 0;
  double belief_t2 = 0;
  double smoothing = 0;
  double total = 0;
};

struct LossResult {
  Tensor loss;  // scalar, attached when computed under a tape
  LossBreakdown totals;
  std::vector<LossBreakdown> per_step;  // sequential/elbo: per t; else empty
};

// Per-layer detail of the hierarchical loss (layer index 0 = bottom).
struct HierarchicalTerms {
  std::array<double, 2> kl_t1{};        // analytic smoothing KLs
  std::array<double, 2> logratio_t2{};  // log pB - log pT at t2 samples
  double recon = 0;
};

// One model instance: parameter store plus typed heads. Heads are public;
// the evaluator builds proposal densities and rollouts straight from them.
class SequenceModel {
 public:
  SequenceModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  // Observation features: preprocessing MLP when configured, else identity.
  Tensor features(const Tensor& x) const;

  BeliefTrajectory encode_beliefs(const std::vector<Tensor>& xs) const;

  // Belief over z at one timestep. Single layer only; the hierarchical
  // variant samples top-down inside its loss/rollout paths.
  GaussianParams belief_head(const Tensor& b) const;

  // log p(x | z) per batch row, and the decoded mean/probability frame.
  Tensor decoder_log_prob(const Tensor& z, const Tensor& x) const;
  Tensor decode_frame(const Tensor& z) const;

  // One-hot jump encoding, broadcast to the batch. Contract error when the
  // model was not built with condition_on_dt; domain error when delta is
  // outside [1, max_delta].
  Tensor dt_vector(std::size_t delta, std::size_t batch) const;

  // Layer stacks (index 0 = bottom). Every variant runs the belief LSTM;
  // the baselines differ only in what their encoder conditions on.
  std::vector<LstmCell> lstm;

  // Heads. Presence depends on variant; unused heads stay null.
  std::optional<DMap> encoder;              // filtering/meanfield q
  std::optional<DMap> transition;           // single-layer pT
  std::optional<DMap> smoothing;            // single-layer qS
  std::vector<DMap> pb;                     // belief heads per layer
  std::vector<DMap> pt;                     // hierarchical pT per layer
  std::vector<DMap> qs;                     // hierarchical qS per layer
  std::optional<DMap> predictor;            // nextstep observation head
  std::optional<Mlp> decoder_mlp;           // bernoulli-pixels decoder
  Parameter* decoder_log_std = nullptr;     // gaussian-scalar decoder sigma
  std::optional<Mlp> preproc;

 private:
  ModelConfig config_;
  ParameterStore store_;
};

// --- losses -------------------------------------------------------------------

// Stepwise autoencoding bound for the filtering/meanfield baselines:
// mean over t of -[log p(x_t|z_t) + log p(z_t|z_{t-1}) - log q(z_t|...)].
LossResult elbo_standard(const SequenceModel& model,
                         const std::vector<Tensor>& xs, NoiseSource& noise);

LossResult loss_sequential_tdvae(const SequenceModel& model,
                                 const std::vector<Tensor>& xs,
                                 NoiseSource& noise);

LossResult loss_jumpy_tdvae(const SequenceModel& model,
                            const std::vector<Tensor>& xs,
                            const std::vector<TimePair>& pairs,
                            NoiseSource& noise);

LossResult loss_hierarchical_tdvae(const SequenceModel& model,
                                   const std::vector<Tensor>& xs,
                                   const std::vector<TimePair>& pairs,
                                   NoiseSource& noise,
                                   HierarchicalTerms* detail = nullptr);

LossResult loss_nextstep(const SequenceModel& model,
                         const std::vector<Tensor>& xs);

// Variant dispatch used by the trainer and smoke tests.
LossResult compute_loss(const SequenceModel& model,
                        const std::vector<Tensor>& xs,
                        const std::vector<TimePair>& pairs, NoiseSource& noise);

// The five log-densities for one (t1, t2) pair of a single-layer model, each
// [batch]. Shared verbatim by the sequential (delta = 1) and jumpy losses.
struct PairTerms {
  Tensor log_px;  // log p(x_t2 | z_t2)
  Tensor log_pb1; // log pB(z_t1 | b_t1)
  Tensor log_pt;  // log pT(z_t2 | z_t1)
  Tensor log_pb2; // log pB(z_t2 | b_t2)
  Tensor log_qs;  // log qS(z_t1 | z_t2, b_t1, b_t2)
};
PairTerms pair_terms_single(const SequenceModel& model,
                            const BeliefTrajectory& traj,
                            const std::vector<Tensor>& xs, const TimePair& p,
                            NoiseSource& noise);

// --- rollout ------------------------------------------------------------------

struct Rollout {
  std::vector<Tensor> latents;  // [batch x layers*latent], index 0 = t
  std::vector<Tensor> frames;   // decoded mean/probability, [batch x obs]
};

// Samples z from the belief at t, then applies one transition per schedule
// entry, decoding after each. frames[0] decodes the initial sample.
Rollout rollout_jumpy(const SequenceModel& model, const BeliefState& belief_at_t,
                      const std::vector<std::size_t>& schedule,
                      NoiseSource& noise);

// Parses "20,1x20" style schedule text.
std::vector<std::size_t> parse_schedule(const std::string& text);

}  // namespace tdvae
