#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tdvae/model.hpp"
#include "tdvae/worlds.hpp"

namespace tdvae {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over a parameter store. step() applies
// the update from the accumulated gradients and zeroes them.
struct Adam {
  ParameterStore* params = nullptr;
  AdamConfig cfg;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;  // moments, in store order

  explicit Adam(ParameterStore& store, AdamConfig c = {});
  void step();
};

// Scales gradients so their global norm is at most max_norm; returns the
// pre-clip norm.
double clip_grad_norm(ParameterStore& params, double max_norm);

// In-memory training snapshot. The on-disk form is magic "TDVC0001" followed
// by five CRC-checksummed sections: CONF (step + config JSON), NAME
// (parameter name table with element counts), ARRY (f64 little-endian
// values in name order), RNGS (generator states), ADAM (step counter and
// moments). Writes go to a temp file renamed into place.
struct Checkpoint {
  nlohmann::json config;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;
  std::vector<Rng::State> rng_states;  // train(): data, pairs, noise
  std::uint64_t adam_t = 0;
  std::vector<std::vector<double>> adam_m, adam_v;  // parallel to arrays
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot the store plus optimizer; apply_checkpoint restores both and
// fails on a missing parameter name or an element-count mismatch.
Checkpoint make_checkpoint(const ParameterStore& params, const Adam& adam,
                           const std::vector<Rng::State>& rng_states,
                           std::uint64_t step, nlohmann::json config);
void apply_checkpoint(const Checkpoint& ckpt, ParameterStore& params,
                      Adam& adam);

struct TrainConfig {
  ModelConfig model;
  std::string world = "oscillator";
  nlohmann::json world_config = nlohmann::json::object();
  std::size_t dataset_size = 4000;
  std::size_t batch = 16;
  std::size_t steps = 0;
  std::optional<std::uint64_t> seed;  // mandatory, no entropy default
  PairScheme scheme = PairScheme::uniform(4);
  std::size_t pairs_per_step = 4;
  double clip_norm = 100.0;
  AdamConfig adam;
  std::string metrics_path;          // empty = no metrics file
  std::string checkpoint_path;       // empty = no checkpoints
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::size_t eval_every = 0;        // 0 = no held-out evaluation
  std::size_t eval_sequences = 64;
  std::string eval_metrics_path;     // default: metrics_path + ".eval"

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
  Checkpoint checkpoint;  // final state, whether or not it was written
  LossBreakdown last;     // totals of the final step
  std::uint64_t steps_run = 0;
};

// Runs the loop {draw batch, sample pairs, loss, backward, clip, Adam} for
// cfg.steps steps. All randomness derives from cfg.seed through the named
// substreams "data" (dataset seed + batch draws), "pairs", and "noise";
// held-out evaluation reseeds per step so it never perturbs them. Metrics
// rows are "step,total,recon,belief_t1,belief_t2,transition,smoothing,
// wall_ms"; everything except wall_ms is reproducible byte for byte.
// A non-empty resume_from loads that checkpoint and continues the exact
// stream of the uninterrupted run, appending to the metrics file.
TrainResult train(const TrainConfig& cfg, const std::string& resume_from = "");

}  // namespace tdvae
