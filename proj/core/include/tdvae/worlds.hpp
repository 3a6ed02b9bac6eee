#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdvae/rng.hpp"
#include "tdvae/tensor.hpp"

namespace tdvae {

// A generated dataset: `count` sequences of `length` observation vectors.
// Generators are pure functions of (config, seed); sequence i derives its
// own stream via Rng::for_index(seed, i), so batches are reproducible and
// sequences independent of `count`.
struct SequenceBatch {
  std::size_t count = 0;
  std::size_t length = 0;
  std::size_t obs_dim = 0;
  std::vector<double> data;  // [seq][t][dim] row-major
  nlohmann::json metadata;   // config echo, seed, per-sequence fields

  double at(std::size_t s, std::size_t t, std::size_t d) const {
    return data[(s * length + t) * obs_dim + d];
  }
  double& at(std::size_t s, std::size_t t, std::size_t d) {
    return data[(s * length + t) * obs_dim + d];
  }

  // Observation tensors per timestep, rows gathered from `seqs`.
  std::vector<Tensor> tensors(const std::vector<std::size_t>& seqs) const;
  std::vector<Tensor> tensors() const;
};

// Flat binary container (magic "TDVD0001", little-endian u32 dims, f64
// payload) plus a JSON sidecar at path + ".json" holding the metadata.
void save_batch(const SequenceBatch& batch, const std::string& path);
SequenceBatch load_batch(const std::string& path);

// --- noisy harmonic oscillator --------------------------------------------------

struct OscillatorConfig {
  double f_lo = 2.0 * kPi / 40.0;  // radians per step
  double f_hi = 2.0 * kPi / 10.0;
  double amp_lo = 0.5;
  double amp_hi = 2.0;
  double process_noise = 0.02;  // std, added to both rotation coordinates
  double obs_noise = 0.05;      // std on the emitted position
  std::size_t length = 200;

  void validate() const;
  nlohmann::json to_json() const;
  static OscillatorConfig from_json(const nlohmann::json& j);

  static constexpr double kPi = 3.14159265358979323846;
};

// Exact rotation by angle f per step on (position, velocity/f), additive
// process noise after each rotation, observation = position + noise.
// Metadata: frequency, amplitude, phase per sequence.
SequenceBatch gen_oscillator(const OscillatorConfig& cfg, std::size_t n,
                             std::uint64_t seed);

// --- frequency-relation variant -------------------------------------------------

struct FreqRelationConfig {
  OscillatorConfig base;  // length forced to 140
  double f_a = 2.0 * OscillatorConfig::kPi / 12.0;
  double f_b = 2.0 * OscillatorConfig::kPi / 25.0;

  FreqRelationConfig() { base.length = 140; }
  void validate() const;
  nlohmann::json to_json() const;
  static FreqRelationConfig from_json(const nlohmann::json& j);
};

// Four segments [0,10), [10,20), [20,120), [120,140): frequencies f1..f3
// drawn from the base range, f4 = f_a when f1 > f2 else f_b, phase carried
// continuously across boundaries. Metadata: f1..f4 and label = (f1 > f2).
SequenceBatch gen_freq_relation(const FreqRelationConfig& cfg, std::size_t n,
                                std::uint64_t seed);

// --- moving digits ---------------------------------------------------------------

struct ImageSet {
  std::size_t count = 0;
  std::size_t rows = 28;
  std::size_t cols = 28;
  std::vector<double> pixels;  // [image][row][col], values in [0,1]

  double at(std::size_t i, std::size_t r, std::size_t c) const {
    return pixels[(i * rows + r) * cols + c];
  }
  double& at(std::size_t i, std::size_t r, std::size_t c) {
    return pixels[(i * rows + r) * cols + c];
  }
};

// IDX ingestion (big-endian, magic 0x00000803 for u8 rank-3 images, scaled
// to [0,1]) and the matching writer. Labels use magic 0x00000801.
ImageSet load_idx(const std::string& path);
void write_idx(const std::string& path, const ImageSet& images);
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

// Ten built-in seven-segment style glyphs, one per digit, for environments
// without an image corpus on disk.
ImageSet synthetic_digits();

struct MovingMnistConfig {
  std::size_t length = 20;

  void validate() const;
  nlohmann::json to_json() const;
  static MovingMnistConfig from_json(const nlohmann::json& j);
};

// Per sequence: one digit binarized at 0.5, direction drawn from
// {left, right}; frame t shifts the digit horizontally by t pixels with
// wrap-around. Metadata: digit index and direction (+1 right, -1 left).
SequenceBatch gen_moving_mnist(const ImageSet& digits,
                               const MovingMnistConfig& cfg, std::size_t n,
                               std::uint64_t seed);

// --- partially observed gridworld -----------------------------------------------

struct GridworldConfig {
  std::size_t rows = 15;
  std::size_t cols = 19;
  std::size_t window = 5;  // observation window edge; fixed at 5
  double food_density = 0.3;
  double ghost_greed = 0.75;   // probability the ghost closes distance
  double forward_bias = 0.6;   // probability the agent repeats its move
  std::size_t length = 40;
  bool trace = false;  // record agent/ghost positions and food counts

  void validate() const;
  nlohmann::json to_json() const;
  static GridworldConfig from_json(const nlohmann::json& j);
};

// Fixed lattice maze (perimeter walls plus pillars at even interior
// coordinates). Wall layout for a config, row-major, true = wall.
std::vector<bool> gridworld_walls(const GridworldConfig& cfg);

// Agent with a forward-biased random walk, one greedy-leaning ghost, food
// consumed on visit. Observation: 5x5 window centered on the agent,
// channel-major {wall, food, ghost, agent}, out-of-maze cells read as wall;
// obs_dim = 4 * 25. With cfg.trace set, metadata gains per-sequence arrays
// "agent", "ghost" ([r,c] at each observation time) and "food_count".
SequenceBatch gen_gridworld(const GridworldConfig& cfg, std::size_t n,
                            std::uint64_t seed);

// --- linear-Gaussian oracle world ------------------------------------------------

struct LinearGaussianConfig {
  double a = 0.9;   // latent transition coefficient
  double q = 0.1;   // process noise variance
  double c = 1.0;   // observation coefficient
  double r = 0.1;   // observation noise variance
  double p0 = 0.1 / (1.0 - 0.81);  // initial variance (stationary default)

  void validate() const;
  nlohmann::json to_json() const;
  static LinearGaussianConfig from_json(const nlohmann::json& j);
};

// z_1 ~ N(0, p0); z_{t+1} = a z_t + N(0, q); x_t = c z_t + N(0, r).
// The two-argument form uses the benchmark length of 32 steps.
SequenceBatch gen_linear_gaussian(const LinearGaussianConfig& cfg,
                                  std::size_t n, std::uint64_t seed);
SequenceBatch gen_linear_gaussian(const LinearGaussianConfig& cfg,
                                  std::size_t n, std::size_t length,
                                  std::uint64_t seed);

// --- dispatch --------------------------------------------------------------------

// World registry used by the CLI and trainer: name in {oscillator,
// freq-relation, moving-mnist, gridworld, linear-gaussian}, config as the
// world's JSON form (empty object = defaults). moving-mnist reads images
// from config key "idx_path" when present, else uses synthetic_digits().
SequenceBatch generate_world(const std::string& world,
                             const nlohmann::json& config, std::size_t n,
                             std::uint64_t seed);

}  // namespace tdvae
