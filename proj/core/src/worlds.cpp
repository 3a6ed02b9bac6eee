#include "tdvae/worlds.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "tdvae/errors.hpp"

namespace tdvae {

namespace {

constexpr double kPi = OscillatorConfig::kPi;

void check_keys(const nlohmann::json& j,
                std::initializer_list<const char*> allowed,
                const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known) {
      std::string valid;
      for (const char* k : allowed) {
        if (!valid.empty()) valid += ", ";
        valid += k;
      }
      throw ContractError(std::string(what) + ": unknown key '" + it.key() +
                          "' (valid keys: " + valid + ")");
    }
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

// --- batch container ------------------------------------------------------------

std::vector<Tensor> SequenceBatch::tensors(
    const std::vector<std::size_t>& seqs) const {
  for (std::size_t s : seqs)
    if (s >= count)
      throw ContractError("batch: sequence index " + std::to_string(s) +
                          " out of range");
  std::vector<Tensor> xs;
  xs.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    Tensor x(Shape{seqs.size(), obs_dim});
    for (std::size_t b = 0; b < seqs.size(); ++b)
      for (std::size_t d = 0; d < obs_dim; ++d)
        x.at(b, d) = at(seqs[b], t, d);
    xs.push_back(std::move(x));
  }
  return xs;
}

std::vector<Tensor> SequenceBatch::tensors() const {
  std::vector<std::size_t> all(count);
  for (std::size_t i = 0; i < count; ++i) all[i] = i;
  return tensors(all);
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError("dataset truncated: " + path);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
         std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

constexpr char kBatchMagic[8] = {'T', 'D', 'V', 'D', '0', '0', '0', '1'};

}  // namespace

void save_batch(const SequenceBatch& batch, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kBatchMagic, 8);
  write_u32(out, 3);
  write_u32(out, static_cast<std::uint32_t>(batch.count));
  write_u32(out, static_cast<std::uint32_t>(batch.length));
  write_u32(out, static_cast<std::uint32_t>(batch.obs_dim));
  out.write(reinterpret_cast<const char*>(batch.data.data()),
            static_cast<std::streamsize>(batch.data.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path);
  out.close();

  std::ofstream side(path + ".json", std::ios::trunc);
  if (!side) throw IoError("cannot open for writing: " + path + ".json");
  side << batch.metadata.dump(2) << "\n";
  if (!side) throw IoError("write failed: " + path + ".json");
}

SequenceBatch load_batch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("dataset not found: " + path);
  char magic[8];
  if (!in.read(magic, 8)) throw IoError("dataset truncated: " + path);
  if (std::memcmp(magic, kBatchMagic, 8) != 0)
    throw IoError("bad dataset magic: " + path);
  if (read_u32(in, path) != 3)
    throw IoError("unexpected dataset rank: " + path);

  SequenceBatch batch;
  batch.count = read_u32(in, path);
  batch.length = read_u32(in, path);
  batch.obs_dim = read_u32(in, path);
  batch.data.resize(batch.count * batch.length * batch.obs_dim);
  if (!in.read(reinterpret_cast<char*>(batch.data.data()),
               static_cast<std::streamsize>(batch.data.size() *
                                            sizeof(double))))
    throw IoError("dataset truncated: " + path);

  std::ifstream side(path + ".json");
  if (side) batch.metadata = nlohmann::json::parse(side);
  return batch;
}

// --- oscillator -----------------------------------------------------------------

void OscillatorConfig::validate() const {
  if (!(f_lo > 0.0) || f_lo > f_hi || !(f_hi < kPi))
    throw ContractError("oscillator: need 0 < f_lo <= f_hi < pi");
  if (!(amp_lo > 0.0) || amp_lo > amp_hi)
    throw ContractError("oscillator: need 0 < amp_lo <= amp_hi");
  if (process_noise < 0.0 || obs_noise < 0.0)
    throw ContractError("oscillator: noise stds must be >= 0");
  if (length == 0) throw ContractError("oscillator: empty length");
}

nlohmann::json OscillatorConfig::to_json() const {
  return {{"f_lo", f_lo},
          {"f_hi", f_hi},
          {"amp_lo", amp_lo},
          {"amp_hi", amp_hi},
          {"process_noise", process_noise},
          {"obs_noise", obs_noise},
          {"length", length}};
}

OscillatorConfig OscillatorConfig::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"f_lo", "f_hi", "amp_lo", "amp_hi", "process_noise",
              "obs_noise", "length"},
             "oscillator config");
  OscillatorConfig c;
  maybe(j, "f_lo", c.f_lo);
  maybe(j, "f_hi", c.f_hi);
  maybe(j, "amp_lo", c.amp_lo);
  maybe(j, "amp_hi", c.amp_hi);
  maybe(j, "process_noise", c.process_noise);
  maybe(j, "obs_noise", c.obs_noise);
  maybe(j, "length", c.length);
  c.validate();
  return c;
}

SequenceBatch gen_oscillator(const OscillatorConfig& cfg, std::size_t n,
                             std::uint64_t seed) {
  cfg.validate();
  SequenceBatch batch;
  batch.count = n;
  batch.length = cfg.length;
  batch.obs_dim = 1;
  batch.data.resize(n * cfg.length);

  nlohmann::json freq = nlohmann::json::array();
  nlohmann::json amp = nlohmann::json::array();
  nlohmann::json phase = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_index(seed, i);
    const double f = rng.uniform(cfg.f_lo, cfg.f_hi);
    const double A = rng.uniform(cfg.amp_lo, cfg.amp_hi);
    const double ph = rng.uniform(0.0, 2.0 * kPi);
    freq.push_back(f);
    amp.push_back(A);
    phase.push_back(ph);

    const double cf = std::cos(f), sf = std::sin(f);
    double p = A * std::cos(ph);
    double u = -A * std::sin(ph);  // velocity / f, rotation partner
    for (std::size_t t = 0; t < cfg.length; ++t) {
      batch.at(i, t, 0) = p + cfg.obs_noise * rng.normal();
      const double pn = p * cf + u * sf;
      const double un = u * cf - p * sf;
      p = pn + cfg.process_noise * rng.normal();
      u = un + cfg.process_noise * rng.normal();
    }
  }
  batch.metadata = {{"world", "oscillator"},
                    {"config", cfg.to_json()},
                    {"seed", seed},
                    {"frequency", freq},
                    {"amplitude", amp},
                    {"phase", phase}};
  return batch;
}

// --- frequency relation -----------------------------------------------------------

void FreqRelationConfig::validate() const {
  base.validate();
  if (base.length != 140)
    throw ContractError("freq-relation: total length must be 140");
  if (!(f_a > 0.0) || !(f_b > 0.0) || !(f_a < kPi) || !(f_b < kPi))
    throw ContractError("freq-relation: f_a, f_b must lie in (0, pi)");
}

nlohmann::json FreqRelationConfig::to_json() const {
  return {{"base", base.to_json()}, {"f_a", f_a}, {"f_b", f_b}};
}

FreqRelationConfig FreqRelationConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"base", "f_a", "f_b"}, "freq-relation config");
  FreqRelationConfig c;
  if (j.contains("base")) c.base = OscillatorConfig::from_json(j.at("base"));
  maybe(j, "f_a", c.f_a);
  maybe(j, "f_b", c.f_b);
  c.validate();
  return c;
}

SequenceBatch gen_freq_relation(const FreqRelationConfig& cfg, std::size_t n,
                                std::uint64_t seed) {
  cfg.validate();
  const OscillatorConfig& base = cfg.base;
  SequenceBatch batch;
  batch.count = n;
  batch.length = base.length;
  batch.obs_dim = 1;
  batch.data.resize(n * base.length);

  nlohmann::json fs = nlohmann::json::array();
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_index(seed, i);
    const double f1 = rng.uniform(base.f_lo, base.f_hi);
    const double f2 = rng.uniform(base.f_lo, base.f_hi);
    const double f3 = rng.uniform(base.f_lo, base.f_hi);
    const double f4 = f1 > f2 ? cfg.f_a : cfg.f_b;
    const double A = rng.uniform(base.amp_lo, base.amp_hi);
    const double ph = rng.uniform(0.0, 2.0 * kPi);
    fs.push_back({f1, f2, f3, f4});
    labels.push_back(f1 > f2 ? 1 : 0);

    double p = A * std::cos(ph);
    double u = -A * std::sin(ph);
    for (std::size_t t = 0; t < base.length; ++t) {
      batch.at(i, t, 0) = p + base.obs_noise * rng.normal();
      const double f = t < 10 ? f1 : t < 20 ? f2 : t < 120 ? f3 : f4;
      const double cf = std::cos(f), sf = std::sin(f);
      const double pn = p * cf + u * sf;
      const double un = u * cf - p * sf;
      p = pn + base.process_noise * rng.normal();
      u = un + base.process_noise * rng.normal();
    }
  }
  batch.metadata = {{"world", "freq-relation"},
                    {"config", cfg.to_json()},
                    {"seed", seed},
                    {"frequencies", fs},
                    {"labels", labels}};
  return batch;
}

// --- IDX ingestion ----------------------------------------------------------------

namespace {

std::uint32_t read_be32(const unsigned char* b) {
  return std::uint32_t(b[0]) << 24 | std::uint32_t(b[1]) << 16 |
         std::uint32_t(b[2]) << 8 | std::uint32_t(b[3]);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("file not found: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

ImageSet load_idx(const std::string& path) {
  std::vector<unsigned char> bytes = read_file(path);
  if (bytes.size() < 4) throw IoError("idx truncated: " + path);
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic == 0x00000801)
    throw IoError("wrong magic for images (got label file): " + path);
  if (magic != 0x00000803)
    throw IoError("bad idx magic for images: " + path);
  if (bytes.size() < 16) throw IoError("idx truncated: " + path);
  const std::uint32_t count = read_be32(bytes.data() + 4);
  const std::uint32_t rows = read_be32(bytes.data() + 8);
  const std::uint32_t cols = read_be32(bytes.data() + 12);
  if (rows != 28 || cols != 28)
    throw IoError("idx dimension mismatch, expected 28x28 images: " + path);
  const std::size_t need = 16 + std::size_t(count) * rows * cols;
  if (bytes.size() < need) throw IoError("idx truncated: " + path);

  ImageSet set;
  set.count = count;
  set.rows = rows;
  set.cols = cols;
  set.pixels.resize(std::size_t(count) * rows * cols);
  for (std::size_t i = 0; i < set.pixels.size(); ++i)
    set.pixels[i] = double(bytes[16 + i]) / 255.0;
  return set;
}

void write_idx(const std::string& path, const ImageSet& images) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  const unsigned char header[4] = {0, 0, 8, 3};
  out.write(reinterpret_cast<const char*>(header), 4);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(images.count),
                                 static_cast<std::uint32_t>(images.rows),
                                 static_cast<std::uint32_t>(images.cols)};
  for (std::uint32_t d : dims) {
    const unsigned char b[4] = {static_cast<unsigned char>(d >> 24),
                                static_cast<unsigned char>(d >> 16),
                                static_cast<unsigned char>(d >> 8),
                                static_cast<unsigned char>(d)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  for (double v : images.pixels) {
    const long byte = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
    const unsigned char u = static_cast<unsigned char>(byte);
    out.write(reinterpret_cast<const char*>(&u), 1);
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  std::vector<unsigned char> bytes = read_file(path);
  if (bytes.size() < 8) throw IoError("idx truncated: " + path);
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != 0x00000801)
    throw IoError("bad idx magic for labels: " + path);
  const std::uint32_t count = read_be32(bytes.data() + 4);
  if (bytes.size() < 8 + std::size_t(count))
    throw IoError("idx truncated: " + path);
  return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

ImageSet synthetic_digits() {
  // Seven-segment glyphs on a 28x28 canvas: horizontal bars A (top),
  // G (middle), D (bottom); vertical bars F/B upper left/right, E/C lower
  // left/right. Box spans rows 4..23, cols 9..18.
  static const char* segs[10] = {"ABCDEF", "BC",     "ABGED", "ABGCD",
                                 "FGBC",   "AFGCD",  "AFGEDC", "ABC",
                                 "ABCDEFG", "ABCDFG"};
  ImageSet set;
  set.count = 10;
  set.pixels.assign(10 * 28 * 28, 0.0);
  auto bar = [&](std::size_t digit, std::size_t r0, std::size_t r1,
                 std::size_t c0, std::size_t c1) {
    for (std::size_t r = r0; r <= r1; ++r)
      for (std::size_t c = c0; c <= c1; ++c) set.at(digit, r, c) = 1.0;
  };
  for (std::size_t d = 0; d < 10; ++d) {
    for (const char* s = segs[d]; *s; ++s) {
      switch (*s) {
        case 'A': bar(d, 4, 5, 9, 18); break;
        case 'G': bar(d, 13, 14, 9, 18); break;
        case 'D': bar(d, 22, 23, 9, 18); break;
        case 'F': bar(d, 4, 13, 9, 10); break;
        case 'B': bar(d, 4, 13, 17, 18); break;
        case 'E': bar(d, 14, 23, 9, 10); break;
        case 'C': bar(d, 14, 23, 17, 18); break;
      }
    }
  }
  return set;
}

// --- moving digits -----------------------------------------------------------------

void MovingMnistConfig::validate() const {
  if (length < 2) throw ContractError("moving-mnist: length must be >= 2");
}

nlohmann::json MovingMnistConfig::to_json() const {
  return {{"length", length}};
}

MovingMnistConfig MovingMnistConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"length"}, "moving-mnist config");
  MovingMnistConfig c;
  maybe(j, "length", c.length);
  c.validate();
  return c;
}

SequenceBatch gen_moving_mnist(const ImageSet& digits,
                               const MovingMnistConfig& cfg, std::size_t n,
                               std::uint64_t seed) {
  cfg.validate();
  if (digits.count == 0) throw ContractError("moving-mnist: empty digit set");
  const std::size_t R = digits.rows, C = digits.cols;

  SequenceBatch batch;
  batch.count = n;
  batch.length = cfg.length;
  batch.obs_dim = R * C;
  batch.data.resize(n * cfg.length * R * C);

  nlohmann::json which = nlohmann::json::array();
  nlohmann::json dirs = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_index(seed, i);
    const std::size_t d = rng.uniform_int(digits.count);
    const int dir = rng.uniform() < 0.5 ? 1 : -1;  // +1 right, -1 left
    which.push_back(d);
    dirs.push_back(dir);
    for (std::size_t t = 0; t < cfg.length; ++t) {
      const long shift = long(t) * dir;
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          const long src = ((long(c) - shift) % long(C) + long(C)) % long(C);
          batch.at(i, t, r * C + c) =
              digits.at(d, r, std::size_t(src)) >= 0.5 ? 1.0 : 0.0;
        }
    }
  }
  batch.metadata = {{"world", "moving-mnist"},
                    {"config", cfg.to_json()},
                    {"seed", seed},
                    {"digits", which},
                    {"directions", dirs}};
  return batch;
}

// --- gridworld ---------------------------------------------------------------------

void GridworldConfig::validate() const {
  if (window != 5) throw ContractError("gridworld: window must be 5");
  if (rows < window || cols < window)
    throw ContractError("gridworld: maze too small for the window");
  if (food_density < 0.0 || food_density > 1.0 || ghost_greed < 0.0 ||
      ghost_greed > 1.0 || forward_bias < 0.0 || forward_bias > 1.0)
    throw ContractError("gridworld: probabilities must lie in [0,1]");
  if (length == 0) throw ContractError("gridworld: empty length");
}

nlohmann::json GridworldConfig::to_json() const {
  return {{"rows", rows},
          {"cols", cols},
          {"window", window},
          {"food_density", food_density},
          {"ghost_greed", ghost_greed},
          {"forward_bias", forward_bias},
          {"length", length},
          {"trace", trace}};
}

GridworldConfig GridworldConfig::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"rows", "cols", "window", "food_density", "ghost_greed",
              "forward_bias", "length", "trace"},
             "gridworld config");
  GridworldConfig c;
  maybe(j, "rows", c.rows);
  maybe(j, "cols", c.cols);
  maybe(j, "window", c.window);
  maybe(j, "food_density", c.food_density);
  maybe(j, "ghost_greed", c.ghost_greed);
  maybe(j, "forward_bias", c.forward_bias);
  maybe(j, "length", c.length);
  maybe(j, "trace", c.trace);
  c.validate();
  return c;
}

std::vector<bool> gridworld_walls(const GridworldConfig& cfg) {
  std::vector<bool> walls(cfg.rows * cfg.cols, false);
  for (std::size_t r = 0; r < cfg.rows; ++r)
    for (std::size_t c = 0; c < cfg.cols; ++c) {
      const bool perimeter =
          r == 0 || c == 0 || r == cfg.rows - 1 || c == cfg.cols - 1;
      const bool pillar = r % 2 == 0 && c % 2 == 0;
      walls[r * cfg.cols + c] = perimeter || pillar;
    }
  return walls;
}

namespace {

struct Cell {
  long r, c;
};

constexpr Cell kDirs[4] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};

}  // namespace

SequenceBatch gen_gridworld(const GridworldConfig& cfg, std::size_t n,
                            std::uint64_t seed) {
  cfg.validate();
  const std::vector<bool> walls = gridworld_walls(cfg);
  const long R = long(cfg.rows), C = long(cfg.cols);
  auto is_wall = [&](long r, long c) {
    if (r < 0 || c < 0 || r >= R || c >= C) return true;
    return bool(walls[std::size_t(r) * cfg.cols + std::size_t(c)]);
  };
  std::vector<Cell> free_cells;
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c)
      if (!is_wall(r, c)) free_cells.push_back({r, c});
  if (free_cells.size() < 2)
    throw ContractError("gridworld: maze has fewer than two free cells");

  const std::size_t win = cfg.window;
  const long half = long(win) / 2;
  constexpr std::size_t kChannels = 4;
  SequenceBatch batch;
  batch.count = n;
  batch.length = cfg.length;
  batch.obs_dim = kChannels * win * win;
  batch.data.assign(n * cfg.length * batch.obs_dim, 0.0);

  nlohmann::json agent_trace = nlohmann::json::array();
  nlohmann::json ghost_trace = nlohmann::json::array();
  nlohmann::json food_trace = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_index(seed, i);
    Cell agent = free_cells[rng.uniform_int(free_cells.size())];
    std::size_t gi = rng.uniform_int(free_cells.size() - 1);
    Cell ghost = free_cells[gi];
    if (ghost.r == agent.r && ghost.c == agent.c) ghost = free_cells.back();

    std::vector<bool> food(walls.size(), false);
    for (const Cell& cell : free_cells) {
      if (cell.r == agent.r && cell.c == agent.c) continue;
      if (rng.uniform() < cfg.food_density)
        food[std::size_t(cell.r) * cfg.cols + std::size_t(cell.c)] = true;
    }

    nlohmann::json seq_agent = nlohmann::json::array();
    nlohmann::json seq_ghost = nlohmann::json::array();
    nlohmann::json seq_food = nlohmann::json::array();
    int last_dir = -1;
    for (std::size_t t = 0; t < cfg.length; ++t) {
      if (cfg.trace) {
        seq_agent.push_back({agent.r, agent.c});
        seq_ghost.push_back({ghost.r, ghost.c});
        std::size_t food_count = 0;
        for (bool f : food) food_count += f ? 1 : 0;
        seq_food.push_back(food_count);
      }
      // Observation before the step's moves. Channel-major window planes:
      // wall, food, ghost, agent; out-of-maze counts as wall.
      for (long dr = -half; dr <= half; ++dr)
        for (long dc = -half; dc <= half; ++dc) {
          const long r = agent.r + dr, c = agent.c + dc;
          const std::size_t cell =
              std::size_t(dr + half) * win + std::size_t(dc + half);
          const bool wall = is_wall(r, c);
          double* obs = &batch.at(i, t, 0);
          obs[0 * win * win + cell] = wall ? 1.0 : 0.0;
          obs[1 * win * win + cell] =
              !wall && food[std::size_t(r) * cfg.cols + std::size_t(c)] ? 1.0
                                                                        : 0.0;
          obs[2 * win * win + cell] =
              !wall && r == ghost.r && c == ghost.c ? 1.0 : 0.0;
          obs[3 * win * win + cell] = dr == 0 && dc == 0 ? 1.0 : 0.0;
        }

      // Agent: forward-biased random walk over legal moves.
      std::vector<int> legal;
      for (int d = 0; d < 4; ++d)
        if (!is_wall(agent.r + kDirs[d].r, agent.c + kDirs[d].c))
          legal.push_back(d);
      int dir;
      const bool forward_legal =
          last_dir >= 0 && !is_wall(agent.r + kDirs[last_dir].r,
                                    agent.c + kDirs[last_dir].c);
      if (forward_legal && rng.uniform() < cfg.forward_bias)
        dir = last_dir;
      else
        dir = legal[rng.uniform_int(legal.size())];
      agent.r += kDirs[dir].r;
      agent.c += kDirs[dir].c;
      last_dir = dir;

      // Ghost: close the Manhattan distance with probability ghost_greed.
      std::vector<int> glegal, toward;
      const long dist = std::abs(ghost.r - agent.r) +
                        std::abs(ghost.c - agent.c);
      for (int d = 0; d < 4; ++d) {
        const long r = ghost.r + kDirs[d].r, c = ghost.c + kDirs[d].c;
        if (is_wall(r, c)) continue;
        glegal.push_back(d);
        if (std::abs(r - agent.r) + std::abs(c - agent.c) < dist)
          toward.push_back(d);
      }
      const double u = rng.uniform();
      const std::vector<int>& pool =
          (u < cfg.ghost_greed && !toward.empty()) ? toward : glegal;
      const int gdir = pool[rng.uniform_int(pool.size())];
      ghost.r += kDirs[gdir].r;
      ghost.c += kDirs[gdir].c;

      food[std::size_t(agent.r) * cfg.cols + std::size_t(agent.c)] = false;
    }
    if (cfg.trace) {
      agent_trace.push_back(std::move(seq_agent));
      ghost_trace.push_back(std::move(seq_ghost));
      food_trace.push_back(std::move(seq_food));
    }
  }
  batch.metadata = {{"world", "gridworld"},
                    {"config", cfg.to_json()},
                    {"seed", seed}};
  if (cfg.trace) {
    batch.metadata["agent"] = std::move(agent_trace);
    batch.metadata["ghost"] = std::move(ghost_trace);
    batch.metadata["food_count"] = std::move(food_trace);
  }
  return batch;
}

// --- linear-Gaussian oracle world ----------------------------------------------

void LinearGaussianConfig::validate() const {
  if (!(q > 0.0) || !(r > 0.0) || !(p0 > 0.0))
    throw ContractError("linear-gaussian: q, r, p0 must be positive");
}

nlohmann::json LinearGaussianConfig::to_json() const {
  return {{"a", a}, {"q", q}, {"c", c}, {"r", r}, {"p0", p0}};
}

LinearGaussianConfig LinearGaussianConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"a", "q", "c", "r", "p0"}, "linear-gaussian config");
  LinearGaussianConfig c;
  maybe(j, "a", c.a);
  maybe(j, "q", c.q);
  maybe(j, "c", c.c);
  maybe(j, "r", c.r);
  maybe(j, "p0", c.p0);
  c.validate();
  return c;
}

SequenceBatch gen_linear_gaussian(const LinearGaussianConfig& cfg,
                                  std::size_t n, std::uint64_t seed) {
  return gen_linear_gaussian(cfg, n, 32, seed);
}

SequenceBatch gen_linear_gaussian(const LinearGaussianConfig& cfg,
                                  std::size_t n, std::size_t length,
                                  std::uint64_t seed) {
  cfg.validate();
  if (length == 0) throw ContractError("linear-gaussian: empty length");
  SequenceBatch batch;
  batch.count = n;
  batch.length = length;
  batch.obs_dim = 1;
  batch.data.resize(n * length);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::for_index(seed, i);
    double z = std::sqrt(cfg.p0) * rng.normal();
    for (std::size_t t = 0; t < length; ++t) {
      batch.at(i, t, 0) = cfg.c * z + std::sqrt(cfg.r) * rng.normal();
      z = cfg.a * z + std::sqrt(cfg.q) * rng.normal();
    }
  }
  batch.metadata = {{"world", "linear-gaussian"},
                    {"config", cfg.to_json()},
                    {"seed", seed},
                    {"length", length}};
  return batch;
}

// --- dispatch -----------------------------------------------------------------

SequenceBatch generate_world(const std::string& world,
                             const nlohmann::json& config, std::size_t n,
                             std::uint64_t seed) {
  if (world == "oscillator")
    return gen_oscillator(OscillatorConfig::from_json(config), n, seed);
  if (world == "freq-relation")
    return gen_freq_relation(FreqRelationConfig::from_json(config), n, seed);
  if (world == "moving-mnist") {
    nlohmann::json rest = config;
    std::string idx_path;
    if (rest.contains("idx_path")) {
      idx_path = rest.at("idx_path").get<std::string>();
      rest.erase("idx_path");
    }
    ImageSet digits =
        idx_path.empty() ? synthetic_digits() : load_idx(idx_path);
    return gen_moving_mnist(digits, MovingMnistConfig::from_json(rest), n,
                            seed);
  }
  if (world == "gridworld")
    return gen_gridworld(GridworldConfig::from_json(config), n, seed);
  if (world == "linear-gaussian") {
    std::size_t length = 32;
    nlohmann::json rest = config;
    if (rest.contains("length")) {
      length = rest.at("length").get<std::size_t>();
      rest.erase("length");
    }
    return gen_linear_gaussian(LinearGaussianConfig::from_json(rest), n,
                               length, seed);
  }
  throw ContractError("unknown world: " + world +
                      " (want oscillator, freq-relation, moving-mnist, "
                      "gridworld, or linear-gaussian)");
}

}  // namespace tdvae
