#include "tdvae/trainer.hpp"

#include <array>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tdvae/errors.hpp"

namespace tdvae {

// --- Adam -----------------------------------------------------------------------

Adam::Adam(ParameterStore& store, AdamConfig c) : params(&store), cfg(c) {
  m.resize(store.size());
  v.resize(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    m[i].assign(store[i].value.numel(), 0.0);
    v[i].assign(store[i].value.numel(), 0.0);
  }
}

void Adam::step() {
  if (m.size() != params->size())
    throw TrainError("optimizer state does not match the parameter store");
  ++t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (std::size_t i = 0; i < params->size(); ++i) {
    Parameter& p = (*params)[i];
    if (m[i].size() != p.value.numel())
      throw TrainError("optimizer state does not match parameter '" + p.name +
                       "'");
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j];
      m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * g;
      v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i][j] / bc1;
      const double vhat = v[i][j] / bc2;
      p.value.at(j) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      p.grad[j] = 0.0;
    }
  }
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  const double norm = params.grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p->grad) g *= s;
  }
  return norm;
}

// --- checkpoint serialization ------------------------------------------------

namespace {

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void put_u32(std::string& s, std::uint32_t value) {
  for (int i = 0; i < 4; ++i)
    s.push_back(char((value >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& s, std::uint64_t value) {
  for (int i = 0; i < 8; ++i)
    s.push_back(char((value >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& s, double value) {
  char bytes[8];
  std::memcpy(bytes, &value, 8);
  s.append(bytes, 8);
}

struct Reader {
  const unsigned char* p;
  std::size_t size;
  std::size_t off = 0;

  void need(std::size_t n) const {
    if (off + n > size) throw IoError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, p + off, 8);
    off += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out(reinterpret_cast<const char*>(p + off), n);
    off += n;
    return out;
  }
};

constexpr const char* kSectionOrder[5] = {"CONF", "NAME", "ARRY", "RNGS",
                                          "ADAM"};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  if (ckpt.adam_m.size() != ckpt.arrays.size() ||
      ckpt.adam_v.size() != ckpt.arrays.size())
    throw ContractError("checkpoint optimizer state does not match arrays");
  for (std::size_t i = 0; i < ckpt.arrays.size(); ++i)
    if (ckpt.adam_m[i].size() != ckpt.arrays[i].second.size() ||
        ckpt.adam_v[i].size() != ckpt.arrays[i].second.size())
      throw ContractError("checkpoint optimizer state does not match arrays");

  std::string conf;
  conf = nlohmann::json{{"step", ckpt.step}, {"config", ckpt.config}}.dump();

  std::string name;
  put_u32(name, std::uint32_t(ckpt.arrays.size()));
  for (const auto& [n, data] : ckpt.arrays) {
    put_u32(name, std::uint32_t(n.size()));
    name += n;
    put_u64(name, data.size());
  }

  std::string arry;
  for (const auto& [n, data] : ckpt.arrays)
    for (double x : data) put_f64(arry, x);

  std::string rngs;
  put_u32(rngs, std::uint32_t(ckpt.rng_states.size()));
  for (const Rng::State& st : ckpt.rng_states)
    for (std::uint64_t w : st) put_u64(rngs, w);

  std::string adam;
  put_u64(adam, ckpt.adam_t);
  for (std::size_t i = 0; i < ckpt.arrays.size(); ++i) {
    for (double x : ckpt.adam_m[i]) put_f64(adam, x);
    for (double x : ckpt.adam_v[i]) put_f64(adam, x);
  }

  const std::string* payloads[5] = {&conf, &name, &arry, &rngs, &adam};
  std::string out = "TDVC0001";
  put_u32(out, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    out += kSectionOrder[i];
    put_u64(out, payloads[i]->size());
    put_u32(out, crc32(reinterpret_cast<const unsigned char*>(
                           payloads[i]->data()),
                       payloads[i]->size()));
    out += *payloads[i];
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint not found: " + path);
  std::string bytes{std::istreambuf_iterator<char>(f),
                    std::istreambuf_iterator<char>()};
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};

  const std::string magic = r.bytes(8);
  if (magic.substr(0, 4) != "TDVC")
    throw IoError("bad checkpoint magic: " + path);
  if (magic.substr(4) != "0001")
    throw IoError("unsupported checkpoint version " + magic.substr(4) + ": " +
                  path);
  if (r.u32() != 5) throw IoError("unexpected checkpoint section count");

  std::string sections[5];
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string tag = r.bytes(4);
    if (tag != kSectionOrder[i])
      throw IoError("unexpected checkpoint section '" + tag + "'");
    const std::uint64_t size = r.u64();
    const std::uint32_t want = r.u32();
    sections[i] = r.bytes(size);
    const std::uint32_t got = crc32(
        reinterpret_cast<const unsigned char*>(sections[i].data()),
        sections[i].size());
    if (got != want)
      throw IoError("checkpoint checksum mismatch in section " + tag);
  }

  Checkpoint ckpt;
  nlohmann::json conf;
  try {
    conf = nlohmann::json::parse(sections[0]);
  } catch (const nlohmann::json::exception&) {
    throw IoError("checkpoint config section is not valid JSON");
  }
  ckpt.step = conf.at("step").get<std::uint64_t>();
  ckpt.config = conf.at("config");

  Reader rn{reinterpret_cast<const unsigned char*>(sections[1].data()),
            sections[1].size()};
  const std::uint32_t count = rn.u32();
  std::vector<std::uint64_t> numels(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = rn.u32();
    const std::string name = rn.bytes(len);
    numels[i] = rn.u64();
    ckpt.arrays.emplace_back(name, std::vector<double>());
  }

  Reader ra{reinterpret_cast<const unsigned char*>(sections[2].data()),
            sections[2].size()};
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& data = ckpt.arrays[i].second;
    data.resize(numels[i]);
    for (auto& x : data) x = ra.f64();
  }
  if (ra.off != ra.size) throw IoError("checkpoint array section size drift");

  Reader rr{reinterpret_cast<const unsigned char*>(sections[3].data()),
            sections[3].size()};
  const std::uint32_t nstates = rr.u32();
  for (std::uint32_t i = 0; i < nstates; ++i) {
    Rng::State st;
    for (auto& w : st) w = rr.u64();
    ckpt.rng_states.push_back(st);
  }

  Reader rd{reinterpret_cast<const unsigned char*>(sections[4].data()),
            sections[4].size()};
  ckpt.adam_t = rd.u64();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<double> mi(numels[i]), vi(numels[i]);
    for (auto& x : mi) x = rd.f64();
    for (auto& x : vi) x = rd.f64();
    ckpt.adam_m.push_back(std::move(mi));
    ckpt.adam_v.push_back(std::move(vi));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const ParameterStore& params, const Adam& adam,
                           const std::vector<Rng::State>& rng_states,
                           std::uint64_t step, nlohmann::json config) {
  Checkpoint ckpt;
  ckpt.config = std::move(config);
  ckpt.step = step;
  ckpt.rng_states = rng_states;
  ckpt.adam_t = adam.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    std::vector<double> data(p.value.numel());
    for (std::size_t j = 0; j < data.size(); ++j) data[j] = p.value.at(j);
    ckpt.arrays.emplace_back(p.name, std::move(data));
    ckpt.adam_m.push_back(adam.m[i]);
    ckpt.adam_v.push_back(adam.v[i]);
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ParameterStore& params,
                      Adam& adam) {
  if (ckpt.arrays.size() != params.size())
    throw TrainError("checkpoint holds " + std::to_string(ckpt.arrays.size()) +
                     " parameters, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const std::vector<std::pair<std::string, std::vector<double>>>& arrays =
        ckpt.arrays;
    std::size_t at = arrays.size();
    for (std::size_t k = 0; k < arrays.size(); ++k)
      if (arrays[k].first == p.name) at = k;
    if (at == arrays.size())
      throw TrainError("checkpoint missing parameter '" + p.name + "'");
    if (arrays[at].second.size() != p.value.numel())
      throw TrainError("checkpoint element count mismatch for '" + p.name +
                       "'");
    for (std::size_t j = 0; j < p.value.numel(); ++j)
      p.value.at(j) = arrays[at].second[j];
    p.grad.assign(p.value.numel(), 0.0);
    adam.m[i] = ckpt.adam_m[at];
    adam.v[i] = ckpt.adam_v[at];
  }
  adam.t = ckpt.adam_t;
}

// --- train config ---------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  if (!seed.has_value())
    throw ContractError("train config requires an explicit seed");
  if (steps == 0) throw ContractError("train config: steps must be >= 1");
  if (batch == 0 || dataset_size == 0)
    throw ContractError("train config: batch and dataset_size must be >= 1");
  if (clip_norm <= 0.0)
    throw ContractError("train config: clip_norm must be positive");
  if (adam.lr <= 0.0) throw ContractError("train config: lr must be positive");
  const bool uses_pairs = model.variant == Variant::JumpyTdvae ||
                          model.variant == Variant::HierarchicalTdvae;
  if (uses_pairs) {
    if (pairs_per_step == 0)
      throw ContractError("train config: pairs_per_step must be >= 1");
    if (model.condition_on_dt && scheme.support() > model.max_delta)
      throw ContractError(
          "train config: pair scheme support exceeds the model's max_delta");
  }
  if (eval_every > 0 && eval_sequences == 0)
    throw ContractError("train config: eval_sequences must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"world", world},
          {"world_config", world_config},
          {"dataset_size", dataset_size},
          {"batch", batch},
          {"steps", steps},
          {"seed", seed.has_value() ? nlohmann::json(*seed) : nullptr},
          {"scheme", scheme.str()},
          {"pairs_per_step", pairs_per_step},
          {"clip_norm", clip_norm},
          {"lr", adam.lr},
          {"metrics_path", metrics_path},
          {"checkpoint_path", checkpoint_path},
          {"checkpoint_every", checkpoint_every},
          {"eval_every", eval_every},
          {"eval_sequences", eval_sequences},
          {"eval_metrics_path", eval_metrics_path}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const char* allowed[] = {
      "model",          "world",        "world_config",    "dataset_size",
      "batch",          "steps",        "seed",            "scheme",
      "pairs_per_step", "clip_norm",    "lr",              "metrics_path",
      "checkpoint_path", "checkpoint_every", "eval_every", "eval_sequences",
      "eval_metrics_path"};
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
      throw ContractError("train config: unknown key '" + it.key() +
                          "' (valid keys: " + valid + ")");
    }
  }
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("world")) c.world = j.at("world").get<std::string>();
  if (j.contains("world_config")) c.world_config = j.at("world_config");
  if (j.contains("dataset_size"))
    c.dataset_size = j.at("dataset_size").get<std::size_t>();
  if (j.contains("batch")) c.batch = j.at("batch").get<std::size_t>();
  if (!j.contains("steps"))
    throw ContractError("train config: missing required key 'steps'");
  c.steps = j.at("steps").get<std::size_t>();
  if (!j.contains("seed") || j.at("seed").is_null())
    throw ContractError("train config: missing required key 'seed'");
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("scheme"))
    c.scheme = PairScheme::parse(j.at("scheme").get<std::string>());
  if (j.contains("pairs_per_step"))
    c.pairs_per_step = j.at("pairs_per_step").get<std::size_t>();
  if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<double>();
  if (j.contains("lr")) c.adam.lr = j.at("lr").get<double>();
  if (j.contains("metrics_path"))
    c.metrics_path = j.at("metrics_path").get<std::string>();
  if (j.contains("checkpoint_path"))
    c.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  if (j.contains("checkpoint_every"))
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  if (j.contains("eval_every"))
    c.eval_every = j.at("eval_every").get<std::size_t>();
  if (j.contains("eval_sequences"))
    c.eval_sequences = j.at("eval_sequences").get<std::size_t>();
  if (j.contains("eval_metrics_path"))
    c.eval_metrics_path = j.at("eval_metrics_path").get<std::string>();
  c.validate();
  return c;
}

// --- training loop ----------------------------------------------------------------

namespace {

constexpr const char* kMetricsHeader =
    "step,total,recon,belief_t1,belief_t2,transition,smoothing,wall_ms";

std::string metrics_row(std::uint64_t step, const LossBreakdown& b,
                        double wall_ms) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f",
                static_cast<unsigned long long>(step), b.total, b.recon,
                b.belief_t1, b.belief_t2, b.transition, b.smoothing, wall_ms);
  return buf;
}

std::string breakdown_str(const LossBreakdown& b) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "total=%.6g recon=%.6g belief_t1=%.6g belief_t2=%.6g "
                "transition=%.6g smoothing=%.6g",
                b.total, b.recon, b.belief_t1, b.belief_t2, b.transition,
                b.smoothing);
  return buf;
}

// Config identity for resume checks: output locations, cadences, and the
// total step budget may change between runs, the experiment itself may not.
nlohmann::json comparable_config(nlohmann::json j) {
  for (const char* k : {"metrics_path", "checkpoint_path", "checkpoint_every",
                        "eval_every", "eval_sequences", "eval_metrics_path",
                        "steps"})
    j.erase(k);
  return j;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::string& resume_from) {
  cfg.validate();
  const std::uint64_t seed = *cfg.seed;
  const bool uses_pairs = cfg.model.variant == Variant::JumpyTdvae ||
                          cfg.model.variant == Variant::HierarchicalTdvae;

  Rng data_rng = Rng::substream(seed, "data");
  const std::uint64_t world_seed = data_rng.next_u64();
  SequenceBatch dataset =
      generate_world(cfg.world, cfg.world_config, cfg.dataset_size, world_seed);
  if (dataset.obs_dim != cfg.model.obs_dim)
    throw ContractError("world obs_dim " + std::to_string(dataset.obs_dim) +
                        " does not match model obs_dim " +
                        std::to_string(cfg.model.obs_dim));

  SequenceBatch eval_set;
  if (cfg.eval_every > 0)
    eval_set = generate_world(cfg.world, cfg.world_config, cfg.eval_sequences,
                              Rng::substream(seed, "eval-data").next_u64());

  SequenceModel model(cfg.model, seed);
  Adam adam(model.params(), cfg.adam);
  Rng pair_rng = Rng::substream(seed, "pairs");
  Rng noise_rng = Rng::substream(seed, "noise");

  std::uint64_t start = 0;
  if (!resume_from.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_from);
    if (comparable_config(ckpt.config) != comparable_config(cfg.to_json()))
      throw TrainError(
          "checkpoint was written by a different training config");
    apply_checkpoint(ckpt, model.params(), adam);
    if (ckpt.rng_states.size() != 3)
      throw IoError("checkpoint rng section holds " +
                    std::to_string(ckpt.rng_states.size()) +
                    " states, expected 3");
    data_rng.set_state(ckpt.rng_states[0]);
    pair_rng.set_state(ckpt.rng_states[1]);
    noise_rng.set_state(ckpt.rng_states[2]);
    start = ckpt.step;
    if (start > cfg.steps)
      throw ContractError("checkpoint step " + std::to_string(start) +
                          " is past the requested " +
                          std::to_string(cfg.steps) + " steps");
  }
  RngNoise noise(noise_rng);

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    const bool append =
        !resume_from.empty() && std::filesystem::exists(cfg.metrics_path);
    metrics.open(cfg.metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics file: " + cfg.metrics_path);
    if (!append) metrics << kMetricsHeader << "\n";
  }
  std::ofstream eval_metrics;
  if (cfg.eval_every > 0) {
    const std::string path = cfg.eval_metrics_path.empty()
                                 ? cfg.metrics_path + ".eval"
                                 : cfg.eval_metrics_path;
    const bool append = !resume_from.empty() && std::filesystem::exists(path);
    eval_metrics.open(path, append ? std::ios::app : std::ios::trunc);
    if (!eval_metrics) throw IoError("cannot open metrics file: " + path);
    if (!append) eval_metrics << kMetricsHeader << "\n";
  }

  const std::uint64_t eval_noise_base =
      Rng::substream(seed, "eval-noise").next_u64();
  const std::uint64_t eval_pair_base =
      Rng::substream(seed, "eval-pairs").next_u64();

  LossBreakdown last{};
  for (std::uint64_t step = start + 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> idx(cfg.batch);
    for (auto& i : idx) i = data_rng.uniform_int(dataset.count);
    std::vector<Tensor> xs = dataset.tensors(idx);
    std::vector<TimePair> pairs;
    if (uses_pairs)
      pairs = sample_time_pairs(dataset.length, cfg.scheme, cfg.pairs_per_step,
                                pair_rng);

    Tape tape;
    {
      Tape::Scope scope(tape);
      LossResult res = compute_loss(model, xs, pairs, noise);
      last = res.totals;
      if (!std::isfinite(last.total))
        throw TrainError("non-finite loss at step " + std::to_string(step) +
                         ": " + breakdown_str(last));
      backward(res.loss);
    }
    clip_grad_norm(model.params(), cfg.clip_norm);
    adam.step();
#ifndef NDEBUG
    for (const auto& p : model.params())
      for (std::size_t j = 0; j < p->value.numel(); ++j)
        assert(std::isfinite(p->value.at(j)));
#endif
    const double wall_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    if (metrics.is_open()) metrics << metrics_row(step, last, wall_ms) << "\n";

    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
      const auto e0 = std::chrono::steady_clock::now();
      Rng erng = Rng::for_index(eval_noise_base, step);
      RngNoise enoise(erng);
      std::vector<TimePair> epairs;
      if (uses_pairs) {
        Rng eprng = Rng::for_index(eval_pair_base, step);
        epairs = sample_time_pairs(eval_set.length, cfg.scheme,
                                   cfg.pairs_per_step, eprng);
      }
      LossResult eres = compute_loss(model, eval_set.tensors(), epairs, enoise);
      const double ems = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - e0)
                             .count();
      eval_metrics << metrics_row(step, eres.totals, ems) << "\n";
    }

    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0 && step != cfg.steps)
      save_checkpoint(
          make_checkpoint(model.params(), adam,
                          {data_rng.state(), pair_rng.state(),
                           noise_rng.state()},
                          step, cfg.to_json()),
          cfg.checkpoint_path);
  }

  TrainResult result;
  result.checkpoint = make_checkpoint(
      model.params(), adam,
      {data_rng.state(), pair_rng.state(), noise_rng.state()}, cfg.steps,
      cfg.to_json());
  result.last = last;
  result.steps_run = cfg.steps - start;
  if (!cfg.checkpoint_path.empty())
    save_checkpoint(result.checkpoint, cfg.checkpoint_path);
  return result;
}

}  // namespace tdvae
