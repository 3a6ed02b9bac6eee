#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tdvae/evaluator.hpp"
#include "tdvae/gradcheck.hpp"

using namespace tdvae;

namespace {

nlohmann::json load_json(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw ContractError("config not found: " + path);
  std::ifstream in(path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config parse error in " + path + ": " + e.what());
  }
}

// Dotted-path override into a JSON config; values parse as JSON where
// possible and fall back to plain strings. Later overrides win.
void apply_override(nlohmann::json& config, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ContractError("override '" + kv + "' is not key=value");
  const std::string path = kv.substr(0, eq);
  const std::string text = kv.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }

  nlohmann::json* node = &config;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key =
        path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty())
      throw ContractError("override '" + kv + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("TDVAE_NUM_THREADS");
  if (!raw) return 1;
  const std::string s(raw);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v == 0)
    throw ContractError("TDVAE_NUM_THREADS must be a positive integer, got '" +
                        s + "'");
  return v;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double se_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1) / double(v.size()));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

struct LoadedModel {
  TrainConfig config;
  std::uint64_t step;
};

// Rebuilds the architecture a checkpoint describes; the caller constructs
// the SequenceModel from .config and applies the checkpoint.
LoadedModel read_train_config(const Checkpoint& ckpt) {
  return {TrainConfig::from_json(ckpt.config), ckpt.step};
}

int cmd_gen_data(const std::string& world, const std::string& config_path,
                 const std::vector<std::string>& overrides, std::size_t count,
                 std::uint64_t seed, const std::string& out) {
  nlohmann::json config =
      config_path.empty() ? nlohmann::json::object() : load_json(config_path);
  for (const auto& kv : overrides) apply_override(config, kv);
  SequenceBatch batch = generate_world(world, config, count, seed);
  save_batch(batch, out);
  std::printf("wrote %s: %zu sequences, length %zu, obs_dim %zu\n",
              out.c_str(), batch.count, batch.length, batch.obs_dim);
  return 0;
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& overrides,
              const std::string& resume) {
  nlohmann::json config = load_json(config_path);
  for (const auto& kv : overrides) apply_override(config, kv);
  TrainConfig tc = TrainConfig::from_json(config);
  TrainResult res = train(tc, resume);
  std::printf(
      "trained %zu steps: total=%.6g recon=%.6g belief_t1=%.6g "
      "belief_t2=%.6g transition=%.6g smoothing=%.6g\n",
      static_cast<std::size_t>(res.steps_run), res.last.total, res.last.recon,
      res.last.belief_t1,
      res.last.belief_t2, res.last.transition,
      res.last.smoothing);
  if (!tc.checkpoint_path.empty())
    std::printf("checkpoint: %s\n", tc.checkpoint_path.c_str());
  if (!tc.metrics_path.empty())
    std::printf("metrics: %s\n", tc.metrics_path.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             std::size_t sequences, std::uint64_t seed, std::size_t k,
             const std::string& out, std::size_t threads) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  LoadedModel lm = read_train_config(ckpt);
  SequenceModel model(lm.config.model, lm.config.seed.value_or(0));
  Adam adam(model.params());
  apply_checkpoint(ckpt, model.params(), adam);

  SequenceBatch data =
      data_path.empty()
          ? generate_world(lm.config.world, lm.config.world_config, sequences,
                           seed)
          : load_batch(data_path);
  if (data.obs_dim != model.config().obs_dim)
    throw ContractError("dataset obs_dim " + std::to_string(data.obs_dim) +
                        " does not match model obs_dim " +
                        std::to_string(model.config().obs_dim));

  const Variant v = model.config().variant;
  const bool tractable = v == Variant::FilteringBaseline ||
                         v == Variant::MeanfieldBaseline ||
                         v == Variant::SequentialTdvae;
  const bool lg = lm.config.world == "linear-gaussian";

  std::vector<double> objective =
      held_out_losses(model, data, lm.config.scheme, lm.config.pairs_per_step,
                      seed, threads);
  std::vector<NllReport> nll;
  if (tractable) nll = batch_nll(model, data, k, seed, threads);
  std::vector<double> kalman;
  if (lg) {
    nlohmann::json wc = lm.config.world_config;
    wc.erase("length");
    LinearGaussianConfig lgc = LinearGaussianConfig::from_json(wc);
    for (std::size_t i = 0; i < data.count; ++i) {
      std::vector<double> xs(data.length);
      for (std::size_t t = 0; t < data.length; ++t) xs[t] = data.at(i, t, 0);
      kalman.push_back(-kalman_log_likelihood(lgc, xs) /
                       double(data.length));
    }
  }

  std::string csv = "seq,objective";
  if (tractable) csv += ",neg_elbo,neg_elbo_se,is_nll,is_nll_se";
  if (lg) csv += ",kalman_nll";
  csv += "\n";
  char buf[256];
  for (std::size_t i = 0; i < data.count; ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g", i, objective[i]);
    csv += buf;
    if (tractable) {
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g",
                    nll[i].neg_elbo.value, nll[i].neg_elbo.se,
                    nll[i].is_nll.value, nll[i].is_nll.se);
      csv += buf;
    }
    if (lg) {
      std::snprintf(buf, sizeof buf, ",%.17g", kalman[i]);
      csv += buf;
    }
    csv += "\n";
  }

  nlohmann::json summary{{"checkpoint", ckpt_path},
                         {"step", lm.step},
                         {"variant", variant_name(v)},
                         {"world", lm.config.world},
                         {"sequences", data.count},
                         {"threads", threads},
                         {"objective_mean", mean_of(objective)},
                         {"objective_se", se_of(objective)}};
  std::string line = "eval: variant=" + variant_name(v) +
                     " n=" + std::to_string(data.count);
  std::snprintf(buf, sizeof buf, " objective=%.6g", mean_of(objective));
  line += buf;
  if (tractable) {
    std::vector<double> elbo, isn;
    for (const auto& r : nll) {
      elbo.push_back(r.neg_elbo.value);
      isn.push_back(r.is_nll.value);
    }
    summary["k"] = k;
    summary["neg_elbo_mean"] = mean_of(elbo);
    summary["neg_elbo_se"] = se_of(elbo);
    summary["is_nll_mean"] = mean_of(isn);
    summary["is_nll_se"] = se_of(isn);
    std::snprintf(buf, sizeof buf, " neg_elbo=%.6g is_nll=%.6g",
                  mean_of(elbo), mean_of(isn));
    line += buf;
  }
  if (lg) {
    summary["kalman_mean"] = mean_of(kalman);
    std::snprintf(buf, sizeof buf, " kalman=%.6g", mean_of(kalman));
    line += buf;
  }

  if (!out.empty()) {
    write_text(out + ".csv", csv);
    write_text(out + ".json", summary.dump(2) + "\n");
    line += " report=" + out + ".{csv,json}";
  }
  std::printf("%s\n", line.c_str());
  return 0;
}

int cmd_rollout(const std::string& ckpt_path, const std::string& schedule_text,
                const std::string& data_path, std::size_t first,
                std::size_t count, std::size_t context, std::uint64_t seed,
                const std::string& out, bool pgm) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  LoadedModel lm = read_train_config(ckpt);
  SequenceModel model(lm.config.model, lm.config.seed.value_or(0));
  Adam adam(model.params());
  apply_checkpoint(ckpt, model.params(), adam);

  const std::vector<std::size_t> schedule = parse_schedule(schedule_text);
  SequenceBatch data =
      data_path.empty()
          ? generate_world(lm.config.world, lm.config.world_config,
                           first + count, seed)
          : load_batch(data_path);
  if (data.obs_dim != model.config().obs_dim)
    throw ContractError("dataset obs_dim " + std::to_string(data.obs_dim) +
                        " does not match model obs_dim " +
                        std::to_string(model.config().obs_dim));
  if (first + count > data.count)
    throw ContractError("rollout needs sequences [" + std::to_string(first) +
                        ", " + std::to_string(first + count) + ") but only " +
                        std::to_string(data.count) + " are available");
  if (pgm && data.obs_dim != 784)
    throw ContractError("pgm export needs 28x28 observations");

  const std::uint64_t noise_base =
      Rng::substream(seed, "rollout").next_u64();
  for (std::size_t i = first; i < first + count; ++i) {
    BeliefState belief = belief_at(model, data, i, context);
    Rng noise_rng = Rng::for_index(noise_base, i);
    RngNoise noise(noise_rng);
    Rollout roll = rollout_jumpy(model, belief, schedule, noise);

    std::string line = "seq " + std::to_string(i) + ": " +
                       std::to_string(roll.frames.size()) + " frames";
    if (data.obs_dim == 1 && roll.frames.size() >= 21) {
      std::vector<double> series;
      for (std::size_t j = 1; j < roll.frames.size(); ++j)
        series.push_back(roll.frames[j].at(0, 0));
      FrequencyFit fit = fit_rollout_frequency(series);
      char buf[128];
      if (fit.has_frequency) {
        std::snprintf(buf, sizeof buf, ", fit f=%.5g amp=%.5g phase=%.5g",
                      fit.frequency, fit.amplitude, fit.phase);
      } else {
        std::snprintf(buf, sizeof buf, ", constant rollout (offset %.5g)",
                      fit.offset);
      }
      line += buf;
    }

    if (!out.empty()) {
      std::string csv = "frame";
      for (std::size_t d = 0; d < data.obs_dim; ++d)
        csv += ",x" + std::to_string(d);
      csv += "\n";
      char num[64];
      for (std::size_t j = 0; j < roll.frames.size(); ++j) {
        csv += std::to_string(j);
        for (std::size_t d = 0; d < data.obs_dim; ++d) {
          std::snprintf(num, sizeof num, ",%.17g", roll.frames[j].at(0, d));
          csv += num;
        }
        csv += "\n";
      }
      const std::string base = out + "_seq" + std::to_string(i);
      write_text(base + ".csv", csv);
      if (pgm)
        for (std::size_t j = 0; j < roll.frames.size(); ++j) {
          const double* p = roll.frames[j].data();
          write_pgm(base + "_f" + std::to_string(j) + ".pgm",
                    std::vector<double>(p, p + 784), 28, 28);
        }
      line += " -> " + base + ".csv";
    }
    std::printf("%s\n", line.c_str());
  }
  return 0;
}

int cmd_probe(std::size_t runs, std::uint64_t seed_base, std::size_t hidden,
              std::size_t latent, std::size_t dmap, std::size_t steps,
              std::size_t dataset, std::size_t batch, std::size_t pairs,
              std::size_t probe_sequences, std::size_t probe_time,
              std::uint64_t data_seed, const std::string& out,
              std::size_t threads) {
  ProbeExperiment cfg;
  cfg.hidden = hidden;
  cfg.latent = latent;
  cfg.dmap_hidden = dmap;
  cfg.steps = steps;
  cfg.dataset_size = dataset;
  cfg.batch = batch;
  cfg.pairs_per_step = pairs;
  cfg.probe_count = probe_sequences;
  cfg.probe_time = probe_time;
  cfg.data_seed = data_seed;
  cfg.threads = threads;
  for (std::size_t i = 0; i < runs; ++i) cfg.seeds.push_back(seed_base + i);

  ProbeComparison cmp = run_probe_experiment(cfg);
  std::printf(
      "probe: tdvae=%.4f next-step=%.4f gap=%.4f pooled_se=%.4f (%zu runs)\n",
      cmp.tdvae.test_accuracy, cmp.nextstep.test_accuracy, cmp.gap,
      cmp.pooled_se, runs);

  if (!out.empty()) {
    std::string csv = "seed,tdvae,nextstep\n";
    char buf[96];
    for (std::size_t i = 0; i < runs; ++i) {
      std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g\n",
                    static_cast<unsigned long long>(cfg.seeds[i]),
                    cmp.tdvae.seed_accuracies[i],
                    cmp.nextstep.seed_accuracies[i]);
      csv += buf;
    }
    nlohmann::json summary{
        {"runs", runs},
        {"hidden", hidden},
        {"steps", steps},
        {"probe_time", probe_time},
        {"tdvae_accuracy", cmp.tdvae.test_accuracy},
        {"nextstep_accuracy", cmp.nextstep.test_accuracy},
        {"gap", cmp.gap},
        {"pooled_se", cmp.pooled_se}};
    write_text(out + ".csv", csv);
    write_text(out + ".json", summary.dump(2) + "\n");
    std::printf("report: %s.{csv,json}\n", out.c_str());
  }
  return 0;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed) {
  gradcheck::SuiteResult res = gradcheck::run_op_suite(instances, seed);
  std::printf("gradient suite: %zu cases, %zu instances, %zu entries, "
              "max rel err %.3g\n",
              res.per_case.size(), res.instances, res.entries,
              res.max_rel_err);
  if (!res.pass) {
    for (const auto& f : res.failures)
      std::fprintf(stderr, "fail: %s\n", f.c_str());
    std::fprintf(stderr, "error: gradient suite failed (%zu failures)\n",
                 res.failures.size());
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal-difference variational sequence models"};
  app.require_subcommand(1);

  std::string world, config_path, data_path, ckpt_path, resume, out;
  std::string schedule_text;
  std::vector<std::string> overrides;
  std::size_t count = 100, sequences = 100, k = 100;
  std::size_t first = 0, rollouts = 1, context = 60;
  std::size_t runs = 20, hidden = 16, latent = 8, dmap = 50;
  std::size_t steps = 8000, dataset = 4000, batch = 16, pairs = 4;
  std::size_t probe_sequences = 1000, probe_time = 119, instances = 100;
  std::uint64_t seed = 0, data_seed = 424242;
  bool pgm = false;

  auto* gen = app.add_subcommand("gen-data", "generate a dataset container");
  gen->add_option("--world", world,
                  "world name (oscillator, freq-relation, moving-mnist, "
                  "gridworld, linear-gaussian)")
      ->required();
  gen->add_option("--config", config_path, "world config JSON path");
  gen->add_option("--set", overrides, "dotted key=value override (last wins)");
  gen->add_option("--count", count, "sequences to generate")
      ->capture_default_str();
  gen->add_option("--seed", seed, "generation seed")->capture_default_str();
  gen->add_option("--out", out, "output dataset path")->required();

  auto* tr = app.add_subcommand("train", "run the training loop");
  tr->add_option("--config", config_path, "train config JSON path")
      ->required();
  tr->add_option("--set", overrides, "dotted key=value override (last wins)");
  tr->add_option("--resume", resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "held-out bounds and exact oracles");
  ev->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  ev->add_option("--data", data_path,
                 "dataset container (default: generate from the embedded "
                 "world config)");
  auto* ev_n = ev->add_option("--sequences", sequences,
                              "held-out sequences to generate");
  ev_n->capture_default_str();
  ev->add_option("--seed", seed, "data generation and evaluation noise seed")
      ->capture_default_str();
  ev->add_option("--k", k, "importance samples per sequence")
      ->capture_default_str();
  ev->add_option("--out", out, "report prefix (writes .csv and .json)");
  ev_n->excludes("--data");

  auto* ro = app.add_subcommand("rollout", "jumpy rollouts from a checkpoint");
  ro->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  ro->add_option("--schedule", schedule_text,
                 "jump schedule, e.g. 20,1x20 (N or NxK, comma separated)")
      ->required();
  ro->add_option("--data", data_path,
                 "dataset container (default: generate from the embedded "
                 "world config)");
  ro->add_option("--first", first, "first sequence index")
      ->capture_default_str();
  ro->add_option("--count", rollouts, "number of rollouts")
      ->capture_default_str();
  ro->add_option("--context", context, "observations consumed before rolling")
      ->capture_default_str();
  ro->add_option("--seed", seed, "data and rollout noise seed")
      ->capture_default_str();
  ro->add_option("--out", out, "frame output prefix (writes CSV per rollout)");
  ro->add_flag("--pgm", pgm, "also write 28x28 frames as P5 images");

  auto* pr = app.add_subcommand(
      "probe", "belief probe: jumpy objective vs next-step prediction");
  pr->add_option("--runs", runs, "trained model pairs")->capture_default_str();
  pr->add_option("--seed", seed, "first model seed (seeds are consecutive)")
      ->capture_default_str();
  pr->add_option("--hidden", hidden, "belief LSTM width")
      ->capture_default_str();
  pr->add_option("--latent", latent, "latent width")->capture_default_str();
  pr->add_option("--dmap", dmap, "gating network hidden width")
      ->capture_default_str();
  pr->add_option("--steps", steps, "training steps per model")
      ->capture_default_str();
  pr->add_option("--dataset", dataset, "training sequences")
      ->capture_default_str();
  pr->add_option("--batch", batch, "batch size")->capture_default_str();
  pr->add_option("--pairs", pairs, "time pairs per step")
      ->capture_default_str();
  pr->add_option("--probe-sequences", probe_sequences,
                 "held-out sequences for the classifier")
      ->capture_default_str();
  pr->add_option("--probe-time", probe_time, "belief index probed")
      ->capture_default_str();
  pr->add_option("--data-seed", data_seed, "held-out set seed")
      ->capture_default_str();
  pr->add_option("--out", out, "report prefix (writes .csv and .json)");

  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference check of every op");
  gc->add_option("--instances", instances, "random instances per case")
      ->capture_default_str();
  gc->add_option("--seed", seed, "suite seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const std::size_t threads = threads_from_env();
    if (gen->parsed())
      return cmd_gen_data(world, config_path, overrides, count, seed, out);
    if (tr->parsed()) return cmd_train(config_path, overrides, resume);
    if (ev->parsed())
      return cmd_eval(ckpt_path, data_path, sequences, seed, k, out, threads);
    if (ro->parsed())
      return cmd_rollout(ckpt_path, schedule_text, data_path, first, rollouts,
                         context, seed, out, pgm);
    if (pr->parsed())
      return cmd_probe(runs, seed, hidden, latent, dmap, steps, dataset,
                       batch, pairs, probe_sequences, probe_time, data_seed,
                       out, threads);
    if (gc->parsed()) return cmd_gradcheck(instances, seed);
    return 1;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
