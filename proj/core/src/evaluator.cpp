#include "tdvae/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <thread>

#include "tdvae/distributions.hpp"
#include "tdvae/ops.hpp"

namespace tdvae {
namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

// [1 x d] -> [k x d] plain data copy; evaluation runs without a tape.
Tensor tile_row(const Tensor& x, std::size_t k) {
  const std::size_t d = x.dim(1);
  Tensor out(Shape{k, d});
  double* o = out.data();
  const double* p = x.data();
  for (std::size_t i = 0; i < k; ++i) std::copy(p, p + d, o + i * d);
  return out;
}

Tensor std_normal_log_prob(const Tensor& z) {
  return gaussian_log_prob({Tensor(z.shape()), Tensor(z.shape())}, z);
}

// Observation tensors [rows x obs] for timesteps [t0, t1) of `seqs`.
std::vector<Tensor> gather_window(const SequenceBatch& data,
                                  std::span<const std::size_t> seqs,
                                  std::size_t t0, std::size_t t1) {
  std::vector<Tensor> xs;
  xs.reserve(t1 - t0);
  for (std::size_t t = t0; t < t1; ++t) {
    Tensor x(Shape{seqs.size(), data.obs_dim});
    double* o = x.data();
    for (std::size_t r = 0; r < seqs.size(); ++r) {
      const double* src =
          data.data.data() + (seqs[r] * data.length + t) * data.obs_dim;
      std::copy(src, src + data.obs_dim, o + r * data.obs_dim);
    }
    xs.push_back(std::move(x));
  }
  return xs;
}

// Runs work(i0, i1) over a contiguous partition of [0, n) on `threads`
// workers. Output slots are per-index, so the split never changes results.
template <typename Fn>
void parallel_ranges(std::size_t n, std::size_t threads, Fn&& work) {
  const std::size_t nw = std::max<std::size_t>(1, std::min(threads, n));
  if (nw == 1) {
    work(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    const std::size_t i0 = n * w / nw;
    const std::size_t i1 = n * (w + 1) / nw;
    pool.emplace_back([&, w, i0, i1] {
      try {
        work(i0, i1);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<double> importance_log_weights(const SequenceModel& model,
                                           const std::vector<Tensor>& xs,
                                           std::size_t K, Rng& rng) {
  if (K == 0) throw DomainError("importance sampling needs K >= 1");
  const Variant v = model.config().variant;
  if (v != Variant::FilteringBaseline && v != Variant::MeanfieldBaseline &&
      v != Variant::SequentialTdvae)
    throw ContractError(
        "importance sampling: no tractable per-step joint density for " +
        variant_name(v) + "; use rollout metrics and the belief probe");
  if (xs.empty()) throw ContractError("importance sampling: empty sequence");
  if (xs[0].dim(0) != 1)
    throw ContractError("importance sampling evaluates one sequence at a time");

  BeliefTrajectory traj = model.encode_beliefs(xs);
  const std::size_t L = model.config().latent;
  RngNoise noise(rng);

  std::vector<double> lw(K, 0.0);
  auto accumulate = [&](const Tensor& t, double sign) {
    const double* p = t.data();
    for (std::size_t k = 0; k < K; ++k) lw[k] += sign * p[k];
  };

  Tensor z_prev;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    Tensor b = tile_row(traj.beliefs[0][t], K);
    GaussianParams q;
    if (v == Variant::FilteringBaseline)
      q = (*model.encoder)(
          concat({t == 0 ? Tensor(Shape{K, L}) : z_prev, b}, 1));
    else if (v == Variant::MeanfieldBaseline)
      q = (*model.encoder)(b);
    else
      q = model.pb[0](b);
    Tensor z = gaussian_sample(q, noise);
    accumulate(model.decoder_log_prob(z, tile_row(xs[t], K)), 1.0);
    accumulate(t == 0 ? std_normal_log_prob(z)
                      : gaussian_log_prob((*model.transition)(z_prev), z),
               1.0);
    accumulate(gaussian_log_prob(q, z), -1.0);
    z_prev = z;
  }
  return lw;
}

NllReport estimate_nll(const SequenceModel& model,
                       const std::vector<Tensor>& xs, std::size_t K,
                       Rng& rng) {
  const std::vector<double> lw = importance_log_weights(model, xs, K, rng);
  const double norm =
      1.0 / (double(xs.size()) * double(model.config().obs_dim));

  NllReport rep;
  rep.neg_elbo.samples = rep.is_nll.samples = K;
  rep.neg_elbo.value = -mean_of(lw) * norm;

  const double m = *std::max_element(lw.begin(), lw.end());
  std::vector<double> w(K);
  for (std::size_t k = 0; k < K; ++k) w[k] = std::exp(lw[k] - m);
  const double wbar = mean_of(w);
  rep.is_nll.value = -(m + std::log(wbar)) * norm;

  if (K > 1) {
    rep.neg_elbo.se = sd_of(lw) / std::sqrt(double(K)) * norm;
    // Delta method: se(log mean w) = se(mean w) / mean w.
    rep.is_nll.se = sd_of(w) / (wbar * std::sqrt(double(K))) * norm;
  }
  return rep;
}

NllEstimate estimate_nll_importance(const SequenceModel& model,
                                    const std::vector<Tensor>& xs,
                                    std::size_t K, Rng& rng) {
  return estimate_nll(model, xs, K, rng).is_nll;
}

std::vector<NllReport> batch_nll(const SequenceModel& model,
                                 const SequenceBatch& data, std::size_t K,
                                 std::uint64_t seed, std::size_t threads) {
  if (data.count == 0) throw ContractError("batch nll: empty batch");
  const std::uint64_t base = Rng::substream(seed, "is-nll").next_u64();
  std::vector<NllReport> out(data.count);
  parallel_ranges(data.count, threads, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const std::size_t rows[] = {i};
      std::vector<Tensor> xs = gather_window(data, rows, 0, data.length);
      Rng rng = Rng::for_index(base, i);
      out[i] = estimate_nll(model, xs, K, rng);
    }
  });
  return out;
}

double kalman_log_likelihood(const LinearGaussianConfig& cfg,
                             const std::vector<double>& xs) {
  if (cfg.p0 <= 0 || cfg.r <= 0 || cfg.q < 0)
    throw DomainError("kalman: variances must satisfy p0 > 0, r > 0, q >= 0");
  if (xs.empty()) throw ContractError("kalman: empty sequence");

  double mu = 0.0, P = cfg.p0, ll = 0.0;
  for (double x : xs) {
    const double S = cfg.c * cfg.c * P + cfg.r;
    const double e = x - cfg.c * mu;
    ll -= 0.5 * (std::log(2.0 * std::numbers::pi * S) + e * e / S);
    const double gain = P * cfg.c / S;
    mu += gain * e;
    P *= 1.0 - gain * cfg.c;
    mu *= cfg.a;
    P = cfg.a * cfg.a * P + cfg.q;
  }
  return ll;
}

ProbeReport probe_belief(const std::vector<std::vector<double>>& features,
                         const std::vector<int>& labels,
                         const std::vector<std::uint64_t>& seeds,
                         const std::string& model_id) {
  if (features.size() != labels.size())
    throw ContractError("probe: " + std::to_string(features.size()) +
                        " feature rows vs " + std::to_string(labels.size()) +
                        " labels");
  if (features.size() < 10)
    throw ContractError("probe: need at least 10 sequences");
  if (seeds.empty()) throw ContractError("probe: need at least one seed");
  const std::size_t d = features[0].size();
  if (d == 0) throw ShapeError("probe: empty feature vectors");
  for (const auto& f : features)
    if (f.size() != d) throw ShapeError("probe: ragged feature rows");
  std::size_t ones = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw DomainError("probe: labels must be 0 or 1");
    ones += std::size_t(l);
  }
  if (ones == 0 || ones == labels.size())
    throw DomainError("probe: degenerate labels (single class)");

  const std::size_t n = features.size();
  const std::size_t n_test = std::max<std::size_t>(1, n / 5);
  const std::size_t iters = 3000;
  const double lr = 1.0 / (1.0 + 0.25 * double(d));
  const double l2 = 1e-4;

  ProbeReport rep;
  rep.model_id = model_id;
  double train_sum = 0;
  for (std::uint64_t seed : seeds) {
    Rng rng = Rng::substream(seed, "probe-split");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_int(i + 1)]);

    // Column standardization from the training rows.
    std::vector<double> mean(d, 0.0), scale(d, 0.0);
    const std::size_t n_train = n - n_test;
    for (std::size_t i = n_test; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += features[idx[i]][j];
    for (auto& m : mean) m /= double(n_train);
    for (std::size_t i = n_test; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = features[idx[i]][j] - mean[j];
        scale[j] += c * c;
      }
    for (auto& s : scale)
      s = 1.0 / std::max(std::sqrt(s / double(n_train)), 1e-12);

    std::vector<double> w(d, 0.0), gw(d);
    double b = 0.0;
    auto margin = [&](std::size_t row) {
      double m = b;
      const auto& f = features[row];
      for (std::size_t j = 0; j < d; ++j)
        m += w[j] * (f[j] - mean[j]) * scale[j];
      return m;
    };
    for (std::size_t it = 0; it < iters; ++it) {
      std::fill(gw.begin(), gw.end(), 0.0);
      double gb = 0.0;
      for (std::size_t i = n_test; i < n; ++i) {
        const std::size_t row = idx[i];
        const double g =
            1.0 / (1.0 + std::exp(-margin(row))) - double(labels[row]);
        const auto& f = features[row];
        for (std::size_t j = 0; j < d; ++j)
          gw[j] += g * (f[j] - mean[j]) * scale[j];
        gb += g;
      }
      for (std::size_t j = 0; j < d; ++j)
        w[j] -= lr * (gw[j] / double(n_train) + l2 * w[j]);
      b -= lr * gb / double(n_train);
    }

    auto accuracy = [&](std::size_t lo, std::size_t hi) {
      std::size_t hit = 0;
      for (std::size_t i = lo; i < hi; ++i)
        hit += (margin(idx[i]) > 0.0) == (labels[idx[i]] == 1);
      return double(hit) / double(hi - lo);
    };
    train_sum += accuracy(n_test, n);
    rep.seed_accuracies.push_back(accuracy(0, n_test));
  }
  rep.train_accuracy = train_sum / double(seeds.size());
  rep.test_accuracy = mean_of(rep.seed_accuracies);
  return rep;
}

FrequencyFit fit_rollout_frequency(const std::vector<double>& series) {
  const std::size_t n = series.size();
  if (n < 20)
    throw ContractError("frequency fit needs at least 20 points, got " +
                        std::to_string(n));
  const double lo = *std::min_element(series.begin(), series.end());
  const double hi = *std::max_element(series.begin(), series.end());

  FrequencyFit fit;
  if (hi - lo <= 1e-9 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)))) {
    fit.offset = mean_of(series);
    return fit;
  }
  fit.has_frequency = true;

  // Least squares of a*cos(ft) + b*sin(ft) + c at fixed f; infinity when the
  // normal equations are singular (f so small the columns are collinear).
  auto solve = [&](double f, double coef[3]) {
    double scc = 0, sss = 0, scs = 0, sc = 0, ss = 0;
    double xc = 0, xs = 0, xsum = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ct = std::cos(f * double(t));
      const double st = std::sin(f * double(t));
      scc += ct * ct;
      sss += st * st;
      scs += ct * st;
      sc += ct;
      ss += st;
      xc += series[t] * ct;
      xs += series[t] * st;
      xsum += series[t];
    }
    const double nn = double(n);
    const double det = scc * (sss * nn - ss * ss) - scs * (scs * nn - ss * sc) +
                       sc * (scs * ss - sss * sc);
    if (std::abs(det) <= 1e-9 * nn * nn)
      return std::numeric_limits<double>::infinity();
    coef[0] = ((sss * nn - ss * ss) * xc - (scs * nn - sc * ss) * xs +
               (scs * ss - sss * sc) * xsum) /
              det;
    coef[1] = (-(scs * nn - ss * sc) * xc + (scc * nn - sc * sc) * xs -
               (scc * ss - scs * sc) * xsum) /
              det;
    coef[2] = ((scs * ss - sc * sss) * xc - (scc * ss - sc * scs) * xs +
               (scc * sss - scs * scs) * xsum) /
              det;
    double sse = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double r = series[t] - coef[0] * std::cos(f * double(t)) -
                       coef[1] * std::sin(f * double(t)) - coef[2];
      sse += r * r;
    }
    return sse;
  };
  auto sse_at = [&](double f) {
    double coef[3];
    return solve(f, coef);
  };

  const double f_min = std::numbers::pi / (2.0 * double(n));
  const double f_max = std::numbers::pi;
  const std::size_t grid = 2400;
  double best_f = f_min, best_sse = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= grid; ++i) {
    const double f = f_min + (f_max - f_min) * double(i) / double(grid);
    const double sse = sse_at(f);
    if (sse < best_sse) {
      best_sse = sse;
      best_f = f;
    }
  }

  const double step = (f_max - f_min) / double(grid);
  double a = std::max(f_min, best_f - step);
  double b = std::min(f_max, best_f + step);
  for (int i = 0; i < 80; ++i) {
    const double m1 = a + (b - a) / 3.0;
    const double m2 = b - (b - a) / 3.0;
    if (sse_at(m1) <= sse_at(m2))
      b = m2;
    else
      a = m1;
  }
  best_f = 0.5 * (a + b);

  double coef[3];
  const double sse = solve(best_f, coef);
  fit.frequency = best_f;
  fit.amplitude = std::hypot(coef[0], coef[1]);
  fit.phase = std::atan2(-coef[1], coef[0]);
  fit.offset = coef[2];
  fit.residual = std::sqrt(sse / double(n));
  return fit;
}

DirectionReport direction_consistency(
    const std::vector<std::vector<double>>& frames, std::size_t rows,
    std::size_t cols, int direction) {
  if (direction != 1 && direction != -1)
    throw DomainError("direction must be +1 (rightward) or -1 (leftward)");
  if (frames.size() < 2)
    throw ContractError("direction test needs at least 2 frames");
  const std::size_t px = rows * cols;
  for (const auto& f : frames)
    if (f.size() != px)
      throw ShapeError("direction test: frame size " +
                       std::to_string(f.size()) + ", expected " +
                       std::to_string(px));

  DirectionReport rep;
  std::vector<bool> blank(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const double mass =
        std::accumulate(frames[i].begin(), frames[i].end(), 0.0);
    blank[i] = mass <= 1e-12;
    rep.blank_frames += blank[i];
  }

  std::size_t matched = 0;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    if (blank[i] || blank[i + 1]) continue;
    const auto& f = frames[i];
    const auto& g = frames[i + 1];
    std::size_t best_s = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < cols; ++s) {
      double corr = 0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          corr += f[r * cols + c] * g[r * cols + (c + s) % cols];
      if (corr > best) {
        best = corr;
        best_s = s;
      }
    }
    if (best_s == 0) continue;  // static pair, shift sign undefined
    const int shift =
        best_s <= cols / 2 ? int(best_s) : int(best_s) - int(cols);
    ++rep.pairs_used;
    matched += (shift > 0) == (direction > 0);
  }
  if (rep.pairs_used == 0)
    throw DomainError("direction test: every frame pair is static or blank");
  rep.fraction = double(matched) / double(rep.pairs_used);
  return rep;
}

BeliefState belief_at(const SequenceModel& model, const SequenceBatch& data,
                      std::size_t seq, std::size_t context) {
  if (seq >= data.count)
    throw ContractError("belief_at: sequence " + std::to_string(seq) +
                        " out of range for " + std::to_string(data.count));
  if (context < 1 || context > data.length)
    throw ContractError("belief_at: context " + std::to_string(context) +
                        " outside [1, " + std::to_string(data.length) + "]");
  const std::size_t rows[] = {seq};
  BeliefTrajectory traj =
      model.encode_beliefs(gather_window(data, rows, 0, context));
  BeliefState state;
  for (const auto& layer : traj.beliefs) state.push_back(layer.back());
  return state;
}

std::vector<std::vector<double>> belief_features(const SequenceModel& model,
                                                 const SequenceBatch& data,
                                                 std::size_t t,
                                                 std::size_t threads) {
  if (t >= data.length)
    throw ContractError("belief_features: time " + std::to_string(t) +
                        " out of range for length " +
                        std::to_string(data.length));
  if (data.count == 0) throw ContractError("belief_features: empty batch");

  const std::size_t chunk = 64;
  const std::size_t nchunks = (data.count + chunk - 1) / chunk;
  std::vector<std::vector<double>> out(data.count);
  parallel_ranges(nchunks, threads, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t ci = c0; ci < c1; ++ci) {
      const std::size_t lo = ci * chunk;
      const std::size_t hi = std::min(lo + chunk, data.count);
      std::vector<std::size_t> rows(hi - lo);
      std::iota(rows.begin(), rows.end(), lo);
      BeliefTrajectory traj =
          model.encode_beliefs(gather_window(data, rows, 0, t + 1));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto& fv = out[rows[r]];
        for (const auto& layer : traj.beliefs) {
          const Tensor& h = layer.back();
          const double* p = h.data() + r * h.dim(1);
          fv.insert(fv.end(), p, p + h.dim(1));
        }
      }
    }
  });
  return out;
}

std::vector<double> held_out_losses(const SequenceModel& model,
                                    const SequenceBatch& data,
                                    const PairScheme& scheme,
                                    std::size_t pairs_per_step,
                                    std::uint64_t seed, std::size_t threads) {
  if (data.count == 0) throw ContractError("held-out eval: empty batch");
  const Variant v = model.config().variant;
  const bool needs_pairs =
      v == Variant::JumpyTdvae || v == Variant::HierarchicalTdvae;
  if (needs_pairs && pairs_per_step == 0)
    throw ContractError("held-out eval: pairs_per_step must be positive");

  const std::uint64_t noise_base =
      Rng::substream(seed, "heldout-noise").next_u64();
  const std::uint64_t pair_base =
      Rng::substream(seed, "heldout-pairs").next_u64();

  std::vector<double> out(data.count);
  parallel_ranges(data.count, threads, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const std::size_t rows[] = {i};
      std::vector<Tensor> xs = gather_window(data, rows, 0, data.length);
      Rng noise_rng = Rng::for_index(noise_base, i);
      RngNoise noise(noise_rng);
      std::vector<TimePair> pairs;
      if (needs_pairs) {
        Rng pair_rng = Rng::for_index(pair_base, i);
        pairs = sample_time_pairs(data.length, scheme, pairs_per_step,
                                  pair_rng);
      }
      out[i] = compute_loss(model, xs, pairs, noise).totals.total;
    }
  });
  return out;
}

ProbeComparison run_probe_experiment(const ProbeExperiment& cfg) {
  if (cfg.seeds.empty())
    throw ContractError("probe experiment: need at least one seed");
  if (cfg.probe_time >= 140)
    throw ContractError("probe experiment: probe_time beyond sequence end");

  FreqRelationConfig world;
  SequenceBatch probe_set =
      gen_freq_relation(world, cfg.probe_count, cfg.data_seed);
  std::vector<int> labels(probe_set.count);
  for (std::size_t i = 0; i < probe_set.count; ++i)
    labels[i] = probe_set.metadata.at("labels").at(i).get<int>();

  auto train_and_probe = [&](Variant v, std::uint64_t seed) {
    TrainConfig tc;
    tc.model.variant = v;
    tc.model.obs_dim = 1;
    tc.model.latent = cfg.latent;
    tc.model.belief = cfg.hidden;
    tc.model.dmap_hidden = cfg.dmap_hidden;
    if (v == Variant::JumpyTdvae) {
      tc.model.condition_on_dt = true;
      tc.model.max_delta = 120;
      tc.scheme = PairScheme::mixture();
      tc.pairs_per_step = cfg.pairs_per_step;
    }
    tc.world = "freq-relation";
    tc.dataset_size = cfg.dataset_size;
    tc.batch = cfg.batch;
    tc.steps = cfg.steps;
    tc.seed = seed;

    TrainResult res = train(tc);
    SequenceModel model(tc.model, seed);
    Adam adam(model.params());
    apply_checkpoint(res.checkpoint, model.params(), adam);

    auto feats = belief_features(model, probe_set, cfg.probe_time,
                                 cfg.threads);
    const std::vector<std::uint64_t> splits{
        Rng::substream(seed, "probe-split-a").next_u64(),
        Rng::substream(seed, "probe-split-b").next_u64(),
        Rng::substream(seed, "probe-split-c").next_u64()};
    return probe_belief(feats, labels, splits, variant_name(v));
  };

  ProbeComparison cmp;
  cmp.tdvae.model_id = variant_name(Variant::JumpyTdvae);
  cmp.nextstep.model_id = variant_name(Variant::NextstepPredictor);
  double train_td = 0, train_ns = 0;
  for (std::uint64_t seed : cfg.seeds) {
    ProbeReport td = train_and_probe(Variant::JumpyTdvae, seed);
    ProbeReport ns = train_and_probe(Variant::NextstepPredictor, seed);
    cmp.tdvae.seed_accuracies.push_back(td.test_accuracy);
    cmp.nextstep.seed_accuracies.push_back(ns.test_accuracy);
    train_td += td.train_accuracy;
    train_ns += ns.train_accuracy;
  }
  const double n = double(cfg.seeds.size());
  cmp.tdvae.test_accuracy = mean_of(cmp.tdvae.seed_accuracies);
  cmp.nextstep.test_accuracy = mean_of(cmp.nextstep.seed_accuracies);
  cmp.tdvae.train_accuracy = train_td / n;
  cmp.nextstep.train_accuracy = train_ns / n;
  cmp.gap = cmp.tdvae.test_accuracy - cmp.nextstep.test_accuracy;
  if (cfg.seeds.size() > 1) {
    const double sa = sd_of(cmp.tdvae.seed_accuracies);
    const double sb = sd_of(cmp.nextstep.seed_accuracies);
    cmp.pooled_se = std::sqrt((sa * sa + sb * sb) / n);
  }
  return cmp;
}

void write_pgm(const std::string& path, const std::vector<double>& pixels,
               std::size_t rows, std::size_t cols) {
  if (pixels.size() != rows * cols)
    throw ShapeError("pgm: " + std::to_string(pixels.size()) +
                     " pixels for " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("pgm: cannot open " + path);
  out << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : pixels) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(char(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!out) throw IoError("pgm: write failed for " + path);
}

}  // namespace tdvae
