#include "tdvae/model.hpp"

#include <cmath>

namespace tdvae {

// --- names and config ---------------------------------------------------------

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::FilteringBaseline: return "filtering-baseline";
    case Variant::MeanfieldBaseline: return "meanfield-baseline";
    case Variant::SequentialTdvae: return "sequential-tdvae";
    case Variant::JumpyTdvae: return "jumpy-tdvae";
    case Variant::HierarchicalTdvae: return "hierarchical-tdvae";
    case Variant::NextstepPredictor: return "nextstep-predictor";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::FilteringBaseline, Variant::MeanfieldBaseline,
                    Variant::SequentialTdvae, Variant::JumpyTdvae,
                    Variant::HierarchicalTdvae, Variant::NextstepPredictor})
    if (variant_name(v) == name) return v;
  throw ContractError("unknown model variant: " + name);
}

std::string decoder_name(DecoderKind d) {
  return d == DecoderKind::GaussianScalar ? "gaussian-scalar"
                                          : "bernoulli-pixels";
}

DecoderKind parse_decoder(const std::string& name) {
  if (name == "gaussian-scalar") return DecoderKind::GaussianScalar;
  if (name == "bernoulli-pixels") return DecoderKind::BernoulliPixels;
  throw ContractError("unknown decoder family: " + name);
}

void ModelConfig::validate() const {
  if (obs_dim == 0 || latent == 0 || belief == 0 || dmap_hidden == 0)
    throw ContractError("model config: sizes must be positive");
  if (variant == Variant::HierarchicalTdvae) {
    if (layers != 2)
      throw ContractError("hierarchical-tdvae requires exactly 2 layers");
  } else if (layers != 1) {
    throw ContractError(variant_name(variant) + " requires exactly 1 layer");
  }
  const bool may_condition =
      variant == Variant::JumpyTdvae || variant == Variant::HierarchicalTdvae;
  if (condition_on_dt && !may_condition)
    throw ContractError(variant_name(variant) +
                        " does not take a jump encoding");
  if (condition_on_dt && max_delta == 0)
    throw ContractError("model config: max_delta must be >= 1");
  if (decoder == DecoderKind::GaussianScalar) {
    if (!decoder_hidden.empty())
      throw ContractError("gaussian-scalar decoder takes no hidden sizes");
    if (obs_dim > layers * latent)
      throw ContractError(
          "gaussian-scalar decoder reads the first obs_dim latent components; "
          "obs_dim " +
          std::to_string(obs_dim) + " exceeds latent width " +
          std::to_string(layers * latent));
  }
}

namespace {

std::vector<std::size_t> sizes_from_json(const nlohmann::json& j) {
  std::vector<std::size_t> out;
  for (const auto& v : j) out.push_back(v.get<std::size_t>());
  return out;
}

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

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", variant_name(variant)},
          {"obs_dim", obs_dim},
          {"latent", latent},
          {"belief", belief},
          {"layers", layers},
          {"dmap_hidden", dmap_hidden},
          {"decoder", decoder_name(decoder)},
          {"preproc_hidden", preproc_hidden},
          {"decoder_hidden", decoder_hidden},
          {"condition_on_dt", condition_on_dt},
          {"max_delta", max_delta}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"variant", "obs_dim", "latent", "belief", "layers",
              "dmap_hidden", "decoder", "preproc_hidden", "decoder_hidden",
              "condition_on_dt", "max_delta"},
             "model config");
  ModelConfig c;
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant"));
  if (j.contains("obs_dim")) c.obs_dim = j.at("obs_dim").get<std::size_t>();
  if (j.contains("latent")) c.latent = j.at("latent").get<std::size_t>();
  if (j.contains("belief")) c.belief = j.at("belief").get<std::size_t>();
  if (j.contains("layers")) c.layers = j.at("layers").get<std::size_t>();
  if (j.contains("dmap_hidden"))
    c.dmap_hidden = j.at("dmap_hidden").get<std::size_t>();
  if (j.contains("decoder")) c.decoder = parse_decoder(j.at("decoder"));
  if (j.contains("preproc_hidden"))
    c.preproc_hidden = sizes_from_json(j.at("preproc_hidden"));
  if (j.contains("decoder_hidden"))
    c.decoder_hidden = sizes_from_json(j.at("decoder_hidden"));
  if (j.contains("condition_on_dt"))
    c.condition_on_dt = j.at("condition_on_dt").get<bool>();
  if (j.contains("max_delta"))
    c.max_delta = j.at("max_delta").get<std::size_t>();
  c.validate();
  return c;
}

// --- pair schemes -------------------------------------------------------------

std::size_t PairScheme::support() const {
  switch (kind) {
    case Kind::Uniform: return max_delta;
    case Kind::Mixture: return 120;
    case Kind::Mnist: return 4;
  }
  return 0;
}

PairScheme PairScheme::parse(const std::string& text) {
  if (text == "mixture") return mixture();
  if (text == "mnist") return mnist();
  if (text.starts_with("uniform(") && text.ends_with(")")) {
    const std::string inner = text.substr(8, text.size() - 9);
    std::size_t pos = 0;
    const unsigned long d = std::stoul(inner, &pos);
    if (pos != inner.size() || d == 0)
      throw ContractError("pair scheme: bad uniform bound '" + inner + "'");
    return uniform(d);
  }
  throw ContractError("pair scheme: cannot parse '" + text +
                      "' (want uniform(D), mixture, or mnist)");
}

std::string PairScheme::str() const {
  switch (kind) {
    case Kind::Uniform: return "uniform(" + std::to_string(max_delta) + ")";
    case Kind::Mixture: return "mixture";
    case Kind::Mnist: return "mnist";
  }
  return "?";
}

std::vector<TimePair> sample_time_pairs(std::size_t T, const PairScheme& scheme,
                                        std::size_t count, Rng& rng) {
  if (T <= scheme.support())
    throw ContractError("sample_time_pairs: sequence length " +
                        std::to_string(T) + " must exceed scheme support " +
                        std::to_string(scheme.support()));
  std::vector<TimePair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t delta = 0;
    switch (scheme.kind) {
      case PairScheme::Kind::Uniform:
        delta = 1 + rng.uniform_int(scheme.max_delta);
        break;
      case PairScheme::Kind::Mixture:
        delta = rng.uniform() < 0.8 ? 1 + rng.uniform_int(10)
                                    : 1 + rng.uniform_int(120);
        break;
      case PairScheme::Kind::Mnist:
        delta = 1 + rng.uniform_int(4);
        break;
    }
    const std::size_t t1 = rng.uniform_int(T - delta);
    pairs.push_back({t1, t1 + delta});
  }
  return pairs;
}

// --- model construction ---------------------------------------------------------

SequenceModel::SequenceModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng = Rng::substream(seed, "init");
  const std::size_t obs = config_.obs_dim;
  const std::size_t L = config_.latent;
  const std::size_t H = config_.belief;
  const std::size_t dh = config_.dmap_hidden;
  const std::size_t dt = config_.condition_on_dt ? config_.max_delta : 0;

  std::size_t feat = obs;
  if (!config_.preproc_hidden.empty()) {
    std::vector<std::size_t> dims{obs};
    for (auto h : config_.preproc_hidden) dims.push_back(h);
    // All listed widths are hidden layers; the last one doubles as the
    // feature width handed to the LSTMs, kept under ReLU.
    preproc = Mlp::create(store_, "preproc", dims, true, rng);
    feat = config_.preproc_hidden.back();
  }

  const std::size_t lstm_in =
      config_.layers == 2 ? feat + H : feat;  // 2-layer cells see a belief too
  for (std::size_t l = 0; l < config_.layers; ++l)
    lstm.push_back(LstmCell::create(store_, "belief" + std::to_string(l),
                                    lstm_in, H, rng));

  const std::size_t zfull = config_.layers * L;
  switch (config_.variant) {
    case Variant::FilteringBaseline:
      encoder = DMap::create(store_, "enc", L + H, dh, L, rng);
      transition = DMap::create(store_, "pt", L, dh, L, rng);
      break;
    case Variant::MeanfieldBaseline:
      encoder = DMap::create(store_, "enc", H, dh, L, rng);
      transition = DMap::create(store_, "pt", L, dh, L, rng);
      break;
    case Variant::SequentialTdvae:
      pb.push_back(DMap::create(store_, "pb0", H, dh, L, rng));
      transition = DMap::create(store_, "pt", L, dh, L, rng);
      smoothing = DMap::create(store_, "qs", 2 * H + L, dh, L, rng);
      break;
    case Variant::JumpyTdvae:
      pb.push_back(DMap::create(store_, "pb0", H, dh, L, rng));
      transition = DMap::create(store_, "pt", L + dt, dh, L, rng);
      smoothing = DMap::create(store_, "qs", 2 * H + L + dt, dh, L, rng);
      break;
    case Variant::HierarchicalTdvae:
      pb.push_back(DMap::create(store_, "pb0", H + L, dh, L, rng));
      pb.push_back(DMap::create(store_, "pb1", H, dh, L, rng));
      pt.push_back(DMap::create(store_, "pt0", zfull + L + dt, dh, L, rng));
      pt.push_back(DMap::create(store_, "pt1", zfull + dt, dh, L, rng));
      qs.push_back(
          DMap::create(store_, "qs0", H + zfull + L + dt, dh, L, rng));
      qs.push_back(DMap::create(store_, "qs1", H + zfull + dt, dh, L, rng));
      break;
    case Variant::NextstepPredictor:
      predictor = DMap::create(store_, "pred", H, dh, obs, rng);
      break;
  }

  if (config_.variant != Variant::NextstepPredictor) {
    if (config_.decoder == DecoderKind::GaussianScalar) {
      decoder_log_std = &store_.add("dec/log_std",
                                    Tensor::scalar(std::log(0.1)));
    } else {
      std::vector<std::size_t> dims{zfull};
      for (auto h : config_.decoder_hidden) dims.push_back(h);
      dims.push_back(obs);
      decoder_mlp = Mlp::create(store_, "dec", dims, false, rng);
    }
  }
}

Tensor SequenceModel::features(const Tensor& x) const {
  return preproc ? (*preproc)(x) : x;
}

BeliefTrajectory SequenceModel::encode_beliefs(
    const std::vector<Tensor>& xs) const {
  if (xs.empty()) throw ContractError("encode_beliefs: empty sequence");
  const std::size_t B = xs[0].dim(0);
  for (const Tensor& x : xs)
    if (x.rank() != 2 || x.dim(0) != B || x.dim(1) != config_.obs_dim)
      throw ShapeError("encode_beliefs: observation shape " +
                       shape_str(x.shape()) + ", expected [" +
                       std::to_string(B) + " x " +
                       std::to_string(config_.obs_dim) + "]");

  BeliefTrajectory traj;
  traj.beliefs.resize(config_.layers);
  traj.cells.resize(config_.layers);
  if (config_.layers == 1) {
    auto st = lstm[0].initial(B);
    for (const Tensor& x : xs) {
      st = lstm[0].step(features(x), st);
      traj.beliefs[0].push_back(st.h);
      traj.cells[0].push_back(st.c);
    }
    return traj;
  }

  // Two-layer stack: the bottom cell sees the top belief of the previous
  // step (which is both the wrapped-around b0 and the top-down input; they
  // coincide for two layers), the top cell sees the bottom belief of the
  // current step.
  auto st1 = lstm[0].initial(B);
  auto st2 = lstm[1].initial(B);
  for (const Tensor& x : xs) {
    Tensor e = features(x);
    st1 = lstm[0].step(concat({e, st2.h}, 1), st1);
    st2 = lstm[1].step(concat({e, st1.h}, 1), st2);
    traj.beliefs[0].push_back(st1.h);
    traj.cells[0].push_back(st1.c);
    traj.beliefs[1].push_back(st2.h);
    traj.cells[1].push_back(st2.c);
  }
  return traj;
}

GaussianParams SequenceModel::belief_head(const Tensor& b) const {
  if (pb.empty())
    throw ContractError("belief_head: variant " + variant_name(config_.variant) +
                        " has no belief head");
  if (config_.layers != 1)
    throw ContractError("belief_head: hierarchical beliefs sample top-down");
  return pb[0](b);
}

Tensor SequenceModel::decoder_log_prob(const Tensor& z, const Tensor& x) const {
  if (config_.decoder == DecoderKind::GaussianScalar) {
    Tensor mean = slice(z, 1, 0, config_.obs_dim);
    Tensor ls = broadcast_scalar(
        clamp(decoder_log_std->use(), kLogStdMin, kLogStdMax),
        {z.dim(0), config_.obs_dim});
    return gaussian_log_prob({mean, ls}, x);
  }
  return bernoulli_log_prob({(*decoder_mlp)(z)}, x);
}

Tensor SequenceModel::decode_frame(const Tensor& z) const {
  if (config_.decoder == DecoderKind::GaussianScalar)
    return slice(z, 1, 0, config_.obs_dim);
  return sigmoid((*decoder_mlp)(z));
}

Tensor SequenceModel::dt_vector(std::size_t delta, std::size_t batch) const {
  if (!config_.condition_on_dt)
    throw ContractError("dt_vector: model not conditioned on jump size");
  if (delta < 1 || delta > config_.max_delta)
    throw DomainError("dt_vector: jump " + std::to_string(delta) +
                      " outside supported range [1, " +
                      std::to_string(config_.max_delta) + "]");
  Tensor t(Shape{batch, config_.max_delta});
  for (std::size_t i = 0; i < batch; ++i) t.at(i, delta - 1) = 1.0;
  return t;
}

// --- loss helpers ---------------------------------------------------------------

namespace {

Tensor std_normal_log_prob(const Tensor& z) {
  return gaussian_log_prob({Tensor(z.shape()), Tensor(z.shape())}, z);
}

void check_pairs(const std::vector<TimePair>& pairs, std::size_t T,
                 std::size_t max_delta, bool conditioned) {
  if (pairs.empty()) throw ContractError("loss: empty pair list");
  for (const TimePair& p : pairs) {
    if (p.t2 >= T || p.t1 >= p.t2)
      throw ContractError("loss: bad time pair (" + std::to_string(p.t1) +
                          ", " + std::to_string(p.t2) + ") for length " +
                          std::to_string(T));
    if (conditioned && p.delta() > max_delta)
      throw DomainError("loss: jump " + std::to_string(p.delta()) +
                        " outside supported encoding");
  }
}

struct Accum {
  Tensor px, pb1, pt, pb2, qs;  // scalar sums over pairs and batch
  bool init = false;

  void add(const PairTerms& t) {
    if (!init) {
      px = reduce_sum(t.log_px);
      pb1 = reduce_sum(t.log_pb1);
      pt = reduce_sum(t.log_pt);
      pb2 = reduce_sum(t.log_pb2);
      qs = reduce_sum(t.log_qs);
      init = true;
      return;
    }
    px = px + reduce_sum(t.log_px);
    pb1 = pb1 + reduce_sum(t.log_pb1);
    pt = pt + reduce_sum(t.log_pt);
    pb2 = pb2 + reduce_sum(t.log_pb2);
    qs = qs + reduce_sum(t.log_qs);
  }
};

LossBreakdown breakdown_from(const PairTerms& t, double inv) {
  LossBreakdown b;
  b.recon = -reduce_sum(t.log_px).value() * inv;
  b.belief_t1 = reduce_sum(t.log_pb1).value() * inv;
  b.transition = reduce_sum(t.log_pt).value() * inv;
  b.belief_t2 = reduce_sum(t.log_pb2).value() * inv;
  b.smoothing = reduce_sum(t.log_qs).value() * inv;
  b.total = b.recon - b.belief_t1 - b.transition + b.belief_t2 + b.smoothing;
  return b;
}

}  // namespace

PairTerms pair_terms_single(const SequenceModel& model,
                            const BeliefTrajectory& traj,
                            const std::vector<Tensor>& xs, const TimePair& p,
                            NoiseSource& noise) {
  const Tensor& b1 = traj.beliefs[0][p.t1];
  const Tensor& b2 = traj.beliefs[0][p.t2];
  const std::size_t B = b1.dim(0);
  const bool dt = model.config().condition_on_dt;

  GaussianParams pb2 = model.pb[0](b2);
  Tensor z2 = gaussian_sample(pb2, noise);

  Tensor qs_in = dt ? concat({b1, b2, z2, model.dt_vector(p.delta(), B)}, 1)
                    : concat({b1, b2, z2}, 1);
  GaussianParams qsd = (*model.smoothing)(qs_in);
  Tensor z1 = gaussian_sample(qsd, noise);

  Tensor pt_in = dt ? concat({z1, model.dt_vector(p.delta(), B)}, 1) : z1;
  GaussianParams ptd = (*model.transition)(pt_in);

  PairTerms t;
  t.log_px = model.decoder_log_prob(z2, xs[p.t2]);
  t.log_pb1 = gaussian_log_prob(model.pb[0](b1), z1);
  t.log_pt = gaussian_log_prob(ptd, z2);
  t.log_pb2 = gaussian_log_prob(pb2, z2);
  t.log_qs = gaussian_log_prob(qsd, z1);
  return t;
}

// --- losses ---------------------------------------------------------------------

LossResult elbo_standard(const SequenceModel& model,
                         const std::vector<Tensor>& xs, NoiseSource& noise) {
  const Variant v = model.config().variant;
  if (v != Variant::FilteringBaseline && v != Variant::MeanfieldBaseline)
    throw ContractError("elbo_standard: wrong variant " + variant_name(v));
  BeliefTrajectory traj = model.encode_beliefs(xs);
  const std::size_t T = xs.size();
  const std::size_t B = xs[0].dim(0);
  const std::size_t L = model.config().latent;
  const double inv_step = 1.0 / (double(B) * double(model.config().obs_dim));
  const double inv = inv_step / double(T);

  LossResult res;
  Tensor sum_px, sum_pt, sum_q;
  Tensor z_prev;
  for (std::size_t t = 0; t < T; ++t) {
    Tensor enc_in = v == Variant::FilteringBaseline
                        ? concat({t == 0 ? Tensor(Shape{B, L}) : z_prev,
                                  traj.beliefs[0][t]},
                                 1)
                        : traj.beliefs[0][t];
    GaussianParams q = (*model.encoder)(enc_in);
    Tensor z = gaussian_sample(q, noise);
    Tensor log_q = gaussian_log_prob(q, z);
    Tensor log_pt = t == 0
                        ? std_normal_log_prob(z)
                        : gaussian_log_prob((*model.transition)(z_prev), z);
    Tensor log_px = model.decoder_log_prob(z, xs[t]);

    LossBreakdown step;
    step.recon = -reduce_sum(log_px).value() * inv_step;
    step.transition = reduce_sum(log_pt).value() * inv_step;
    step.belief_t2 = reduce_sum(log_q).value() * inv_step;
    step.total = step.recon - step.transition + step.belief_t2;
    res.per_step.push_back(step);

    if (t == 0) {
      sum_px = reduce_sum(log_px);
      sum_pt = reduce_sum(log_pt);
      sum_q = reduce_sum(log_q);
    } else {
      sum_px = sum_px + reduce_sum(log_px);
      sum_pt = sum_pt + reduce_sum(log_pt);
      sum_q = sum_q + reduce_sum(log_q);
    }
    z_prev = z;
  }

  res.loss = scale(sum_q - (sum_px + sum_pt), inv);
  res.totals.recon = -sum_px.value() * inv;
  res.totals.transition = sum_pt.value() * inv;
  res.totals.belief_t2 = sum_q.value() * inv;
  res.totals.total = res.totals.recon - res.totals.belief_t1 -
                     res.totals.transition + res.totals.belief_t2 +
                     res.totals.smoothing;
  return res;
}

LossResult loss_sequential_tdvae(const SequenceModel& model,
                                 const std::vector<Tensor>& xs,
                                 NoiseSource& noise) {
  if (model.config().variant != Variant::SequentialTdvae)
    throw ContractError("loss_sequential_tdvae: wrong variant");
  BeliefTrajectory traj = model.encode_beliefs(xs);
  const std::size_t T = xs.size();
  const std::size_t B = xs[0].dim(0);
  const double inv_step = 1.0 / (double(B) * double(model.config().obs_dim));
  const double inv = inv_step / double(T);

  LossResult res;
  res.per_step.resize(T);
  Accum acc;
  for (std::size_t t = 1; t < T; ++t) {
    PairTerms terms = pair_terms_single(model, traj, xs, {t - 1, t}, noise);
    res.per_step[t] = breakdown_from(terms, inv_step);
    acc.add(terms);
  }

  // t=1 boundary: z ~ p_B(.|b_1) scored against a standard-normal prior in
  // place of the transition; no smoothing step exists.
  GaussianParams pb1 = model.pb[0](traj.beliefs[0][0]);
  Tensor zb = gaussian_sample(pb1, noise);
  Tensor b_px = model.decoder_log_prob(zb, xs[0]);
  Tensor b_prior = std_normal_log_prob(zb);
  Tensor b_pb = gaussian_log_prob(pb1, zb);
  {
    LossBreakdown step;
    step.recon = -reduce_sum(b_px).value() * inv_step;
    step.transition = reduce_sum(b_prior).value() * inv_step;
    step.belief_t2 = reduce_sum(b_pb).value() * inv_step;
    step.total = step.recon - step.transition + step.belief_t2;
    res.per_step[0] = step;
  }

  Tensor sum_px = acc.px + reduce_sum(b_px);
  Tensor sum_pt = acc.pt + reduce_sum(b_prior);
  Tensor sum_pb2 = acc.pb2 + reduce_sum(b_pb);
  res.loss = scale((sum_pb2 + acc.qs) - (sum_px + acc.pb1 + sum_pt), inv);
  res.totals.recon = -sum_px.value() * inv;
  res.totals.belief_t1 = acc.pb1.value() * inv;
  res.totals.transition = sum_pt.value() * inv;
  res.totals.belief_t2 = sum_pb2.value() * inv;
  res.totals.smoothing = acc.qs.value() * inv;
  res.totals.total = res.totals.recon - res.totals.belief_t1 -
                     res.totals.transition + res.totals.belief_t2 +
                     res.totals.smoothing;
  return res;
}

LossResult loss_jumpy_tdvae(const SequenceModel& model,
                            const std::vector<Tensor>& xs,
                            const std::vector<TimePair>& pairs,
                            NoiseSource& noise) {
  if (model.config().variant != Variant::JumpyTdvae)
    throw ContractError("loss_jumpy_tdvae: wrong variant");
  check_pairs(pairs, xs.size(), model.config().max_delta,
              model.config().condition_on_dt);
  BeliefTrajectory traj = model.encode_beliefs(xs);
  const std::size_t B = xs[0].dim(0);
  const double inv =
      1.0 / (double(pairs.size()) * double(B) * double(model.config().obs_dim));

  LossResult res;
  Accum acc;
  for (const TimePair& p : pairs)
    acc.add(pair_terms_single(model, traj, xs, p, noise));

  res.loss = scale((acc.pb2 + acc.qs) - (acc.px + acc.pb1 + acc.pt), inv);
  res.totals.recon = -acc.px.value() * inv;
  res.totals.belief_t1 = acc.pb1.value() * inv;
  res.totals.transition = acc.pt.value() * inv;
  res.totals.belief_t2 = acc.pb2.value() * inv;
  res.totals.smoothing = acc.qs.value() * inv;
  res.totals.total = res.totals.recon - res.totals.belief_t1 -
                     res.totals.transition + res.totals.belief_t2 +
                     res.totals.smoothing;
  return res;
}

LossResult loss_hierarchical_tdvae(const SequenceModel& model,
                                   const std::vector<Tensor>& xs,
                                   const std::vector<TimePair>& pairs,
                                   NoiseSource& noise,
                                   HierarchicalTerms* detail) {
  if (model.config().variant != Variant::HierarchicalTdvae)
    throw ContractError("loss_hierarchical_tdvae: wrong variant");
  check_pairs(pairs, xs.size(), model.config().max_delta,
              model.config().condition_on_dt);
  BeliefTrajectory traj = model.encode_beliefs(xs);
  const std::size_t B = xs[0].dim(0);
  const bool dt = model.config().condition_on_dt;
  const double inv =
      1.0 / (double(pairs.size()) * double(B) * double(model.config().obs_dim));

  Tensor kl1_sum, kl2_sum, r1_sum, r2_sum, px_sum;
  bool init = false;
  for (const TimePair& p : pairs) {
    const Tensor& b1_lo = traj.beliefs[0][p.t1];
    const Tensor& b1_hi = traj.beliefs[1][p.t1];
    const Tensor& b2_lo = traj.beliefs[0][p.t2];
    const Tensor& b2_hi = traj.beliefs[1][p.t2];
    Tensor dtv = dt ? model.dt_vector(p.delta(), B) : Tensor();

    // Belief sampling at t2, top layer first.
    GaussianParams pb_hi = model.pb[1](b2_hi);
    Tensor z2_hi = gaussian_sample(pb_hi, noise);
    GaussianParams pb_lo = model.pb[0](concat({b2_lo, z2_hi}, 1));
    Tensor z2_lo = gaussian_sample(pb_lo, noise);
    Tensor z2 = concat({z2_lo, z2_hi}, 1);

    // Smoothing at t1, top layer first.
    Tensor qs_hi_in = dt ? concat({b1_hi, z2, dtv}, 1) : concat({b1_hi, z2}, 1);
    GaussianParams qs_hi = model.qs[1](qs_hi_in);
    Tensor z1_hi = gaussian_sample(qs_hi, noise);
    Tensor qs_lo_in = dt ? concat({b1_lo, z2, z1_hi, dtv}, 1)
                         : concat({b1_lo, z2, z1_hi}, 1);
    GaussianParams qs_lo = model.qs[0](qs_lo_in);
    Tensor z1_lo = gaussian_sample(qs_lo, noise);
    Tensor z1 = concat({z1_lo, z1_hi}, 1);

    // Belief heads at t1 act as priors for the analytic KLs; the lower head
    // shares weights with its t2 counterpart by construction.
    GaussianParams prior_hi = model.pb[1](b1_hi);
    GaussianParams prior_lo = model.pb[0](concat({b1_lo, z1_hi}, 1));

    Tensor pt_hi_in = dt ? concat({z1, dtv}, 1) : z1;
    GaussianParams pt_hi = model.pt[1](pt_hi_in);
    Tensor pt_lo_in =
        dt ? concat({z1, z2_hi, dtv}, 1) : concat({z1, z2_hi}, 1);
    GaussianParams pt_lo = model.pt[0](pt_lo_in);

    Tensor kl_hi = gaussian_kl(qs_hi, prior_hi);
    Tensor kl_lo = gaussian_kl(qs_lo, prior_lo);
    Tensor ratio_hi =
        gaussian_log_prob(pb_hi, z2_hi) - gaussian_log_prob(pt_hi, z2_hi);
    Tensor ratio_lo =
        gaussian_log_prob(pb_lo, z2_lo) - gaussian_log_prob(pt_lo, z2_lo);
    Tensor log_px = model.decoder_log_prob(z2, xs[p.t2]);

    if (!init) {
      kl2_sum = reduce_sum(kl_hi);
      kl1_sum = reduce_sum(kl_lo);
      r2_sum = reduce_sum(ratio_hi);
      r1_sum = reduce_sum(ratio_lo);
      px_sum = reduce_sum(log_px);
      init = true;
    } else {
      kl2_sum = kl2_sum + reduce_sum(kl_hi);
      kl1_sum = kl1_sum + reduce_sum(kl_lo);
      r2_sum = r2_sum + reduce_sum(ratio_hi);
      r1_sum = r1_sum + reduce_sum(ratio_lo);
      px_sum = px_sum + reduce_sum(log_px);
    }
  }

  LossResult res;
  res.loss = scale((kl1_sum + kl2_sum) + (r1_sum + r2_sum) - px_sum, inv);
  // Grouped mapping: smoothing column holds the analytic t1 KLs, belief_t2
  // the t2 log-ratios, so the five-column recomposition identity carries
  // over to the hierarchical rows unchanged.
  res.totals.recon = -px_sum.value() * inv;
  res.totals.smoothing = (kl1_sum.value() + kl2_sum.value()) * inv;
  res.totals.belief_t2 = (r1_sum.value() + r2_sum.value()) * inv;
  res.totals.total =
      res.totals.recon + res.totals.smoothing + res.totals.belief_t2;

  // Per-layer rows: index 0 = bottom layer (carries the reconstruction).
  for (std::size_t l = 0; l < 2; ++l) {
    LossBreakdown lb;
    lb.smoothing = (l == 0 ? kl1_sum : kl2_sum).value() * inv;
    lb.belief_t2 = (l == 0 ? r1_sum : r2_sum).value() * inv;
    lb.recon = l == 0 ? res.totals.recon : 0.0;
    lb.total = lb.recon + lb.smoothing + lb.belief_t2;
    res.per_step.push_back(lb);
  }
  if (detail) {
    detail->kl_t1 = {kl1_sum.value() * inv, kl2_sum.value() * inv};
    detail->logratio_t2 = {r1_sum.value() * inv, r2_sum.value() * inv};
    detail->recon = res.totals.recon;
  }
  return res;
}

LossResult loss_nextstep(const SequenceModel& model,
                         const std::vector<Tensor>& xs) {
  if (model.config().variant != Variant::NextstepPredictor)
    throw ContractError("loss_nextstep: wrong variant");
  if (xs.size() < 2)
    throw ContractError("loss_nextstep: need at least 2 timesteps");
  BeliefTrajectory traj = model.encode_beliefs(xs);
  const std::size_t T = xs.size();
  const std::size_t B = xs[0].dim(0);
  const double inv_step = 1.0 / (double(B) * double(model.config().obs_dim));
  const double inv = inv_step / double(T - 1);

  LossResult res;
  Tensor sum;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    GaussianParams pred = (*model.predictor)(traj.beliefs[0][t]);
    Tensor log_px = gaussian_log_prob(pred, xs[t + 1]);
    LossBreakdown step;
    step.recon = -reduce_sum(log_px).value() * inv_step;
    step.total = step.recon;
    res.per_step.push_back(step);
    sum = t == 0 ? reduce_sum(log_px) : sum + reduce_sum(log_px);
  }
  res.loss = scale(neg(sum), inv);
  res.totals.recon = -sum.value() * inv;
  res.totals.total = res.totals.recon;
  return res;
}

LossResult compute_loss(const SequenceModel& model,
                        const std::vector<Tensor>& xs,
                        const std::vector<TimePair>& pairs,
                        NoiseSource& noise) {
  switch (model.config().variant) {
    case Variant::FilteringBaseline:
    case Variant::MeanfieldBaseline:
      return elbo_standard(model, xs, noise);
    case Variant::SequentialTdvae:
      return loss_sequential_tdvae(model, xs, noise);
    case Variant::JumpyTdvae:
      return loss_jumpy_tdvae(model, xs, pairs, noise);
    case Variant::HierarchicalTdvae:
      return loss_hierarchical_tdvae(model, xs, pairs, noise);
    case Variant::NextstepPredictor:
      return loss_nextstep(model, xs);
  }
  throw ContractError("compute_loss: unreachable");
}

// --- rollout --------------------------------------------------------------------

Rollout rollout_jumpy(const SequenceModel& model,
                      const BeliefState& belief_at_t,
                      const std::vector<std::size_t>& schedule,
                      NoiseSource& noise) {
  const ModelConfig& cfg = model.config();
  if (model.pb.empty())
    throw ContractError(
        "rollout needs a belief-to-latent head; the filtering, meanfield and "
        "next-step baselines cannot roll out");
  if (belief_at_t.size() != cfg.layers)
    throw ContractError("rollout: belief state has " +
                        std::to_string(belief_at_t.size()) + " layers, model " +
                        std::to_string(cfg.layers));
  const std::size_t B = belief_at_t[0].dim(0);

  auto check_delta = [&](std::size_t d) {
    if (cfg.condition_on_dt) {
      if (d < 1 || d > cfg.max_delta)
        throw DomainError("rollout: jump " + std::to_string(d) +
                          " outside supported encoding");
    } else if (d != 1) {
      throw DomainError(
          "rollout: model has no jump encoding; schedule entries must be 1 "
          "(one transition application each)");
    }
  };
  for (std::size_t d : schedule) check_delta(d);

  Rollout out;
  Tensor z;
  if (cfg.layers == 1) {
    z = gaussian_sample(model.pb[0](belief_at_t[0]), noise);
  } else {
    Tensor z_hi = gaussian_sample(model.pb[1](belief_at_t[1]), noise);
    Tensor z_lo =
        gaussian_sample(model.pb[0](concat({belief_at_t[0], z_hi}, 1)), noise);
    z = concat({z_lo, z_hi}, 1);
  }
  out.latents.push_back(z);
  out.frames.push_back(model.decode_frame(z));

  for (std::size_t d : schedule) {
    Tensor dtv = cfg.condition_on_dt ? model.dt_vector(d, B) : Tensor();
    if (cfg.layers == 1) {
      Tensor in = cfg.condition_on_dt ? concat({z, dtv}, 1) : z;
      z = gaussian_sample((*model.transition)(in), noise);
    } else {
      Tensor hi_in = cfg.condition_on_dt ? concat({z, dtv}, 1) : z;
      Tensor z_hi = gaussian_sample(model.pt[1](hi_in), noise);
      Tensor lo_in = cfg.condition_on_dt ? concat({z, z_hi, dtv}, 1)
                                         : concat({z, z_hi}, 1);
      Tensor z_lo = gaussian_sample(model.pt[0](lo_in), noise);
      z = concat({z_lo, z_hi}, 1);
    }
    out.latents.push_back(z);
    out.frames.push_back(model.decode_frame(z));
  }
  return out;
}

std::vector<std::size_t> parse_schedule(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  if (text.empty()) throw ContractError("schedule: empty");
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(pos, comma - pos);
    const std::size_t x = item.find('x');
    try {
      std::size_t used = 0;
      if (x == std::string::npos) {
        const unsigned long n = std::stoul(item, &used);
        if (used != item.size() || n == 0) throw std::invalid_argument(item);
        out.push_back(n);
      } else {
        const std::string left = item.substr(0, x), right = item.substr(x + 1);
        const unsigned long n = std::stoul(left, &used);
        if (used != left.size() || n == 0) throw std::invalid_argument(item);
        const unsigned long k = std::stoul(right, &used);
        if (used != right.size() || k == 0) throw std::invalid_argument(item);
        for (unsigned long i = 0; i < k; ++i) out.push_back(n);
      }
    } catch (const std::logic_error&) {
      throw ContractError("schedule: cannot parse item '" + item +
                          "' (want N or NxK)");
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace tdvae
