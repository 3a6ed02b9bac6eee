#include "tdvae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tdvae/distributions.hpp"
#include "tdvae/layers.hpp"
#include "tdvae/ops.hpp"

namespace tdvae::gradcheck {

Report check_gradients(ParameterStore& store,
                       const std::function<Tensor()>& loss_fn, Tolerance tol) {
  store.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = loss_fn();
    backward(loss);
  }

  Report rep;
  for (auto& p : store) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value.at(i);
      p->value.at(i) = orig + tol.step;
      const double up = loss_fn().value();
      p->value.at(i) = orig - tol.step;
      const double dn = loss_fn().value();
      p->value.at(i) = orig;

      const double numeric = (up - dn) / (2.0 * tol.step);
      const double analytic = p->grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;

      ++rep.entries_checked;
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      if (abs_err > tol.abs) {
        if (rel_err > rep.max_rel_err) {
          rep.max_rel_err = rel_err;
          rep.worst = p->name + "[" + std::to_string(i) + "]: analytic " +
                      std::to_string(analytic) + " vs numeric " +
                      std::to_string(numeric);
        }
        if (rel_err > tol.rel) rep.pass = false;
      }
    }
  }
  return rep;
}

Report check_gradients_sampled(ParameterStore& store,
                               const std::function<Tensor()>& loss_fn,
                               std::size_t count, std::uint64_t seed,
                               Tolerance tol) {
  store.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = loss_fn();
    backward(loss);
  }

  std::vector<std::pair<Parameter*, std::size_t>> entries;
  for (auto& p : store)
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      entries.push_back({p.get(), i});
  Rng rng = Rng::substream(seed, "gradcheck-sample");
  count = std::min(count, entries.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_int(entries.size() - i);
    std::swap(entries[i], entries[j]);
  }
  entries.resize(count);

  Report rep;
  for (auto& [p, i] : entries) {
    const double orig = p->value.at(i);
    p->value.at(i) = orig + tol.step;
    const double up = loss_fn().value();
    p->value.at(i) = orig - tol.step;
    const double dn = loss_fn().value();
    p->value.at(i) = orig;

    const double numeric = (up - dn) / (2.0 * tol.step);
    const double analytic = p->grad[i];
    const double abs_err = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;

    ++rep.entries_checked;
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    if (abs_err > tol.abs) {
      if (rel_err > rep.max_rel_err) {
        rep.max_rel_err = rel_err;
        rep.worst = p->name + "[" + std::to_string(i) + "]: analytic " +
                    std::to_string(analytic) + " vs numeric " +
                    std::to_string(numeric);
      }
      if (rel_err > tol.rel) rep.pass = false;
    }
  }
  return rep;
}

namespace {

Tensor rand_tensor(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor t(shape);
  rng.fill_uniform({t.data(), t.numel()}, lo, hi);
  return t;
}

// Values in +-[margin, span] with random sign; keeps kinked ops (relu,
// clamp at fixed bounds) away from their non-differentiable points.
Tensor rand_away_from(const Shape& shape, double margin, double span,
                      Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double mag = margin + (span - margin) * rng.uniform();
    t.at(i) = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

Shape rand_shape(Rng& rng) {
  switch (rng.uniform_int(3)) {
    case 0: return {};
    case 1: return {1 + rng.uniform_int(6)};
    default: return {1 + rng.uniform_int(5), 1 + rng.uniform_int(5)};
  }
}

// Weighted full reduction; the random constant weights make the output
// gradient non-uniform so transposed index bugs cannot cancel out.
Tensor weighted_sum(const Tensor& out, Rng& rng) {
  Tensor c = rand_tensor(out.shape(), 0.5, 1.5, rng);
  return reduce_sum(out * c);
}

struct Case {
  std::string name;
  // Fills the store and returns the loss builder.
  std::function<std::function<Tensor()>(ParameterStore&, Rng&)> make;
};

std::vector<Case> suite_cases() {
  std::vector<Case> cases;

  cases.push_back({"matmul", [](ParameterStore& s, Rng& rng) {
    const std::size_t m = 1 + rng.uniform_int(4), k = 1 + rng.uniform_int(4),
                      n = 1 + rng.uniform_int(4);
    Parameter& a = s.add("a", rand_tensor({m, k}, -1.5, 1.5, rng));
    Parameter& b = s.add("b", rand_tensor({k, n}, -1.5, 1.5, rng));
    Tensor c = rand_tensor({m, n}, 0.5, 1.5, rng);
    return std::function<Tensor()>(
        [&a, &b, c] { return reduce_sum(matmul(a.use(), b.use()) * c); });
  }});

  struct U {
    const char* name;
    UnaryOp op;
    double lo, hi;
    double margin;  // nonzero: sample away from 0 by this much
  };
  for (U u : {U{"tanh", UnaryOp::Tanh, -2, 2, 0},
              U{"sigmoid", UnaryOp::Sigmoid, -3, 3, 0},
              U{"exp", UnaryOp::Exp, -2, 1.5, 0},
              U{"log", UnaryOp::Log, 0.4, 2.5, 0},
              U{"neg", UnaryOp::Neg, -2, 2, 0},
              U{"square", UnaryOp::Square, -2, 2, 0},
              U{"relu", UnaryOp::Relu, 0, 1.5, 0.1},
              U{"softplus", UnaryOp::Softplus, -3, 3, 0}}) {
    cases.push_back({u.name, [u](ParameterStore& s, Rng& rng) {
      Shape shape = rand_shape(rng);
      Tensor init = u.margin > 0 ? rand_away_from(shape, u.margin, u.hi, rng)
                                 : rand_tensor(shape, u.lo, u.hi, rng);
      Parameter& x = s.add("x", std::move(init));
      Tensor c = rand_tensor(shape, 0.5, 1.5, rng);
      UnaryOp op = u.op;
      return std::function<Tensor()>(
          [&x, c, op] { return reduce_sum(unary(op, x.use()) * c); });
    }});
  }

  struct B {
    const char* name;
    BinaryOp op;
    bool bcast;
  };
  for (B b : {B{"add", BinaryOp::Add, false}, B{"sub", BinaryOp::Sub, false},
              B{"mul", BinaryOp::Mul, false}, B{"div", BinaryOp::Div, false},
              B{"add_bcast", BinaryOp::Add, true},
              B{"sub_bcast", BinaryOp::Sub, true},
              B{"mul_bcast", BinaryOp::Mul, true},
              B{"div_bcast", BinaryOp::Div, true}}) {
    cases.push_back({b.name, [b](ParameterStore& s, Rng& rng) {
      Shape sa, sb, so;
      if (b.bcast) {
        const std::size_t m = 1 + rng.uniform_int(5),
                          n = 1 + rng.uniform_int(5);
        const bool vec_left = rng.uniform() < 0.5;
        sa = vec_left ? Shape{n} : Shape{m, n};
        sb = vec_left ? Shape{m, n} : Shape{n};
        so = {m, n};
      } else {
        sa = sb = so = rand_shape(rng);
      }
      Parameter& x = s.add("x", rand_tensor(sa, -1.5, 1.5, rng));
      Tensor yinit = b.op == BinaryOp::Div
                         ? rand_away_from(sb, 0.4, 1.5, rng)
                         : rand_tensor(sb, -1.5, 1.5, rng);
      Parameter& y = s.add("y", std::move(yinit));
      Tensor c = rand_tensor(so, 0.5, 1.5, rng);
      BinaryOp op = b.op;
      return std::function<Tensor()>([&x, &y, c, op] {
        return reduce_sum(binary(op, x.use(), y.use()) * c);
      });
    }});
  }

  cases.push_back({"reduce_sum", [](ParameterStore& s, Rng& rng) {
    const std::size_t m = 1 + rng.uniform_int(5), n = 1 + rng.uniform_int(5);
    Parameter& x = s.add("x", rand_tensor({m, n}, -1.5, 1.5, rng));
    const int mode = int(rng.uniform_int(3));
    Shape oshape = mode == 0 ? Shape{} : (mode == 1 ? Shape{n} : Shape{m});
    Tensor c = rand_tensor(oshape, 0.5, 1.5, rng);
    return std::function<Tensor()>([&x, c, mode] {
      Tensor r = mode == 0 ? reduce_sum(x.use())
                           : reduce_sum(x.use(), std::size_t(mode - 1));
      return reduce_sum(r * c);
    });
  }});

  cases.push_back({"concat", [](ParameterStore& s, Rng& rng) {
    const std::size_t axis = rng.uniform_int(2);
    const std::size_t other = 1 + rng.uniform_int(4);
    const std::size_t e1 = 1 + rng.uniform_int(3), e2 = 1 + rng.uniform_int(3);
    auto shp = [&](std::size_t e) {
      return axis == 0 ? Shape{e, other} : Shape{other, e};
    };
    Parameter& x = s.add("x", rand_tensor(shp(e1), -1.5, 1.5, rng));
    Parameter& y = s.add("y", rand_tensor(shp(e2), -1.5, 1.5, rng));
    Tensor c = rand_tensor(axis == 0 ? Shape{e1 + e2, other}
                                     : Shape{other, e1 + e2},
                           0.5, 1.5, rng);
    return std::function<Tensor()>([&x, &y, c, axis] {
      return reduce_sum(concat({x.use(), y.use()}, axis) * c);
    });
  }});

  cases.push_back({"slice", [](ParameterStore& s, Rng& rng) {
    const std::size_t m = 2 + rng.uniform_int(4), n = 2 + rng.uniform_int(4);
    Parameter& x = s.add("x", rand_tensor({m, n}, -1.5, 1.5, rng));
    const std::size_t axis = rng.uniform_int(2);
    const std::size_t extent = axis == 0 ? m : n;
    const std::size_t len = 1 + rng.uniform_int(extent);
    const std::size_t start = rng.uniform_int(extent - len + 1);
    Tensor c = rand_tensor(axis == 0 ? Shape{len, n} : Shape{m, len}, 0.5,
                           1.5, rng);
    return std::function<Tensor()>([&x, c, axis, start, len] {
      return reduce_sum(slice(x.use(), axis, start, len) * c);
    });
  }});

  cases.push_back({"clamp", [](ParameterStore& s, Rng& rng) {
    Shape shape = rand_shape(rng);
    // Bounds at +-1; keep samples 0.05 away from them.
    Tensor init(shape);
    for (std::size_t i = 0; i < init.numel(); ++i) {
      double v;
      do {
        v = rng.uniform(-2.0, 2.0);
      } while (std::abs(std::abs(v) - 1.0) < 0.05);
      init.at(i) = v;
    }
    Parameter& x = s.add("x", std::move(init));
    Tensor c = rand_tensor(shape, 0.5, 1.5, rng);
    return std::function<Tensor()>(
        [&x, c] { return reduce_sum(clamp(x.use(), -1.0, 1.0) * c); });
  }});

  cases.push_back({"affine_const", [](ParameterStore& s, Rng& rng) {
    Shape shape = rand_shape(rng);
    Parameter& x = s.add("x", rand_tensor(shape, -1.5, 1.5, rng));
    const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-1.0, 1.0);
    Tensor c = rand_tensor(shape, 0.5, 1.5, rng);
    return std::function<Tensor()>([&x, c, a, b] {
      return reduce_sum(add_scalar(scale(x.use(), a), b) * c);
    });
  }});

  cases.push_back({"broadcast_scalar", [](ParameterStore& s, Rng& rng) {
    Parameter& x = s.add("x", Tensor::scalar(rng.uniform(-1.5, 1.5)));
    const std::size_t m = 1 + rng.uniform_int(4), n = 1 + rng.uniform_int(4);
    Tensor c = rand_tensor({m, n}, 0.5, 1.5, rng);
    return std::function<Tensor()>([&x, c, m, n] {
      return reduce_sum(broadcast_scalar(x.use(), {m, n}) * c);
    });
  }});

  cases.push_back({"reshape", [](ParameterStore& s, Rng& rng) {
    const std::size_t m = 1 + rng.uniform_int(4), n = 1 + rng.uniform_int(4);
    Parameter& x = s.add("x", rand_tensor({m, n}, -1.5, 1.5, rng));
    Tensor c = rand_tensor({m * n}, 0.5, 1.5, rng);
    return std::function<Tensor()>([&x, c, m, n] {
      return reduce_sum(reshape(x.use(), {m * n}) * c);
    });
  }});

  cases.push_back({"gaussian_log_prob", [](ParameterStore& s, Rng& rng) {
    const std::size_t b = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(4);
    Parameter& mean = s.add("mean", rand_tensor({b, d}, -1.0, 1.0, rng));
    Parameter& ls = s.add("log_std", rand_tensor({b, d}, -1.5, 0.5, rng));
    Tensor v = rand_tensor({b, d}, -2.0, 2.0, rng);
    Tensor c = rand_tensor({b}, 0.5, 1.5, rng);
    return std::function<Tensor()>([&mean, &ls, v, c] {
      return reduce_sum(
          gaussian_log_prob(make_gaussian(mean.use(), ls.use()), v) * c);
    });
  }});

  cases.push_back({"gaussian_kl", [](ParameterStore& s, Rng& rng) {
    const std::size_t b = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(4);
    Parameter& qm = s.add("qm", rand_tensor({b, d}, -1.0, 1.0, rng));
    Parameter& ql = s.add("ql", rand_tensor({b, d}, -1.5, 0.5, rng));
    Parameter& pm = s.add("pm", rand_tensor({b, d}, -1.0, 1.0, rng));
    Parameter& pl = s.add("pl", rand_tensor({b, d}, -1.5, 0.5, rng));
    Tensor c = rand_tensor({b}, 0.5, 1.5, rng);
    return std::function<Tensor()>([&qm, &ql, &pm, &pl, c] {
      return reduce_sum(gaussian_kl(make_gaussian(qm.use(), ql.use()),
                                    make_gaussian(pm.use(), pl.use())) *
                        c);
    });
  }});

  cases.push_back({"bernoulli_log_prob", [](ParameterStore& s, Rng& rng) {
    const std::size_t b = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(4);
    Parameter& logits = s.add("logits", rand_tensor({b, d}, -2.0, 2.0, rng));
    Tensor target({b, d});
    for (std::size_t i = 0; i < target.numel(); ++i)
      target.at(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor c = rand_tensor({b}, 0.5, 1.5, rng);
    return std::function<Tensor()>([&logits, target, c] {
      return reduce_sum(bernoulli_log_prob({logits.use()}, target) * c);
    });
  }});

  cases.push_back({"gaussian_sample", [](ParameterStore& s, Rng& rng) {
    const std::size_t b = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(4);
    Parameter& mean = s.add("mean", rand_tensor({b, d}, -1.0, 1.0, rng));
    Parameter& ls = s.add("log_std", rand_tensor({b, d}, -1.5, 0.5, rng));
    Tensor noise(Shape{b, d});
    rng.fill_normal({noise.data(), noise.numel()});
    Tensor c = rand_tensor({b, d}, 0.5, 1.5, rng);
    return std::function<Tensor()>([&mean, &ls, noise, c] {
      Tensor z = gaussian_sample(make_gaussian(mean.use(), ls.use()), noise);
      return reduce_sum(square(z) * c);
    });
  }});

  cases.push_back({"dmap", [](ParameterStore& s, Rng& rng) {
    const std::size_t in = 1 + rng.uniform_int(4),
                      hid = 2 + rng.uniform_int(4),
                      out = 1 + rng.uniform_int(3),
                      b = 1 + rng.uniform_int(3);
    DMap d = DMap::create(s, "d", in, hid, out, rng);
    Tensor x = rand_tensor({b, in}, -1.5, 1.5, rng);
    Tensor cm = rand_tensor({b, out}, 0.5, 1.5, rng);
    Tensor cl = rand_tensor({b, out}, 0.5, 1.5, rng);
    return std::function<Tensor()>([d, x, cm, cl] {
      GaussianParams g = d(x);
      return reduce_sum(g.mean * cm) + reduce_sum(g.log_std * cl);
    });
  }});

  cases.push_back({"lstm_step", [](ParameterStore& s, Rng& rng) {
    const std::size_t in = 1 + rng.uniform_int(4),
                      hid = 1 + rng.uniform_int(4),
                      b = 1 + rng.uniform_int(3);
    LstmCell cell = LstmCell::create(s, "lstm", in, hid, rng);
    Tensor x1 = rand_tensor({b, in}, -1.5, 1.5, rng);
    Tensor x2 = rand_tensor({b, in}, -1.5, 1.5, rng);
    Tensor ch = rand_tensor({b, hid}, 0.5, 1.5, rng);
    Tensor cc = rand_tensor({b, hid}, 0.5, 1.5, rng);
    return std::function<Tensor()>([cell, x1, x2, ch, cc, b] {
      auto st = cell.step(x1, cell.initial(b));
      st = cell.step(x2, st);
      return reduce_sum(st.h * ch) + reduce_sum(st.c * cc);
    });
  }});

  cases.push_back({"mlp", [](ParameterStore& s, Rng& rng) {
    const std::size_t in = 1 + rng.uniform_int(4),
                      hid = 2 + rng.uniform_int(4),
                      out = 1 + rng.uniform_int(3),
                      b = 1 + rng.uniform_int(3);
    Mlp m = Mlp::create(s, "mlp", {in, hid, out}, false, rng);
    // Redraw inputs whose hidden preactivations sit near the relu kink,
    // where central differences straddle the corner.
    Tensor x;
    for (int attempt = 0; attempt < 100; ++attempt) {
      x = rand_tensor({b, in}, -1.5, 1.5, rng);
      Tensor h = matmul(x, m.ws[0]->use()) + m.bs[0]->use();
      double closest = 1e300;
      for (std::size_t i = 0; i < h.numel(); ++i)
        closest = std::min(closest, std::abs(h.at(i)));
      if (closest >= 1e-3) break;
    }
    Tensor c = rand_tensor({b, out}, 0.5, 1.5, rng);
    return std::function<Tensor()>(
        [m, x, c] { return reduce_sum(m(x) * c); });
  }});

  return cases;
}

}  // namespace

SuiteResult run_op_suite(std::size_t instances, std::uint64_t seed,
                         Tolerance tol) {
  SuiteResult res;
  Rng rng = Rng::substream(seed, "gradcheck-suite");
  for (const Case& c : suite_cases()) {
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
      ParameterStore store;
      auto loss_fn = c.make(store, rng);
      Report rep = check_gradients(store, loss_fn, tol);
      ++res.instances;
      res.entries += rep.entries_checked;
      worst = std::max(worst, rep.max_rel_err);
      res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
      if (!rep.pass) {
        res.pass = false;
        res.failures.push_back(c.name + "#" + std::to_string(k) + ": " +
                               rep.worst);
      }
    }
    res.per_case.emplace_back(c.name, worst);
  }
  return res;
}

}  // namespace tdvae::gradcheck
