#include "tdvae/layers.hpp"

namespace tdvae {

namespace {

// Lifts [in] to [1 x in] so heads can be written batch-first only.
Tensor as_batch(const Tensor& x) {
  if (x.rank() == 1) return reshape(x, Shape{1, x.dim(0)});
  return x;
}

}  // namespace

DMap DMap::create(ParameterStore& store, const std::string& prefix,
                  std::size_t in, std::size_t hidden, std::size_t out,
                  Rng& rng) {
  DMap d;
  d.in = in;
  d.hidden = hidden;
  d.out = out;
  d.w1 = &store.add(prefix + "/w1", init_uniform({in, hidden}, in, rng));
  d.b1 = &store.add(prefix + "/b1", Tensor(Shape{hidden}));
  d.w2 = &store.add(prefix + "/w2", init_uniform({in, hidden}, in, rng));
  d.b2 = &store.add(prefix + "/b2", Tensor(Shape{hidden}));
  d.w3 =
      &store.add(prefix + "/w3", init_uniform({hidden, 2 * out}, hidden, rng));
  d.b3 = &store.add(prefix + "/b3", Tensor(Shape{2 * out}));
  return d;
}

GaussianParams DMap::operator()(const Tensor& x) const {
  const bool vec = x.rank() == 1;
  Tensor xb = as_batch(x);
  if (xb.dim(1) != in)
    throw ShapeError("dmap: input width " + std::to_string(xb.dim(1)) +
                     " != " + std::to_string(in));
  Tensor h = tanh(matmul(xb, w1->use()) + b1->use()) *
             sigmoid(matmul(xb, w2->use()) + b2->use());
  Tensor o = matmul(h, w3->use()) + b3->use();
  Tensor mean = slice(o, 1, 0, out);
  Tensor raw_ls = slice(o, 1, out, out);
  if (vec) {
    mean = reshape(mean, Shape{out});
    raw_ls = reshape(raw_ls, Shape{out});
  }
  return make_gaussian(mean, raw_ls);
}

LstmCell LstmCell::create(ParameterStore& store, const std::string& prefix,
                          std::size_t in, std::size_t hidden, Rng& rng) {
  LstmCell c;
  c.in = in;
  c.hidden = hidden;
  const std::size_t fan_in = in + hidden;
  c.w = &store.add(prefix + "/w",
                   init_uniform({fan_in, 4 * hidden}, fan_in, rng));
  Tensor b(Shape{4 * hidden});
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b.at(j) = 1.0;
  c.b = &store.add(prefix + "/b", std::move(b));
  return c;
}

LstmCell::State LstmCell::step(const Tensor& x, const State& prev) const {
  if (x.rank() != 2 || x.dim(1) != in)
    throw ShapeError("lstm: input shape " + shape_str(x.shape()) +
                     ", expected [batch x " + std::to_string(in) + "]");
  if (prev.h.dim(0) != x.dim(0))
    throw ShapeError("lstm: batch mismatch between input and state");
  Tensor z = concat({x, prev.h}, 1);
  Tensor pre = matmul(z, w->use()) + b->use();
  Tensor i = sigmoid(slice(pre, 1, 0, hidden));
  Tensor f = sigmoid(slice(pre, 1, hidden, hidden));
  Tensor g = tanh(slice(pre, 1, 2 * hidden, hidden));
  Tensor o = sigmoid(slice(pre, 1, 3 * hidden, hidden));
  Tensor c = f * prev.c + i * g;
  Tensor h = o * tanh(c);
  return {h, c};
}

Mlp Mlp::create(ParameterStore& store, const std::string& prefix,
                std::vector<std::size_t> dims, bool relu_output, Rng& rng) {
  if (dims.size() < 2)
    throw ContractError("mlp: need at least input and output dims");
  Mlp m;
  m.dims = std::move(dims);
  m.relu_output = relu_output;
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    const std::size_t di = m.dims[l], dj = m.dims[l + 1];
    m.ws.push_back(&store.add(prefix + "/w" + std::to_string(l),
                              init_uniform({di, dj}, di, rng)));
    m.bs.push_back(
        &store.add(prefix + "/b" + std::to_string(l), Tensor(Shape{dj})));
  }
  return m;
}

Tensor Mlp::operator()(const Tensor& x) const {
  const bool vec = x.rank() == 1;
  Tensor h = as_batch(x);
  for (std::size_t l = 0; l < ws.size(); ++l) {
    h = matmul(h, ws[l]->use()) + bs[l]->use();
    if (l + 1 < ws.size() || relu_output) h = relu(h);
  }
  if (vec) h = reshape(h, Shape{h.dim(1)});
  return h;
}

}  // namespace tdvae
