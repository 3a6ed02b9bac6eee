#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "tdvae/gradcheck.hpp"
#include "tdvae/layers.hpp"
#include "tdvae/ops.hpp"

using namespace tdvae;

namespace {

void zero_params(ParameterStore& store) {
  for (auto& p : store)
    for (std::size_t i = 0; i < p->value.numel(); ++i) p->value.at(i) = 0.0;
}

Tensor rand_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  rng.fill_uniform({t.data(), t.numel()}, -1.0, 1.0);
  return t;
}

}  // namespace

// ==== D-map =====================================================================

TEST_CASE("dmap with zero parameters emits a standard normal") {
  ParameterStore store;
  Rng rng(1);
  DMap d = DMap::create(store, "d", 5, 7, 3, rng);
  zero_params(store);
  GaussianParams g = d(Tensor(Shape{5}, {1.0, -2.0, 3.0, 0.5, -0.1}));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.mean.at(i) == 0.0);
    CHECK(g.log_std.at(i) == 0.0);
  }
}

TEST_CASE("dmap gates annihilate the output path") {
  // Zero gate weights force hidden = tanh(0) * sigmoid(0) = 0, so even an
  // identity-stacked output matrix sees nothing of x.
  ParameterStore store;
  Rng rng(2);
  DMap d = DMap::create(store, "d", 4, 4, 2, rng);
  zero_params(store);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      d.w3->value.at(i, j) = i == j ? 1.0 : 0.0;
  Rng xr(3);
  GaussianParams g = d(rand_tensor(Shape{4}, xr));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(g.mean.at(i) == 0.0);
    CHECK(g.log_std.at(i) == 0.0);
  }
}

TEST_CASE("dmap batches match per-row evaluation") {
  ParameterStore store;
  Rng rng(4);
  DMap d = DMap::create(store, "d", 3, 6, 2, rng);
  Tensor xb = rand_tensor(Shape{4, 3}, rng);
  GaussianParams batched = d(xb);
  for (std::size_t r = 0; r < 4; ++r) {
    Tensor row(Shape{3}, {xb.at(r, 0), xb.at(r, 1), xb.at(r, 2)});
    GaussianParams single = d(row);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(batched.mean.at(r, j) == doctest::Approx(single.mean.at(j)));
      CHECK(batched.log_std.at(r, j) ==
            doctest::Approx(single.log_std.at(j)));
    }
  }
}

TEST_CASE("dmap log_std stays inside the clamp band") {
  ParameterStore store;
  Rng rng(5);
  DMap d = DMap::create(store, "d", 2, 4, 2, rng);
  for (auto& p : store)
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      p->value.at(i) = (i % 2 ? 50.0 : -50.0);
  GaussianParams g = d(Tensor(Shape{2}, {100.0, -100.0}));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(g.log_std.at(i) >= -8.0);
    CHECK(g.log_std.at(i) <= 4.0);
  }
}

TEST_CASE("dmap gradients match finite differences") {
  ParameterStore store;
  Rng rng(6);
  DMap d = DMap::create(store, "d", 4, 5, 3, rng);
  Tensor x = rand_tensor(Shape{2, 4}, rng);
  auto loss = [&] {
    GaussianParams g = d(x);
    return reduce_sum(g.mean) + reduce_sum(g.log_std);
  };
  auto rep = gradcheck::check_gradients(store, loss);
  INFO(rep.worst);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
}

// ==== LSTM cell =================================================================

TEST_CASE("lstm zero state is a fixed point of the zero cell") {
  ParameterStore store;
  Rng rng(7);
  LstmCell cell = LstmCell::create(store, "c", 3, 2, rng);
  zero_params(store);
  auto st = cell.initial(1);
  auto next = cell.step(Tensor(Shape{1, 3}, {0.7, -0.3, 2.0}), st);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(next.h.at(0, j) == 0.0);
    CHECK(next.c.at(0, j) == 0.0);
  }
}

TEST_CASE("lstm zero cell halves carried state") {
  ParameterStore store;
  Rng rng(8);
  LstmCell cell = LstmCell::create(store, "c", 1, 1, rng);
  zero_params(store);
  LstmCell::State st{Tensor(Shape{1, 1}), Tensor(Shape{1, 1}, {2.0})};
  auto next = cell.step(Tensor(Shape{1, 1}), st);
  CHECK(next.c.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(next.h.at(0, 0) ==
        doctest::Approx(0.5 * std::tanh(1.0)).epsilon(1e-12));
  CHECK(next.h.at(0, 0) == doctest::Approx(0.38079).epsilon(1e-4));
}

TEST_CASE("lstm forget bias starts at one") {
  ParameterStore store;
  Rng rng(9);
  LstmCell cell = LstmCell::create(store, "c", 2, 3, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(cell.b->value.at(j) == 0.0);            // input gate
    CHECK(cell.b->value.at(3 + j) == 1.0);        // forget gate
    CHECK(cell.b->value.at(6 + j) == 0.0);        // candidate
    CHECK(cell.b->value.at(9 + j) == 0.0);        // output gate
  }
}

TEST_CASE("lstm rejects mismatched shapes") {
  ParameterStore store;
  Rng rng(10);
  LstmCell cell = LstmCell::create(store, "c", 3, 2, rng);
  auto st = cell.initial(2);
  CHECK_THROWS_AS(cell.step(Tensor(Shape{2, 4}), st), ShapeError);
  CHECK_THROWS_AS(cell.step(Tensor(Shape{1, 3}), st), ShapeError);
}

TEST_CASE("lstm gradients match finite differences over two steps") {
  ParameterStore store;
  Rng rng(11);
  LstmCell cell = LstmCell::create(store, "c", 2, 3, rng);
  Tensor x0 = rand_tensor(Shape{2, 2}, rng);
  Tensor x1 = rand_tensor(Shape{2, 2}, rng);
  auto loss = [&] {
    auto st = cell.step(x1, cell.step(x0, cell.initial(2)));
    return reduce_sum(st.h) + reduce_sum(st.c);
  };
  auto rep = gradcheck::check_gradients(store, loss);
  INFO(rep.worst);
  CHECK(rep.pass);
}

// ==== MLP =======================================================================

TEST_CASE("mlp with zero parameters is the zero map") {
  ParameterStore store;
  Rng rng(12);
  Mlp m = Mlp::create(store, "m", {3, 5, 2}, false, rng);
  zero_params(store);
  Tensor y = m(Tensor(Shape{3}, {4.0, -1.0, 0.3}));
  CHECK(y.at(0) == 0.0);
  CHECK(y.at(1) == 0.0);
}

TEST_CASE("mlp relu output clips negatives") {
  ParameterStore store;
  Rng rng(13);
  Mlp m = Mlp::create(store, "m", {1, 1}, true, rng);
  m.ws[0]->value.at(0, 0) = -2.0;
  Tensor y = m(Tensor(Shape{1}, {3.0}));
  CHECK(y.at(0) == 0.0);
  m.ws[0]->value.at(0, 0) = 2.0;
  CHECK(m(Tensor(Shape{1}, {3.0})).at(0) == 6.0);
}

TEST_CASE("mlp gradients match finite differences") {
  ParameterStore store;
  Rng rng(14);
  Mlp m = Mlp::create(store, "m", {4, 6, 6, 2}, false, rng);
  Tensor x = rand_tensor(Shape{3, 4}, rng);
  auto loss = [&] { return reduce_sum(square(m(x))); };
  auto rep = gradcheck::check_gradients(store, loss);
  INFO(rep.worst);
  CHECK(rep.pass);
}

TEST_CASE("layer initialization is reproducible per seed") {
  ParameterStore a, b;
  Rng ra(15), rb(15);
  DMap da = DMap::create(a, "d", 3, 4, 2, ra);
  DMap db = DMap::create(b, "d", 3, 4, 2, rb);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].value.numel(); ++j)
      CHECK(a[i].value.at(j) == b[i].value.at(j));
}
