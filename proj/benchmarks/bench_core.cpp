#include <benchmark/benchmark.h>

#include "tdvae/ops.hpp"
#include "tdvae/rng.hpp"

using namespace tdvae;

namespace {

Tensor rand_mat(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(Shape{r, c});
  rng.fill_uniform({t.data(), t.numel()}, -1, 1);
  return t;
}

void BM_matmul(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(1);
  Tensor a = rand_mat(n, n, rng);
  Tensor b = rand_mat(n, n, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(16)->Arg(64)->Arg(128)->Arg(256);

void BM_matmul_backward(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(1);
  ParameterStore store;
  Parameter& a = store.add("a", rand_mat(n, n, rng));
  Parameter& b = store.add("b", rand_mat(n, n, rng));
  for (auto _ : state) {
    store.zero_grad();
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = reduce_sum(matmul(a.use(), b.use()));
    backward(loss);
    benchmark::DoNotOptimize(a.grad.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 6 * n * n * n);
}
BENCHMARK(BM_matmul_backward)->Arg(64)->Arg(128);

void BM_tanh(benchmark::State& state) {
  Rng rng(1);
  Tensor x = rand_mat(64, 256, rng);
  for (auto _ : state) {
    Tensor y = tanh(x);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 64 * 256);
}
BENCHMARK(BM_tanh);

}  // namespace

BENCHMARK_MAIN();
