#pragma once

#include <string>
#include <vector>

#include "tdvae/distributions.hpp"
#include "tdvae/ops.hpp"
#include "tdvae/tape.hpp"

namespace tdvae {

// Gated two-branch distribution head:
//   [mu, log_sigma] = W3 (tanh(W1 x + B1) * sigmoid(W2 x + B2)) + B3
// with log_sigma clamped. Accepts [batch x in] or [in].
struct DMap {
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;
  Parameter* w3 = nullptr;
  Parameter* b3 = nullptr;
  std::size_t in = 0, hidden = 0, out = 0;

  static DMap create(ParameterStore& store, const std::string& prefix,
                     std::size_t in, std::size_t hidden, std::size_t out,
                     Rng& rng);

  GaussianParams operator()(const Tensor& x) const;
};

// Single LSTM cell, gate order [input, forget, cell, output]; forget-gate
// bias starts at +1 on top of the uniform init.
struct LstmCell {
  Parameter* w = nullptr;  // [(in + hidden) x 4 hidden]
  Parameter* b = nullptr;  // [4 hidden]
  std::size_t in = 0, hidden = 0;

  struct State {
    Tensor h, c;  // [batch x hidden]
  };

  static LstmCell create(ParameterStore& store, const std::string& prefix,
                         std::size_t in, std::size_t hidden, Rng& rng);

  State initial(std::size_t batch) const {
    return {Tensor(Shape{batch, hidden}), Tensor(Shape{batch, hidden})};
  }

  State step(const Tensor& x, const State& prev) const;
};

// Plain ReLU MLP; the final layer is linear unless relu_output is set.
struct Mlp {
  std::vector<Parameter*> ws, bs;
  std::vector<std::size_t> dims;
  bool relu_output = false;

  static Mlp create(ParameterStore& store, const std::string& prefix,
                    std::vector<std::size_t> dims, bool relu_output,
                    Rng& rng);

  Tensor operator()(const Tensor& x) const;
};

}  // namespace tdvae
