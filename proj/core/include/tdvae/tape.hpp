#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tdvae/errors.hpp"
#include "tdvae/rng.hpp"
#include "tdvae/tensor.hpp"

namespace tdvae {

class Tape;

// Named trainable array with persistent value and gradient accumulator.
// Parameters live in a ParameterStore; model code holds raw pointers.
struct Parameter {
  std::string name;
  Tensor value;              // never attached
  std::vector<double> grad;  // same numel as value, summed across backwards

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(v.detached()), grad(value.numel(), 0.0) {}

  // Returns the value attached to the active tape as a leaf node (creating
  // the leaf on first use per tape). Without an active tape returns a
  // detached copy, so eval-mode code paths are identical to training ones.
  Tensor use();
};

// Append-only reverse-mode tape. One tape per training step; ops record one
// node each, node ids increase in execution order, and backward() walks ids
// in strictly decreasing order exactly once.
class Tape {
 public:
  // RAII activation. Nested scopes restore the previous active tape.
  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active();

  // Records a node with a gradient buffer of `size` zeros. `back` receives
  // the tape and must scatter this node's output gradient into its inputs'
  // buffers via grad(). Returns the node id.
  int record(std::size_t size, std::function<void(Tape&)> back);

  std::vector<double>& grad(int id) {
    if (cleared_)
      throw ContractError("tape: grad access after clear; build a new graph");
    return nodes_[static_cast<std::size_t>(id)].grad;
  }

  std::size_t node_count() const { return nodes_.size(); }
  bool cleared() const { return cleared_; }
  // Nodes visited by the last backward(); equals node_count at that time.
  std::size_t last_backward_visits() const { return last_visits_; }

  // Leaf bookkeeping so each parameter gets exactly one node per tape.
  int param_node(const Parameter* p) const;
  void bind_param(Parameter* p, int node);

  // Runs reverse accumulation from a scalar loss, adds leaf gradients into
  // their parameters' grad buffers, then clears the tape.
  void run_backward(const Tensor& loss);

  void clear();

 private:
  struct Node {
    std::vector<double> grad;
    std::function<void(Tape&)> back;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter*, int>> params_;
  std::size_t last_visits_ = 0;
  bool cleared_ = false;
};

// Backward through the active tape. The loss must be a live scalar attached
// to it.
void backward(const Tensor& loss);

// Owning collection of parameters with stable iteration order (creation
// order), which fixes checkpoint layout and optimizer update order.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  double grad_norm() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initializer used by every layer.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace tdvae
