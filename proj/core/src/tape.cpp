#include "tdvae/tape.hpp"

#include <cmath>

namespace tdvae {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape::Scope::Scope(Tape& t) : prev_(g_active) { g_active = &t; }
Tape::Scope::~Scope() { g_active = prev_; }

Tape* Tape::active() { return g_active; }

int Tape::record(std::size_t size, std::function<void(Tape&)> back) {
  if (cleared_)
    throw ContractError("tape: record after clear; build a new graph");
  nodes_.push_back(Node{std::vector<double>(size, 0.0), std::move(back)});
  return int(nodes_.size()) - 1;
}

int Tape::param_node(const Parameter* p) const {
  for (const auto& [param, node] : params_)
    if (param == p) return node;
  return -1;
}

void Tape::bind_param(Parameter* p, int node) { params_.emplace_back(p, node); }

void Tape::run_backward(const Tensor& loss) {
  if (cleared_)
    throw ContractError("backward: tape already consumed by a prior backward");
  if (!loss.attached())
    throw ContractError("backward: loss is not attached to a tape");
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss.shape()));
  const auto root = static_cast<std::size_t>(loss.node());
  if (root >= nodes_.size())
    throw ContractError("backward: loss node is not on the active tape");

  nodes_[root].grad[0] = 1.0;
  last_visits_ = 0;
  // Strictly decreasing ids; every node created during the forward pass is
  // visited exactly once, later nodes before the nodes they consume.
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this);
    ++last_visits_;
  }
  for (auto& [param, node] : params_) {
    const auto& g = nodes_[static_cast<std::size_t>(node)].grad;
    for (std::size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
  }
  // Release graph memory; the tape object stays alive for post-mortems but
  // cannot record or run again.
  nodes_.clear();
  nodes_.shrink_to_fit();
  params_.clear();
  cleared_ = true;
}

void Tape::clear() {
  nodes_.clear();
  params_.clear();
  cleared_ = true;
}

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw ContractError("backward: no active tape");
  t->run_backward(loss);
}

Tensor Parameter::use() {
  Tape* t = Tape::active();
  if (!t) return value.detached();
  int node = t->param_node(this);
  if (node < 0) {
    node = t->record(value.numel(), nullptr);  // leaf: nothing upstream
    t->bind_param(this, node);
  }
  Tensor out = value.detached();
  out.set_node(node);
  return out;
}

Parameter& ParameterStore::add(std::string name, Tensor init) {
  if (find(name))
    throw ContractError("parameter store: duplicate name " + name);
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init)));
  return *params_.back();
}

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_)
    std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

double ParameterStore::grad_norm() const {
  double ss = 0.0;
  for (const auto& p : params_)
    for (double g : p->grad) ss += g * g;
  return std::sqrt(ss);
}

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ContractError("init_uniform: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(double(fan_in));
  Tensor t(std::move(shape));
  rng.fill_uniform({t.data(), t.numel()}, -bound, bound);
  return t;
}

}  // namespace tdvae
