#include "tdvae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tdvae {

namespace kernels {

void matmul_acc(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_at_b_acc(const double* a, const double* g, double* gb,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* gbrow = gb + p * n;
      for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
    }
  }
}

void transpose(const double* a, double* b, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) b[j * m + i] = a[i * n + j];
}

}  // namespace kernels

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void check_rank(const Tensor& t, const char* op) {
  if (t.rank() > 2)
    throw ShapeError(std::string(op) + ": rank > 2 not supported, got " +
                     shape_str(t.shape()));
}

// Reserves the next node id before recording, so closures can capture it.
int next_node_id(Tape* tape) {
  return tape ? int(tape->node_count()) : -1;
}

}  // namespace

// --- matmul ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: operands must be rank 2, got " +
                     shape_str(a.shape()) + " . " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ: " +
                     shape_str(a.shape()) + " . " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  kernels::matmul_acc(a.data(), b.data(), out.data(), m, k, n);

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int ida = a.node(), idb = b.node();
  const Tensor ac = a, bc = b;
  tape->record(m * n, [=](Tape& t) {
    const auto& g = t.grad(oid);
    if (ida >= 0) {
      auto& ga = t.grad(ida);
      std::vector<double> bt(n * k);
      kernels::transpose(bc.data(), bt.data(), k, n);
      kernels::matmul_acc(g.data(), bt.data(), ga.data(), m, n, k);
    }
    if (idb >= 0)
      kernels::matmul_at_b_acc(ac.data(), g.data(), t.grad(idb).data(), m, k, n);
  });
  out.set_node(oid);
  return out;
}

// --- unary -------------------------------------------------------------------

Tensor unary(UnaryOp op, const Tensor& x) {
  check_rank(x, "unary");
  const std::size_t n = x.numel();
  const double* xi = x.data();

  if (op == UnaryOp::Log) {
    for (std::size_t i = 0; i < n; ++i)
      if (!(xi[i] > 0.0))
        throw DomainError("log: non-positive input " + std::to_string(xi[i]) +
                          " at flat index " + std::to_string(i));
  }

  Tensor out(x.shape());
  double* o = out.data();
  switch (op) {
    case UnaryOp::Tanh:
      for (std::size_t i = 0; i < n; ++i) o[i] = std::tanh(xi[i]);
      break;
    case UnaryOp::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) o[i] = stable_sigmoid(xi[i]);
      break;
    case UnaryOp::Exp:
      for (std::size_t i = 0; i < n; ++i) o[i] = std::exp(xi[i]);
      break;
    case UnaryOp::Log:
      for (std::size_t i = 0; i < n; ++i) o[i] = std::log(xi[i]);
      break;
    case UnaryOp::Neg:
      for (std::size_t i = 0; i < n; ++i) o[i] = -xi[i];
      break;
    case UnaryOp::Square:
      for (std::size_t i = 0; i < n; ++i) o[i] = xi[i] * xi[i];
      break;
    case UnaryOp::Relu:
      for (std::size_t i = 0; i < n; ++i) o[i] = xi[i] > 0.0 ? xi[i] : 0.0;
      break;
    case UnaryOp::Softplus:
      for (std::size_t i = 0; i < n; ++i) o[i] = stable_softplus(xi[i]);
      break;
  }

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = x.node();
  // Tanh/Sigmoid/Exp differentiate through the output; the rest need the
  // input. Capture only what the backward form uses.
  const bool wants_out = op == UnaryOp::Tanh || op == UnaryOp::Sigmoid ||
                         op == UnaryOp::Exp;
  const Tensor cap = wants_out ? out.detached() : x;
  tape->record(n, [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    auto& gx = t.grad(idx);
    const double* c = cap.data();
    switch (op) {
      case UnaryOp::Tanh:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - c[i] * c[i]);
        break;
      case UnaryOp::Sigmoid:
        for (std::size_t i = 0; i < n; ++i)
          gx[i] += g[i] * c[i] * (1.0 - c[i]);
        break;
      case UnaryOp::Exp:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * c[i];
        break;
      case UnaryOp::Log:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / c[i];
        break;
      case UnaryOp::Neg:
        for (std::size_t i = 0; i < n; ++i) gx[i] -= g[i];
        break;
      case UnaryOp::Square:
        for (std::size_t i = 0; i < n; ++i) gx[i] += 2.0 * c[i] * g[i];
        break;
      case UnaryOp::Relu:
        for (std::size_t i = 0; i < n; ++i)
          if (c[i] > 0.0) gx[i] += g[i];
        break;
      case UnaryOp::Softplus:
        for (std::size_t i = 0; i < n; ++i)
          gx[i] += g[i] * stable_sigmoid(c[i]);
        break;
    }
  });
  out.set_node(oid);
  return out;
}

// --- binary ------------------------------------------------------------------

namespace {
enum class Layout { Equal, VecLeft, VecRight };
}

Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  check_rank(a, "binary");
  check_rank(b, "binary");
  Layout lay;
  Shape oshape;
  if (a.shape() == b.shape()) {
    lay = Layout::Equal;
    oshape = a.shape();
  } else if (a.rank() == 1 && b.rank() == 2 && b.dim(1) == a.dim(0)) {
    lay = Layout::VecLeft;
    oshape = b.shape();
  } else if (b.rank() == 1 && a.rank() == 2 && a.dim(1) == b.dim(0)) {
    lay = Layout::VecRight;
    oshape = a.shape();
  } else {
    throw ShapeError("binary: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) +
                     " (only [n] with [m x n] broadcasts)");
  }

  if (op == BinaryOp::Div) {
    const double* bd = b.data();
    for (std::size_t i = 0; i < b.numel(); ++i)
      if (bd[i] == 0.0)
        throw DomainError("div: zero divisor at flat index " +
                          std::to_string(i));
  }

  const std::size_t rows = oshape.size() == 2 ? oshape[0] : 1;
  const std::size_t cols = oshape.size() == 2 ? oshape[1]
                         : (oshape.empty() ? 1 : oshape[0]);
  Tensor out(oshape);
  {
    const double* ad = a.data();
    const double* bd = b.data();
    double* o = out.data();
    auto apply = [op](double x, double y) {
      switch (op) {
        case BinaryOp::Add: return x + y;
        case BinaryOp::Sub: return x - y;
        case BinaryOp::Mul: return x * y;
        case BinaryOp::Div: return x / y;
      }
      return 0.0;
    };
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t f = i * cols + j;
        const double x = lay == Layout::VecLeft ? ad[j] : ad[f];
        const double y = lay == Layout::VecRight ? bd[j] : bd[f];
        o[f] = apply(x, y);
      }
  }

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int ida = a.node(), idb = b.node();
  const Tensor ac = a, bc = b;
  tape->record(out.numel(), [=](Tape& t) {
    const auto& g = t.grad(oid);
    const double* ad = ac.data();
    const double* bd = bc.data();
    double* ga = ida >= 0 ? t.grad(ida).data() : nullptr;
    double* gb = idb >= 0 ? t.grad(idb).data() : nullptr;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t f = i * cols + j;
        const std::size_t fa = lay == Layout::VecLeft ? j : f;
        const std::size_t fb = lay == Layout::VecRight ? j : f;
        const double gv = g[f];
        switch (op) {
          case BinaryOp::Add:
            if (ga) ga[fa] += gv;
            if (gb) gb[fb] += gv;
            break;
          case BinaryOp::Sub:
            if (ga) ga[fa] += gv;
            if (gb) gb[fb] -= gv;
            break;
          case BinaryOp::Mul:
            if (ga) ga[fa] += gv * bd[fb];
            if (gb) gb[fb] += gv * ad[fa];
            break;
          case BinaryOp::Div: {
            const double inv = 1.0 / bd[fb];
            if (ga) ga[fa] += gv * inv;
            if (gb) gb[fb] -= gv * ad[fa] * inv * inv;
            break;
          }
        }
      }
  });
  out.set_node(oid);
  return out;
}

// --- reductions and shape ops -------------------------------------------------

Tensor reduce_sum(const Tensor& x, std::optional<std::size_t> axis) {
  check_rank(x, "reduce_sum");
  const std::size_t n = x.numel();
  const double* xi = x.data();
  Tensor out;
  enum class Mode { Full, Axis0, Axis1 } mode = Mode::Full;

  if (!axis) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xi[i];
    out = Tensor::scalar(s);
  } else if (x.rank() == 1 && *axis == 0) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xi[i];
    out = Tensor::scalar(s);
  } else if (x.rank() == 2 && *axis == 0) {
    mode = Mode::Axis0;
    const std::size_t r = x.dim(0), c = x.dim(1);
    out = Tensor(Shape{c});
    double* o = out.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) o[j] += xi[i * c + j];
  } else if (x.rank() == 2 && *axis == 1) {
    mode = Mode::Axis1;
    const std::size_t r = x.dim(0), c = x.dim(1);
    out = Tensor(Shape{r});
    double* o = out.data();
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += xi[i * c + j];
      o[i] = s;
    }
  } else {
    throw ShapeError("reduce_sum: axis " + std::to_string(*axis) +
                     " invalid for shape " + shape_str(x.shape()));
  }

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = x.node();
  const std::size_t r = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t c = x.rank() == 2 ? x.dim(1) : n;
  tape->record(out.numel(), [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    auto& gx = t.grad(idx);
    switch (mode) {
      case Mode::Full:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
        break;
      case Mode::Axis0:
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j];
        break;
      case Mode::Axis1:
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
        break;
    }
  });
  out.set_node(oid);
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: empty part list");

  // Zero-extent tensors are ignored entirely, shape checks included.
  std::vector<const Tensor*> live;
  for (const auto& p : parts)
    if (p.numel() > 0) live.push_back(&p);
  if (live.empty()) {
    Tensor out = parts[0].detached();
    if (Tape* tape = Tape::active())
      out.set_node(tape->record(0, nullptr));
    return out;
  }
  if (live.size() == 1 && !Tape::active()) return live[0]->detached();

  const std::size_t rank = live[0]->rank();
  if (rank == 0 || rank > 2)
    throw ShapeError("concat: parts must be rank 1 or 2");
  if (axis >= rank)
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " invalid for rank " + std::to_string(rank));
  const std::size_t other = rank == 2 ? (axis == 0 ? live[0]->dim(1)
                                                   : live[0]->dim(0))
                                      : 0;
  std::size_t total = 0;
  for (const Tensor* p : live) {
    if (p->rank() != rank)
      throw ShapeError("concat: mixed ranks");
    if (rank == 2) {
      const std::size_t po = axis == 0 ? p->dim(1) : p->dim(0);
      if (po != other)
        throw ShapeError("concat: off-axis extent mismatch: " +
                         shape_str(live[0]->shape()) + " vs " +
                         shape_str(p->shape()));
    }
    total += p->dim(axis);
  }

  Shape oshape = rank == 1 ? Shape{total}
               : (axis == 0 ? Shape{total, other} : Shape{other, total});
  Tensor out(oshape);
  double* o = out.data();

  struct Piece {
    int node;
    std::size_t offset, extent;
  };
  std::vector<Piece> pieces;
  std::size_t off = 0;
  for (const Tensor* p : live) {
    const double* src = p->data();
    const std::size_t ext = p->dim(axis);
    if (rank == 1 || axis == 0) {
      std::memcpy(o + off * std::max<std::size_t>(other, 1), src,
                  p->numel() * sizeof(double));
    } else {
      for (std::size_t i = 0; i < other; ++i)
        std::memcpy(o + i * total + off, src + i * ext, ext * sizeof(double));
    }
    pieces.push_back({p->node(), off, ext});
    off += ext;
  }

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const std::size_t rows = other, width = total;
  const bool along_cols = rank == 2 && axis == 1;
  tape->record(out.numel(), [=](Tape& t) {
    const auto& g = t.grad(oid);
    for (const Piece& pc : pieces) {
      if (pc.node < 0) continue;
      auto& gp = t.grad(pc.node);
      if (!along_cols) {
        const std::size_t stride = std::max<std::size_t>(rows, 1);
        for (std::size_t i = 0; i < pc.extent * stride; ++i)
          gp[i] += g[pc.offset * stride + i];
      } else {
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < pc.extent; ++j)
            gp[i * pc.extent + j] += g[i * width + pc.offset + j];
      }
    }
  });
  out.set_node(oid);
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t len) {
  check_rank(x, "slice");
  if (x.rank() == 0) throw ShapeError("slice: scalar input");
  if (axis >= x.rank())
    throw ShapeError("slice: axis " + std::to_string(axis) +
                     " invalid for shape " + shape_str(x.shape()));
  if (start + len > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") exceeds extent " +
                     std::to_string(x.dim(axis)));

  const bool cols = x.rank() == 2 && axis == 1;
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t width = x.rank() == 2 ? x.dim(1) : x.dim(0);

  Shape oshape = x.rank() == 1 ? Shape{len}
               : (axis == 0 ? Shape{len, x.dim(1)} : Shape{x.dim(0), len});
  Tensor out(oshape);
  double* o = out.data();
  const double* xi = x.data();
  if (!cols) {
    const std::size_t stride = x.rank() == 2 ? x.dim(1) : 1;
    std::memcpy(o, xi + start * stride, len * stride * sizeof(double));
  } else {
    for (std::size_t i = 0; i < rows; ++i)
      std::memcpy(o + i * len, xi + i * width + start, len * sizeof(double));
  }

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = x.node();
  const bool vec = x.rank() == 1;
  tape->record(out.numel(), [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    auto& gx = t.grad(idx);
    if (!cols) {
      const std::size_t base = start * (vec ? 1 : width);
      for (std::size_t i = 0; i < g.size(); ++i) gx[base + i] += g[i];
    } else {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < len; ++j)
          gx[i * width + start + j] += g[i * len + j];
    }
  });
  out.set_node(oid);
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  check_rank(x, "clamp");
  const std::size_t n = x.numel();
  Tensor out(x.shape());
  const double* xi = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = std::min(std::max(xi[i], lo), hi);

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = x.node();
  const Tensor cap = x;
  tape->record(n, [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    auto& gx = t.grad(idx);
    const double* c = cap.data();
    for (std::size_t i = 0; i < n; ++i)
      if (c[i] > lo && c[i] < hi) gx[i] += g[i];
  });
  out.set_node(oid);
  return out;
}

Tensor scale(const Tensor& x, double c) {
  check_rank(x, "scale");
  const std::size_t n = x.numel();
  Tensor out(x.shape());
  const double* xi = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = c * xi[i];

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = x.node();
  tape->record(n, [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    auto& gx = t.grad(idx);
    for (std::size_t i = 0; i < n; ++i) gx[i] += c * g[i];
  });
  out.set_node(oid);
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  check_rank(x, "add_scalar");
  const std::size_t n = x.numel();
  Tensor out(x.shape());
  const double* xi = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = xi[i] + c;

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = x.node();
  tape->record(n, [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    auto& gx = t.grad(idx);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
  });
  out.set_node(oid);
  return out;
}

Tensor broadcast_scalar(const Tensor& s, Shape shape) {
  if (s.numel() != 1)
    throw ShapeError("broadcast_scalar: source must have one element, got " +
                     shape_str(s.shape()));
  Tensor out = Tensor::full(shape, s.at(std::size_t{0}));

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = s.node();
  const std::size_t n = out.numel();
  tape->record(n, [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += g[i];
    t.grad(idx)[0] += acc;
  });
  out.set_node(oid);
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  Tensor out(std::move(shape), x.vec());

  Tape* tape = Tape::active();
  if (!tape) return out;
  const int oid = next_node_id(tape);
  const int idx = x.node();
  const std::size_t n = x.numel();
  tape->record(n, [=](Tape& t) {
    if (idx < 0) return;
    const auto& g = t.grad(oid);
    auto& gx = t.grad(idx);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
  });
  out.set_node(oid);
  return out;
}

}  // namespace tdvae
