#pragma once

#include <optional>
#include <span>

#include "tdvae/tape.hpp"
#include "tdvae/tensor.hpp"

namespace tdvae {

enum class UnaryOp { Tanh, Sigmoid, Exp, Log, Neg, Square, Relu, Softplus };
enum class BinaryOp { Add, Sub, Mul, Div };

// --- core op menu -----------------------------------------------------------

// [m x k] . [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor unary(UnaryOp op, const Tensor& x);

// Elementwise with one broadcast form: a rank-1 [n] operand combines with a
// rank-2 [m x n] operand row-wise (bias over batch). Anything else with
// unequal shapes is a shape error.
Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b);

// Sum over all elements (axis omitted, result scalar) or one axis of a
// rank-2 tensor (axis 0 -> [n], axis 1 -> [m]). For rank-1, axis 0 -> scalar.
Tensor reduce_sum(const Tensor& x, std::optional<std::size_t> axis = {});

// Concatenation along axis 0 or 1. Zero-extent parts are skipped, so
// concat({v, empty}) == v.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);

// Contiguous range [start, start+len) along axis 0 or 1 of a rank-1/2 tensor.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t len);

// Hard saturation; gradient is zero where the input is at or beyond a bound.
Tensor clamp(const Tensor& x, double lo, double hi);

// Compile-time-constant affine pieces. These are the only scalar-constant
// entry points; constants are not differentiated through.
Tensor scale(const Tensor& x, double c);       // c * x
Tensor add_scalar(const Tensor& x, double c);  // x + c

// Explicit expansion of a scalar to a full shape (gradient: full sum).
Tensor broadcast_scalar(const Tensor& s, Shape shape);

// Metadata-only reshape; element count must match.
Tensor reshape(const Tensor& x, Shape shape);

// --- convenience spellings --------------------------------------------------

inline Tensor tanh(const Tensor& x) { return unary(UnaryOp::Tanh, x); }
inline Tensor sigmoid(const Tensor& x) { return unary(UnaryOp::Sigmoid, x); }
inline Tensor exp(const Tensor& x) { return unary(UnaryOp::Exp, x); }
inline Tensor log(const Tensor& x) { return unary(UnaryOp::Log, x); }
inline Tensor neg(const Tensor& x) { return unary(UnaryOp::Neg, x); }
inline Tensor square(const Tensor& x) { return unary(UnaryOp::Square, x); }
inline Tensor relu(const Tensor& x) { return unary(UnaryOp::Relu, x); }
inline Tensor softplus(const Tensor& x) { return unary(UnaryOp::Softplus, x); }

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  return binary(BinaryOp::Add, a, b);
}
inline Tensor operator-(const Tensor& a, const Tensor& b) {
  return binary(BinaryOp::Sub, a, b);
}
inline Tensor operator*(const Tensor& a, const Tensor& b) {
  return binary(BinaryOp::Mul, a, b);
}
inline Tensor operator/(const Tensor& a, const Tensor& b) {
  return binary(BinaryOp::Div, a, b);
}

inline Tensor reduce_mean(const Tensor& x) {
  return scale(reduce_sum(x), 1.0 / double(x.numel()));
}

// --- raw kernels (shared by forward and backward paths) ---------------------
namespace kernels {

// c += a . b with a [m x k], b [k x n], c [m x n]; saxpy loop order so the
// inner loop vectorizes without reassociation flags.
void matmul_acc(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n);

// gb += a^T . g with a [m x k], g [m x n], gb [k x n].
void matmul_at_b_acc(const double* a, const double* g, double* gb,
                     std::size_t m, std::size_t k, std::size_t n);

// Out-of-place transpose: b [n x m] = a^T for a [m x n].
void transpose(const double* a, double* b, std::size_t m, std::size_t n);

}  // namespace kernels

}  // namespace tdvae
