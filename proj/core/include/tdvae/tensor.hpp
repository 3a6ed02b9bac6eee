#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tdvae/errors.hpp"

namespace tdvae {

// Shapes are row-major; rank 0 (scalar), 1 (vector) and 2 (matrix) are the
// only ranks the op layer accepts.
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense f64 tensor with shared copy-on-write storage. Backward closures on
// the tape capture their input tensors by value; sharing makes those
// captures refcount bumps instead of buffer copies. Mutable access clones
// the buffer when it is shared, so writers never disturb captured readers.
//
// A tensor may be attached to the active tape via a node id; detached
// tensors are plain buffers. Node ids are only meaningful for the tape that
// issued them, and graphs must not outlive their tape.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>()) {}
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (data_->size() != shape_numel(shape_))
      throw ShapeError("tensor: data size " + std::to_string(data_->size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.data_) x = v;
    return t;
  }
  static Tensor from_span(Shape shape, std::span<const double> values) {
    return Tensor(std::move(shape),
                  std::vector<double>(values.begin(), values.end()));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_->size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() {
    ensure_unique();
    return data_->data();
  }
  const double* data() const { return data_->data(); }
  const std::vector<double>& vec() const { return *data_; }

  double& at(std::size_t i) {
    ensure_unique();
    return (*data_)[i];
  }
  double at(std::size_t i) const { return (*data_)[i]; }
  double& at(std::size_t r, std::size_t c) {
    ensure_unique();
    return (*data_)[r * shape_[1] + c];
  }
  double at(std::size_t r, std::size_t c) const {
    return (*data_)[r * shape_[1] + c];
  }

  // Scalar extraction; contract error if numel != 1.
  double value() const {
    if (data_->size() != 1)
      throw ContractError("value(): tensor has " +
                          std::to_string(data_->size()) + " elements");
    return (*data_)[0];
  }

  bool attached() const { return node_ >= 0; }
  int node() const { return node_; }
  void set_node(int id) { node_ = id; }

  // Same storage, no tape attachment.
  Tensor detached() const {
    Tensor t = *this;
    t.node_ = -1;
    return t;
  }

  bool all_finite() const;

 private:
  void ensure_unique() {
    if (data_.use_count() > 1)
      data_ = std::make_shared<std::vector<double>>(*data_);
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  int node_ = -1;
};

}  // namespace tdvae
