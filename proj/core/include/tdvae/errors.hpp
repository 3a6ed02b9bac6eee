#pragma once

#include <stdexcept>
#include <string>

namespace tdvae {

// Shape or rank mismatch between operands. Messages carry both shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside an op's mathematical domain (log of non-positive, non-binary
// Bernoulli target, ...).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: backward on a detached tensor, second backward on a cleared
// tape, config field out of range, and similar.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// File format or filesystem failure (bad magic, checksum mismatch, short
// read, unwritable path).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training-time failure: non-finite loss or gradient with step context.
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tdvae
