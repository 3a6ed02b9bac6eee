#pragma once

#include <functional>
#include <string>

#include "tdvae/tape.hpp"

namespace tdvae::gradcheck {

struct Report {
  bool pass = true;
  std::size_t entries_checked = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst;  // human-readable location of the worst entry
};

struct Tolerance {
  double rel = 1e-4;
  double abs = 1e-6;
  double step = 1e-4;  // central-difference half-step
};

// Compares backward() gradients of a deterministic scalar-valued builder
// against central finite differences, entry by entry over every parameter
// in the store. The builder is called under a fresh tape once for the
// analytic pass and without a tape for the numeric probes, so it must be a
// pure function of the parameter values (replay sampled noise through
// RecordedNoise).
Report check_gradients(ParameterStore& store,
                       const std::function<Tensor()>& loss_fn,
                       Tolerance tol = {});

// Same contract, but probes only `count` entries drawn uniformly (without
// replacement) across all parameters. Meant for models too large for the
// full sweep.
Report check_gradients_sampled(ParameterStore& store,
                               const std::function<Tensor()>& loss_fn,
                               std::size_t count, std::uint64_t seed,
                               Tolerance tol = {});

struct SuiteResult {
  bool pass = true;
  std::size_t instances = 0;
  std::size_t entries = 0;
  double max_rel_err = 0.0;
  std::vector<std::string> failures;
  std::vector<std::pair<std::string, double>> per_case;  // case -> worst err
};

// Randomized finite-difference suite over the whole op menu (plus the
// distribution and layer primitives) across scalar, vector and matrix
// shapes. `instances` random instances are drawn per case.
SuiteResult run_op_suite(std::size_t instances, std::uint64_t seed,
                         Tolerance tol = {});

}  // namespace tdvae::gradcheck
