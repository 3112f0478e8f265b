// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checks for every differentiable op, run
// in double precision.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pdwn/tensor.hpp"

namespace pdwn::gradcheck {

struct Options {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor of the relative error, so components that are zero
    // analytically do not blow up the ratio.
    double floor = 1e-3;
    std::uint64_t seed = 7;
};

struct Result {
    std::string op;
    std::string wrt;  // which input
    double max_rel_error = 0.0;
    std::int64_t checked = 0;
    bool passed = false;
};

// Compares backward() against central differences of
// L(inputs) = sum(f(inputs) * probe) for a fixed random probe. `names`
// labels the inputs in the results; inputs not requiring grad are skipped.
std::vector<Result> check(std::string_view op, const std::function<Tensord(const std::vector<Tensord>&)>& f,
                          std::vector<Tensord> inputs, const std::vector<std::string>& names, const Options& options);

// Runs the check registered for `op`. Throws for unknown names.
std::vector<Result> run_op(std::string_view op, const Options& options = {});

// Every check in registry order.
std::vector<Result> run_all(const Options& options = {});

// Names in kDifferentiableOps without a registered check. Must be empty.
std::vector<std::string> missing_checks();

std::vector<std::string> registered_ops();

}  // namespace pdwn::gradcheck
