#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adaptparse/autodiff.hpp"

namespace adaptparse {

struct GradCheckOptions {
    double tolerance = 1e-4;
    double epsilon = 1e-3;
    int coords_per_tensor = 50;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
    std::int64_t checked = 0;
    /// Coordinates whose +/- epsilon evaluations straddle an activation sign
    /// flip or a pool argmax change; central differences are invalid there.
    std::int64_t skipped = 0;
    std::vector<std::string> failures;
};

/// Central-difference oracle: (f(p+eps) - f(p-eps)) / (2 eps) per coordinate
/// on a random subsample of at least coords_per_tensor coordinates per
/// parameter tensor, against the tape's analytic gradient. Relative error is
/// |a - n| / max(1e-8, |a| + |n|). Parameters must be f64; the builder
/// re-evaluates the identical graph and must be a pure function of them.
GradCheckReport grad_check(const std::function<Tape::Value(Tape&)>& build,
                           std::span<Tensor* const> params, const GradCheckOptions& opts = {});

}  // namespace adaptparse
