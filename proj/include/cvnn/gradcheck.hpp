#pragma once

// Finite-difference verification of every differentiable layer op and of an
// end-to-end CVnet5-micro graph.

#include "cvnn/autodiff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cvnn {

enum class GradcheckScope { Layers, Model, All };

GradcheckScope parse_gradcheck_scope(const std::string& name);

struct OpCheck {
    std::string op;
    GradCheckReport report;
    /// Norm-wise relative difference of the float32 and float64 analytic
    /// gradients; negative when the precision check was not requested.
    double precision_rel = -1;
};

struct GradcheckSuiteOptions {
    GradcheckScope scope = GradcheckScope::All;
    std::uint64_t seed = 2024;
    bool precision_check = false;
    /// Corrupts the analytic gradient of the named op before comparison.
    std::string inject_fault;
    GradCheckOptions check;
};

inline constexpr double kPrecisionTolerance = 1e-3;

/// Names of the cases in a scope, in execution order.
std::vector<std::string> gradcheck_ops(GradcheckScope scope);

std::vector<OpCheck> run_gradcheck_suite(const GradcheckSuiteOptions& options);

bool passed(const OpCheck& check);

}  // namespace cvnn
