#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dualtower/graph.hpp"
#include "dualtower/rng.hpp"

namespace dualtower {

// A rebuildable differentiation problem: `build` must construct the same
// graph every call, reading parameter values in the order given (so central
// differences can re-evaluate the loss under perturbed values).
struct GradCheckTask {
    std::vector<std::pair<std::string, Tensor>> params;
    std::function<Tensor(Graph&, const std::vector<Tensor>& leaves)> build;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double epsilon = 0.0;
    double tolerance = 0.0;

    bool all_passed() const {
        for (const auto& e : entries) {
            if (!e.passed) {
                return false;
            }
        }
        return true;
    }
    std::string to_string() const;
};

// Compares analytic gradients against central finite differences. Relative
// error is |a - n| / max(|a|, |n|, 1), which behaves as an absolute tolerance
// near zero and a relative one for large gradients. max_elements_per_param
// caps how many elements of each tensor are probed (0 = all); sampling uses
// `sample_rng` when given so 100-seed sweeps stay affordable.
GradCheckReport check_gradients(const GradCheckTask& task, double epsilon,
                                double tolerance, std::size_t max_elements_per_param = 0,
                                Rng* sample_rng = nullptr);

}  // namespace dualtower
