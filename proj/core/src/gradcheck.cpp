#include "dualtower/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dualtower {

namespace {

double eval_loss(const GradCheckTask& task, const std::vector<Tensor>& values) {
    Graph g;
    std::vector<Tensor> leaves;
    leaves.reserve(values.size());
    for (const Tensor& v : values) {
        leaves.push_back(g.leaf(v, /*requires_grad=*/false));
    }
    const Tensor loss = task.build(g, leaves);
    if (!loss.is_scalar()) {
        throw ContractViolation("check_gradients: build must return a scalar loss");
    }
    return loss[0];
}

}  // namespace

std::string GradCheckReport::to_string() const {
    std::string s;
    char line[192];
    for (const auto& e : entries) {
        std::snprintf(line, sizeof(line), "%-40s max_rel_err=%.3e %s\n", e.name.c_str(),
                      e.max_rel_error, e.passed ? "ok" : "FAIL");
        s += line;
    }
    return s;
}

GradCheckReport check_gradients(const GradCheckTask& task, double epsilon, double tolerance,
                                std::size_t max_elements_per_param, Rng* sample_rng) {
    if (epsilon <= 0.0 || tolerance <= 0.0) {
        throw ContractViolation("check_gradients: epsilon and tolerance must be positive");
    }

    // analytic pass
    Graph g;
    std::vector<Tensor> leaves;
    leaves.reserve(task.params.size());
    for (const auto& [name, value] : task.params) {
        leaves.push_back(g.leaf(value, /*requires_grad=*/true));
    }
    const Tensor loss = task.build(g, leaves);
    if (!loss.is_scalar()) {
        throw ContractViolation("check_gradients: build must return a scalar loss");
    }
    GradientMap grads = g.backward(loss);

    std::vector<Tensor> values;
    values.reserve(task.params.size());
    for (const auto& [name, value] : task.params) {
        values.push_back(value);
    }

    GradCheckReport report;
    report.epsilon = epsilon;
    report.tolerance = tolerance;
    for (std::size_t p = 0; p < task.params.size(); ++p) {
        const Tensor& analytic = grads.at(*leaves[p].node_id);
        GradCheckEntry entry;
        entry.name = task.params[p].first;

        std::vector<std::size_t> probe;
        const std::size_t n = values[p].size();
        if (max_elements_per_param == 0 || max_elements_per_param >= n) {
            probe.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                probe[i] = i;
            }
        } else {
            for (std::size_t i = 0; i < max_elements_per_param; ++i) {
                probe.push_back(sample_rng != nullptr ? sample_rng->index(n)
                                                      : (i * n) / max_elements_per_param);
            }
        }

        for (const std::size_t i : probe) {
            const double saved = values[p][i];
            values[p][i] = saved + epsilon;
            const double up = eval_loss(task, values);
            values[p][i] = saved - epsilon;
            const double down = eval_loss(task, values);
            values[p][i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
            const double rel = std::fabs(a - numeric) / denom;
            entry.max_rel_error = std::max(entry.max_rel_error, rel);
        }
        entry.passed = entry.max_rel_error <= tolerance;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace dualtower
