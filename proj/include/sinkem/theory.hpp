#pragma once

#include <string>
#include <vector>

#include "sinkem/population.hpp"

namespace sinkem {

// Numerical property battery over the population-limit machinery: loss
// domination and coincidence at the optimum, curvature gap, convergence rate
// and dominance of the population iterates, fixed-point structure, and the
// tilted-weight function's shape. Used by the theory-check CLI command.
struct TheoryCheckItem {
    std::string name;
    bool pass = false;
    double margin = 0.0;  // worst measured margin (positive = slack)
    std::string detail;
};

struct TheoryCheckReport {
    std::vector<TheoryCheckItem> items;
    bool all_pass() const;
    std::string render() const;  // one line per item
};

struct TheoryCheckOptions {
    double grid_lo = -3.0;
    double grid_hi = 3.0;
    double grid_step = 0.05;
    double domination_slack = 1e-9;
    double coincidence_tolerance = 1e-8;
    double curvature_margin = 1e-4;
    double fixed_point_tolerance = 1e-9;
};

TheoryCheckReport run_theory_checks(const PopulationSpec& spec, const TheoryCheckOptions& options = {});

}  // namespace sinkem
