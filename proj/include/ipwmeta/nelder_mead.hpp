#pragma once

#include <functional>
#include <vector>

namespace ipwmeta {

struct NelderMeadOptions {
    double initial_step = 0.5;
    int max_evaluations = 4000;
    double x_tolerance = 1e-10;  // simplex diameter (max-norm)
    double f_tolerance = 1e-15;  // spread of vertex values
    int restarts = 2;            // fresh simplex around the incumbent after convergence
    std::vector<double> lower;   // optional box; empty = unbounded
    std::vector<double> upper;
};

struct NelderMeadResult {
    std::vector<double> x;
    double value = 0.0;
    int evaluations = 0;
    bool on_bound = false;
};

// Derivative-free simplex minimisation. Trial points are projected onto the
// box when one is given.
NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> x0, const NelderMeadOptions& opts = {});

}  // namespace ipwmeta
