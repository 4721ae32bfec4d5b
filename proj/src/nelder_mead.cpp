#include "ipwmeta/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ipwmeta {

namespace {

using Point = std::vector<double>;

class Simplex {
public:
    Simplex(const std::function<double(const Point&)>& f, const NelderMeadOptions& opts, int& evals)
        : f_(f), opts_(opts), evals_(evals) {}

    void reset(const Point& center, double step) {
        const std::size_t n = center.size();
        pts_.assign(n + 1, project(center));
        vals_.assign(n + 1, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            Point p = center;
            p[k] += (center[k] != 0.0 ? step * std::max(1.0, std::fabs(center[k])) : step);
            p = project(p);
            // Flip the step if projection collapsed the vertex onto the centre.
            if (p == pts_[0]) {
                p = center;
                p[k] -= step;
                p = project(p);
            }
            pts_[k + 1] = std::move(p);
        }
        for (std::size_t j = 0; j <= n; ++j) vals_[j] = eval(pts_[j]);
    }

    // Runs until a tolerance or the evaluation budget is reached.
    void run() {
        const std::size_t n = pts_.size() - 1;
        const double alpha = 1.0, gamma = 2.0, rho = 0.5, shrink = 0.5;
        while (evals_ < opts_.max_evaluations) {
            order();
            if (diameter() <= opts_.x_tolerance ||
                std::fabs(vals_[n] - vals_[0]) <= opts_.f_tolerance) {
                break;
            }
            Point c(n, 0.0);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < n; ++i) c[i] += pts_[j][i] / static_cast<double>(n);

            auto along = [&](double coef) {
                Point p(n);
                for (std::size_t i = 0; i < n; ++i) p[i] = c[i] + coef * (pts_[n][i] - c[i]);
                return project(p);
            };

            Point xr = along(-alpha);
            const double fr = eval(xr);
            if (fr < vals_[0]) {
                Point xe = along(-alpha * gamma);
                const double fe = eval(xe);
                if (fe < fr) accept(std::move(xe), fe);
                else accept(std::move(xr), fr);
                continue;
            }
            if (fr < vals_[n - 1]) {
                accept(std::move(xr), fr);
                continue;
            }
            const bool outside = fr < vals_[n];
            Point xc = along(outside ? -alpha * rho : rho);
            const double fc = eval(xc);
            if (fc < std::min(fr, vals_[n])) {
                accept(std::move(xc), fc);
                continue;
            }
            for (std::size_t j = 1; j <= n; ++j) {
                for (std::size_t i = 0; i < n; ++i)
                    pts_[j][i] = pts_[0][i] + shrink * (pts_[j][i] - pts_[0][i]);
                pts_[j] = project(pts_[j]);
                vals_[j] = eval(pts_[j]);
            }
        }
        order();
    }

    const Point& best() const { return pts_[0]; }
    double best_value() const { return vals_[0]; }

private:
    double eval(const Point& p) {
        ++evals_;
        const double v = f_(p);
        return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
    }

    Point project(Point p) const {
        if (opts_.lower.empty()) return p;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::clamp(p[i], opts_.lower[i], opts_.upper[i]);
        return p;
    }

    void order() {
        std::vector<std::size_t> idx(pts_.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return vals_[a] < vals_[b]; });
        std::vector<Point> p2;
        std::vector<double> v2;
        for (auto k : idx) {
            p2.push_back(std::move(pts_[k]));
            v2.push_back(vals_[k]);
        }
        pts_ = std::move(p2);
        vals_ = std::move(v2);
    }

    double diameter() const {
        double d = 0.0;
        for (std::size_t j = 1; j < pts_.size(); ++j)
            for (std::size_t i = 0; i < pts_[0].size(); ++i)
                d = std::max(d, std::fabs(pts_[j][i] - pts_[0][i]));
        return d;
    }

    void accept(Point p, double v) {
        pts_.back() = std::move(p);
        vals_.back() = v;
    }

    const std::function<double(const Point&)>& f_;
    const NelderMeadOptions& opts_;
    int& evals_;
    std::vector<Point> pts_;
    std::vector<double> vals_;
};

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> x0, const NelderMeadOptions& opts) {
    if (x0.empty()) throw std::invalid_argument("nelder_mead: empty start point");
    if (!opts.lower.empty() && (opts.lower.size() != x0.size() || opts.upper.size() != x0.size())) {
        throw std::invalid_argument("nelder_mead: bound dimension mismatch");
    }

    int evals = 0;
    Simplex simplex(f, opts, evals);
    simplex.reset(x0, opts.initial_step);
    simplex.run();

    for (int r = 0; r < opts.restarts && evals < opts.max_evaluations; ++r) {
        const double before = simplex.best_value();
        const Point incumbent = simplex.best();
        simplex.reset(incumbent, opts.initial_step);
        simplex.run();
        if (!(simplex.best_value() < before)) break;
    }

    NelderMeadResult res{simplex.best(), simplex.best_value(), evals, false};
    if (!opts.lower.empty()) {
        for (std::size_t i = 0; i < res.x.size(); ++i) {
            const double tol = 1e-8 * std::max(1.0, std::fabs(opts.upper[i]));
            if (res.x[i] <= opts.lower[i] + tol || res.x[i] >= opts.upper[i] - tol) res.on_bound = true;
        }
    }
    return res;
}

}  // namespace ipwmeta
