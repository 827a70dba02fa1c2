#include "sinkem/theory.hpp"

#include <cmath>

namespace sinkem {

namespace {

TheoryCheckItem item(const std::string& name, bool pass, double margin, const std::string& detail = "") {
    return {name, pass, margin, detail};
}

}  // namespace

bool TheoryCheckReport::all_pass() const {
    for (const auto& it : items)
        if (!it.pass) return false;
    return true;
}

std::string TheoryCheckReport::render() const {
    std::string out;
    for (const auto& it : items) {
        out += it.pass ? "[PASS] " : "[FAIL] ";
        out += it.name + " (margin " + format_double(it.margin) + ")";
        if (!it.detail.empty()) out += " " + it.detail;
        out += '\n';
    }
    return out;
}

TheoryCheckReport run_theory_checks(const PopulationSpec& spec, const TheoryCheckOptions& opt) {
    spec.validate();
    TheoryCheckReport report;
    const double ts = spec.theta_star, as = spec.alpha_star;
    const bool symmetric = as <= 0.5 + 1e-12;

    // The entropic loss dominates the negative log-likelihood on the grid,
    // with equality at theta*.
    {
        double worst = 1e300;
        for (double th = opt.grid_lo; th <= opt.grid_hi + 1e-12; th += opt.grid_step) {
            auto L = population_losses(spec, th);
            worst = std::min(worst, L.entropic - L.nll);
        }
        report.items.push_back(item("domination L >= l on grid", worst >= -opt.domination_slack,
                                    worst + opt.domination_slack));
        auto Lstar = population_losses(spec, ts);
        double gap = std::abs(Lstar.entropic - Lstar.nll);
        report.items.push_back(item("coincidence L(theta*) = l(theta*)", gap < opt.coincidence_tolerance,
                                    opt.coincidence_tolerance - gap));
    }

    // Strictly more curvature at theta* (coincidence instead at alpha* = 0.5,
    // where the losses are the same function).
    {
        auto Lf = [&](double th) { return population_losses(spec, th).entropic; };
        auto lf = [&](double th) { return population_losses(spec, th).nll; };
        double gap = second_derivative(Lf, ts) - second_derivative(lf, ts);
        if (symmetric) {
            report.items.push_back(item("curvature coincidence at alpha*=0.5 (strictness skipped)",
                                        std::abs(gap) < 1e-6, 1e-6 - std::abs(gap)));
        } else {
            report.items.push_back(
                item("curvature L'' > l'' at theta*", gap > opt.curvature_margin, gap - opt.curvature_margin));
        }
    }

    // Geometric rate bound from positive initializations.
    {
        double worst = 1e300;
        bool ok = true;
        for (double th0 : {0.25 * ts, 0.5 * ts, 2.0 * ts, 3.0 * ts}) {
            double rho = std::exp(-0.5 * std::min(th0, ts) * std::min(th0, ts));
            double th = th0, bound = std::abs(th0 - ts);
            for (int t = 1; t <= 100; ++t) {
                th = sem_population_step(spec, th);
                bound *= rho;
                double slack = bound + opt.fixed_point_tolerance - std::abs(th - ts);
                worst = std::min(worst, slack);
                if (slack < 0.0) ok = false;
            }
        }
        report.items.push_back(item("geometric rate bound (positive inits)", ok, worst));
    }

    // The constrained iterates never trail the vanilla ones from theta0 >= theta*.
    {
        double worst = 1e300;
        bool ok = true;
        for (double f : {1.5, 2.0, 4.0}) {
            double s = f * ts, v = f * ts;
            for (int t = 0; t < 200; ++t) {
                s = sem_population_step(spec, s);
                v = vem_population_step(spec, v);
                double slack = std::abs(v - ts) + opt.fixed_point_tolerance - std::abs(s - ts);
                worst = std::min(worst, slack);
                if (slack < 0.0) ok = false;
            }
        }
        report.items.push_back(item("sEM never underperforms vEM (theta0 >= theta*)", ok, worst));
    }

    // Monotone trapping of the population sEM iterates.
    {
        bool ok = true;
        double worst = 1e300;
        for (double th0 : {0.3 * ts, 0.7 * ts, 1.5 * ts, 3.0 * ts}) {
            double prev = th0;
            for (int t = 0; t < 200; ++t) {
                double th = sem_population_step(spec, prev);
                double slack;
                if (th0 >= ts)
                    slack = std::min(prev - th, th - ts) + opt.fixed_point_tolerance;
                else
                    slack = std::min(th - prev, ts - th) + opt.fixed_point_tolerance;
                worst = std::min(worst, slack);
                if (slack < 0.0) ok = false;
                prev = th;
            }
        }
        report.items.push_back(item("monotone trapping of sEM iterates", ok, worst));
    }

    // Fixed points: both population maps fix theta*.
    {
        double ds = std::abs(sem_population_step(spec, ts) - ts);
        double dv = std::abs(vem_population_step(spec, ts) - ts);
        double gap = std::max(ds, dv);
        report.items.push_back(
            item("theta* is a fixed point of both maps", gap < opt.fixed_point_tolerance,
                 opt.fixed_point_tolerance - gap));
    }

    // L' has a single zero crossing on (0, grid_hi).
    {
        int crossings = 0;
        double prev = 0.0;
        bool first = true;
        for (double th = opt.grid_step; th <= opt.grid_hi + 1e-12; th += opt.grid_step) {
            double lp = population_entropic_loss_derivative(spec, th);
            if (!first && lp * prev < 0.0) ++crossings;
            prev = lp;
            first = false;
        }
        report.items.push_back(item("single stationary point of L on the positive axis", crossings == 1,
                                    1.0 - std::abs(crossings - 1)));
    }

    // Shape of the tilted-weight function.
    {
        bool ok = true;
        double worst = 1e300;
        for (double th = -5.0; th <= 5.0 + 1e-12; th += 0.25) {
            double a = tilted_alpha(spec, th);
            double slack = a - 0.5;
            worst = std::min(worst, slack);
            if (!(a > 0.5) && !symmetric) ok = false;
        }
        if (symmetric) ok = worst > -1e-9;  // alpha(theta) == 0.5 identically
        report.items.push_back(item("alpha(theta) > 1/2", ok, worst));

        double a0 = std::abs(tilted_alpha(spec, 0.0) - as);
        double at = std::abs(tilted_alpha(spec, ts) - as);
        report.items.push_back(item("alpha(0) = alpha(theta*) = alpha*",
                                    std::max(a0, at) < opt.coincidence_tolerance,
                                    opt.coincidence_tolerance - std::max(a0, at)));

        bool mono = true;
        double prev = tilted_alpha(spec, -5.0);
        for (double th = -4.75; th < -1e-9; th += 0.25) {
            double a = tilted_alpha(spec, th);
            if (a > prev + 1e-9) mono = false;  // decreasing on theta < 0
            prev = a;
        }
        prev = tilted_alpha(spec, ts);
        for (double th = ts + 0.25; th <= ts + 4.0; th += 0.25) {
            double a = tilted_alpha(spec, th);
            if (a < prev - 1e-9) mono = false;  // increasing on theta > theta*
            prev = a;
        }
        report.items.push_back(item("alpha(theta) monotone outside [0, theta*]", mono, mono ? 1.0 : -1.0));

        double lim = std::min(tilted_alpha(spec, 20.0), tilted_alpha(spec, -20.0));
        bool lim_ok = symmetric ? std::abs(lim - 0.5) < 1e-9 : lim > 0.995;
        report.items.push_back(item("alpha(+-20) near its limit", lim_ok, symmetric ? 0.0 : lim - 0.995));
    }

    // Derivative gap L' > l' for theta < 0 (strict only when alpha* > 0.5).
    {
        double worst = 1e300;
        for (double th = opt.grid_lo; th < -1e-9; th += opt.grid_step) {
            double gap = population_entropic_loss_derivative(spec, th) -
                         population_nll_derivative(spec, th, as);
            worst = std::min(worst, gap);
        }
        bool ok = symmetric ? std::abs(worst) < 1e-9 : worst > 0.0;
        report.items.push_back(item(symmetric ? "derivative coincidence for theta < 0 at alpha*=0.5"
                                              : "L' > l' for theta < 0",
                                    ok, worst));
    }

    return report;
}

}  // namespace sinkem
