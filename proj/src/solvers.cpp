#include "ringlab/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace ringlab {

std::vector<double> rf_time_grid(int steps) {
    if (steps < 1) throw std::invalid_argument("rf_time_grid: steps must be >= 1");
    std::vector<double> t(steps + 1);
    for (int i = 0; i <= steps; ++i) t[i] = static_cast<double>(i) / steps;
    return t;
}

std::vector<int> ddim_time_grid(int steps, int total) {
    if (steps < 1) throw std::invalid_argument("ddim_time_grid: steps must be >= 1");
    if (total < 1 || total % steps != 0)
        throw std::invalid_argument("ddim_time_grid: steps must divide the schedule length");
    int q = total / steps;
    std::vector<int> t(steps + 1);
    for (int i = 0; i <= steps; ++i) t[i] = i * q;
    return t;
}

LatentGrid guided_velocity(const DiffusionModel& m, const LatentGrid& x, double t,
                           const Condition& c, double scale) {
    if (scale == 1.0 || c.kind == Condition::Kind::unconditional) return m.rf_velocity(x, t, c);
    return cfg_combine(m.rf_velocity(x, t, c), m.rf_velocity(x, t, Condition::none()), scale);
}

LatentGrid guided_x0(const DiffusionModel& m, const LatentGrid& x, int t, const Condition& c,
                     double scale) {
    if (scale == 1.0 || c.kind == Condition::Kind::unconditional) return m.ddim_x0(x, t, c);
    return cfg_combine(m.ddim_x0(x, t, c), m.ddim_x0(x, t, Condition::none()), scale);
}

LatentGrid guided_eps(const DiffusionModel& m, const LatentGrid& x, int t, const Condition& c,
                      double scale) {
    const NoiseSchedule& sch = m.schedule();
    LatentGrid x0 = guided_x0(m, x, t, c, scale);
    double a = sch.alpha(t), s = sch.sigma(t);
    LatentGrid eps = x;
    for (std::size_t i = 0; i < eps.data.size(); ++i)
        eps.data[i] = (eps.data[i] - a * x0.data[i]) / s;
    return eps;
}

LatentGrid guided_x0_jtv(const DiffusionModel& m, const LatentGrid& x, int t, const Condition& c,
                         double scale, const LatentGrid& v) {
    if (scale == 1.0 || c.kind == Condition::Kind::unconditional)
        return m.ddim_x0_jtv(x, t, c, v);
    return cfg_combine(m.ddim_x0_jtv(x, t, c, v), m.ddim_x0_jtv(x, t, Condition::none(), v),
                       scale);
}

namespace {

void check_finite(const LatentGrid& x, const char* who) {
    if (!x.all_finite()) throw numerical_error(std::string(who) + ": non-finite state");
}

}  // namespace

LatentGrid rf_sample(const DiffusionModel& m, const LatentGrid& x1, const Condition& c,
                     const SolverConfig& cfg, const StepObserver& obs) {
    std::vector<double> grid = rf_time_grid(cfg.steps);
    LatentGrid x = x1;
    if (obs) obs(0, 1.0, x);
    for (int i = cfg.steps - 1; i >= 0; --i) {
        double t_hi = grid[i + 1], dt = grid[i + 1] - grid[i];
        axpy(x, -dt, guided_velocity(m, x, t_hi, c, cfg.guidance_scale));
        check_finite(x, "rf_sample");
        if (obs) obs(cfg.steps - i, grid[i], x);
    }
    return x;
}

InversionResult rf_invert_naive(const DiffusionModel& m, const LatentGrid& x0, const Condition& c,
                                const SolverConfig& cfg, const StepObserver& obs) {
    std::vector<double> grid = rf_time_grid(cfg.steps);
    InversionResult res;
    res.x = x0;
    if (obs) obs(0, 0.0, res.x);
    for (int i = 0; i < cfg.steps; ++i) {
        double dt = grid[i + 1] - grid[i];
        axpy(res.x, dt, guided_velocity(m, res.x, grid[i], c, cfg.guidance_scale));
        check_finite(res.x, "rf_invert_naive");
        if (obs) obs(i + 1, grid[i + 1], res.x);
    }
    return res;
}

InversionResult rf_invert_implicit(const DiffusionModel& m, const LatentGrid& x0,
                                   const Condition& c, const SolverConfig& cfg,
                                   const StepObserver& obs) {
    std::vector<double> grid = rf_time_grid(cfg.steps);
    InversionResult res;
    res.x = x0;
    if (obs) obs(0, 0.0, res.x);
    for (int i = 0; i < cfg.steps; ++i) {
        double t_lo = grid[i], t_hi = grid[i + 1], dt = t_hi - t_lo;
        LatentGrid z = res.x;
        axpy(z, dt, guided_velocity(m, res.x, t_lo, c, cfg.guidance_scale));
        double disp = 0;
        bool ok = false;
        for (int k = 0; k < cfg.fp_max_iters; ++k) {
            LatentGrid z_new = res.x;
            axpy(z_new, dt, guided_velocity(m, z, t_hi, c, cfg.guidance_scale));
            disp = max_abs_diff(z_new, z);
            if (k == 0) res.step_initial_residual.push_back(disp);
            z = std::move(z_new);
            if (disp <= cfg.fp_tol) {
                ok = true;
                break;
            }
        }
        res.step_final_residual.push_back(disp);
        res.final_residual = std::max(res.final_residual, disp);
        if (!ok) {
            res.converged = false;
            res.flagged_steps.push_back(i + 1);
        }
        res.x = std::move(z);
        check_finite(res.x, "rf_invert_implicit");
        if (obs) obs(i + 1, t_hi, res.x);
    }
    return res;
}

LatentGrid ddim_sample(const DiffusionModel& m, const LatentGrid& xT, const Condition& c,
                       const SolverConfig& cfg, const StepObserver& obs) {
    const NoiseSchedule& sch = m.schedule();
    std::vector<int> times = ddim_time_grid(cfg.steps, sch.steps);
    LatentGrid x = xT;
    if (obs) obs(0, static_cast<double>(times.back()), x);
    for (int i = cfg.steps - 1; i >= 0; --i) {
        int t_hi = times[i + 1], t_lo = times[i];
        LatentGrid x0 = guided_x0(m, x, t_hi, c, cfg.guidance_scale);
        double a_hi = sch.alpha(t_hi), s_hi = sch.sigma(t_hi);
        double a_lo = sch.alpha(t_lo), s_lo = sch.sigma(t_lo);
        for (std::size_t j = 0; j < x.data.size(); ++j) {
            double eps = (x.data[j] - a_hi * x0.data[j]) / s_hi;
            x.data[j] = a_lo * x0.data[j] + s_lo * eps;
        }
        check_finite(x, "ddim_sample");
        if (obs) obs(cfg.steps - i, static_cast<double>(t_lo), x);
    }
    return x;
}

InversionResult ddim_invert_naive(const DiffusionModel& m, const LatentGrid& x0,
                                  const Condition& c, const SolverConfig& cfg,
                                  const StepObserver& obs) {
    const NoiseSchedule& sch = m.schedule();
    std::vector<int> times = ddim_time_grid(cfg.steps, sch.steps);
    InversionResult res;
    res.x = x0;
    if (obs) obs(0, 0.0, res.x);
    for (int i = 0; i < cfg.steps; ++i) {
        int t_lo = times[i], t_hi = times[i + 1];
        int t_eval = std::max(t_lo, 1);
        LatentGrid pred = guided_x0(m, res.x, t_eval, c, cfg.guidance_scale);
        double a_ev = sch.alpha(t_eval), s_ev = sch.sigma(t_eval);
        double a_hi = sch.alpha(t_hi), s_hi = sch.sigma(t_hi);
        for (std::size_t j = 0; j < res.x.data.size(); ++j) {
            double eps = (res.x.data[j] - a_ev * pred.data[j]) / s_ev;
            res.x.data[j] = a_hi * pred.data[j] + s_hi * eps;
        }
        check_finite(res.x, "ddim_invert_naive");
        if (obs) obs(i + 1, static_cast<double>(t_hi), res.x);
    }
    return res;
}

namespace {

// Sampler step from index t_hi expressed as G(z) = c1 * z + c2 * x0_hat(z, t_hi):
// c1 = sigma_lo/sigma_hi and c2 = alpha_lo - sigma_lo * alpha_hi / sigma_hi.
struct StepMap {
    const DiffusionModel& m;
    const Condition& c;
    double scale;
    int t_hi;
    double c1, c2;

    LatentGrid operator()(const LatentGrid& z) const {
        LatentGrid g = guided_x0(m, z, t_hi, c, scale);
        for (std::size_t j = 0; j < g.data.size(); ++j)
            g.data[j] = c1 * z.data[j] + c2 * g.data[j];
        return g;
    }

    double objective(const LatentGrid& z, const LatentGrid& target) const {
        LatentGrid g = (*this)(z);
        double f = 0;
        for (std::size_t j = 0; j < g.data.size(); ++j) {
            double d = g.data[j] - target.data[j];
            f += d * d;
        }
        return f;
    }

    LatentGrid gradient(const LatentGrid& z, const LatentGrid& target, GradientMode mode,
                        double fd_step) const {
        if (mode == GradientMode::finite_diff) {
            LatentGrid grad(z.channels, z.height, z.width);
            LatentGrid probe = z;
            for (std::size_t j = 0; j < z.data.size(); ++j) {
                probe.data[j] = z.data[j] + fd_step;
                double fp = objective(probe, target);
                probe.data[j] = z.data[j] - fd_step;
                double fm = objective(probe, target);
                probe.data[j] = z.data[j];
                grad.data[j] = (fp - fm) / (2.0 * fd_step);
            }
            return grad;
        }
        LatentGrid delta = (*this)(z);
        delta -= target;
        LatentGrid grad = guided_x0_jtv(m, z, t_hi, c, scale, delta);
        for (std::size_t j = 0; j < grad.data.size(); ++j)
            grad.data[j] = 2.0 * (c1 * delta.data[j] + c2 * grad.data[j]);
        return grad;
    }
};

}  // namespace

InversionResult ddim_invert_exact(const DiffusionModel& m, const LatentGrid& x0,
                                  const Condition& c, const SolverConfig& cfg,
                                  const StepObserver& obs) {
    const NoiseSchedule& sch = m.schedule();
    std::vector<int> times = ddim_time_grid(cfg.steps, sch.steps);
    double n = static_cast<double>(x0.size());
    InversionResult res;
    res.x = x0;
    if (obs) obs(0, 0.0, res.x);
    for (int i = 0; i < cfg.steps; ++i) {
        int t_lo = times[i], t_hi = times[i + 1];
        double s_hi = sch.sigma(t_hi), s_lo = sch.sigma(t_lo);
        StepMap map{m, c, cfg.guidance_scale, t_hi, s_lo / s_hi,
                    sch.alpha(t_lo) - s_lo * sch.alpha(t_hi) / s_hi};
        const LatentGrid target = res.x;

        int t_eval = std::max(t_lo, 1);
        LatentGrid pred = guided_x0(m, target, t_eval, c, cfg.guidance_scale);
        double a_ev = sch.alpha(t_eval), s_ev = sch.sigma(t_eval);
        double a_hi = sch.alpha(t_hi);
        LatentGrid z(target.channels, target.height, target.width);
        for (std::size_t j = 0; j < z.data.size(); ++j) {
            double eps = (target.data[j] - a_ev * pred.data[j]) / s_ev;
            z.data[j] = a_hi * pred.data[j] + s_hi * eps;
        }

        double f_cur = map.objective(z, target);
        res.step_initial_residual.push_back(f_cur / n);
        double step = cfg.gd_step;
        for (int iter = 0; iter < cfg.gd_max_iters && f_cur / n > cfg.gd_tol; ++iter) {
            LatentGrid grad = map.gradient(z, target, cfg.gd_gradient, cfg.fd_step);
            bool improved = false;
            for (int halve = 0; halve < 40; ++halve) {
                LatentGrid z_try = z;
                axpy(z_try, -step, grad);
                double f_try = map.objective(z_try, target);
                if (f_try < f_cur) {
                    z = std::move(z_try);
                    f_cur = f_try;
                    improved = true;
                    break;
                }
                step /= 2.0;
            }
            if (!improved) break;
            step = std::min(step * 2.0, cfg.gd_step);
        }

        res.step_final_residual.push_back(f_cur / n);
        res.final_residual = std::max(res.final_residual, f_cur / n);
        if (f_cur / n > cfg.gd_tol) {
            res.converged = false;
            res.flagged_steps.push_back(i + 1);
        }
        res.x = std::move(z);
        check_finite(res.x, "ddim_invert_exact");
        if (obs) obs(i + 1, static_cast<double>(t_hi), res.x);
    }
    return res;
}

LatentGrid dpmpp_step(const DiffusionModel& m, const LatentGrid& x, int t_from, int t_to,
                      int order, const Condition& c, double scale, DpmHistory* history) {
    const NoiseSchedule& sch = m.schedule();
    if (t_from < 1 || t_from > sch.steps || t_to < 0 || t_to >= t_from)
        throw std::invalid_argument("dpmpp_step: need schedule length >= t_from > t_to >= 0");
    if (order != 1 && order != 2) throw std::invalid_argument("dpmpp_step: order must be 1 or 2");
    double lam_from = sch.log_snr(t_from);
    LatentGrid x0 = guided_x0(m, x, t_from, c, scale);
    LatentGrid out;
    if (t_to == 0) {
        out = x0;
    } else {
        double h = sch.log_snr(t_to) - lam_from;
        double coef = -sch.alpha(t_to) * std::expm1(-h);
        LatentGrid d = x0;
        if (order == 2) {
            if (!history || !history->has_prev)
                throw std::logic_error("dpmpp_step: order 2 needs a previous prediction");
            double r = (lam_from - history->prev_lambda) / h;
            double w = 1.0 / (2.0 * r);
            for (std::size_t j = 0; j < d.data.size(); ++j)
                d.data[j] += w * (x0.data[j] - history->prev_x0.data[j]);
        }
        out = (sch.sigma(t_to) / sch.sigma(t_from)) * x;
        axpy(out, coef, d);
    }
    if (history) {
        history->prev_x0 = std::move(x0);
        history->prev_lambda = lam_from;
        history->has_prev = true;
    }
    check_finite(out, "dpmpp_step");
    return out;
}

LatentGrid dpmpp_sample_on_grid(const DiffusionModel& m, const LatentGrid& xT,
                                const std::vector<int>& times, const Condition& c, double scale,
                                int order, const StepObserver& obs) {
    if (times.size() < 2) throw std::invalid_argument("dpmpp_sample_on_grid: need >= 2 times");
    for (std::size_t i = 0; i + 1 < times.size(); ++i)
        if (times[i] <= times[i + 1])
            throw std::invalid_argument("dpmpp_sample_on_grid: times must be strictly descending");
    LatentGrid x = xT;
    DpmHistory hist;
    if (obs) obs(0, static_cast<double>(times.front()), x);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
        int use_order = (order == 2 && hist.has_prev && times[i + 1] > 0) ? 2 : 1;
        x = dpmpp_step(m, x, times[i], times[i + 1], use_order, c, scale, &hist);
        if (obs) obs(static_cast<int>(i) + 1, static_cast<double>(times[i + 1]), x);
    }
    return x;
}

LatentGrid dpmpp_sample(const DiffusionModel& m, const LatentGrid& xT, const Condition& c,
                        const SolverConfig& cfg, int order, const StepObserver& obs) {
    std::vector<int> times = ddim_time_grid(cfg.steps, m.schedule().steps);
    std::reverse(times.begin(), times.end());
    return dpmpp_sample_on_grid(m, xT, times, c, cfg.guidance_scale, order, obs);
}

}  // namespace ringlab
