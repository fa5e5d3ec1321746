#pragma once

#include <functional>
#include <vector>

#include "ringlab/grid.hpp"
#include "ringlab/model.hpp"

namespace ringlab {

/// Uniform rectified-flow grid {0, 1/steps, ..., 1}, ascending.
std::vector<double> rf_time_grid(int steps);

/// Uniform ancestral index grid {0, q, 2q, ..., total} with q = total/steps,
/// ascending; steps must divide total.
std::vector<int> ddim_time_grid(int steps, int total);

enum class GradientMode { analytic, finite_diff };

struct SolverConfig {
    int steps = 28;
    double guidance_scale = 3.5;
    int fp_max_iters = 50;   // implicit fixed-point iterations per step
    double fp_tol = 1e-10;   // L_inf displacement declaring the solve converged
    int gd_max_iters = 20;   // descent iterations per exact-inversion step
    double gd_step = 0.1;    // initial descent step, halved until the objective drops
    double gd_tol = 1e-12;   // mean-squared residual declaring the solve converged
    GradientMode gd_gradient = GradientMode::analytic;
    double fd_step = 1e-5;   // central-difference probe for finite_diff mode
};

/// Called with (steps completed, current time, current state); the initial
/// state is reported with 0 steps completed.
using StepObserver = std::function<void(int, double, const LatentGrid&)>;

struct InversionResult {
    LatentGrid x;
    bool converged = true;
    std::vector<int> flagged_steps;  // 1-based step numbers whose solve missed tolerance
    double final_residual = 0;       // worst accepted per-step residual
    // Per-step solve residuals: the seed's residual and the accepted one.
    // Implicit inversion reports L_inf fixed-point displacement, exact
    // inversion the mean-squared step-equation mismatch.
    std::vector<double> step_initial_residual;
    std::vector<double> step_final_residual;
};

/// Classifier-free guidance wrappers: uncond + scale * (cond - uncond),
/// evaluated once when the combination is the identity.
LatentGrid guided_velocity(const DiffusionModel& m, const LatentGrid& x, double t,
                           const Condition& c, double scale);
LatentGrid guided_x0(const DiffusionModel& m, const LatentGrid& x, int t, const Condition& c,
                     double scale);
LatentGrid guided_eps(const DiffusionModel& m, const LatentGrid& x, int t, const Condition& c,
                      double scale);
LatentGrid guided_x0_jtv(const DiffusionModel& m, const LatentGrid& x, int t, const Condition& c,
                         double scale, const LatentGrid& v);

/// Euler integration of the guided velocity from t = 1 down to 0.
LatentGrid rf_sample(const DiffusionModel& m, const LatentGrid& x1, const Condition& c,
                     const SolverConfig& cfg, const StepObserver& obs = {});

/// Explicit Euler from t = 0 up to 1, velocity frozen at each step's lower
/// endpoint; the cheap baseline that does not undo rf_sample exactly.
InversionResult rf_invert_naive(const DiffusionModel& m, const LatentGrid& x0, const Condition& c,
                                const SolverConfig& cfg, const StepObserver& obs = {});

/// Implicit Euler from t = 0 up to 1: each step solves z = x + dt * v(z, t_hi)
/// by fixed-point iteration seeded with the explicit step, so a converged
/// solve inverts the corresponding rf_sample step exactly.
InversionResult rf_invert_implicit(const DiffusionModel& m, const LatentGrid& x0,
                                   const Condition& c, const SolverConfig& cfg,
                                   const StepObserver& obs = {});

/// Deterministic ancestral sampling x_lo = alpha_lo * x0_hat + sigma_lo * eps_hat
/// with both predictions taken at the upper index of each step.
LatentGrid ddim_sample(const DiffusionModel& m, const LatentGrid& xT, const Condition& c,
                       const SolverConfig& cfg, const StepObserver& obs = {});

/// Re-noising with predictions frozen at each step's lower index; the lower
/// index 0 is evaluated at index 1 since the predictors start there.
InversionResult ddim_invert_naive(const DiffusionModel& m, const LatentGrid& x0,
                                  const Condition& c, const SolverConfig& cfg,
                                  const StepObserver& obs = {});

/// Per step, finds z at the upper index whose ddim_sample step lands on the
/// current state, by gradient descent on the squared mismatch (backtracking
/// line search seeded with the naive step, so it never does worse).
InversionResult ddim_invert_exact(const DiffusionModel& m, const LatentGrid& x0,
                                  const Condition& c, const SolverConfig& cfg,
                                  const StepObserver& obs = {});

struct DpmHistory {
    bool has_prev = false;
    LatentGrid prev_x0;
    double prev_lambda = 0;
};

/// One multistep exponential-integrator step from index t_from down to t_to:
/// x_to = (sigma_to/sigma_from) x - alpha_to * expm1(-h) * D with
/// h = log_snr(t_to) - log_snr(t_from); D is x0_hat at first order and the
/// history-extrapolated x0_hat + (x0_hat - prev)/(2r), r = h_prev/h, at second.
/// Steps to t_to = 0 always use the exact endpoint x0_hat. Order 2 without
/// history throws; `history`, when given, is updated for the next step.
LatentGrid dpmpp_step(const DiffusionModel& m, const LatentGrid& x, int t_from, int t_to,
                      int order, const Condition& c, double scale, DpmHistory* history);

/// Runs dpmpp_step over an explicit descending index grid; at order 2 the
/// first step (no history yet) and a final step to 0 fall back to first order.
LatentGrid dpmpp_sample_on_grid(const DiffusionModel& m, const LatentGrid& xT,
                                const std::vector<int>& times, const Condition& c, double scale,
                                int order, const StepObserver& obs = {});

/// dpmpp_sample_on_grid over the uniform grid for cfg.steps.
LatentGrid dpmpp_sample(const DiffusionModel& m, const LatentGrid& xT, const Condition& c,
                        const SolverConfig& cfg, int order, const StepObserver& obs = {});

}  // namespace ringlab
