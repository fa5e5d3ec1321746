#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ringlab/grid.hpp"

namespace ringlab {

class RngStream;

/// Discrete variance-preserving noise schedule: beta_i linear from beta_start
/// to beta_end over i = 1..steps, alpha_bar[t] = prod_{i<=t}(1 - beta_i) with
/// alpha_bar[0] = 1.
struct NoiseSchedule {
    int steps = 0;
    double beta_start = 0;
    double beta_end = 0;
    std::vector<double> alpha_bar;

    static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

    double a_bar(int t) const;
    double alpha(int t) const { return std::sqrt(a_bar(t)); }
    double sigma(int t) const { return std::sqrt(1.0 - a_bar(t)); }
    /// log(alpha/sigma); requires t >= 1 (diverges at t = 0).
    double log_snr(int t) const;
};

struct Condition {
    enum class Kind { exact, unconditional, perturbed };
    Kind kind = Kind::unconditional;
    int component = 0;
    double eta = 0.0;

    static Condition exact(int k) { return {Kind::exact, k, 0.0}; }
    static Condition none() { return {Kind::unconditional, 0, 0.0}; }
    static Condition perturbed(int k, double eta) { return {Kind::perturbed, k, eta}; }
};

/// Predictor interface the solvers integrate. Implementations must be pure
/// functions of (x, t, condition).
class DiffusionModel {
  public:
    virtual ~DiffusionModel() = default;

    virtual const NoiseSchedule& schedule() const = 0;

    /// E[x1 - x0 | x_t = x] for the linear interpolation x_t = (1-t)x0 + t*x1.
    virtual LatentGrid rf_velocity(const LatentGrid& x, double t, const Condition& c) const = 0;

    /// E[x0 | x_t = x] under x_t = alpha(t) x0 + sigma(t) eps; 1 <= t <= steps.
    virtual LatentGrid ddim_x0(const LatentGrid& x, int t, const Condition& c) const = 0;

    /// (x - alpha(t) * ddim_x0) / sigma(t); the two predictions reconstruct x exactly.
    virtual LatentGrid ddim_eps(const LatentGrid& x, int t, const Condition& c) const;

    /// J^T v for J the Jacobian of ddim_x0 at x. Unavailable by default.
    virtual LatentGrid ddim_x0_jtv(const LatentGrid& x, int t, const Condition& c,
                                   const LatentGrid& v) const;
};

struct MixtureComponent {
    LatentGrid mean;
    double scale = 0;  // sigma_k, component standard deviation
    double prior = 0;
};

/// Gaussian mixture data distribution with isotropic components; posterior
/// predictors are exact (responsibilities via log-sum-exp).
class MixtureModel : public DiffusionModel {
  public:
    MixtureModel(std::vector<MixtureComponent> components, NoiseSchedule schedule);

    const NoiseSchedule& schedule() const override { return schedule_; }
    const std::vector<MixtureComponent>& components() const { return components_; }
    int component_count() const { return static_cast<int>(components_.size()); }
    int channels() const { return components_[0].mean.channels; }
    int height() const { return components_[0].mean.height; }
    int width() const { return components_[0].mean.width; }

    /// Mixture weights the condition induces: exact -> one-hot, unconditional
    /// -> prior, perturbed(k, eta) -> (1-eta)*onehot(k) + eta*prior.
    std::vector<double> condition_weights(const Condition& c) const;

    LatentGrid rf_velocity(const LatentGrid& x, double t, const Condition& c) const override;
    LatentGrid ddim_x0(const LatentGrid& x, int t, const Condition& c) const override;
    LatentGrid ddim_x0_jtv(const LatentGrid& x, int t, const Condition& c,
                           const LatentGrid& v) const override;

  private:
    std::vector<double> responsibilities(const LatentGrid& x, const std::vector<double>& weights,
                                         const std::vector<double>& center_scale,
                                         const std::vector<double>& variances) const;

    std::vector<MixtureComponent> components_;
    NoiseSchedule schedule_;
};

/// uncond + scale * (cond - uncond); scale 1 returns cond, 0 returns uncond.
LatentGrid cfg_combine(const LatentGrid& cond, const LatentGrid& uncond, double scale);

/// alpha(t) x0 + sigma(t) eps with fresh eps from the stream; t = 0 is identity.
LatentGrid forward_noise(const DiffusionModel& model, const LatentGrid& x0, int t, RngStream& rng);

/// Random smooth pattern: white noise low-passed to spectral radius `cutoff`
/// (shifted-frame disk), normalized to unit RMS over all entries.
LatentGrid low_frequency_template(RngStream& rng, int channels, int height, int width, int cutoff);

/// K equally weighted components with low-frequency templates and common scale.
MixtureModel default_mixture(int channels, int height, int width, int k, std::uint64_t seed,
                             double scale = 0.15, int cutoff = 4, NoiseSchedule schedule = NoiseSchedule::linear());

std::string model_to_json(const MixtureModel& model);
MixtureModel model_from_json(const std::string& text);
MixtureModel load_model(const std::string& path);
void save_model(const std::string& path, const MixtureModel& model);

}  // namespace ringlab
