#include "ringlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ringlab/fft.hpp"
#include "ringlab/rng.hpp"

namespace ringlab {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("NoiseSchedule: steps must be >= 1");
    if (!(beta_start > 0) || !(beta_end < 1) || beta_start > beta_end)
        throw std::invalid_argument("NoiseSchedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.alpha_bar.resize(steps + 1);
    s.alpha_bar[0] = 1.0;
    for (int i = 1; i <= steps; ++i) {
        double beta = steps == 1 ? beta_start
                                 : beta_start + (beta_end - beta_start) * (i - 1) / (steps - 1);
        s.alpha_bar[i] = s.alpha_bar[i - 1] * (1.0 - beta);
    }
    return s;
}

double NoiseSchedule::a_bar(int t) const {
    if (t < 0 || t > steps) throw std::invalid_argument("NoiseSchedule: step index out of range");
    return alpha_bar[t];
}

double NoiseSchedule::log_snr(int t) const {
    if (t < 1) throw std::invalid_argument("NoiseSchedule: log_snr needs t >= 1");
    return std::log(alpha(t) / sigma(t));
}

LatentGrid DiffusionModel::ddim_eps(const LatentGrid& x, int t, const Condition& c) const {
    const NoiseSchedule& sch = schedule();
    if (t < 1 || t > sch.steps) throw std::invalid_argument("ddim_eps: step index out of range");
    LatentGrid x0 = ddim_x0(x, t, c);
    double a = sch.alpha(t), s = sch.sigma(t);
    LatentGrid eps = x;
    for (std::size_t i = 0; i < eps.data.size(); ++i)
        eps.data[i] = (eps.data[i] - a * x0.data[i]) / s;
    return eps;
}

LatentGrid DiffusionModel::ddim_x0_jtv(const LatentGrid&, int, const Condition&,
                                       const LatentGrid&) const {
    throw std::logic_error("analytic x0 gradient unavailable for this model");
}

MixtureModel::MixtureModel(std::vector<MixtureComponent> components, NoiseSchedule schedule)
    : components_(std::move(components)), schedule_(std::move(schedule)) {
    if (components_.empty()) throw std::invalid_argument("MixtureModel: no components");
    if (schedule_.alpha_bar.empty()) throw std::invalid_argument("MixtureModel: empty schedule");
    double prior_sum = 0;
    for (const MixtureComponent& c : components_) {
        if (!c.mean.same_shape(components_[0].mean))
            throw std::invalid_argument("MixtureModel: component shapes differ");
        if (c.scale < 0) throw std::invalid_argument("MixtureModel: negative component scale");
        if (!(c.prior > 0)) throw std::invalid_argument("MixtureModel: priors must be positive");
        prior_sum += c.prior;
    }
    if (std::fabs(prior_sum - 1.0) > 1e-9)
        throw std::invalid_argument("MixtureModel: priors must sum to 1");
    for (MixtureComponent& c : components_) c.prior /= prior_sum;
}

std::vector<double> MixtureModel::condition_weights(const Condition& c) const {
    int k = component_count();
    std::vector<double> w(k, 0.0);
    switch (c.kind) {
        case Condition::Kind::exact:
            if (c.component < 0 || c.component >= k)
                throw std::invalid_argument("condition_weights: component out of range");
            w[c.component] = 1.0;
            break;
        case Condition::Kind::unconditional:
            for (int i = 0; i < k; ++i) w[i] = components_[i].prior;
            break;
        case Condition::Kind::perturbed:
            if (c.component < 0 || c.component >= k)
                throw std::invalid_argument("condition_weights: component out of range");
            if (c.eta < 0 || c.eta > 1)
                throw std::invalid_argument("condition_weights: eta must lie in [0, 1]");
            for (int i = 0; i < k; ++i) w[i] = c.eta * components_[i].prior;
            w[c.component] += 1.0 - c.eta;
            break;
    }
    return w;
}

std::vector<double> MixtureModel::responsibilities(const LatentGrid& x,
                                                   const std::vector<double>& weights,
                                                   const std::vector<double>& center_scale,
                                                   const std::vector<double>& variances) const {
    int k = component_count();
    double n = static_cast<double>(x.size());
    std::vector<double> log_rho(k, -std::numeric_limits<double>::infinity());
    for (int c = 0; c < k; ++c) {
        if (weights[c] <= 0) continue;
        double ssq = 0;
        const LatentGrid& mu = components_[c].mean;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            double d = x.data[i] - center_scale[c] * mu.data[i];
            ssq += d * d;
        }
        log_rho[c] = std::log(weights[c]) -
                     0.5 * n * std::log(2.0 * std::numbers::pi * variances[c]) -
                     ssq / (2.0 * variances[c]);
    }
    double m = *std::max_element(log_rho.begin(), log_rho.end());
    if (!std::isfinite(m)) throw numerical_error("responsibilities: no active component");
    std::vector<double> r(k, 0.0);
    double z = 0;
    for (int c = 0; c < k; ++c) {
        if (weights[c] <= 0) continue;
        r[c] = std::exp(log_rho[c] - m);
        z += r[c];
    }
    for (double& v : r) v /= z;
    return r;
}

LatentGrid MixtureModel::rf_velocity(const LatentGrid& x, double t, const Condition& c) const {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("rf_velocity: t must lie in [0, 1]");
    require_same_shape(x, components_[0].mean, "rf_velocity");
    std::vector<double> w = condition_weights(c);
    int k = component_count();
    std::vector<double> centers(k), variances(k);
    for (int i = 0; i < k; ++i) {
        double s = components_[i].scale;
        centers[i] = 1.0 - t;
        variances[i] = (1.0 - t) * (1.0 - t) * s * s + t * t;
        if (w[i] > 0 && variances[i] == 0)
            throw numerical_error("rf_velocity: singular at t = 0 for a deterministic component");
    }
    std::vector<double> r = responsibilities(x, w, centers, variances);

    LatentGrid v(x.channels, x.height, x.width);
    for (int i = 0; i < k; ++i) {
        if (r[i] <= 0) continue;
        double s = components_[i].scale;
        double coef = (t - (1.0 - t) * s * s) / variances[i];
        const LatentGrid& mu = components_[i].mean;
        for (std::size_t j = 0; j < v.data.size(); ++j) {
            double d = x.data[j] - (1.0 - t) * mu.data[j];
            v.data[j] += r[i] * (coef * d - mu.data[j]);
        }
    }
    return v;
}

LatentGrid MixtureModel::ddim_x0(const LatentGrid& x, int t, const Condition& c) const {
    if (t < 1 || t > schedule_.steps)
        throw std::invalid_argument("ddim_x0: step index out of range");
    require_same_shape(x, components_[0].mean, "ddim_x0");
    double a = schedule_.a_bar(t);
    double ra = std::sqrt(a);
    std::vector<double> w = condition_weights(c);
    int k = component_count();
    std::vector<double> centers(k, ra), variances(k);
    for (int i = 0; i < k; ++i) {
        double s = components_[i].scale;
        variances[i] = a * s * s + (1.0 - a);
    }
    std::vector<double> r = responsibilities(x, w, centers, variances);

    LatentGrid out(x.channels, x.height, x.width);
    for (int i = 0; i < k; ++i) {
        if (r[i] <= 0) continue;
        double s = components_[i].scale;
        double gamma = ra * s * s / variances[i];
        const LatentGrid& mu = components_[i].mean;
        for (std::size_t j = 0; j < out.data.size(); ++j) {
            double d = x.data[j] - ra * mu.data[j];
            out.data[j] += r[i] * (mu.data[j] + gamma * d);
        }
    }
    return out;
}

LatentGrid MixtureModel::ddim_x0_jtv(const LatentGrid& x, int t, const Condition& c,
                                     const LatentGrid& v) const {
    if (t < 1 || t > schedule_.steps)
        throw std::invalid_argument("ddim_x0_jtv: step index out of range");
    require_same_shape(x, components_[0].mean, "ddim_x0_jtv");
    require_same_shape(v, x, "ddim_x0_jtv");
    double a = schedule_.a_bar(t);
    double ra = std::sqrt(a);
    std::vector<double> w = condition_weights(c);
    int k = component_count();
    std::vector<double> centers(k, ra), variances(k);
    for (int i = 0; i < k; ++i)
        variances[i] = a * components_[i].scale * components_[i].scale + (1.0 - a);
    std::vector<double> r = responsibilities(x, w, centers, variances);

    // J = sum_k [ r_k gamma_k I + g_k grad(r_k)^T ], grad(r_k) = r_k (b - b_k),
    // b_k = (x - ra mu_k)/u_k, b = sum r_j b_j, g_k = mu_k + gamma_k (x - ra mu_k).
    // J^T v = (sum r_k gamma_k) v + sum_k r_k (G - g_k.v)/u_k * (x - ra mu_k)
    // with G = sum_k r_k (g_k.v).
    std::vector<double> gamma(k), gdotv(k, 0.0);
    double rg = 0, big_g = 0;
    for (int i = 0; i < k; ++i) {
        if (r[i] <= 0) continue;
        double s = components_[i].scale;
        gamma[i] = ra * s * s / variances[i];
        rg += r[i] * gamma[i];
        const LatentGrid& mu = components_[i].mean;
        double acc = 0;
        for (std::size_t j = 0; j < x.data.size(); ++j)
            acc += (mu.data[j] + gamma[i] * (x.data[j] - ra * mu.data[j])) * v.data[j];
        gdotv[i] = acc;
        big_g += r[i] * acc;
    }
    LatentGrid out = rg * v;
    for (int i = 0; i < k; ++i) {
        if (r[i] <= 0) continue;
        double coef = r[i] * (big_g - gdotv[i]) / variances[i];
        const LatentGrid& mu = components_[i].mean;
        for (std::size_t j = 0; j < out.data.size(); ++j)
            out.data[j] += coef * (x.data[j] - ra * mu.data[j]);
    }
    return out;
}

LatentGrid cfg_combine(const LatentGrid& cond, const LatentGrid& uncond, double scale) {
    require_same_shape(cond, uncond, "cfg_combine");
    if (scale == 1.0) return cond;
    if (scale == 0.0) return uncond;
    LatentGrid out = uncond;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] += scale * (cond.data[i] - uncond.data[i]);
    return out;
}

LatentGrid forward_noise(const DiffusionModel& model, const LatentGrid& x0, int t, RngStream& rng) {
    const NoiseSchedule& sch = model.schedule();
    double a = sch.alpha(t), s = sch.sigma(t);
    LatentGrid out = x0;
    for (double& v : out.data) v = a * v + s * rng.normal();
    return out;
}

LatentGrid low_frequency_template(RngStream& rng, int channels, int height, int width, int cutoff) {
    if (cutoff < 1) throw std::invalid_argument("low_frequency_template: cutoff must be >= 1");
    LatentGrid noise = sample_gaussian(rng, channels, height, width);
    LatentGrid out(channels, height, width);
    double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
    for (int c = 0; c < channels; ++c) {
        ComplexGrid spec = fftshift(fft2(noise, c));
        for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j) {
                double di = i - cy, dj = j - cx;
                if (std::sqrt(di * di + dj * dj) > cutoff) spec.at(i, j) = cplx(0.0, 0.0);
            }
        ComplexGrid plane = ifft2(ifftshift(spec));
        for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j) out.at(c, i, j) = plane.at(i, j).real();
    }
    double rms = std::sqrt(norms(out).l2sq / static_cast<double>(out.size()));
    if (rms == 0) throw numerical_error("low_frequency_template: degenerate all-zero pattern");
    out *= 1.0 / rms;
    return out;
}

MixtureModel default_mixture(int channels, int height, int width, int k, std::uint64_t seed,
                             double scale, int cutoff, NoiseSchedule schedule) {
    if (k < 1) throw std::invalid_argument("default_mixture: need at least one component");
    std::vector<MixtureComponent> comps;
    comps.reserve(k);
    for (int i = 0; i < k; ++i) {
        RngStream rng(seed, static_cast<std::uint64_t>(i));
        comps.push_back({low_frequency_template(rng, channels, height, width, cutoff), scale,
                         1.0 / static_cast<double>(k)});
    }
    return MixtureModel(std::move(comps), std::move(schedule));
}

namespace {

using nlohmann::json;

json grid_to_json(const LatentGrid& g) {
    return json{{"channels", g.channels}, {"height", g.height}, {"width", g.width}, {"values", g.data}};
}

LatentGrid grid_from_json(const json& j) {
    LatentGrid g(j.at("channels").get<int>(), j.at("height").get<int>(), j.at("width").get<int>());
    std::vector<double> vals = j.at("values").get<std::vector<double>>();
    if (vals.size() != g.data.size())
        throw std::invalid_argument("model json: template value count does not match shape");
    g.data = std::move(vals);
    return g;
}

}  // namespace

std::string model_to_json(const MixtureModel& model) {
    json j;
    j["schema"] = 1;
    j["kind"] = "gaussian_mixture";
    j["schedule"] = {{"steps", model.schedule().steps},
                     {"beta_start", model.schedule().beta_start},
                     {"beta_end", model.schedule().beta_end}};
    j["components"] = json::array();
    for (const MixtureComponent& c : model.components()) {
        j["components"].push_back(
            {{"prior", c.prior}, {"scale", c.scale}, {"template", grid_to_json(c.mean)}});
    }
    return j.dump(2) + "\n";
}

MixtureModel model_from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.value("schema", 0) != 1) throw std::invalid_argument("model json: unsupported schema");
    const json& sj = j.at("schedule");
    NoiseSchedule sch = NoiseSchedule::linear(sj.value("steps", 1000), sj.value("beta_start", 1e-4),
                                              sj.value("beta_end", 0.02));
    std::vector<MixtureComponent> comps;
    for (const json& cj : j.at("components")) {
        MixtureComponent c;
        c.prior = cj.at("prior").get<double>();
        c.scale = cj.at("scale").get<double>();
        const json& tj = cj.at("template");
        if (tj.contains("values")) {
            c.mean = grid_from_json(tj);
        } else if (tj.contains("seed")) {
            RngStream rng(tj.at("seed").get<std::uint64_t>(), tj.value("stream", std::uint64_t{0}));
            json shape = j.at("shape");
            c.mean = low_frequency_template(rng, shape.at(0).get<int>(), shape.at(1).get<int>(),
                                            shape.at(2).get<int>(), tj.value("cutoff", 4));
        } else {
            throw std::invalid_argument("model json: template needs values or seed");
        }
        comps.push_back(std::move(c));
    }
    return MixtureModel(std::move(comps), std::move(sch));
}

MixtureModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open model file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return model_from_json(buf.str());
}

void save_model(const std::string& path, const MixtureModel& model) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
    out << model_to_json(model);
}

}  // namespace ringlab
