#include "ringlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "ringlab/latent_io.hpp"
#include "ringlab/rng.hpp"
#include "ringlab/stats.hpp"

namespace ringlab {

namespace {

using nlohmann::json;

constexpr const char* kCsvHeader =
    "trial,arm,attack,guidance,mean_l1,nmae,nmse,roundtrip_nmse,fp_converged";

std::string fmt17(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

std::string fmt6(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

std::uint64_t stream_for(int trial, int purpose) {
    return static_cast<std::uint64_t>(trial) * 8 + static_cast<std::uint64_t>(purpose);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw io_error("short write to " + path);
}

const char* pattern_name(KeyPattern p) {
    return p == KeyPattern::hermitian_ring_constant ? "hermitian_ring_constant" : "ring_constant";
}

KeyPattern pattern_from_name(const std::string& s) {
    if (s == "hermitian_ring_constant") return KeyPattern::hermitian_ring_constant;
    if (s == "ring_constant") return KeyPattern::ring_constant;
    throw std::invalid_argument("unknown key pattern: " + s);
}

void validate_config(const ExperimentConfig& c) {
    if (c.trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (c.workers < 1) throw std::invalid_argument("config: workers must be >= 1");
    if (c.arms.empty()) throw std::invalid_argument("config: arms must not be empty");
    for (const std::string& a : c.arms)
        if (a != "wm" && a != "clean") throw std::invalid_argument("config: unknown arm " + a);
    if (c.sampler == "rf") {
        if (c.inversion != "naive" && c.inversion != "implicit")
            throw std::invalid_argument("config: rf inversion must be naive or implicit");
    } else if (c.sampler == "ddim") {
        if (c.inversion != "naive" && c.inversion != "exact")
            throw std::invalid_argument("config: ddim inversion must be naive or exact");
    } else {
        throw std::invalid_argument("config: sampler must be rf or ddim");
    }
    if (c.guidance != "matched" && c.guidance != "null" && c.guidance != "perturbed" &&
        c.guidance != "adversarial")
        throw std::invalid_argument("config: unknown guidance policy " + c.guidance);
    if (c.guidance_eta < 0 || c.guidance_eta > 1)
        throw std::invalid_argument("config: guidance_eta must lie in [0, 1]");
    if (c.attack == AttackKind::gaussian_blur && !(c.attack_sigma > 0))
        throw std::invalid_argument("config: gaussian_blur needs positive sigma");
    if (c.attack == AttackKind::additive_noise && c.attack_sigma < 0)
        throw std::invalid_argument("config: additive_noise needs non-negative sigma");
}

Condition inversion_condition(const ExperimentConfig& c, int k, int count) {
    if (c.guidance == "matched") return Condition::exact(k);
    if (c.guidance == "null") return Condition::none();
    if (c.guidance == "perturbed") return Condition::perturbed(k, c.guidance_eta);
    if (c.guidance == "adversarial") return Condition::exact((k + 1) % count);
    throw std::invalid_argument("unknown guidance policy: " + c.guidance);
}

AttackSpec build_attack_spec(const ExperimentConfig& c, int trial) {
    AttackSpec a;
    a.kind = c.attack;
    a.sigma = c.attack_sigma;
    a.kernel_radius = c.attack_kernel_radius;
    a.seed = c.attack_seed_set ? c.attack_seed : c.global_seed;
    a.stream = stream_for(trial, 2);
    return a;
}

double nmse_between(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "nmse");
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        num += d * d;
        den += b.data[i] * b.data[i];
    }
    if (den == 0) throw numerical_error("nmse: zero reference");
    return num / den;
}

}  // namespace

ExperimentConfig default_config(const std::string& preset) {
    ExperimentConfig c;
    c.preset = preset;
    if (preset == "sd")
        c.channels = 4;
    else if (preset == "flux")
        c.channels = 16;
    else
        throw std::invalid_argument("unknown preset: " + preset);
    return c;
}

ExperimentConfig config_from_json(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig c = default_config(j.value("preset", "sd"));
    c.channels = j.value("channels", c.channels);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.components = j.value("components", c.components);
    c.component_scale = j.value("component_scale", c.component_scale);
    c.template_cutoff = j.value("template_cutoff", c.template_cutoff);
    c.model_seed = j.value("model_seed", c.model_seed);
    c.model_file = j.value("model_file", c.model_file);
    if (j.contains("watermark")) {
        const json& w = j.at("watermark");
        c.wm_radius = w.value("radius", c.wm_radius);
        c.wm_channel = w.value("channel", c.wm_channel);
        if (w.contains("pattern")) c.wm_pattern = pattern_from_name(w.at("pattern"));
        c.wm_seed = w.value("seed", c.wm_seed);
    }
    c.sampler = j.value("sampler", c.sampler);
    c.inversion = j.value("inversion", c.inversion);
    if (j.contains("solver")) {
        const json& s = j.at("solver");
        c.solver.steps = s.value("steps", c.solver.steps);
        c.solver.guidance_scale = s.value("guidance_scale", c.solver.guidance_scale);
        c.solver.fp_max_iters = s.value("fp_max_iters", c.solver.fp_max_iters);
        c.solver.fp_tol = s.value("fp_tol", c.solver.fp_tol);
        c.solver.gd_max_iters = s.value("gd_max_iters", c.solver.gd_max_iters);
        c.solver.gd_step = s.value("gd_step", c.solver.gd_step);
        c.solver.gd_tol = s.value("gd_tol", c.solver.gd_tol);
        if (s.contains("gradient")) {
            std::string g = s.at("gradient");
            if (g == "analytic")
                c.solver.gd_gradient = GradientMode::analytic;
            else if (g == "finite_diff")
                c.solver.gd_gradient = GradientMode::finite_diff;
            else
                throw std::invalid_argument("config: gradient must be analytic or finite_diff");
        }
        c.solver.fd_step = s.value("fd_step", c.solver.fd_step);
    }
    c.guidance = j.value("guidance", c.guidance);
    c.guidance_eta = j.value("guidance_eta", c.guidance_eta);
    if (j.contains("attack")) {
        const json& a = j.at("attack");
        if (a.contains("kind")) c.attack = attack_kind_from_string(a.at("kind"));
        double default_sigma = c.attack == AttackKind::gaussian_blur    ? 1.0
                               : c.attack == AttackKind::additive_noise ? 0.1
                                                                        : 0.0;
        c.attack_sigma = a.value("sigma", default_sigma);
        c.attack_kernel_radius = a.value("kernel_radius", c.attack_kernel_radius);
        if (a.contains("seed") && !a.at("seed").is_null()) {
            c.attack_seed = a.at("seed").get<std::uint64_t>();
            c.attack_seed_set = true;
        }
    }
    if (j.contains("arms")) c.arms = j.at("arms").get<std::vector<std::string>>();
    c.trials = j.value("trials", c.trials);
    c.workers = j.value("workers", c.workers);
    c.global_seed = j.value("global_seed", c.global_seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    validate_config(c);
    return c;
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["channels"] = c.channels;
    j["height"] = c.height;
    j["width"] = c.width;
    j["components"] = c.components;
    j["component_scale"] = c.component_scale;
    j["template_cutoff"] = c.template_cutoff;
    j["model_seed"] = c.model_seed;
    if (!c.model_file.empty()) j["model_file"] = c.model_file;
    j["watermark"] = {{"radius", c.wm_radius},
                      {"channel", c.wm_channel},
                      {"pattern", pattern_name(c.wm_pattern)},
                      {"seed", c.wm_seed}};
    j["sampler"] = c.sampler;
    j["inversion"] = c.inversion;
    j["solver"] = {{"steps", c.solver.steps},
                   {"guidance_scale", c.solver.guidance_scale},
                   {"fp_max_iters", c.solver.fp_max_iters},
                   {"fp_tol", c.solver.fp_tol},
                   {"gd_max_iters", c.solver.gd_max_iters},
                   {"gd_step", c.solver.gd_step},
                   {"gd_tol", c.solver.gd_tol},
                   {"gradient",
                    c.solver.gd_gradient == GradientMode::analytic ? "analytic" : "finite_diff"},
                   {"fd_step", c.solver.fd_step}};
    j["guidance"] = c.guidance;
    j["guidance_eta"] = c.guidance_eta;
    j["attack"] = {{"kind", to_string(c.attack)},
                   {"sigma", c.attack_sigma},
                   {"kernel_radius", c.attack_kernel_radius}};
    if (c.attack_seed_set) j["attack"]["seed"] = c.attack_seed;
    j["arms"] = c.arms;
    j["trials"] = c.trials;
    j["workers"] = c.workers;
    j["global_seed"] = c.global_seed;
    j["out_dir"] = c.out_dir;
    return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(read_text(path)); }

void save_config(const std::string& path, const ExperimentConfig& c) {
    write_text(path, config_to_json(c));
}

MixtureModel build_model(const ExperimentConfig& c) {
    if (!c.model_file.empty()) return load_model(c.model_file);
    return default_mixture(c.channels, c.height, c.width, c.components, c.model_seed,
                           c.component_scale, c.template_cutoff);
}

RingMask build_mask(const ExperimentConfig& c) {
    return make_ring_mask(c.height, c.width, c.wm_radius, c.wm_channel);
}

WatermarkKey build_key(const ExperimentConfig& c, const RingMask& mask) {
    RngStream rng(c.wm_seed, 0);
    return make_ring_key(mask, rng, c.wm_pattern);
}

namespace {

LatentGrid generate(const ExperimentConfig& c, const MixtureModel& model, const LatentGrid& xT,
                    const Condition& cond) {
    if (c.sampler == "rf") return rf_sample(model, xT, cond, c.solver);
    return ddim_sample(model, xT, cond, c.solver);
}

InversionResult invert(const ExperimentConfig& c, const MixtureModel& model, const LatentGrid& x0,
                       const Condition& cond) {
    if (c.sampler == "rf")
        return c.inversion == "implicit" ? rf_invert_implicit(model, x0, cond, c.solver)
                                         : rf_invert_naive(model, x0, cond, c.solver);
    return c.inversion == "exact" ? ddim_invert_exact(model, x0, cond, c.solver)
                                  : ddim_invert_naive(model, x0, cond, c.solver);
}

}  // namespace

std::vector<TrialRecord> run_trial(const ExperimentConfig& c, const MixtureModel& model,
                                   const RingMask& mask, const WatermarkKey& key, int trial) {
    RngStream noise_rng(c.global_seed, stream_for(trial, 0));
    LatentGrid x_clean =
        sample_gaussian(noise_rng, model.channels(), model.height(), model.width());
    RngStream comp_rng(c.global_seed, stream_for(trial, 1));
    int k_cond = static_cast<int>(
        comp_rng.next_below(static_cast<std::uint64_t>(model.component_count())));
    Condition gen_cond = Condition::exact(k_cond);
    Condition inv_cond = inversion_condition(c, k_cond, model.component_count());
    AttackSpec att = build_attack_spec(c, trial);

    std::vector<TrialRecord> rows;
    rows.reserve(c.arms.size());
    for (const std::string& arm : c.arms) {
        LatentGrid xT = arm == "wm" ? embed(x_clean, key, mask) : x_clean;
        LatentGrid x0 = generate(c, model, xT, gen_cond);
        LatentGrid attacked = apply_attack(x0, att);
        InversionResult inv = invert(c, model, attacked, inv_cond);
        ExtractionMetrics em = extraction_metrics(recover_key(inv.x, mask), key.values);
        TrialRecord r;
        r.trial = trial;
        r.arm = arm;
        r.attack = to_string(c.attack);
        r.guidance = c.guidance;
        r.mean_l1 = em.mean_l1;
        r.nmae = em.nmae;
        r.nmse = em.nmse;
        r.roundtrip_nmse = nmse_between(inv.x, xT);
        r.fp_converged = inv.converged ? 1 : 0;
        rows.push_back(std::move(r));
    }
    return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& c) {
    validate_config(c);
    MixtureModel model = build_model(c);
    if (model.channels() != c.channels || model.height() != c.height ||
        model.width() != c.width)
        throw std::invalid_argument("config: model shape disagrees with configured shape");
    if (c.sampler == "ddim") ddim_time_grid(c.solver.steps, model.schedule().steps);
    RingMask mask = build_mask(c);
    WatermarkKey key = build_key(c, mask);

    int n = c.trials;
    std::vector<std::vector<TrialRecord>> rows(n);
    std::vector<char> failed(n, 0);
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&]() {
        for (;;) {
            int idx = next.fetch_add(1);
            if (idx >= n) return;
            try {
                rows[idx] = run_trial(c, model, mask, key, idx);
            } catch (const numerical_error&) {
                failed[idx] = 1;
            } catch (...) {
                std::scoped_lock lock(err_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    int n_workers = std::min(c.workers, n);
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);

    ExperimentResult res;
    res.expected = n;
    for (int i = 0; i < n; ++i) {
        if (failed[i]) {
            ++res.failed;
            continue;
        }
        for (TrialRecord& r : rows[i]) res.records.push_back(std::move(r));
    }
    return res;
}

std::string render_trials_csv(const ExperimentResult& r) {
    std::ostringstream out;
    out << "# failed=" << r.failed << " expected=" << r.expected << "\n";
    out << kCsvHeader << "\n";
    for (const TrialRecord& rec : r.records)
        out << rec.trial << ',' << rec.arm << ',' << rec.attack << ',' << rec.guidance << ','
            << fmt17(rec.mean_l1) << ',' << fmt17(rec.nmae) << ',' << fmt17(rec.nmse) << ','
            << fmt17(rec.roundtrip_nmse) << ',' << rec.fp_converged << "\n";
    return out.str();
}

ExperimentResult load_trials(const std::string& csv_path) {
    std::istringstream in(read_text(csv_path));
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("trials csv: empty file");
    ExperimentResult res;
    if (std::sscanf(line.c_str(), "# failed=%d expected=%d", &res.failed, &res.expected) != 2)
        throw std::invalid_argument("trials csv: missing '# failed=N expected=M' line");
    if (!std::getline(in, line) || line != kCsvHeader)
        throw std::invalid_argument("trials csv: unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (;;) {
            std::size_t pos = line.find(',', start);
            if (pos == std::string::npos) {
                f.push_back(line.substr(start));
                break;
            }
            f.push_back(line.substr(start, pos - start));
            start = pos + 1;
        }
        if (f.size() != 9) throw std::invalid_argument("trials csv: malformed row: " + line);
        TrialRecord rec;
        rec.trial = std::stoi(f[0]);
        rec.arm = f[1];
        rec.attack = f[2];
        rec.guidance = f[3];
        rec.mean_l1 = std::stod(f[4]);
        rec.nmae = std::stod(f[5]);
        rec.nmse = std::stod(f[6]);
        rec.roundtrip_nmse = std::stod(f[7]);
        rec.fp_converged = std::stoi(f[8]);
        res.records.push_back(std::move(rec));
    }
    return res;
}

std::string render_histogram_csv(const ExperimentResult& r, int bins) {
    if (bins < 1) throw std::invalid_argument("render_histogram_csv: bins must be >= 1");
    std::ostringstream out;
    out << "bin,lo,hi,clean,wm\n";
    std::vector<double> all;
    for (const TrialRecord& rec : r.records) all.push_back(rec.mean_l1);
    if (all.empty()) return out.str();
    double lo = *std::min_element(all.begin(), all.end());
    double hi = *std::max_element(all.begin(), all.end());
    double width = hi - lo;
    std::vector<int> clean(bins, 0), wm(bins, 0);
    for (const TrialRecord& rec : r.records) {
        int idx = width > 0 ? static_cast<int>((rec.mean_l1 - lo) / width * bins) : 0;
        if (idx >= bins) idx = bins - 1;
        (rec.arm == "wm" ? wm : clean)[idx] += 1;
    }
    for (int b = 0; b < bins; ++b) {
        double blo = lo + width * b / bins, bhi = lo + width * (b + 1) / bins;
        out << b << ',' << fmt17(blo) << ',' << fmt17(bhi) << ',' << clean[b] << ',' << wm[b]
            << "\n";
    }
    return out.str();
}

namespace {

struct GroupStats {
    std::vector<double> mean_l1, nmae, nmse, roundtrip;
    int converged = 0;
    int n = 0;
};

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::string render_report_markdown(const ExperimentResult& r) {
    std::ostringstream out;
    out << "# Batch report\n\n";
    out << "Expected trials: " << r.expected << ". Failed: " << r.failed
        << ". Rows: " << r.records.size() << ".\n\n";

    std::map<std::array<std::string, 3>, GroupStats> groups;
    for (const TrialRecord& rec : r.records) {
        GroupStats& g = groups[{rec.arm, rec.guidance, rec.attack}];
        g.mean_l1.push_back(rec.mean_l1);
        g.nmae.push_back(rec.nmae);
        g.nmse.push_back(rec.nmse);
        g.roundtrip.push_back(rec.roundtrip_nmse);
        g.converged += rec.fp_converged;
        g.n += 1;
    }

    out << "## Extraction metrics\n\n";
    if (groups.empty()) {
        out << "No rows.\n\n";
    } else {
        out << "| arm | guidance | attack | n | mean_l1 | sd | nmae | nmse | roundtrip_nmse | "
               "converged |\n";
        out << "|---|---|---|---|---|---|---|---|---|---|\n";
        for (const auto& [key, g] : groups) {
            SummaryStats s = summarize(g.mean_l1);
            out << "| " << key[0] << " | " << key[1] << " | " << key[2] << " | " << g.n << " | "
                << fmt6(s.mean) << " | " << fmt6(s.stddev) << " | " << fmt6(mean_of(g.nmae))
                << " | " << fmt6(mean_of(g.nmse)) << " | " << fmt6(mean_of(g.roundtrip)) << " | "
                << fmt6(static_cast<double>(g.converged) / g.n) << " |\n";
        }
        out << "\n";
    }

    out << "## Detection\n\n";
    std::map<std::array<std::string, 2>, std::array<std::vector<double>, 2>> detect;
    for (const TrialRecord& rec : r.records)
        detect[{rec.guidance, rec.attack}][rec.arm == "wm" ? 1 : 0].push_back(rec.mean_l1);
    bool any = false;
    for (const auto& [key, dists] : detect) {
        if (dists[0].empty() || dists[1].empty()) continue;
        any = true;
        out << "### guidance=" << key[0] << " attack=" << key[1] << "\n\n";
        out << report_to_markdown(detect_report(dists[0], dists[1])) << "\n";
    }
    if (!any) out << "No paired arms.\n";
    return out.str();
}

std::string render_report_json(const ExperimentResult& r) {
    json j;
    j["expected"] = r.expected;
    j["failed"] = r.failed;
    j["rows"] = r.records.size();

    std::map<std::array<std::string, 3>, GroupStats> groups;
    for (const TrialRecord& rec : r.records) {
        GroupStats& g = groups[{rec.arm, rec.guidance, rec.attack}];
        g.mean_l1.push_back(rec.mean_l1);
        g.nmae.push_back(rec.nmae);
        g.nmse.push_back(rec.nmse);
        g.roundtrip.push_back(rec.roundtrip_nmse);
        g.converged += rec.fp_converged;
        g.n += 1;
    }
    j["groups"] = json::array();
    for (const auto& [key, g] : groups) {
        SummaryStats s = summarize(g.mean_l1);
        j["groups"].push_back({{"arm", key[0]},
                               {"guidance", key[1]},
                               {"attack", key[2]},
                               {"n", g.n},
                               {"mean_l1_mean", s.mean},
                               {"mean_l1_sd", s.stddev},
                               {"nmae_mean", mean_of(g.nmae)},
                               {"nmse_mean", mean_of(g.nmse)},
                               {"roundtrip_nmse_mean", mean_of(g.roundtrip)},
                               {"converged_fraction", static_cast<double>(g.converged) / g.n}});
    }

    std::map<std::array<std::string, 2>, std::array<std::vector<double>, 2>> detect;
    for (const TrialRecord& rec : r.records)
        detect[{rec.guidance, rec.attack}][rec.arm == "wm" ? 1 : 0].push_back(rec.mean_l1);
    j["detection"] = json::array();
    for (const auto& [key, dists] : detect) {
        if (dists[0].empty() || dists[1].empty()) continue;
        DetectionReport rep = detect_report(dists[0], dists[1]);
        json tpr = json::array();
        for (const TprPoint& p : rep.tpr)
            tpr.push_back({{"fpr_level", p.fpr_level},
                           {"tpr", p.tpr},
                           {"threshold", p.threshold},
                           {"degenerate", p.degenerate}});
        j["detection"].push_back({{"guidance", key[0]},
                                  {"attack", key[1]},
                                  {"auc", rep.auc},
                                  {"symmetric_kld", rep.kld},
                                  {"clean_mean", rep.clean.mean},
                                  {"wm_mean", rep.watermarked.mean},
                                  {"tpr", tpr}});
    }
    return j.dump(2) + "\n";
}

void write_report(const std::string& out_dir, const ExperimentResult& r) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/report.md", render_report_markdown(r));
    write_text(out_dir + "/report.json", render_report_json(r));
}

void write_outputs(const ExperimentConfig& c, const ExperimentResult& r) {
    std::filesystem::create_directories(c.out_dir);
    write_text(c.out_dir + "/trials.csv", render_trials_csv(r));
    write_text(c.out_dir + "/histogram.csv", render_histogram_csv(r));
    ExperimentResult reloaded = load_trials(c.out_dir + "/trials.csv");
    write_report(c.out_dir, reloaded);
}

}  // namespace ringlab
