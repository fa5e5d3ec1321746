#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ringlab/attack.hpp"
#include "ringlab/experiment.hpp"
#include "ringlab/latent_io.hpp"
#include "ringlab/model.hpp"
#include "ringlab/rng.hpp"
#include "ringlab/solvers.hpp"
#include "ringlab/stats.hpp"
#include "ringlab/watermark.hpp"

namespace {

using namespace ringlab;

std::string fmt17(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw io_error("short write to " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct KeySidecar {
    std::uint64_t seed = 7;
    KeyPattern pattern = KeyPattern::hermitian_ring_constant;
    double radius = 10.0;
    int channel = 0;
    int height = 64;
    int width = 64;
};

KeyPattern pattern_from_name(const std::string& s) {
    if (s == "hermitian_ring_constant") return KeyPattern::hermitian_ring_constant;
    if (s == "ring_constant") return KeyPattern::ring_constant;
    throw std::invalid_argument("unknown key pattern: " + s);
}

std::string sidecar_to_json(const KeySidecar& k) {
    nlohmann::json j;
    j["seed"] = k.seed;
    j["pattern"] = k.pattern == KeyPattern::hermitian_ring_constant ? "hermitian_ring_constant"
                                                                    : "ring_constant";
    j["radius"] = k.radius;
    j["channel"] = k.channel;
    j["height"] = k.height;
    j["width"] = k.width;
    return j.dump(2) + "\n";
}

KeySidecar sidecar_from_file(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    KeySidecar k;
    k.seed = j.at("seed").get<std::uint64_t>();
    k.pattern = pattern_from_name(j.at("pattern").get<std::string>());
    k.radius = j.at("radius").get<double>();
    k.channel = j.at("channel").get<int>();
    k.height = j.at("height").get<int>();
    k.width = j.at("width").get<int>();
    return k;
}

std::pair<RingMask, WatermarkKey> rebuild_key(const KeySidecar& k) {
    RingMask mask = make_ring_mask(k.height, k.width, k.radius, k.channel);
    RngStream rng(k.seed, 0);
    return {mask, make_ring_key(mask, rng, k.pattern)};
}

std::vector<double> read_distance_csv(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        values.push_back(std::stod(line));
    }
    if (values.empty()) throw std::invalid_argument("no distances in " + path);
    return values;
}

StepObserver trajectory_observer(std::ostringstream& out) {
    out << "step,time,l1,l2sq,linf\n";
    return [&out](int step, double t, const LatentGrid& x) {
        Norms n = norms(x);
        out << step << ',' << fmt17(t) << ',' << fmt17(n.l1) << ',' << fmt17(n.l2sq) << ','
            << fmt17(n.linf) << "\n";
    };
}

Condition cli_condition(const std::string& guidance, int component, double eta, int count) {
    if (component < 0 || component >= count)
        throw std::invalid_argument("component index out of range");
    if (guidance == "matched") return Condition::exact(component);
    if (guidance == "null") return Condition::none();
    if (guidance == "perturbed") return Condition::perturbed(component, eta);
    if (guidance == "adversarial") return Condition::exact((component + 1) % count);
    throw std::invalid_argument("unknown guidance policy: " + guidance);
}

int run(int argc, char** argv) {
    CLI::App app{"tree-ring watermark laboratory on analytic mixture models"};
    app.require_subcommand(1);

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "embed a ring key into a latent's spectrum");
    std::string embed_in, embed_out, embed_key_out;
    KeySidecar embed_key;
    int embed_channels = 4;
    std::uint64_t embed_noise_seed = 1;
    bool embed_verify = false;
    embed_cmd->add_option("--in", embed_in, "input latent (fresh noise when omitted)");
    embed_cmd->add_option("--out", embed_out, "output latent path")->required();
    embed_cmd->add_option("--key-out", embed_key_out, "key sidecar json path");
    embed_cmd->add_option("--seed", embed_noise_seed, "noise seed when --in is omitted");
    embed_cmd->add_option("--channels", embed_channels, "latent channels for fresh noise");
    embed_cmd->add_option("--height", embed_key.height, "latent height");
    embed_cmd->add_option("--width", embed_key.width, "latent width");
    embed_cmd->add_option("--key-seed", embed_key.seed, "key seed");
    embed_cmd->add_option("--radius", embed_key.radius, "mask radius");
    embed_cmd->add_option("--channel", embed_key.channel, "watermarked channel");
    std::string embed_pattern = "hermitian_ring_constant";
    embed_cmd->add_option("--pattern", embed_pattern,
                          "hermitian_ring_constant | ring_constant");
    embed_cmd->add_flag("--verify", embed_verify, "print the recovered self distance");

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "integrate the model from noise to data");
    std::string gen_config, gen_in, gen_out, gen_traj, gen_sampler;
    std::uint64_t gen_seed = 1, gen_stream = 0;
    int gen_component = 0;
    int gen_steps = -1;
    gen_cmd->add_option("--config", gen_config, "experiment config json");
    gen_cmd->add_option("--in", gen_in, "starting latent (fresh noise when omitted)");
    gen_cmd->add_option("--out", gen_out, "output latent path")->required();
    gen_cmd->add_option("--seed", gen_seed, "noise seed when --in is omitted");
    gen_cmd->add_option("--stream", gen_stream, "noise stream id");
    gen_cmd->add_option("--component", gen_component, "conditioning component");
    gen_cmd->add_option("--sampler", gen_sampler, "rf | ddim (overrides config)");
    gen_cmd->add_option("--steps", gen_steps, "solver steps (overrides config)");
    gen_cmd->add_option("--dump-trajectory", gen_traj, "write per-step norms csv");

    // attack
    auto* att_cmd = app.add_subcommand("attack", "distort a latent");
    std::string att_in, att_out, att_kind = "gaussian_blur";
    double att_sigma = -1;
    int att_radius = 2;
    std::uint64_t att_seed = 0, att_stream = 0;
    att_cmd->add_option("--in", att_in, "input latent")->required();
    att_cmd->add_option("--out", att_out, "output latent path")->required();
    att_cmd->add_option("--kind", att_kind, "none | gaussian_blur | additive_noise");
    att_cmd->add_option("--sigma", att_sigma, "blur width or noise std");
    att_cmd->add_option("--kernel-radius", att_radius, "blur taps per side");
    att_cmd->add_option("--seed", att_seed, "noise seed");
    att_cmd->add_option("--stream", att_stream, "noise stream id");

    // invert
    auto* inv_cmd = app.add_subcommand("invert", "integrate a latent back to noise");
    std::string inv_config, inv_in, inv_out, inv_traj, inv_sampler, inv_inversion, inv_guidance;
    int inv_component = 0;
    int inv_steps = -1;
    double inv_eta = -1;
    inv_cmd->add_option("--config", inv_config, "experiment config json");
    inv_cmd->add_option("--in", inv_in, "input latent")->required();
    inv_cmd->add_option("--out", inv_out, "output latent path")->required();
    inv_cmd->add_option("--component", inv_component, "presumed generation component");
    inv_cmd->add_option("--guidance", inv_guidance,
                        "matched | null | perturbed | adversarial (overrides config)");
    inv_cmd->add_option("--eta", inv_eta, "perturbed-guidance mixing weight");
    inv_cmd->add_option("--sampler", inv_sampler, "rf | ddim (overrides config)");
    inv_cmd->add_option("--inversion", inv_inversion, "naive | implicit | exact (overrides config)");
    inv_cmd->add_option("--steps", inv_steps, "solver steps (overrides config)");
    inv_cmd->add_option("--dump-trajectory", inv_traj, "write per-step norms csv");

    // distance
    auto* dist_cmd = app.add_subcommand("distance", "extraction metrics of a latent against a key");
    std::string dist_in, dist_key;
    dist_cmd->add_option("--in", dist_in, "input latent")->required();
    dist_cmd->add_option("--key", dist_key, "key sidecar json")->required();

    // detect
    auto* det_cmd = app.add_subcommand("detect", "detection report from two distance files");
    std::string det_clean, det_wm, det_out;
    det_cmd->add_option("--clean", det_clean, "clean distances, one per line")->required();
    det_cmd->add_option("--wm", det_wm, "watermarked distances, one per line")->required();
    det_cmd->add_option("--out", det_out, "directory for report.md / report.json");

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "run a trial batch and write its outputs");
    std::string exp_config, exp_out;
    int exp_workers = -1, exp_trials = -1;
    std::uint64_t exp_seed = 0;
    bool exp_seed_set = false;
    exp_cmd->add_option("--config", exp_config, "experiment config json")->required();
    exp_cmd->add_option("--out-dir", exp_out, "override config out_dir");
    exp_cmd->add_option("--workers", exp_workers, "override config workers");
    exp_cmd->add_option("--trials", exp_trials, "override config trials");
    exp_cmd->add_option("--seed", exp_seed, "override config global_seed")
        ->check([&exp_seed_set](const std::string&) {
            exp_seed_set = true;
            return std::string();
        });

    // report
    auto* rep_cmd = app.add_subcommand("report", "regenerate report.md / report.json from a csv");
    std::string rep_csv, rep_out;
    rep_cmd->add_option("--csv", rep_csv, "trials.csv path")->required();
    rep_cmd->add_option("--out", rep_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (*embed_cmd) {
        embed_key.pattern = pattern_from_name(embed_pattern);
        LatentGrid x;
        if (!embed_in.empty()) {
            x = read_latent(embed_in);
            embed_key.height = x.height;
            embed_key.width = x.width;
        } else {
            RngStream rng(embed_noise_seed, 0);
            x = sample_gaussian(rng, embed_channels, embed_key.height, embed_key.width);
        }
        auto [mask, key] = rebuild_key(embed_key);
        LatentGrid y = embed(x, key, mask);
        write_latent(embed_out, y);
        if (!embed_key_out.empty()) write_text_file(embed_key_out, sidecar_to_json(embed_key));
        if (embed_verify) {
            double d = mean_l1_distance(recover_key(y, mask), key.values);
            std::cout << "self_distance " << fmt17(d) << "\n";
        }
        std::cout << "wrote " << embed_out << "\n";
        return 0;
    }

    if (*gen_cmd) {
        ExperimentConfig cfg =
            gen_config.empty() ? default_config("sd") : load_config(gen_config);
        if (!gen_sampler.empty()) cfg.sampler = gen_sampler;
        if (gen_steps > 0) cfg.solver.steps = gen_steps;
        MixtureModel model = build_model(cfg);
        LatentGrid xT;
        if (!gen_in.empty()) {
            xT = read_latent(gen_in);
        } else {
            RngStream rng(gen_seed, gen_stream);
            xT = sample_gaussian(rng, model.channels(), model.height(), model.width());
        }
        if (gen_component < 0 || gen_component >= model.component_count())
            throw std::invalid_argument("component index out of range");
        Condition cond = Condition::exact(gen_component);
        std::ostringstream traj;
        StepObserver obs;
        if (!gen_traj.empty()) obs = trajectory_observer(traj);
        LatentGrid x0 = cfg.sampler == "rf" ? rf_sample(model, xT, cond, cfg.solver, obs)
                                            : ddim_sample(model, xT, cond, cfg.solver, obs);
        write_latent(gen_out, x0);
        if (!gen_traj.empty()) write_text_file(gen_traj, traj.str());
        std::cout << "wrote " << gen_out << "\n";
        return 0;
    }

    if (*att_cmd) {
        AttackSpec spec;
        spec.kind = attack_kind_from_string(att_kind);
        if (att_sigma < 0)
            att_sigma = spec.kind == AttackKind::gaussian_blur    ? 1.0
                        : spec.kind == AttackKind::additive_noise ? 0.1
                                                                  : 0.0;
        spec.sigma = att_sigma;
        spec.kernel_radius = att_radius;
        spec.seed = att_seed;
        spec.stream = att_stream;
        write_latent(att_out, apply_attack(read_latent(att_in), spec));
        std::cout << "wrote " << att_out << "\n";
        return 0;
    }

    if (*inv_cmd) {
        ExperimentConfig cfg =
            inv_config.empty() ? default_config("sd") : load_config(inv_config);
        if (!inv_sampler.empty()) cfg.sampler = inv_sampler;
        if (!inv_inversion.empty()) cfg.inversion = inv_inversion;
        if (!inv_guidance.empty()) cfg.guidance = inv_guidance;
        if (inv_eta >= 0) cfg.guidance_eta = inv_eta;
        if (inv_steps > 0) cfg.solver.steps = inv_steps;
        MixtureModel model = build_model(cfg);
        LatentGrid x0 = read_latent(inv_in);
        Condition cond =
            cli_condition(cfg.guidance, inv_component, cfg.guidance_eta, model.component_count());
        std::ostringstream traj;
        StepObserver obs;
        if (!inv_traj.empty()) obs = trajectory_observer(traj);
        InversionResult res;
        if (cfg.sampler == "rf")
            res = cfg.inversion == "implicit" ? rf_invert_implicit(model, x0, cond, cfg.solver, obs)
                                              : rf_invert_naive(model, x0, cond, cfg.solver, obs);
        else
            res = cfg.inversion == "exact" ? ddim_invert_exact(model, x0, cond, cfg.solver, obs)
                                           : ddim_invert_naive(model, x0, cond, cfg.solver, obs);
        write_latent(inv_out, res.x);
        if (!inv_traj.empty()) write_text_file(inv_traj, traj.str());
        std::cout << "converged " << (res.converged ? 1 : 0) << "\n";
        std::cout << "flagged_steps " << res.flagged_steps.size() << "\n";
        std::cout << "final_residual " << fmt17(res.final_residual) << "\n";
        std::cout << "wrote " << inv_out << "\n";
        return 0;
    }

    if (*dist_cmd) {
        KeySidecar side = sidecar_from_file(dist_key);
        auto [mask, key] = rebuild_key(side);
        ExtractionMetrics em = extraction_metrics(recover_key(read_latent(dist_in), mask), key.values);
        std::cout << "mean_l1 " << fmt17(em.mean_l1) << "\n";
        std::cout << "nmae " << fmt17(em.nmae) << "\n";
        std::cout << "nmse " << fmt17(em.nmse) << "\n";
        return 0;
    }

    if (*det_cmd) {
        DetectionReport rep = detect_report(read_distance_csv(det_clean), read_distance_csv(det_wm));
        std::cout << report_to_markdown(rep);
        if (!det_out.empty()) {
            std::filesystem::create_directories(det_out);
            write_text_file(det_out + "/report.md", report_to_markdown(rep));
            write_text_file(det_out + "/report.json", report_to_json(rep));
        }
        return 0;
    }

    if (*exp_cmd) {
        ExperimentConfig cfg = load_config(exp_config);
        if (!exp_out.empty()) cfg.out_dir = exp_out;
        if (exp_workers > 0) cfg.workers = exp_workers;
        if (exp_trials > 0) cfg.trials = exp_trials;
        if (exp_seed_set) cfg.global_seed = exp_seed;
        ExperimentResult res = run_experiment(cfg);
        write_outputs(cfg, res);
        std::cout << "wrote " << cfg.out_dir << ": rows=" << res.records.size()
                  << " failed=" << res.failed << " expected=" << res.expected << "\n";
        return res.failed == 0 ? 0 : 3;
    }

    if (*rep_cmd) {
        write_report(rep_out, load_trials(rep_csv));
        std::cout << "wrote " << rep_out << "\n";
        return 0;
    }

    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const numerical_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
