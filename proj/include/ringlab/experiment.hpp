#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ringlab/attack.hpp"
#include "ringlab/model.hpp"
#include "ringlab/solvers.hpp"
#include "ringlab/watermark.hpp"

namespace ringlab {

/// Full description of one batch run. Every output is a pure function of this
/// struct, so reruns and worker counts cannot change results.
struct ExperimentConfig {
    // Latent shape; presets: "sd" = 4x64x64, "flux" = 16x64x64.
    std::string preset = "sd";
    int channels = 4;
    int height = 64;
    int width = 64;

    // Generative mixture; model_file (when set) overrides the generated one.
    int components = 8;
    double component_scale = 0.15;
    int template_cutoff = 4;
    std::uint64_t model_seed = 11;
    std::string model_file;

    // Watermark key.
    double wm_radius = 10.0;
    int wm_channel = 0;
    KeyPattern wm_pattern = KeyPattern::hermitian_ring_constant;
    std::uint64_t wm_seed = 7;

    // Sampler "rf" | "ddim"; inversion "naive" | "implicit" (rf) or
    // "naive" | "exact" (ddim).
    std::string sampler = "rf";
    std::string inversion = "implicit";
    SolverConfig solver;

    // Inversion-time conditioning: "matched" | "null" | "perturbed" | "adversarial".
    std::string guidance = "matched";
    double guidance_eta = 0.3;

    AttackKind attack = AttackKind::none;
    double attack_sigma = 0;
    int attack_kernel_radius = 2;
    bool attack_seed_set = false;
    std::uint64_t attack_seed = 0;  // defaults to global_seed when unset

    std::vector<std::string> arms = {"wm", "clean"};
    int trials = 100;
    int workers = 1;
    std::uint64_t global_seed = 1;
    std::string out_dir = "out";
};

ExperimentConfig default_config(const std::string& preset);
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& c);

/// One trials.csv row; the columns, in order.
struct TrialRecord {
    int trial = 0;
    std::string arm;       // "wm" | "clean"
    std::string attack;    // attack kind name
    std::string guidance;  // inversion conditioning policy
    double mean_l1 = 0;
    double nmae = 0;
    double nmse = 0;
    double roundtrip_nmse = 0;
    int fp_converged = 1;
};

struct ExperimentResult {
    std::vector<TrialRecord> records;
    int failed = 0;
    int expected = 0;
};

MixtureModel build_model(const ExperimentConfig& c);
RingMask build_mask(const ExperimentConfig& c);
WatermarkKey build_key(const ExperimentConfig& c, const RingMask& mask);

/// Per-trial randomness comes from RngStream(global_seed, trial * 8 + purpose)
/// with purposes 0 = initial noise, 1 = component draw, 2 = attack noise, so
/// trials are independent of execution order and of each other.
std::vector<TrialRecord> run_trial(const ExperimentConfig& c, const MixtureModel& model,
                                   const RingMask& mask, const WatermarkKey& key, int trial);

/// Runs all trials on c.workers threads; a trial hitting a numerical_error is
/// counted in `failed` and contributes no rows.
ExperimentResult run_experiment(const ExperimentConfig& c);

/// Writes trials.csv and histogram.csv, then re-reads trials.csv and renders
/// report.md / report.json from the file contents, so the standalone report
/// path reproduces them byte for byte.
void write_outputs(const ExperimentConfig& c, const ExperimentResult& r);

ExperimentResult load_trials(const std::string& csv_path);
std::string render_report_markdown(const ExperimentResult& r);
std::string render_report_json(const ExperimentResult& r);
std::string render_trials_csv(const ExperimentResult& r);
std::string render_histogram_csv(const ExperimentResult& r, int bins = 32);

/// report.md and report.json under out_dir from an already loaded result.
void write_report(const std::string& out_dir, const ExperimentResult& r);

}  // namespace ringlab
