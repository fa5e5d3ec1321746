#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "ringlab/latent_io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ringlab_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

/// Runs the installed binary with stdout and stderr captured to a file.
RunResult run_cli(const TempDir& tmp, const std::string& args) {
    fs::path cap = tmp.path / "capture.txt";
    std::string cmd = std::string(RINGLAB_CLI_PATH) + " " + args + " > " + cap.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(cap);
    std::ostringstream buf;
    buf << in.rdbuf();
    r.out = buf.str();
    return r;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

double scan_metric(const std::string& text, const std::string& name) {
    std::istringstream lines(text);
    std::string label;
    double value;
    while (lines >> label >> value)
        if (label == name) return value;
    FAIL("metric ", name, " not found in: ", text);
    return 0.0;
}

const char* kTinyConfig = R"({
    "channels": 1,
    "height": 32,
    "width": 32,
    "components": 2,
    "template_cutoff": 3,
    "watermark": {"radius": 6.0},
    "solver": {"steps": 8, "guidance_scale": 1.0},
    "trials": 4,
    "global_seed": 77
})";

}  // namespace

TEST_CASE("bare and malformed invocations exit with a usage error") {
    TempDir tmp;
    CHECK(run_cli(tmp, "").code == 2);
    CHECK(run_cli(tmp, "--bogus").code == 2);
    CHECK(run_cli(tmp, "embed").code == 2);
    CHECK(run_cli(tmp, "--help").code == 0);
    CHECK(run_cli(tmp, "frobnicate --out x").code == 2);
}

TEST_CASE("embedding fresh noise is self-consistent") {
    TempDir tmp;
    fs::path out = tmp.path / "wm.rlt";
    fs::path key = tmp.path / "key.json";
    RunResult r = run_cli(tmp, "embed --out " + out.string() + " --key-out " + key.string() +
                                   " --height 32 --width 32 --channels 1 --radius 6 --verify");
    CAPTURE(r.out);
    CHECK(r.code == 0);
    CHECK(scan_metric(r.out, "self_distance") < 1e-8);
    CHECK(fs::exists(out));
    CHECK(fs::exists(key));

    ringlab::LatentGrid g = ringlab::read_latent(out.string());
    CHECK(g.channels == 1);
    CHECK(g.height == 32);
    CHECK(g.width == 32);
}

TEST_CASE("embed generate attack invert distance pipeline hangs together") {
    TempDir tmp;
    fs::path cfg = tmp.path / "cfg.json";
    write_text(cfg, kTinyConfig);
    std::string cfg_arg = " --config " + cfg.string();

    fs::path wm = tmp.path / "wm.rlt";
    fs::path key = tmp.path / "key.json";
    REQUIRE(run_cli(tmp, "embed --out " + wm.string() + " --key-out " + key.string() +
                             " --height 32 --width 32 --channels 1 --radius 6 --seed 5")
                .code == 0);

    fs::path gen = tmp.path / "gen.rlt";
    fs::path traj = tmp.path / "traj.csv";
    RunResult g = run_cli(tmp, "generate" + cfg_arg + " --in " + wm.string() + " --out " +
                                   gen.string() + " --component 0 --dump-trajectory " +
                                   traj.string());
    CAPTURE(g.out);
    CHECK(g.code == 0);
    std::istringstream tl(slurp(traj));
    std::string header;
    std::getline(tl, header);
    CHECK(header == "step,time,l1,l2sq,linf");
    int rows = 0;
    for (std::string line; std::getline(tl, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 9);

    fs::path att = tmp.path / "att.rlt";
    REQUIRE(run_cli(tmp, "attack --in " + gen.string() + " --out " + att.string() +
                             " --kind additive_noise --sigma 0.02 --seed 3")
                .code == 0);

    fs::path inv = tmp.path / "inv.rlt";
    RunResult iv = run_cli(tmp, "invert" + cfg_arg + " --in " + att.string() + " --out " +
                                    inv.string() + " --component 0");
    CAPTURE(iv.out);
    CHECK(iv.code == 0);
    CHECK(scan_metric(iv.out, "converged") == 1.0);

    RunResult d_wm = run_cli(tmp, "distance --in " + inv.string() + " --key " + key.string());
    CAPTURE(d_wm.out);
    CHECK(d_wm.code == 0);
    double wm_l1 = scan_metric(d_wm.out, "mean_l1");

    fs::path clean = tmp.path / "clean.rlt";
    REQUIRE(run_cli(tmp, "embed --out " + clean.string() +
                             " --height 32 --width 32 --channels 1 --radius 6 --seed 6 "
                             "--key-seed 999")
                .code == 0);
    RunResult d_cl = run_cli(tmp, "distance --in " + clean.string() + " --key " + key.string());
    CHECK(d_cl.code == 0);
    double clean_l1 = scan_metric(d_cl.out, "mean_l1");

    CHECK(wm_l1 < 0.5 * clean_l1);
    CHECK(clean_l1 > 1.0);
}

TEST_CASE("detect renders a report for distance files") {
    TempDir tmp;
    fs::path clean = tmp.path / "clean.txt";
    fs::path wm = tmp.path / "wm.txt";
    write_text(clean, "10\n11\n12\n13\n");
    write_text(wm, "1\n2\n3\n");
    fs::path out = tmp.path / "rep";
    RunResult r = run_cli(tmp, "detect --clean " + clean.string() + " --wm " + wm.string() +
                                   " --out " + out.string());
    CAPTURE(r.out);
    CHECK(r.code == 0);
    CHECK(r.out.find("AUC: 1") != std::string::npos);
    CHECK(fs::exists(out / "report.md"));
    CHECK(fs::exists(out / "report.json"));
    CHECK(slurp(out / "report.md") == r.out);
}

TEST_CASE("experiment writes its outputs and report regenerates them") {
    TempDir tmp;
    fs::path cfg = tmp.path / "cfg.json";
    write_text(cfg, kTinyConfig);
    fs::path out = tmp.path / "out";
    RunResult r = run_cli(tmp, "experiment --config " + cfg.string() + " --out-dir " +
                                   out.string() + " --workers 2");
    CAPTURE(r.out);
    CHECK(r.code == 0);
    CHECK(r.out.find("rows=8 failed=0 expected=4") != std::string::npos);
    for (const char* name : {"trials.csv", "histogram.csv", "report.md", "report.json"})
        CHECK(fs::exists(out / name));

    fs::path regen = tmp.path / "regen";
    RunResult rr = run_cli(tmp, "report --csv " + (out / "trials.csv").string() + " --out " +
                                    regen.string());
    CHECK(rr.code == 0);
    CHECK(slurp(regen / "report.md") == slurp(out / "report.md"));
    CHECK(slurp(regen / "report.json") == slurp(out / "report.json"));
}

TEST_CASE("trial and seed overrides change the run") {
    TempDir tmp;
    fs::path cfg = tmp.path / "cfg.json";
    write_text(cfg, kTinyConfig);
    fs::path out = tmp.path / "out";
    RunResult r = run_cli(tmp, "experiment --config " + cfg.string() + " --out-dir " +
                                   out.string() + " --trials 2 --seed 123");
    CAPTURE(r.out);
    CHECK(r.code == 0);
    CHECK(r.out.find("rows=4 failed=0 expected=2") != std::string::npos);
    std::string csv = slurp(out / "trials.csv");
    CHECK(csv.find("# failed=0 expected=2") == 0);
}

TEST_CASE("failures surface as distinct exit codes") {
    TempDir tmp;
    CHECK(run_cli(tmp, "experiment --config " + (tmp.path / "nope.json").string()).code == 2);
    CHECK(run_cli(tmp, "distance --in " + (tmp.path / "nope.rlt").string() + " --key " +
                           (tmp.path / "nope.json").string())
              .code == 2);

    fs::path cfg = tmp.path / "cfg.json";
    write_text(cfg, kTinyConfig);
    fs::path wm = tmp.path / "x.rlt";
    REQUIRE(run_cli(tmp, "embed --out " + wm.string() +
                             " --height 32 --width 32 --channels 1 --radius 6")
                .code == 0);
    // 7 does not divide the 1000-step schedule.
    CHECK(run_cli(tmp, "generate --config " + cfg.string() + " --in " + wm.string() + " --out " +
                           (tmp.path / "g.rlt").string() + " --sampler ddim --steps 7")
              .code == 2);
    CHECK(run_cli(tmp, "attack --in " + wm.string() + " --out " + (tmp.path / "a.rlt").string() +
                           " --kind sharpen")
              .code == 2);
    CHECK(run_cli(tmp, "generate --config " + cfg.string() + " --in " + wm.string() + " --out " +
                           (tmp.path / "g.rlt").string() + " --component 9")
              .code == 2);
}
