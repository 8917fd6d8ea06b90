#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "darksynth/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

const fs::path& home() {
    static const fs::path h = [] {
        auto p = fs::temp_directory_path() / "darksynth_test_cli_home";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return h;
}

Run cli(const std::string& args) {
    const auto out = home() / "stdout.txt", err = home() / "stderr.txt";
    const std::string cmd = std::string(DARKSYNTH_CLI) + " --home " + home().string() + " " + args + " >" +
                            out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// Dataset, teacher, labels, ranking and a few-step generator, built once.
void pipeline() {
    static const bool done = [] {
        for (const char* step : {"dataset build --n-clips 270 --seed 2", "teacher train --epochs 5", "teacher label",
                                 "teacher rank --top-k 8",
                                 "gan train --attributes 4 --steps 2 --batch-size 4 --log-every 0"}) {
            const auto r = cli(step);
            INFO(step << "\n" << r.err);
            REQUIRE(r.code == 0);
        }
        return true;
    }();
    (void)done;
}

}  // namespace

TEST_CASE("unknown flag is a usage error with exit code 2") {
    const auto r = cli("dataset build --no-such-flag");
    CHECK(r.code == 2);
    CHECK(r.err.find("\"usage\"") != std::string::npos);
}

TEST_CASE("missing input names the path and exits 1") {
    const auto r = cli("teacher train --manifest /nonexistent/manifest.json");
    CHECK(r.code == 1);
    const auto j = nlohmann::json::parse(r.err);
    CHECK(j["error"] == "io");
    CHECK(j["message"].get<std::string>().find("/nonexistent/manifest.json") != std::string::npos);
}

TEST_CASE("help exits 0") { CHECK(cli("gan generate --help").code == 0); }

TEST_CASE("pipeline stages chain through the artifact home") {
    pipeline();
    CHECK(fs::exists(home() / "dataset" / "manifest.json"));
    CHECK(fs::exists(home() / "teacher.json"));
    CHECK(fs::exists(home() / "labels.jsonl"));
    CHECK(fs::exists(home() / "gan" / "checkpoint.bin"));
    const auto ranking = darksynth::read_json(home() / "ranking.json");
    CHECK(ranking["selected_top_k"] == 8);
    CHECK(ranking["run_config"]["teacher"]["rank"]["top-k"] == "8");
    const auto log = darksynth::read_json(home() / "gan" / "checkpoint_train_log.json");
    CHECK(log["run_config"]["gan"]["train"]["steps"] == "2");
}

TEST_CASE("generation is byte-identical for a fixed seed") {
    pipeline();
    const auto a = home() / "a.wav", b = home() / "b.wav", c = home() / "c.wav";
    REQUIRE(cli("gan generate --pitch 60 --seed 7 --out " + a.string()).code == 0);
    REQUIRE(cli("gan generate --pitch 60 --seed 7 --out " + b.string()).code == 0);
    REQUIRE(cli("gan generate --pitch 60 --seed 8 --out " + c.string()).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
    CHECK(slurp(a).substr(0, 4) == "RIFF");
}

TEST_CASE("config file supplies options and the command line wins") {
    pipeline();
    const auto cfg = home() / "cfg.json";
    const auto from_file = home() / "f.wav", from_flags = home() / "g.wav", override = home() / "h.wav";
    std::ofstream(cfg) << R"({"gan": {"generate": {"pitch": 62, "seed": 4}}})";
    REQUIRE(cli("--config " + cfg.string() + " gan generate --out " + from_file.string()).code == 0);
    REQUIRE(cli("gan generate --pitch 62 --seed 4 --out " + from_flags.string()).code == 0);
    CHECK(slurp(from_file) == slurp(from_flags));
    const auto r = cli("--config " + cfg.string() + " gan generate --seed 5 --out " + override.string());
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out)["seed"] == 5);

    std::ofstream(cfg) << R"({"gan": {"generate": {"no_such_option": 1}}})";
    CHECK(cli("--config " + cfg.string() + " gan generate").code == 2);
}

TEST_CASE("invalid generation requests are rejected") {
    pipeline();
    auto r = cli("gan generate --pitch 200");
    CHECK(r.code == 1);
    CHECK(nlohmann::json::parse(r.err)["error"] == "validation");
    r = cli("gan generate --attr not_an_attribute=0.5");
    CHECK(r.code == 1);
    r = cli("gan generate --attr oops");
    CHECK(r.code == 1);
}

TEST_CASE("metrics command writes a report on the requested split") {
    pipeline();
    const auto r = cli("eval metrics --n 64 --split tr");
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto report = darksynth::read_json(home() / "reports" / "metrics_tr.json");
    CHECK(report["split"] == "train");
    CHECK(report["n_samples"] == 64);
    CHECK(fs::exists(home() / "classifier.json"));
    CHECK(cli("eval metrics --split test").code == 1);
}
