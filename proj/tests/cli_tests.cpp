#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "helpers.hpp"
#include "sgg/cook.hpp"
#include "sgg/scene_data.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace sgg;
using namespace sggtest;

namespace {

std::string g_cli;  // path to the CLI binary under test, from argv[1]
int g_run_id = 0;

std::string sandbox(const std::string& name) {
    const auto dir = fs::path("cli_tmp") / (name + "_" + std::to_string(g_run_id++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

// Runs the CLI with the given arguments; returns the exit code and captures
// combined stdout/stderr.
int run_cli(const std::string& args, std::string* output = nullptr) {
    static int capture_id = 0;
    const std::string cap = (fs::path("cli_tmp") / ("out_" + std::to_string(capture_id++))).string();
    fs::create_directories("cli_tmp");
    const std::string cmd = g_cli + " " + args + " > " + cap + " 2>&1";
    const int rc = std::system(cmd.c_str());
    if (output) *output = read_file(cap);
    if (rc == -1) return -1;
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128;
}

json parse_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return json::parse(in);
}

std::vector<json> parse_jsonl(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<json> rows;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(json::parse(line));
    return rows;
}

// Small rule-driven corpus config shared by most tests.
SyntheticConfig small_config(int n_scenes, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_scenes = n_scenes;
    cfg.n_object_classes = 5;
    cfg.n_predicate_classes = 3;
    cfg.objects_min = 2;
    cfg.objects_max = 4;
    cfg.zipf_exponent = 0.6;
    cfg.cooccurrence_blocks.push_back({{0, 1}, 0.8});
    cfg.relation_rules.push_back({{0, 1}, {2, 3, 4}, {0.7, 0.2, 0.1}, 0.8});
    cfg.relation_rules.push_back({{2, 3, 4}, {0, 1}, {0.1, 0.3, 0.6}, 0.5});
    cfg.seed = seed;
    return cfg;
}

// Generates train/test corpora plus a co-occurrence file inside dir;
// returns their paths.
struct Fixture {
    std::string train, test, cook;
};

Fixture make_fixture(const std::string& dir, int n_train = 30, int n_test = 12) {
    Fixture f;
    const auto cfg_path = dir + "/synth.json";
    save_synthetic_config(small_config(n_train, 7), cfg_path);
    f.train = dir + "/train.json";
    f.test = dir + "/test.json";
    f.cook = dir + "/cook.json";
    REQUIRE(run_cli("gen-synth --config " + cfg_path + " --out " + f.train) == 0);
    const auto cfg2_path = dir + "/synth_test.json";
    auto cfg2 = small_config(n_test, 8);
    save_synthetic_config(cfg2, cfg2_path);
    REQUIRE(run_cli("gen-synth --config " + cfg2_path + " --out " + f.test + " --split test") == 0);
    REQUIRE(run_cli("extract-cook --dataset " + f.train + " --out " + f.cook) == 0);
    return f;
}

// iteration count left out so tests can choose their own without repeating
// the flag (repeated flags are a usage error)
const std::string kFastShape =
    " --preset desk --batch-size 4 --layers 2 --dim 8 --embed-dim 4 --warmup 4";
const std::string kFastTrain = kFastShape + " --iterations 20";

} // namespace

int main(int argc, char** argv) {
    std::vector<char*> pass{argv[0]};
    for (int i = 1; i < argc; ++i) {
        if (g_cli.empty() && argv[i][0] != '-') {
            g_cli = argv[i];
            continue;
        }
        pass.push_back(argv[i]);
    }
    if (g_cli.empty()) {
        std::fprintf(stderr, "usage: cli_tests <path-to-sgg_cli> [doctest options]\n");
        return 1;
    }
    doctest::Context ctx(static_cast<int>(pass.size()), pass.data());
    return ctx.run();
}

TEST_CASE("help text is available") {
    std::string out;
    CHECK(run_cli("--help", &out) == 0);
    CHECK(out.find("train") != std::string::npos);
    CHECK(out.find("eval") != std::string::npos);
}

TEST_CASE("unknown subcommands and flags exit with code 1") {
    CHECK(run_cli("frobnicate") == 1);
    std::string out;
    CHECK(run_cli("train --bogus-flag 3", &out) == 1);
}

TEST_CASE("full pipeline produces every artifact") {
    const auto dir = sandbox("pipeline");
    const auto f = make_fixture(dir);

    // gen-synth / extract-cook manifests
    CHECK(fs::exists(f.train + ".manifest.json"));
    const auto cook_manifest = parse_file(f.cook + ".manifest.json");
    CHECK(cook_manifest["command"] == "extract-cook");
    CHECK(cook_manifest.contains("inputs"));
    CHECK(cook_manifest.contains("outputs"));

    // the co-occurrence file carries its provenance
    const auto cook_json = parse_file(f.cook);
    CHECK(cook_json["n_images"] == 30);
    CHECK(cook_json["provenance"] == json::array({f.train}));

    const auto run = dir + "/run";
    REQUIRE(run_cli("train --dataset " + f.train + " --cook " + f.cook + " --out-dir " + run +
                    kFastTrain + " --seed 3") == 0);
    CHECK(fs::exists(run + "/checkpoint.json"));
    CHECK(fs::exists(run + "/manifest.json"));

    const auto log = parse_jsonl(run + "/log.jsonl");
    REQUIRE(log.size() == 20);
    for (const auto& rec : log) {
        CHECK(rec.contains("step"));
        CHECK(rec.contains("lr"));
        CHECK(rec.contains("L_obj"));
        CHECK(rec.contains("L_rel"));
        CHECK(rec.contains("L"));
    }
    CHECK(log.front()["step"] == 0);
    CHECK(log.back()["step"] == 19);

    const auto results = dir + "/results.json";
    REQUIRE(run_cli("eval --checkpoint " + run + "/checkpoint.json --dataset " + f.test +
                    " --cook " + f.cook + " --K 5,20 --partition-from " + f.train + " --out " +
                    results) == 0);
    const auto r = parse_file(results);
    CHECK(r["task"] == "predcls");
    CHECK(r["K"] == json::array({5, 20}));
    REQUIRE(r["recall"].size() == 2);
    // prefix ranking makes recall monotone in K
    CHECK(r["recall"]["20"].get<double>() >= r["recall"]["5"].get<double>());
    CHECK(r.contains("mean_recall"));
    CHECK(r.contains("per_predicate"));
    CHECK(r.contains("partition_report"));
    CHECK(r["graph_constraint"] == true);
    CHECK(r["n_scenes"] == 12);
    CHECK(fs::exists(results + ".manifest.json"));
}

TEST_CASE("serial reruns are byte-identical") {
    const auto dir = sandbox("determinism");
    const auto f = make_fixture(dir, 24, 8);

    const std::string args = "train --dataset " + f.train + " --cook " + f.cook + kFastTrain +
                             " --seed 11 --out-dir ";
    REQUIRE(run_cli(args + dir + "/a") == 0);
    REQUIRE(run_cli(args + dir + "/b") == 0);
    CHECK(read_file(dir + "/a/checkpoint.json") == read_file(dir + "/b/checkpoint.json"));
    CHECK(read_file(dir + "/a/log.jsonl") == read_file(dir + "/b/log.jsonl"));

    const std::string eargs = "eval --checkpoint " + dir + "/a/checkpoint.json --dataset " +
                              f.test + " --cook " + f.cook + " --out ";
    REQUIRE(run_cli(eargs + dir + "/r1.json") == 0);
    REQUIRE(run_cli(eargs + dir + "/r2.json") == 0);
    CHECK(read_file(dir + "/r1.json") == read_file(dir + "/r2.json"));
    CHECK(read_file(dir + "/r1.json") != "");
}

TEST_CASE("interrupting and resuming reproduces the uninterrupted run") {
    const auto dir = sandbox("resume");
    const auto f = make_fixture(dir, 20, 6);

    const std::string base = "train --dataset " + f.train + " --cook " + f.cook + kFastShape +
                             " --iterations 12 --seed 5 --out-dir ";
    REQUIRE(run_cli(base + dir + "/full") == 0);
    REQUIRE(run_cli(base + dir + "/half --stop-at 6") == 0);
    const auto half = parse_file(dir + "/half/checkpoint.json");
    CHECK(half["step"] == 6);

    REQUIRE(run_cli("train --dataset " + f.train + " --cook " + f.cook + " --resume " + dir +
                    "/half/checkpoint.json --out-dir " + dir + "/resumed") == 0);
    CHECK(read_file(dir + "/resumed/checkpoint.json") == read_file(dir + "/full/checkpoint.json"));
}

TEST_CASE("freezing the reweighting parameters holds them at zero") {
    const auto dir = sandbox("freeze");
    const auto f = make_fixture(dir, 16, 4);
    REQUIRE(run_cli("train --dataset " + f.train + " --cook " + f.cook + kFastTrain +
                    " --freeze-idf --out-dir " + dir + "/run") == 0);
    for (const auto& rec : parse_jsonl(dir + "/run/log.jsonl")) {
        CHECK(rec["epsilon"].get<double>() == 0.0);
        CHECK(rec["gamma"].get<double>() == 0.0);
    }
    const auto ckpt = parse_file(dir + "/run/checkpoint.json");
    CHECK(ckpt["params"]["tfidf"]["learnable"] == false);
    CHECK(ckpt["config"]["tfidf_learnable"] == false);
}

TEST_CASE("zero learning rate trains to the initial parameters") {
    const auto dir = sandbox("lr0");
    const auto f = make_fixture(dir, 12, 4);
    const std::string base = "train --dataset " + f.train + " --cook " + f.cook + kFastShape +
                             " --lr 0 --seed 2 --out-dir ";
    REQUIRE(run_cli(base + dir + "/three --iterations 3") == 0);
    REQUIRE(run_cli(base + dir + "/nine --iterations 9") == 0);
    const auto a = parse_file(dir + "/three/checkpoint.json");
    const auto b = parse_file(dir + "/nine/checkpoint.json");
    CHECK(a["params"] == b["params"]);
    CHECK(a["step"] == 3);
    CHECK(b["step"] == 9);
}

TEST_CASE("eval refuses mismatched inputs") {
    const auto dir = sandbox("guards");
    const auto f = make_fixture(dir, 12, 4);
    REQUIRE(run_cli("train --dataset " + f.train + " --cook " + f.cook + kFastTrain +
                    " --out-dir " + dir + "/run") == 0);
    const std::string ckpt = dir + "/run/checkpoint.json";

    SUBCASE("foreign vocabulary") {
        // corpus over a different vocabulary
        auto other_cfg = small_config(5, 9);
        other_cfg.n_object_classes = 7;
        other_cfg.relation_rules.clear();
        other_cfg.cooccurrence_blocks.clear();
        save_synthetic_config(other_cfg, dir + "/other.json");
        REQUIRE(run_cli("gen-synth --config " + dir + "/other.json --out " + dir +
                        "/other_data.json --split test") == 0);
        std::string out;
        CHECK(run_cli("eval --checkpoint " + ckpt + " --dataset " + dir +
                      "/other_data.json --cook " + f.cook + " --out " + dir + "/r.json",
                      &out) == 1);
        CHECK(out.find("fingerprint") != std::string::npos);
    }
    SUBCASE("missing checkpoint") {
        CHECK(run_cli("eval --checkpoint " + dir + "/nope.json --dataset " + f.test + " --cook " +
                      f.cook + " --out " + dir + "/r.json") == 1);
    }
    SUBCASE("corrupt dataset file") {
        std::ofstream bad(dir + "/bad.json");
        bad << "{\"scenes\": [1,";
        bad.close();
        CHECK(run_cli("eval --checkpoint " + ckpt + " --dataset " + dir + "/bad.json --cook " +
                      f.cook + " --out " + dir + "/r.json") == 1);
    }
    SUBCASE("plot without a partition") {
        std::string out;
        CHECK(run_cli("eval --checkpoint " + ckpt + " --dataset " + f.test + " --cook " + f.cook +
                      " --plot " + dir + "/p.svg --out " + dir + "/r.json",
                      &out) == 1);
    }
}

TEST_CASE("merging with an identity mapping equals extraction from the union") {
    const auto dir = sandbox("merge");
    save_synthetic_config(small_config(14, 21), dir + "/c1.json");
    save_synthetic_config(small_config(10, 22), dir + "/c2.json");
    REQUIRE(run_cli("gen-synth --config " + dir + "/c1.json --out " + dir + "/d1.json") == 0);
    REQUIRE(run_cli("gen-synth --config " + dir + "/c2.json --out " + dir + "/d2.json") == 0);
    REQUIRE(run_cli("extract-cook --dataset " + dir + "/d1.json --out " + dir + "/k1.json") == 0);
    REQUIRE(run_cli("extract-cook --dataset " + dir + "/d2.json --out " + dir + "/k2.json") == 0);

    // identity mapping over the shared vocabulary
    const auto d1 = load_dataset(dir + "/d1.json");
    LabelMapping m;
    m.source_vocab = d1.vocabulary.object_classes;
    m.target_vocab = d1.vocabulary.object_classes;
    for (std::size_t i = 0; i < m.source_vocab.size(); ++i)
        m.map_to_target.push_back(static_cast<int>(i));
    save_mapping(m, dir + "/map.json");

    std::string out;
    REQUIRE(run_cli("merge-cook --base " + dir + "/k1.json --add " + dir + "/k2.json --mapping " +
                    dir + "/map.json --out " + dir + "/merged.json",
                    &out) == 0);
    CHECK(out.find("24") != std::string::npos);  // 14 + 10 images

    // union corpus, extracted directly
    auto both = d1;
    const auto d2 = load_dataset(dir + "/d2.json");
    both.scenes.insert(both.scenes.end(), d2.scenes.begin(), d2.scenes.end());
    save_dataset(both, dir + "/union.json");
    REQUIRE(run_cli("extract-cook --dataset " + dir + "/union.json --out " + dir +
                    "/union_cook.json") == 0);

    const auto merged = parse_file(dir + "/merged.json");
    const auto direct = parse_file(dir + "/union_cook.json");
    CHECK(merged["n_images"] == direct["n_images"]);
    CHECK(merged["presence"] == direct["presence"]);
    CHECK(merged["instances"] == direct["instances"]);
    CHECK(merged["pair_presence"] == direct["pair_presence"]);
    CHECK(merged["values"] == direct["values"]);
    CHECK(merged["n_images"] == 24);
}

TEST_CASE("gradcheck subcommand validates the backward pass") {
    std::string out;
    CHECK(run_cli("gradcheck --scenes 2 --tolerance 1e-4", &out) == 0);
    CHECK(out.find("epsilon") != std::string::npos);
    CHECK(out.find("PASS") != std::string::npos);
}

TEST_CASE("sweep-batch writes one finite row per batch size") {
    const auto dir = sandbox("sweep");
    const auto f = make_fixture(dir, 20, 8);
    REQUIRE(run_cli("sweep-batch --dataset " + f.train + " --eval-dataset " + f.test + " --cook " +
                    f.cook + kFastTrain + " --batch-sizes 2,4 --K 20 --out-dir " + dir +
                    "/sweep") == 0);
    const auto sweep = parse_file(dir + "/sweep/sweep.json");
    CHECK(sweep["batch_sizes"] == json::array({2, 4}));
    REQUIRE(sweep["rows"].size() == 2);
    for (const auto& row : sweep["rows"]) {
        CHECK(row["batch_size"].is_number());
        const double mr = row["mean_recall"]["20"].get<double>();
        CHECK(std::isfinite(mr));
        CHECK(mr >= 0.0);
        CHECK(mr <= 1.0);
    }
    const auto svg = read_file(dir + "/sweep/sweep.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(fs::exists(dir + "/sweep/manifest.json"));
}

TEST_CASE("eval plotting writes the long-tail chart") {
    const auto dir = sandbox("plot");
    const auto f = make_fixture(dir, 16, 6);
    REQUIRE(run_cli("train --dataset " + f.train + " --cook " + f.cook + kFastTrain +
                    " --out-dir " + dir + "/run") == 0);
    REQUIRE(run_cli("eval --checkpoint " + dir + "/run/checkpoint.json --dataset " + f.test +
                    " --cook " + f.cook + " --partition-from " + f.train + " --plot " + dir +
                    "/tail.svg --out " + dir + "/r.json") == 0);
    const auto svg = read_file(dir + "/tail.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    const auto r = parse_file(dir + "/r.json");
    CHECK(r["partition_report"].contains("rows"));
}

TEST_CASE("graph constraint flag is honored and echoed") {
    const auto dir = sandbox("gc");
    const auto f = make_fixture(dir, 16, 6);
    REQUIRE(run_cli("train --dataset " + f.train + " --cook " + f.cook + kFastTrain +
                    " --out-dir " + dir + "/run") == 0);
    const std::string base = "eval --checkpoint " + dir + "/run/checkpoint.json --dataset " +
                             f.test + " --cook " + f.cook + " --K 50 --out ";
    REQUIRE(run_cli(base + dir + "/gc.json") == 0);
    REQUIRE(run_cli(base + dir + "/open.json --no-graph-constraint") == 0);
    const auto gc = parse_file(dir + "/gc.json");
    const auto open = parse_file(dir + "/open.json");
    CHECK(gc["graph_constraint"] == true);
    CHECK(open["graph_constraint"] == false);
    // K = 50 covers every candidate on these tiny scenes, so dropping the
    // constraint can only help
    CHECK(open["recall"]["50"].get<double>() >= gc["recall"]["50"].get<double>());
}
