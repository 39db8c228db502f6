#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgg/config_io.hpp"
#include "sgg/cook.hpp"
#include "sgg/errors.hpp"
#include "sgg/eval.hpp"
#include "sgg/model.hpp"
#include "sgg/scene_data.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace sgg;

namespace {

constexpr const char* kToolVersion = "cooksgg 0.1.0";

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_json_file(const std::string& path, const json& j) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeError("write failed: " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open for writing: " + path);
    out << text;
    if (!out) throw RuntimeError("write failed: " + path);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeError("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(path + ": parse error: " + e.what());
    }
    return j;
}

// Manifests carry everything needed to re-run the command: inputs, resolved
// flag values, and outputs. No timestamps, so reruns stay byte-identical.
void write_manifest(const std::string& path, const std::string& command, json inputs, json flags,
                    std::vector<std::string> outputs) {
    json m;
    m["tool"] = kToolVersion;
    m["command"] = command;
    m["inputs"] = std::move(inputs);
    m["flags"] = std::move(flags);
    m["outputs"] = std::move(outputs);
    write_json_file(path, m);
}

json per_k_map(const std::vector<int>& ks, const std::vector<double>& values, bool present) {
    json out = json::object();
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (present)
            out[std::to_string(ks[i])] = values[i];
        else
            out[std::to_string(ks[i])] = nullptr;
    }
    return out;
}

json report_to_json(const LongTailReport& report, const std::vector<double>& boundaries) {
    json j;
    j["boundaries"] = boundaries;
    j["K"] = report.ks;
    json rows = json::array();
    for (const auto& row : report.rows) {
        json r;
        r["name"] = row.name;
        r["classes"] = row.classes;
        r["n_counted"] = row.n_counted;
        r["mean"] = per_k_map(report.ks, row.mean, true);
        if (report.has_compare) {
            r["mean_ref"] = per_k_map(report.ks, row.mean_other, true);
            r["delta"] = per_k_map(report.ks, row.delta, true);
        }
        rows.push_back(std::move(r));
    }
    j["rows"] = std::move(rows);
    return j;
}

json result_to_json(const RecallResult& result, TaskMode task, bool graph_constraint,
                    double iou_threshold, const json& partition_report) {
    json j;
    j["task"] = task_name(task);
    j["K"] = result.ks;
    j["recall"] = per_k_map(result.ks, result.recall, result.any_gt);
    j["mean_recall"] = per_k_map(result.ks, result.mean_recall, result.any_gt);
    json perp = json::object();
    for (std::size_t i = 0; i < result.ks.size(); ++i)
        perp[std::to_string(result.ks[i])] = result.per_predicate[i];
    j["per_predicate"] = std::move(perp);
    j["partition_report"] = partition_report;
    j["graph_constraint"] = graph_constraint;
    j["iou_threshold"] = iou_threshold;
    j["gt_per_predicate"] = result.gt_per_predicate;
    j["n_scenes"] = result.n_scenes;
    j["n_scenes_empty_gt"] = result.n_scenes_empty_gt;
    return j;
}

RecallResult result_from_json(const json& j) {
    RecallResult r;
    try {
        r.ks = j.at("K").get<std::vector<int>>();
        r.any_gt = !j.at("recall").empty() && !j.at("recall").begin()->is_null();
        for (int k : r.ks) {
            const std::string key = std::to_string(k);
            r.recall.push_back(r.any_gt ? j.at("recall").at(key).get<double>() : 0.0);
            r.mean_recall.push_back(r.any_gt ? j.at("mean_recall").at(key).get<double>() : 0.0);
            r.per_predicate.push_back(j.at("per_predicate").at(key).get<std::vector<double>>());
        }
        r.gt_per_predicate = j.at("gt_per_predicate").get<std::vector<long long>>();
        r.n_scenes = j.at("n_scenes").get<long long>();
        r.n_scenes_empty_gt = j.at("n_scenes_empty_gt").get<long long>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("results schema error: ") + e.what());
    }
    return r;
}

std::string sweep_svg(const std::vector<int>& batch_sizes, const std::vector<int>& ks,
                      const std::vector<std::vector<double>>& mean_recall) {
    const int width = 640, height = 360;
    const int left = 56, right = 24, top = 40, bottom = 48;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    const char* colors[] = {"#4878a8", "#e08840", "#58a868", "#b05090"};

    double vmax = 0.0;
    for (const auto& row : mean_recall)
        for (double v : row) vmax = std::max(vmax, v);
    if (vmax <= 0.0) vmax = 1.0;
    vmax *= 1.15;

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    s << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << left << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">"
      << "mean recall by training batch size</text>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"#444\"/>\n";

    const double group_w = plot_w / static_cast<double>(batch_sizes.size());
    const double bar_w = 0.8 * group_w / static_cast<double>(ks.size());
    for (std::size_t g = 0; g < batch_sizes.size(); ++g) {
        const double gx = left + group_w * (static_cast<double>(g) + 0.1);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            const double v = mean_recall[g][i];
            const double h = plot_h * (v / vmax);
            s << "<rect x=\"" << gx + bar_w * static_cast<double>(i) << "\" y=\"" << top + plot_h - h
              << "\" width=\"" << bar_w * 0.92 << "\" height=\"" << h << "\" fill=\""
              << colors[i % 4] << "\"/>\n";
        }
        s << "<text x=\"" << gx + 0.4 * group_w << "\" y=\"" << top + plot_h + 18
          << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">bs "
          << batch_sizes[g] << "</text>\n";
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double lx = left + plot_w - 90.0;
        const double ly = top + 8.0 + 18.0 * static_cast<double>(i);
        s << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"12\" fill=\""
          << colors[i % 4] << "\"/>\n";
        s << "<text x=\"" << lx + 18 << "\" y=\"" << ly + 2
          << "\" font-family=\"sans-serif\" font-size=\"12\">mR@" << ks[i] << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// shared flag bundles

struct ConfigFlags {
    std::string preset = "desk";
    std::string task = "predcls";
    long long iterations = -1;
    int batch_size = -1;
    double lr = -1.0;
    double weight_decay = -1.0;
    int layers = -1;
    int dim = -1;
    int embed_dim = -1;
    long long warmup = -1;
    std::vector<long long> milestones;
    double lr_decay = -1.0;
    std::uint64_t seed = 0;
    double neg_ratio = -1.0;
    int knn = -1;
    std::string activation;
    std::string tfidf_mode;
    bool no_cook = false;
    bool no_tfidf = false;
    bool freeze_idf = false;
    bool clamp_negative = false;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
    cmd->add_option("--preset", f.preset, "base configuration: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--task,--mode", f.task, "subtask: predcls, sgcls, or sggen")
        ->check(CLI::IsMember({"predcls", "sgcls", "sggen"}));
    cmd->add_option("--iterations", f.iterations, "training steps");
    cmd->add_option("--batch-size", f.batch_size, "scenes per step");
    cmd->add_option("--lr", f.lr, "base learning rate");
    cmd->add_option("--weight-decay", f.weight_decay, "L2 weight decay");
    cmd->add_option("--layers", f.layers, "message-passing blocks");
    cmd->add_option("--dim", f.dim, "node feature width");
    cmd->add_option("--embed-dim", f.embed_dim, "class-embedding width");
    cmd->add_option("--warmup", f.warmup, "linear warmup steps");
    cmd->add_option("--milestones", f.milestones, "decay milestones (steps)")->delimiter(',');
    cmd->add_option("--lr-decay", f.lr_decay, "decay factor at each milestone");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--neg-ratio", f.neg_ratio, "background pairs per GT relation");
    cmd->add_option("--knn", f.knn, "neighbors by box center; 0 = complete graph");
    cmd->add_option("--activation", f.activation, "relu or tanh")
        ->check(CLI::IsMember({"relu", "tanh"}));
    cmd->add_option("--tfidf-mode", f.tfidf_mode, "idf smoothing: paper or code")
        ->check(CLI::IsMember({"paper", "code"}));
    cmd->add_flag("--no-cook", f.no_cook, "disable co-occurrence message weighting");
    cmd->add_flag("--no-tfidf", f.no_tfidf, "disable the reweighting layer");
    cmd->add_flag("--freeze-idf", f.freeze_idf, "keep epsilon and gamma fixed at 0");
    cmd->add_flag("--clamp-negative", f.clamp_negative, "clamp negative feature scales to 0");
}

TrainConfig resolve_config(const CLI::App* cmd, const ConfigFlags& f, const TrainConfig* base) {
    TrainConfig c;
    if (base) {
        c = *base;
        if (cmd->count("--task")) c.task_mode = task_from_name(f.task);
    } else {
        const TaskMode mode = task_from_name(f.task);
        c = f.preset == "paper" ? paper_preset(mode) : desk_preset(mode);
    }
    if (cmd->count("--iterations")) c.iterations = f.iterations;
    if (cmd->count("--batch-size")) c.batch_size = f.batch_size;
    if (cmd->count("--lr")) c.lr = f.lr;
    if (cmd->count("--weight-decay")) c.weight_decay = f.weight_decay;
    if (cmd->count("--layers")) c.n_layers = f.layers;
    if (cmd->count("--dim")) c.object_dim = f.dim;
    if (cmd->count("--embed-dim")) c.embed_dim = f.embed_dim;
    if (cmd->count("--warmup")) c.warmup_steps = f.warmup;
    if (cmd->count("--milestones")) c.milestones = f.milestones;
    if (cmd->count("--lr-decay")) c.lr_decay = f.lr_decay;
    if (cmd->count("--seed")) c.seed = f.seed;
    if (cmd->count("--neg-ratio")) c.neg_ratio = f.neg_ratio;
    if (cmd->count("--knn")) c.knn = f.knn;
    if (cmd->count("--activation")) c.activation = activation_from_name(f.activation);
    if (cmd->count("--tfidf-mode")) c.tfidf_mode = smoothing_mode_from_name(f.tfidf_mode);
    if (f.no_cook) c.use_cook = false;
    if (f.no_tfidf) c.use_tfidf = false;
    if (f.freeze_idf) c.tfidf_learnable = false;
    if (f.clamp_negative) c.tfidf_clamp_negative = true;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// subcommands

int run_gen_synth(const CLI::App* cmd, const std::string& config_path, const std::string& out,
                  std::uint64_t seed, const std::string& split) {
    SyntheticConfig cfg = load_synthetic_config(config_path);
    if (cmd->count("--seed")) cfg.seed = seed;
    Dataset ds = generate_synthetic(cfg);
    ds.split_tag = split_from_name(split);
    save_dataset(ds, out);
    write_manifest(out + ".manifest.json", "gen-synth", {{"config", config_path}},
                   {{"seed", cfg.seed}, {"split", split}}, {out});
    std::cout << "wrote " << ds.scenes.size() << " scenes to " << out << '\n';
    return 0;
}

int run_extract_cook(const std::string& dataset_path, const std::string& out,
                     const std::string& mode, int jobs) {
    const Dataset ds = load_dataset(dataset_path);
    CookFile file;
    file.counts = extract_counts(ds, jobs);
    file.counts.provenance = {dataset_path};
    file.matrix = cook_from_counts(file.counts, cook_mode_from_name(mode));
    save_cook(file, out);
    write_manifest(out + ".manifest.json", "extract-cook", {{"dataset", dataset_path}},
                   {{"mode", mode}, {"jobs", jobs}}, {out});
    std::cout << "extracted co-occurrence over " << file.counts.n_images << " images ("
              << file.counts.n_classes << " classes) to " << out << '\n';
    return 0;
}

int run_merge_cook(const std::string& base_path, const std::string& add_path,
                   const std::string& mapping_path, const std::string& out,
                   const std::string& mode) {
    const CookFile base = load_cook(base_path);
    const CookFile add = load_cook(add_path);
    const LabelMapping mapping = load_mapping(mapping_path);

    CookFile merged;
    merged.counts = merge_counts(base.counts, add.counts, mapping);
    const CookMode m = mode.empty() ? base.matrix.mode : cook_mode_from_name(mode);
    merged.matrix = cook_from_counts(merged.counts, m);
    save_cook(merged, out);

    const auto unmapped = mapping.unmapped_sources();
    std::cout << "merged " << add.counts.n_images << " images onto " << base.counts.n_images
              << " (total " << merged.counts.n_images << "); " << unmapped.size()
              << " source classes unmapped";
    if (!unmapped.empty()) {
        std::cout << ':';
        for (int idx : unmapped) std::cout << ' ' << mapping.source_vocab[idx];
    }
    std::cout << '\n';
    write_manifest(out + ".manifest.json", "merge-cook",
                   {{"base", base_path}, {"add", add_path}, {"mapping", mapping_path}},
                   {{"mode", cook_mode_name(m)}}, {out});
    return 0;
}

int run_train(const CLI::App* cmd, const ConfigFlags& flags, const std::string& dataset_path,
              const std::string& cook_path, const std::string& resume_path,
              const std::string& out_dir, long long stop_at) {
    const Dataset ds = load_dataset(dataset_path);

    Checkpoint resume;
    const bool resuming = !resume_path.empty();
    if (resuming) resume = load_checkpoint(resume_path);
    const TrainConfig config = resolve_config(cmd, flags, resuming ? &resume.config : nullptr);

    const std::string ds_fp = ds.vocabulary.fingerprint();
    const std::string cook_fp_expect = fingerprint_names(ds.vocabulary.object_classes);
    if (resuming && resume.dataset_fingerprint != ds_fp)
        throw ValidationError("train: checkpoint was trained on a different vocabulary (fingerprint " +
                              resume.dataset_fingerprint + ", dataset has " + ds_fp + ")");

    CookFile cook;
    const CookMatrix* matrix = nullptr;
    if (config.use_cook) {
        if (cook_path.empty())
            throw ValidationError("train: --cook is required unless --no-cook is set");
        cook = load_cook(cook_path, cook_fp_expect);
        matrix = &cook.matrix;
        if (resuming && resume.cook_fingerprint != cook.matrix.vocab_fingerprint)
            throw ValidationError("train: checkpoint references a different co-occurrence matrix");
    }

    fs::create_directories(out_dir);
    const std::string log_path = (fs::path(out_dir) / "log.jsonl").string();
    std::ofstream log(log_path);
    if (!log) throw RuntimeError("cannot open for writing: " + log_path);
    const StepCallback cb = [&log](const LogRecord& r) {
        json j;
        j["step"] = r.step;
        j["lr"] = r.lr;
        j["L_obj"] = r.l_obj;
        j["L_rel"] = r.l_rel;
        j["L"] = r.l;
        j["epsilon"] = r.epsilon;
        j["gamma"] = r.gamma;
        log << j.dump() << '\n';
    };

    const TrainResult result = train(ds, matrix, config, cb, resuming ? &resume.model : nullptr,
                                     resuming ? resume.step : 0, stop_at);
    log.close();

    Checkpoint out;
    out.config = config;
    out.model = result.model;
    out.cook_fingerprint = config.use_cook ? cook.matrix.vocab_fingerprint : "";
    out.dataset_fingerprint = ds_fp;
    out.step = result.final_step;
    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.json").string();
    save_checkpoint(out, ckpt_path);

    json inputs = {{"dataset", dataset_path}};
    inputs["cook"] = cook_path.empty() ? json(nullptr) : json(cook_path);
    inputs["resume"] = resume_path.empty() ? json(nullptr) : json(resume_path);
    write_manifest((fs::path(out_dir) / "manifest.json").string(), "train", std::move(inputs),
                   {{"config", config_to_json(config)}, {"stop_at", stop_at}},
                   {ckpt_path, log_path});
    if (!result.log.empty())
        std::cout << "trained to step " << result.final_step << "; final loss "
                  << result.log.back().l << '\n';
    else
        std::cout << "no steps to run (resume step equals the stop step)\n";
    return 0;
}

int run_eval(const CLI::App* cmd, const std::string& ckpt_path, const std::string& dataset_path,
             const std::string& cook_path, const std::string& task_flag, std::vector<int> ks,
             bool graph_constraint, double iou, int batch_size, int jobs,
             const std::string& partition_from, std::vector<double> boundaries,
             const std::string& compare_path, const std::string& plot_path,
             const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Dataset ds = load_dataset(dataset_path);
    if (ckpt.dataset_fingerprint != ds.vocabulary.fingerprint())
        throw ValidationError("eval: checkpoint was trained on a different vocabulary (fingerprint " +
                              ckpt.dataset_fingerprint + ", dataset has " +
                              ds.vocabulary.fingerprint() + ")");

    CookFile cook;
    const CookMatrix* matrix = nullptr;
    if (ckpt.config.use_cook) {
        if (cook_path.empty())
            throw ValidationError("eval: checkpoint was trained with co-occurrence; pass --cook");
        cook = load_cook(cook_path, fingerprint_names(ds.vocabulary.object_classes));
        if (!ckpt.cook_fingerprint.empty() &&
            cook.matrix.vocab_fingerprint != ckpt.cook_fingerprint)
            throw ValidationError("eval: co-occurrence matrix differs from the one trained against");
        matrix = &cook.matrix;
    }

    const TaskMode task = cmd->count("--task") ? task_from_name(task_flag) : ckpt.config.task_mode;
    if (!cmd->count("--batch-size")) batch_size = ckpt.config.batch_size;
    if (batch_size < 1) throw ValidationError("eval: batch size must be >= 1");

    const std::vector<SceneScores> scores =
        score_scenes(ckpt.model, ds, matrix, ckpt.config, task, batch_size, jobs);

    EvalOptions options;
    options.ks = std::move(ks);
    options.mode = task;
    options.graph_constraint = graph_constraint;
    options.iou_threshold = iou;
    const RecallResult result =
        evaluate(scores, ds.scenes, ds.vocabulary.n_predicates(), options);

    json partition_json = nullptr;
    if (!partition_from.empty()) {
        if (boundaries.size() != 2)
            throw ValidationError("eval: --boundaries needs exactly two fractions");
        const Dataset pds = load_dataset(partition_from);
        if (pds.vocabulary.fingerprint() != ds.vocabulary.fingerprint())
            throw ValidationError("eval: partition corpus uses a different vocabulary");
        const LongTailPartition partition = partition_head_body_tail(
            class_frequencies(pds), boundaries[0], boundaries[1]);
        LongTailReport report;
        if (!compare_path.empty()) {
            const RecallResult reference = result_from_json(read_json_file(compare_path));
            report = longtail_report(reference, result, partition);
        } else {
            report = longtail_report(result, partition);
        }
        partition_json = report_to_json(report, boundaries);
        if (!plot_path.empty()) write_text_file(plot_path, longtail_svg(report));
    } else if (!plot_path.empty()) {
        throw ValidationError("eval: --plot requires --partition-from");
    }

    write_json_file(out, result_to_json(result, task, graph_constraint, iou, partition_json));

    json inputs = {{"checkpoint", ckpt_path}, {"dataset", dataset_path}};
    inputs["cook"] = cook_path.empty() ? json(nullptr) : json(cook_path);
    inputs["partition_from"] = partition_from.empty() ? json(nullptr) : json(partition_from);
    inputs["compare"] = compare_path.empty() ? json(nullptr) : json(compare_path);
    json flags;
    flags["task"] = task_name(task);
    flags["K"] = options.ks;
    flags["graph_constraint"] = graph_constraint;
    flags["iou"] = iou;
    flags["batch_size"] = batch_size;
    flags["jobs"] = jobs;
    flags["boundaries"] = boundaries;
    std::vector<std::string> outputs = {out};
    if (!plot_path.empty()) outputs.push_back(plot_path);
    write_manifest(out + ".manifest.json", "eval", std::move(inputs), std::move(flags), outputs);

    std::cout << task_name(task) << " over " << result.n_scenes << " scenes:";
    for (std::size_t i = 0; i < result.ks.size(); ++i) {
        std::cout << "  R@" << result.ks[i] << " ";
        if (result.any_gt)
            std::cout << result.recall[i] << " mR@" << result.ks[i] << " " << result.mean_recall[i];
        else
            std::cout << "n/a";
    }
    std::cout << '\n';
    return 0;
}

int run_sweep(const CLI::App* cmd, const ConfigFlags& flags, const std::string& dataset_path,
              const std::string& eval_path, const std::string& cook_path,
              std::vector<int> batch_sizes, std::vector<int> ks, int jobs,
              const std::string& out_dir) {
    if (batch_sizes.empty()) throw ValidationError("sweep-batch: at least one batch size required");
    const Dataset train_ds = load_dataset(dataset_path);
    const Dataset eval_ds = load_dataset(eval_path);
    if (train_ds.vocabulary.fingerprint() != eval_ds.vocabulary.fingerprint())
        throw ValidationError("sweep-batch: corpora use different vocabularies");

    TrainConfig base = resolve_config(cmd, flags, nullptr);

    CookFile cook;
    const CookMatrix* matrix = nullptr;
    if (base.use_cook) {
        if (!cook_path.empty()) {
            cook = load_cook(cook_path, fingerprint_names(train_ds.vocabulary.object_classes));
        } else {
            cook.counts = extract_counts(train_ds, jobs);
            cook.counts.provenance = {dataset_path};
            cook.matrix = cook_from_counts(cook.counts, CookMode::indicator);
        }
        matrix = &cook.matrix;
    }

    fs::create_directories(out_dir);
    json rows = json::array();
    std::vector<std::vector<double>> chart;
    for (int bs : batch_sizes) {
        TrainConfig c = base;
        c.batch_size = bs;
        c.validate();
        const TrainResult trained = train(train_ds, matrix, c, nullptr, nullptr, 0);
        const std::vector<SceneScores> scores =
            score_scenes(trained.model, eval_ds, matrix, c, c.task_mode, bs, jobs);
        EvalOptions options;
        options.ks = ks;
        options.mode = c.task_mode;
        const RecallResult result =
            evaluate(scores, eval_ds.scenes, eval_ds.vocabulary.n_predicates(), options);
        json row;
        row["batch_size"] = bs;
        row["recall"] = per_k_map(result.ks, result.recall, result.any_gt);
        row["mean_recall"] = per_k_map(result.ks, result.mean_recall, result.any_gt);
        rows.push_back(std::move(row));
        chart.push_back(result.any_gt ? result.mean_recall : std::vector<double>(ks.size(), 0.0));
        std::cout << "batch size " << bs << ": mR@" << ks.front() << " = "
                  << (result.any_gt ? result.mean_recall.front() : 0.0) << '\n';
    }

    json sweep;
    sweep["task"] = task_name(base.task_mode);
    sweep["K"] = ks;
    sweep["batch_sizes"] = batch_sizes;
    sweep["rows"] = std::move(rows);
    sweep["config"] = config_to_json(base);
    const std::string table_path = (fs::path(out_dir) / "sweep.json").string();
    const std::string plot_path = (fs::path(out_dir) / "sweep.svg").string();
    write_json_file(table_path, sweep);
    write_text_file(plot_path, sweep_svg(batch_sizes, ks, chart));

    json inputs = {{"dataset", dataset_path}, {"eval_dataset", eval_path}};
    inputs["cook"] = cook_path.empty() ? json(nullptr) : json(cook_path);
    write_manifest((fs::path(out_dir) / "manifest.json").string(), "sweep-batch",
                   std::move(inputs),
                   {{"batch_sizes", batch_sizes}, {"K", ks}, {"config", config_to_json(base)}},
                   {table_path, plot_path});
    return 0;
}

int run_gradcheck(const CLI::App* cmd, const ConfigFlags& flags, int n_scenes, double tolerance,
                  double h, const std::string& out) {
    // Small seeded fixture; tanh by default so the finite differences are
    // taken away from activation kinks.
    SyntheticConfig synth;
    synth.n_scenes = n_scenes;
    synth.n_object_classes = 6;
    synth.n_predicate_classes = 5;
    synth.objects_min = 3;
    synth.objects_max = 5;
    synth.zipf_exponent = 0.7;
    synth.cooccurrence_blocks = {{{0, 1}, 0.9}};
    synth.relation_rules = {{{0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5},
                             {0.2, 0.2, 0.2, 0.2, 0.2}, 0.6}};
    synth.label_noise_rate = 0.1;
    synth.seed = flags.seed;

    const Dataset ds = generate_synthetic(synth);
    CoocCounts counts = extract_counts(ds);
    const CookMatrix cook = cook_from_counts(counts, CookMode::indicator);

    TrainConfig config;
    config.n_layers = 2;
    config.object_dim = 10;
    config.embed_dim = 6;
    config.relation_dim = 10;
    config.batch_size = n_scenes;
    config.activation = Activation::tanh;
    config.seed = flags.seed;
    config.task_mode = task_from_name(flags.task);
    if (cmd->count("--activation")) config.activation = activation_from_name(flags.activation);
    if (cmd->count("--tfidf-mode")) config.tfidf_mode = smoothing_mode_from_name(flags.tfidf_mode);
    if (flags.no_cook) config.use_cook = false;
    if (flags.no_tfidf) config.use_tfidf = false;
    if (flags.freeze_idf) config.tfidf_learnable = false;
    if (flags.clamp_negative) config.tfidf_clamp_negative = true;

    const ModelParams model =
        init_model(config, synth.n_object_classes, synth.n_predicate_classes);
    std::vector<const SceneAnnotation*> batch;
    for (const auto& s : ds.scenes) batch.push_back(&s);
    Rng rng(mix_seed(config.seed, "neg", 0));
    const Supervision sup = make_supervision(batch, synth.n_predicate_classes, 2.0, rng);

    const GradCheckReport report = gradient_check(model, batch, sup, config,
                                                  config.use_cook ? &cook : nullptr, tolerance, h);

    std::cout << "group                 coords   max rel err   status\n";
    for (const auto& g : report.groups) {
        std::ostringstream line;
        line.setf(std::ios::left);
        line.width(22);
        line << g.name;
        std::cout << line.str() << g.n_coords << "\t" << g.max_rel_err << "\t"
                  << (g.frozen ? "frozen" : (g.max_rel_err < tolerance ? "ok" : "FAIL")) << '\n';
    }
    std::cout << (report.pass ? "PASS" : "FAIL") << " at tolerance " << tolerance << '\n';

    if (!out.empty()) {
        json j;
        j["tolerance"] = report.tolerance;
        j["pass"] = report.pass;
        json groups = json::array();
        for (const auto& g : report.groups)
            groups.push_back({{"name", g.name},
                              {"coords", g.n_coords},
                              {"max_rel_err", g.max_rel_err},
                              {"frozen", g.frozen}});
        j["groups"] = std::move(groups);
        write_json_file(out, j);
        write_manifest(out + ".manifest.json", "gradcheck", json::object(),
                       {{"seed", flags.seed},
                        {"scenes", n_scenes},
                        {"tolerance", tolerance},
                        {"h", h},
                        {"task", flags.task}},
                       {out});
    }
    if (!report.pass) throw RuntimeError("gradient check failed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"co-occurrence + reweighted message passing toolkit for scene graphs"};
    app.require_subcommand(1);

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic long-tail corpus");
    std::string gen_config, gen_out, gen_split = "train";
    std::uint64_t gen_seed = 0;
    gen->add_option("--config", gen_config, "synthetic corpus description (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "dataset output path")->required();
    gen->add_option("--seed", gen_seed, "override the config seed");
    gen->add_option("--split", gen_split, "split tag for the output")
        ->check(CLI::IsMember({"train", "val", "test"}));

    // extract-cook
    auto* extract = app.add_subcommand("extract-cook", "tally co-occurrence from a corpus");
    std::string ex_dataset, ex_out, ex_mode = "indicator";
    int ex_jobs = 1;
    extract->add_option("--dataset", ex_dataset, "corpus to tally")->required()->check(CLI::ExistingFile);
    extract->add_option("--out", ex_out, "co-occurrence output path")->required();
    extract->add_option("--mode", ex_mode, "normalization: indicator or instance")
        ->check(CLI::IsMember({"indicator", "instance"}));
    extract->add_option("--jobs", ex_jobs, "worker threads for tallying")->check(CLI::PositiveNumber);

    // merge-cook
    auto* merge = app.add_subcommand("merge-cook", "merge a second corpus through a label mapping");
    std::string mg_base, mg_add, mg_mapping, mg_out, mg_mode;
    merge->add_option("--base", mg_base, "target-vocabulary file")->required()->check(CLI::ExistingFile);
    merge->add_option("--add", mg_add, "source file to fold in")->required()->check(CLI::ExistingFile);
    merge->add_option("--mapping", mg_mapping, "source-to-target label mapping (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    merge->add_option("--out", mg_out, "merged output path")->required();
    merge->add_option("--mode", mg_mode, "renormalization mode (default: base file's)")
        ->check(CLI::IsMember({"indicator", "instance"}));

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_dataset, tr_cook, tr_resume, tr_out_dir;
    ConfigFlags tr_flags;
    tr->add_option("--dataset", tr_dataset, "training corpus")->required()->check(CLI::ExistingFile);
    tr->add_option("--cook", tr_cook, "co-occurrence file")->check(CLI::ExistingFile);
    tr->add_option("--resume", tr_resume, "checkpoint to continue from")->check(CLI::ExistingFile);
    tr->add_option("--out-dir", tr_out_dir, "directory for checkpoint.json, log.jsonl, manifest.json")
        ->required();
    long long tr_stop_at = -1;
    tr->add_option("--stop-at", tr_stop_at,
                   "halt at this step without shortening the schedule (-1 = run to the end)");
    add_config_flags(tr, tr_flags);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_dataset, ev_cook, ev_task = "predcls", ev_partition, ev_compare,
                ev_plot, ev_out;
    std::vector<int> ev_ks = {20, 50, 100};
    std::vector<double> ev_boundaries = {0.5, 0.85};
    bool ev_gc = true;
    double ev_iou = 0.5;
    int ev_bs = 0, ev_jobs = 1;
    ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--dataset", ev_dataset, "evaluation corpus")->required()->check(CLI::ExistingFile);
    ev->add_option("--cook", ev_cook, "co-occurrence file the checkpoint was trained with")
        ->check(CLI::ExistingFile);
    ev->add_option("--task", ev_task, "override the checkpoint's subtask")
        ->check(CLI::IsMember({"predcls", "sgcls", "sggen"}));
    ev->add_option("--K", ev_ks, "recall cutoffs")->delimiter(',');
    ev->add_flag("--graph-constraint,!--no-graph-constraint", ev_gc,
                 "keep only the top predicate per pair (default on)");
    ev->add_option("--iou", ev_iou, "box overlap threshold for SGGen matching");
    ev->add_option("--batch-size", ev_bs, "scoring batch size (default: training value)");
    ev->add_option("--jobs", ev_jobs, "worker threads for scoring")->check(CLI::PositiveNumber);
    ev->add_option("--partition-from", ev_partition, "corpus whose frequencies define head/body/tail")
        ->check(CLI::ExistingFile);
    ev->add_option("--boundaries", ev_boundaries, "cumulative-mass cuts for the partition")
        ->delimiter(',');
    ev->add_option("--compare", ev_compare, "reference results file for deltas")
        ->check(CLI::ExistingFile);
    ev->add_option("--plot", ev_plot, "write the partition bar chart (SVG)");
    ev->add_option("--out", ev_out, "results output path")->required();

    // sweep-batch
    auto* sw = app.add_subcommand("sweep-batch", "train and evaluate across batch sizes");
    std::string sw_dataset, sw_eval, sw_cook, sw_out_dir;
    std::vector<int> sw_sizes = {2, 4, 8, 12};
    std::vector<int> sw_ks = {50};
    int sw_jobs = 1;
    ConfigFlags sw_flags;
    sw->add_option("--dataset", sw_dataset, "training corpus")->required()->check(CLI::ExistingFile);
    sw->add_option("--eval-dataset", sw_eval, "evaluation corpus")->required()->check(CLI::ExistingFile);
    sw->add_option("--cook", sw_cook, "co-occurrence file (default: extract from the corpus)")
        ->check(CLI::ExistingFile);
    sw->add_option("--batch-sizes", sw_sizes, "sizes to sweep")->delimiter(',');
    sw->add_option("--K", sw_ks, "recall cutoffs")->delimiter(',');
    sw->add_option("--jobs", sw_jobs, "worker threads for scoring")->check(CLI::PositiveNumber);
    sw->add_option("--out-dir", sw_out_dir, "directory for sweep.json, sweep.svg, manifest.json")
        ->required();
    add_config_flags(sw, sw_flags);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient group");
    ConfigFlags gc_flags;
    int gc_scenes = 2;
    double gc_tol = 1e-4, gc_h = 1e-6;
    std::string gc_out;
    gc->add_option("--scenes", gc_scenes, "fixture size")->check(CLI::PositiveNumber);
    gc->add_option("--tolerance", gc_tol, "max relative error");
    gc->add_option("--fd-step", gc_h, "finite-difference step");
    gc->add_option("--out", gc_out, "optional JSON report path");
    add_config_flags(gc, gc_flags);

    try {
        app.parse(argc, argv);
        if (*gen) return run_gen_synth(gen, gen_config, gen_out, gen_seed, gen_split);
        if (*extract) return run_extract_cook(ex_dataset, ex_out, ex_mode, ex_jobs);
        if (*merge) return run_merge_cook(mg_base, mg_add, mg_mapping, mg_out, mg_mode);
        if (*tr) return run_train(tr, tr_flags, tr_dataset, tr_cook, tr_resume, tr_out_dir, tr_stop_at);
        if (*ev)
            return run_eval(ev, ev_ckpt, ev_dataset, ev_cook, ev_task, ev_ks, ev_gc, ev_iou, ev_bs,
                            ev_jobs, ev_partition, ev_boundaries, ev_compare, ev_plot, ev_out);
        if (*sw)
            return run_sweep(sw, sw_flags, sw_dataset, sw_eval, sw_cook, sw_sizes, sw_ks, sw_jobs,
                             sw_out_dir);
        if (*gc) return run_gradcheck(gc, gc_flags, gc_scenes, gc_tol, gc_h, gc_out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
