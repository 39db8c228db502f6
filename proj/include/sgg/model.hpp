#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sgg/cook.hpp"
#include "sgg/eval.hpp"
#include "sgg/linalg.hpp"
#include "sgg/mpnn.hpp"
#include "sgg/rng.hpp"
#include "sgg/scene_data.hpp"
#include "sgg/tfidf.hpp"

namespace sgg {

struct TrainConfig {
    double lr = 0.008;
    double weight_decay = 5e-5;
    long long iterations = 1000;
    int batch_size = 12;
    int n_layers = 4;
    int object_dim = 128;   // d, the node feature width
    int embed_dim = 64;     // class-embedding width
    int relation_dim = 128; // echoed for provenance; the relation head reads 2*object_dim
    long long warmup_steps = 500;
    std::vector<long long> milestones;  // empty -> 60% and 85% of iterations
    double lr_decay = 0.1;
    std::uint64_t seed = 0;
    TaskMode task_mode = TaskMode::predcls;
    bool use_cook = true;
    bool use_tfidf = true;
    bool tfidf_learnable = true;
    SmoothingMode tfidf_mode = SmoothingMode::code;
    bool tfidf_clamp_negative = false;
    Activation activation = Activation::relu;
    int knn = 0;            // 0 = complete scene graph
    double neg_ratio = 3.0; // background pairs sampled per GT relation

    void validate() const;
    std::vector<long long> resolved_milestones() const;
    // Linear warmup times multiplicative milestone decay.
    double lr_at(long long step) const;
    bool operator==(const TrainConfig&) const = default;
};

// Benchmark-scale defaults: LR 0.008, weight decay 5e-5, batch 12 for
// PredCls and 9 otherwise, 4 layers, 128-wide features.
TrainConfig paper_preset(TaskMode mode);
// Small widths and short schedules sized for the synthetic corpora.
TrainConfig desk_preset(TaskMode mode);

struct ModelParams {
    Matrix class_embedding;  // C x embed_dim
    Matrix w_in;             // d x (embed_dim + 8)
    Vector b_in;             // d
    std::vector<LayerParams> layers;
    TfIdfParams tfidf;
    Matrix w_rel;  // (P+1) x 2d; the extra last row is the background class
    Vector b_rel;
    Matrix w_obj;  // C x d
    Vector b_obj;

    int n_objects() const { return static_cast<int>(w_obj.rows); }
    int n_predicates() const { return static_cast<int>(w_rel.rows) - 1; }
    bool operator==(const ModelParams&) const = default;
};

ModelParams init_model(const TrainConfig& config, int n_objects, int n_predicates);

// Supervision resolved for one step: object targets are ground-truth class
// ids; pairs are the GT triplets plus sampled background negatives whose
// predicate_id equals n_predicates.
struct Supervision {
    struct Scene {
        std::vector<int> object_targets;
        std::vector<RelationTriplet> pairs;
    };
    std::vector<Scene> scenes;
};

Supervision make_supervision(const std::vector<const SceneAnnotation*>& scenes, int n_predicates,
                             double neg_ratio, Rng& rng);

struct Gradients {
    Matrix class_embedding;
    Matrix w_in;
    Vector b_in;
    std::vector<Matrix> layer_w;
    std::vector<Vector> layer_att;
    double epsilon = 0.0;
    double gamma = 0.0;
    Matrix w_rel;
    Vector b_rel;
    Matrix w_obj;
    Vector b_obj;

    static Gradients zeros_like(const ModelParams& m);
};

struct LossBreakdown {
    double l_obj = 0.0;
    double l_rel = 0.0;
    double total = 0.0;
};

// logits = w_rel concat(z_u, z_v) + b_rel
Vector relation_logits(const Vector& z_u, const Vector& z_v, const Matrix& w_rel,
                       const Vector& b_rel);

// Stable softmax; rejects non-finite input.
Vector predict_relations(const Vector& logits);

// Mean cross-entropy over nodes plus mean cross-entropy over supervised
// pairs; an empty pair set contributes exactly 0.
LossBreakdown joint_loss(const std::vector<Vector>& object_logits,
                         const std::vector<int>& object_targets,
                         const std::vector<Vector>& rel_logits,
                         const std::vector<int>& rel_targets);

LossBreakdown compute_loss(const ModelParams& model,
                           const std::vector<const SceneAnnotation*>& scenes,
                           const Supervision& supervision, const TrainConfig& config,
                           const CookMatrix* cook);

LossBreakdown compute_gradients(const ModelParams& model,
                                const std::vector<const SceneAnnotation*>& scenes,
                                const Supervision& supervision, const TrainConfig& config,
                                const CookMatrix* cook, Gradients& out);

struct LogRecord {
    long long step = 0;
    double lr = 0.0;
    double l_obj = 0.0;
    double l_rel = 0.0;
    double l = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
};

struct TrainResult {
    ModelParams model;
    std::vector<LogRecord> log;
    long long final_step = 0;
};

using StepCallback = std::function<void(const LogRecord&)>;

// Deterministic serial minibatch SGD: per-epoch seeded permutation batching,
// per-step seeded negative sampling, uniform decoupled-style weight decay
// p -= lr (g + wd p). config.iterations fixes the schedule; stop_step (-1 =
// run to the end) halts early without shortening it, so resuming from
// (resume_model, resume_step) replays the exact remainder of an
// uninterrupted run.
TrainResult train(const Dataset& dataset, const CookMatrix* cook, const TrainConfig& config,
                  const StepCallback& on_step = nullptr, const ModelParams* resume_model = nullptr,
                  long long resume_step = 0, long long stop_step = -1);

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t n_coords = 0;
    bool frozen = false;  // analytic gradient pinned to zero by config
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double tolerance = 1e-4;
    bool pass = false;
};

// Central finite differences of the total loss, h on every coordinate.
// Frozen tf-l-idf parameters are skipped (their analytic gradient is defined
// as exactly zero).
Gradients fd_gradients(const ModelParams& model, const std::vector<const SceneAnnotation*>& scenes,
                       const Supervision& supervision, const TrainConfig& config,
                       const CookMatrix* cook, double h = 1e-6);

// Relative error per group: |a - f| / max(1, |a|, |f|).
GradCheckReport compare_gradients(const ModelParams& shape, const TrainConfig& config,
                                  const Gradients& analytic, const Gradients& fd, double tolerance);

GradCheckReport gradient_check(const ModelParams& model,
                               const std::vector<const SceneAnnotation*>& scenes,
                               const Supervision& supervision, const TrainConfig& config,
                               const CookMatrix* cook, double tolerance = 1e-4, double h = 1e-6);

// ---------------------------------------------------------------------------
// persistence and scoring

struct Checkpoint {
    int schema_version = 1;
    TrainConfig config;
    ModelParams model;
    std::string cook_fingerprint;     // empty when trained without co-occurrence
    std::string dataset_fingerprint;  // full vocabulary fingerprint
    long long step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Scores every scene for evaluation: object-class distributions, predicate
// distributions for every ordered pair, matching labels per task mode.
// Scenes are grouped into batches of batch_size in dataset order (the
// reweighting layer is batch-dependent); jobs > 1 scores batches in
// parallel into preallocated slots, leaving results byte-identical.
std::vector<SceneScores> score_scenes(const ModelParams& model, const Dataset& dataset,
                                      const CookMatrix* cook, const TrainConfig& config,
                                      TaskMode mode, int batch_size, int jobs = 1);

} // namespace sgg
