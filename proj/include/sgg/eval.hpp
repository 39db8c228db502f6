#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sgg/linalg.hpp"
#include "sgg/scene_data.hpp"

namespace sgg {

// PredCls: ground-truth boxes and labels given. SGCls: ground-truth boxes,
// labels predicted. SGGen: observed (noisy) proposals only; matching also
// requires box overlap.
enum class TaskMode { predcls, sgcls, sggen };

std::string task_name(TaskMode m);
TaskMode task_from_name(const std::string& name);

// Model outputs for one scene, ready for ranking. pair_probs rows align with
// pair_index and hold a distribution over predicates; entries past
// n_predicates (the background class) are ignored by the ranker.
// predicted_class carries the labels used for matching and for the class
// score factors: ground truth in PredCls, head argmax otherwise.
struct SceneScores {
    Matrix object_probs;                        // n x |object classes|
    std::vector<int> predicted_class;           // per node
    std::vector<std::pair<int, int>> pair_index;  // ordered (subject, object) pairs
    std::vector<Vector> pair_probs;             // per pair
    std::vector<BoundingBox> boxes;             // per node
};

struct TripletPrediction {
    int subject_idx = 0;
    int object_idx = 0;
    int predicate_id = 0;
    double score = 0.0;
    int subject_class = 0;
    int object_class = 0;
};

// Candidate score = P(subject class) * P(object class) * P(predicate), class
// factors fixed to 1 in PredCls. Graph constraint keeps only the top-scoring
// predicate per ordered pair. Sorted by descending score, ties by
// (subject_idx, object_idx, predicate_id).
std::vector<TripletPrediction> rank_triplets(const SceneScores& scores, TaskMode mode,
                                             bool graph_constraint, int n_predicates);

// For each ground-truth triplet, the rank (0-based) of the prediction that
// matched it, or -1. A match needs equal predicate and equal subject/object
// classes; SGGen additionally needs both boxes to overlap their ground-truth
// counterparts at IoU >= iou_threshold. Greedy in rank order, each GT
// matched at most once.
std::vector<long long> match_ranks(const std::vector<TripletPrediction>& predictions,
                                   const SceneAnnotation& scene,
                                   const std::vector<BoundingBox>& predicted_boxes, TaskMode mode,
                                   double iou_threshold);

struct SceneRecall {
    double value = 0.0;
    bool empty_gt = false;  // no GT triplets; value is 1.0 by convention
};

SceneRecall recall_at_k(const std::vector<TripletPrediction>& predictions,
                        const SceneAnnotation& scene, const std::vector<BoundingBox>& predicted_boxes,
                        int k, TaskMode mode, double iou_threshold);

struct EvalOptions {
    std::vector<int> ks = {20, 50, 100};
    TaskMode mode = TaskMode::predcls;
    bool graph_constraint = true;
    double iou_threshold = 0.5;
};

struct RecallResult {
    std::vector<int> ks;
    std::vector<double> recall;       // per K, averaged over scenes with GT
    std::vector<double> mean_recall;  // per K, unweighted over predicates with GT
    std::vector<std::vector<double>> per_predicate;  // [K][predicate]; 0 where no GT
    std::vector<long long> gt_per_predicate;
    long long n_scenes = 0;
    long long n_scenes_empty_gt = 0;
    bool any_gt = false;
};

RecallResult evaluate(const std::vector<SceneScores>& scores,
                      const std::vector<SceneAnnotation>& scenes, int n_predicates,
                      const EvalOptions& options);

// Pooled per-predicate recall: matched[p] / total[p] over predicates with
// total > 0, plus their unweighted mean.
std::pair<double, std::vector<double>> mean_recall_from_tallies(
    const std::vector<long long>& matched, const std::vector<long long>& total);

struct WeightedScoreInputs {
    double r50 = 0.0;
    double wmap_rel = 0.0;
    double wmap_phr = 0.0;
};

// 0.2 * R@50 + 0.4 * wmAP_rel + 0.4 * wmAP_phr
double score_wtd(const WeightedScoreInputs& inputs);

// Per-partition mean recall, optionally against a second model.
struct LongTailReport {
    struct Row {
        std::string name;
        std::vector<int> classes;
        long long n_counted = 0;          // partition members with >= 1 GT
        std::vector<double> mean;         // per K
        std::vector<double> mean_other;   // per K; empty without comparison
        std::vector<double> delta;        // mean - mean_other; empty without comparison
    };
    std::vector<int> ks;
    std::vector<Row> rows;  // head, body, tail
    bool has_compare = false;
};

LongTailReport longtail_report(const RecallResult& result, const LongTailPartition& partition);

// a is the reference model, b the candidate; deltas are b - a. Both results
// must come from the same corpus (equal K sets and GT tallies).
LongTailReport longtail_report(const RecallResult& a, const RecallResult& b,
                               const LongTailPartition& partition);

// Fig-style grouped bar chart (deltas when comparing, means otherwise).
std::string longtail_svg(const LongTailReport& report);

} // namespace sgg
