#include "sgg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sgg {

std::string task_name(TaskMode m) {
    switch (m) {
        case TaskMode::predcls: return "predcls";
        case TaskMode::sgcls: return "sgcls";
        case TaskMode::sggen: return "sggen";
    }
    return "predcls";
}

TaskMode task_from_name(const std::string& name) {
    if (name == "PredCls" || name == "predcls") return TaskMode::predcls;
    if (name == "SGCls" || name == "sgcls") return TaskMode::sgcls;
    if (name == "SGGen" || name == "sggen") return TaskMode::sggen;
    throw ValidationError("task must be PredCls|SGCls|SGGen, got '" + name + "'");
}

std::vector<TripletPrediction> rank_triplets(const SceneScores& scores, TaskMode mode,
                                             bool graph_constraint, int n_predicates) {
    if (n_predicates <= 0) throw ValidationError("rank: predicate count must be positive");
    const std::size_t n = scores.object_probs.rows;
    if (scores.predicted_class.size() != n || scores.boxes.size() != n)
        throw ValidationError("rank: scores tables do not align");
    if (scores.pair_probs.size() != scores.pair_index.size())
        throw ValidationError("rank: pair tables do not align");

    std::vector<TripletPrediction> out;
    for (std::size_t p = 0; p < scores.pair_index.size(); ++p) {
        const auto [u, v] = scores.pair_index[p];
        if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n)
            throw ValidationError("rank: pair index out of range");
        const Vector& probs = scores.pair_probs[p];
        if (static_cast<int>(probs.size()) < n_predicates)
            throw ValidationError("rank: predicate distribution too short");

        double class_factor = 1.0;
        if (mode != TaskMode::predcls) {
            class_factor = scores.object_probs(u, scores.predicted_class[u]) *
                           scores.object_probs(v, scores.predicted_class[v]);
        }

        auto emit = [&](int pred) {
            TripletPrediction t;
            t.subject_idx = u;
            t.object_idx = v;
            t.predicate_id = pred;
            t.score = class_factor * probs[pred];
            t.subject_class = scores.predicted_class[u];
            t.object_class = scores.predicted_class[v];
            out.push_back(t);
        };

        if (graph_constraint) {
            int best = 0;
            for (int c = 1; c < n_predicates; ++c)
                if (probs[c] > probs[best]) best = c;
            emit(best);
        } else {
            for (int c = 0; c < n_predicates; ++c) emit(c);
        }
    }

    std::sort(out.begin(), out.end(), [](const TripletPrediction& a, const TripletPrediction& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.subject_idx != b.subject_idx) return a.subject_idx < b.subject_idx;
        if (a.object_idx != b.object_idx) return a.object_idx < b.object_idx;
        return a.predicate_id < b.predicate_id;
    });
    return out;
}

std::vector<long long> match_ranks(const std::vector<TripletPrediction>& predictions,
                                   const SceneAnnotation& scene,
                                   const std::vector<BoundingBox>& predicted_boxes, TaskMode mode,
                                   double iou_threshold) {
    std::vector<long long> ranks(scene.relations.size(), -1);
    std::vector<char> taken(scene.relations.size(), 0);

    for (std::size_t r = 0; r < predictions.size(); ++r) {
        const TripletPrediction& p = predictions[r];
        for (std::size_t t = 0; t < scene.relations.size(); ++t) {
            if (taken[t]) continue;
            const RelationTriplet& gt = scene.relations[t];
            if (gt.predicate_id != p.predicate_id) continue;
            if (scene.objects[gt.subject_idx].class_id != p.subject_class) continue;
            if (scene.objects[gt.object_idx].class_id != p.object_class) continue;
            if (mode == TaskMode::sggen) {
                if (iou(predicted_boxes[p.subject_idx], scene.objects[gt.subject_idx].box) <
                    iou_threshold)
                    continue;
                if (iou(predicted_boxes[p.object_idx], scene.objects[gt.object_idx].box) <
                    iou_threshold)
                    continue;
            }
            taken[t] = 1;
            ranks[t] = static_cast<long long>(r);
            break;  // one prediction consumes at most one GT
        }
    }
    return ranks;
}

SceneRecall recall_at_k(const std::vector<TripletPrediction>& predictions,
                        const SceneAnnotation& scene, const std::vector<BoundingBox>& predicted_boxes,
                        int k, TaskMode mode, double iou_threshold) {
    if (k < 1) throw ValidationError("recall: K must be >= 1");
    if (scene.relations.empty()) return SceneRecall{1.0, true};
    const auto ranks = match_ranks(predictions, scene, predicted_boxes, mode, iou_threshold);
    long long hit = 0;
    for (long long r : ranks)
        if (r >= 0 && r < k) ++hit;
    return SceneRecall{static_cast<double>(hit) / static_cast<double>(scene.relations.size()), false};
}

std::pair<double, std::vector<double>> mean_recall_from_tallies(
    const std::vector<long long>& matched, const std::vector<long long>& total) {
    if (matched.size() != total.size())
        throw ValidationError("mean recall: tally sizes disagree");
    std::vector<double> per(total.size(), 0.0);
    double sum = 0.0;
    long long n_present = 0;
    for (std::size_t p = 0; p < total.size(); ++p) {
        if (total[p] <= 0) continue;
        per[p] = static_cast<double>(matched[p]) / static_cast<double>(total[p]);
        sum += per[p];
        ++n_present;
    }
    return {n_present > 0 ? sum / static_cast<double>(n_present) : 0.0, per};
}

RecallResult evaluate(const std::vector<SceneScores>& scores,
                      const std::vector<SceneAnnotation>& scenes, int n_predicates,
                      const EvalOptions& options) {
    if (scores.size() != scenes.size())
        throw ValidationError("evaluate: score/scene count mismatch");
    if (options.ks.empty()) throw ValidationError("evaluate: need at least one K");
    for (int k : options.ks)
        if (k < 1) throw ValidationError("evaluate: K must be >= 1");

    RecallResult res;
    res.ks = options.ks;
    res.n_scenes = static_cast<long long>(scenes.size());
    res.gt_per_predicate.assign(n_predicates, 0);
    std::vector<std::vector<long long>> matched(options.ks.size(),
                                                std::vector<long long>(n_predicates, 0));
    std::vector<double> recall_sum(options.ks.size(), 0.0);
    long long n_scored = 0;

    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const SceneAnnotation& scene = scenes[s];
        if (scene.relations.empty()) {
            res.n_scenes_empty_gt++;
            continue;
        }
        const auto preds =
            rank_triplets(scores[s], options.mode, options.graph_constraint, n_predicates);
        const auto ranks =
            match_ranks(preds, scene, scores[s].boxes, options.mode, options.iou_threshold);
        ++n_scored;
        for (std::size_t t = 0; t < scene.relations.size(); ++t)
            res.gt_per_predicate[scene.relations[t].predicate_id]++;
        for (std::size_t ki = 0; ki < options.ks.size(); ++ki) {
            long long hit = 0;
            for (std::size_t t = 0; t < ranks.size(); ++t) {
                if (ranks[t] >= 0 && ranks[t] < options.ks[ki]) {
                    ++hit;
                    matched[ki][scene.relations[t].predicate_id]++;
                }
            }
            recall_sum[ki] += static_cast<double>(hit) / static_cast<double>(scene.relations.size());
        }
    }

    res.any_gt = n_scored > 0;
    res.recall.assign(options.ks.size(), 0.0);
    res.mean_recall.assign(options.ks.size(), 0.0);
    res.per_predicate.assign(options.ks.size(), std::vector<double>(n_predicates, 0.0));
    for (std::size_t ki = 0; ki < options.ks.size(); ++ki) {
        if (n_scored > 0) res.recall[ki] = recall_sum[ki] / static_cast<double>(n_scored);
        auto [mean, per] = mean_recall_from_tallies(matched[ki], res.gt_per_predicate);
        res.mean_recall[ki] = mean;
        res.per_predicate[ki] = std::move(per);
    }
    return res;
}

double score_wtd(const WeightedScoreInputs& inputs) {
    if (!std::isfinite(inputs.r50) || !std::isfinite(inputs.wmap_rel) || !std::isfinite(inputs.wmap_phr))
        throw DomainError("score_wtd: non-finite input");
    return 0.2 * inputs.r50 + 0.4 * inputs.wmap_rel + 0.4 * inputs.wmap_phr;
}

// ---------------------------------------------------------------------------
// long-tail reporting

namespace {

LongTailReport build_report(const RecallResult& result, const RecallResult* other,
                            const LongTailPartition& partition) {
    LongTailReport rep;
    rep.ks = result.ks;
    rep.has_compare = other != nullptr;

    const auto add_row = [&](const std::string& name, const std::vector<int>& classes) {
        LongTailReport::Row row;
        row.name = name;
        row.classes = classes;
        row.mean.assign(result.ks.size(), 0.0);
        if (other) {
            row.mean_other.assign(result.ks.size(), 0.0);
            row.delta.assign(result.ks.size(), 0.0);
        }
        for (int c : classes) {
            if (c < 0 || c >= static_cast<int>(result.gt_per_predicate.size()))
                throw ValidationError("long-tail report: partition class outside the result vocabulary");
            if (result.gt_per_predicate[c] > 0) row.n_counted++;
        }
        for (std::size_t ki = 0; ki < result.ks.size(); ++ki) {
            double sum = 0.0, sum_other = 0.0;
            for (int c : classes) {
                if (result.gt_per_predicate[c] <= 0) continue;
                sum += result.per_predicate[ki][c];
                if (other) sum_other += other->per_predicate[ki][c];
            }
            if (row.n_counted > 0) {
                row.mean[ki] = sum / static_cast<double>(row.n_counted);
                if (other) {
                    row.mean_other[ki] = sum_other / static_cast<double>(row.n_counted);
                    row.delta[ki] = row.mean[ki] - row.mean_other[ki];
                }
            }
        }
        rep.rows.push_back(std::move(row));
    };

    add_row("head", partition.head);
    add_row("body", partition.body);
    add_row("tail", partition.tail);
    return rep;
}

} // namespace

LongTailReport longtail_report(const RecallResult& result, const LongTailPartition& partition) {
    return build_report(result, nullptr, partition);
}

LongTailReport longtail_report(const RecallResult& a, const RecallResult& b,
                               const LongTailPartition& partition) {
    if (a.ks != b.ks)
        throw ValidationError("long-tail report: the two results use different K sets");
    if (a.gt_per_predicate != b.gt_per_predicate)
        throw ValidationError("long-tail report: the two results come from different corpora");
    return build_report(b, &a, partition);
}

std::string longtail_svg(const LongTailReport& report) {
    // Grouped bars: one group per partition, one bar per K. Deltas when the
    // report compares two models, absolute means otherwise.
    const double width = 640, height = 360;
    const double margin_l = 60, margin_r = 20, margin_t = 40, margin_b = 50;
    const double plot_w = width - margin_l - margin_r;
    const double plot_h = height - margin_t - margin_b;

    double lo = 0.0, hi = 0.0;
    for (const auto& row : report.rows) {
        const auto& vals = report.has_compare ? row.delta : row.mean;
        for (double v : vals) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi - lo < 1e-9) hi = lo + 1.0;
    const double span = hi - lo;
    const auto y_of = [&](double v) { return margin_t + (hi - v) / span * plot_h; };

    static const char* colors[] = {"#4878a8", "#e08840", "#58a868", "#b05090"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"15\">" << (report.has_compare ? "mean recall delta by partition" : "mean recall by partition")
        << "</text>\n";

    const double group_w = plot_w / static_cast<double>(report.rows.size());
    const std::size_t n_ks = report.ks.size();
    const double bar_w = group_w * 0.7 / static_cast<double>(n_ks);

    // zero line
    svg << "<line x1=\"" << margin_l << "\" y1=\"" << y_of(0.0) << "\" x2=\"" << width - margin_r
        << "\" y2=\"" << y_of(0.0) << "\" stroke=\"#888\" stroke-width=\"1\"/>\n";

    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        const auto& row = report.rows[r];
        const double gx = margin_l + group_w * (static_cast<double>(r) + 0.15);
        const auto& vals = report.has_compare ? row.delta : row.mean;
        for (std::size_t ki = 0; ki < n_ks; ++ki) {
            const double v = ki < vals.size() ? vals[ki] : 0.0;
            const double x = gx + bar_w * static_cast<double>(ki);
            const double y0 = y_of(std::max(0.0, v));
            const double h = std::abs(y_of(0.0) - y_of(v));
            svg << "<rect x=\"" << x << "\" y=\"" << y0 << "\" width=\"" << bar_w * 0.9
                << "\" height=\"" << h << "\" fill=\"" << colors[ki % 4] << "\"/>\n";
        }
        svg << "<text x=\"" << gx + group_w * 0.35 << "\" y=\"" << height - margin_b + 20
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << row.name
            << " (" << row.n_counted << ")</text>\n";
    }

    // legend
    for (std::size_t ki = 0; ki < n_ks; ++ki) {
        const double x = margin_l + 110.0 * static_cast<double>(ki);
        svg << "<rect x=\"" << x << "\" y=\"" << height - 18 << "\" width=\"12\" height=\"12\" fill=\""
            << colors[ki % 4] << "\"/>\n";
        svg << "<text x=\"" << x + 18 << "\" y=\"" << height - 7
            << "\" font-family=\"sans-serif\" font-size=\"12\">K=" << report.ks[ki] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace sgg
