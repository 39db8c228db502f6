#include "sgg/model.hpp"

#include "sgg/config_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace sgg {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// config

void TrainConfig::validate() const {
    if (lr < 0.0) throw ValidationError("config: learning rate must be >= 0");
    if (weight_decay < 0.0) throw ValidationError("config: weight decay must be >= 0");
    if (iterations < 0) throw ValidationError("config: iterations must be >= 0");
    if (batch_size < 1) throw ValidationError("config: batch size must be >= 1");
    if (n_layers < 1) throw ValidationError("config: at least one layer required");
    if (object_dim < 1 || embed_dim < 1 || relation_dim < 1)
        throw ValidationError("config: dimensions must be positive");
    if (warmup_steps < 0) throw ValidationError("config: warmup steps must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0))
        throw ValidationError("config: lr decay must be in (0, 1]");
    if (neg_ratio < 0.0) throw ValidationError("config: negative-sampling ratio must be >= 0");
    if (knn < 0) throw ValidationError("config: knn must be >= 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] < 0) throw ValidationError("config: milestones must be >= 0");
        if (i > 0 && milestones[i] <= milestones[i - 1])
            throw ValidationError("config: milestones must be strictly increasing");
    }
}

std::vector<long long> TrainConfig::resolved_milestones() const {
    if (!milestones.empty()) return milestones;
    return {static_cast<long long>(0.6 * static_cast<double>(iterations)),
            static_cast<long long>(0.85 * static_cast<double>(iterations))};
}

double TrainConfig::lr_at(long long step) const {
    double factor = 1.0;
    if (warmup_steps > 0 && step < warmup_steps)
        factor = static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    for (long long m : resolved_milestones())
        if (step >= m) factor *= lr_decay;
    return lr * factor;
}

TrainConfig paper_preset(TaskMode mode) {
    TrainConfig c;
    c.lr = 0.008;
    c.weight_decay = 5e-5;
    c.batch_size = mode == TaskMode::predcls ? 12 : 9;
    c.n_layers = 4;
    c.object_dim = 128;
    c.relation_dim = 128;
    c.embed_dim = 64;
    c.warmup_steps = 500;
    c.task_mode = mode;
    return c;
}

TrainConfig desk_preset(TaskMode mode) {
    TrainConfig c;
    c.lr = 0.05;
    c.weight_decay = 5e-5;
    c.iterations = 400;
    c.batch_size = 8;
    c.n_layers = 2;
    c.object_dim = 64;
    c.embed_dim = 32;
    c.relation_dim = 64;
    c.warmup_steps = 40;
    c.task_mode = mode;
    return c;
}

// ---------------------------------------------------------------------------
// shared numeric helpers

namespace {

int argmax_of(const double* v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// softmax in place, stable
void softmax_inplace(Vector& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

double cross_entropy(const Vector& logits, int target) {
    if (target < 0 || target >= static_cast<int>(logits.size()))
        throw ValidationError("cross entropy: target index out of range");
    double mx = logits[0];
    for (double x : logits) {
        if (!std::isfinite(x)) throw DomainError("cross entropy: non-finite logit");
        mx = std::max(mx, x);
    }
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - mx);
    return mx + std::log(sum) - logits[target];
}

Vector box_encode(const BoundingBox& b) {
    const double w = b.x1 - b.x0, h = b.y1 - b.y0;
    return {b.x0, b.y0, b.x1, b.y1, w, h, 0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1)};
}

int observed_label(const ObjectInstance& o, int n_classes) {
    if (o.observed_logits)
        return argmax_of(o.observed_logits->data(), n_classes);
    return o.observed_class_id;
}

int embed_label(const ObjectInstance& o, TaskMode mode, int n_classes) {
    return mode == TaskMode::predcls ? o.class_id : observed_label(o, n_classes);
}

struct BuiltBatch {
    GraphBatch graph;                          // initial features z0
    std::vector<std::vector<int>> embed_labels;
    std::vector<std::vector<Vector>> x;        // projection inputs per node
};

BuiltBatch build_graph(const ModelParams& model, const std::vector<const SceneAnnotation*>& scenes,
                       const TrainConfig& config, TaskMode mode) {
    const std::size_t d = model.w_in.rows;
    const std::size_t e = model.class_embedding.cols;
    const int C = model.n_objects();
    if (model.w_in.cols != e + 8)
        throw ValidationError("model: projection width disagrees with embedding + box encoding");

    BuiltBatch out;
    for (const SceneAnnotation* scene : scenes) {
        const std::size_t n = scene->objects.size();
        GraphScene gs;
        gs.z = Matrix(n, d);
        std::vector<int> labels(n);
        std::vector<Vector> xs(n);
        gs.boxes.resize(n);
        for (std::size_t u = 0; u < n; ++u) {
            const ObjectInstance& o = scene->objects[u];
            labels[u] = embed_label(o, mode, C);
            if (labels[u] < 0 || labels[u] >= C)
                throw ValidationError("model: object label outside the trained vocabulary");
            Vector x(e + 8);
            std::copy(model.class_embedding.row(labels[u]), model.class_embedding.row(labels[u]) + e,
                      x.begin());
            const Vector box = box_encode(o.box);
            std::copy(box.begin(), box.end(), x.begin() + static_cast<long>(e));
            matvec(model.w_in, x.data(), gs.z.row(u));
            axpy(1.0, model.b_in.data(), gs.z.row(u), d);
            xs[u] = std::move(x);
            gs.boxes[u] = o.box;
        }
        gs.neighbors = config.knn > 0 ? knn_topology(gs.boxes, config.knn)
                                      : complete_topology(static_cast<int>(n));
        gs.lookup_labels = labels;
        out.graph.scenes.push_back(std::move(gs));
        out.embed_labels.push_back(std::move(labels));
        out.x.push_back(std::move(xs));
    }
    return out;
}

LabelRefresh make_refresh(const ModelParams& model) {
    return [&model](const GraphBatch& batch) {
        const int C = model.n_objects();
        std::vector<std::vector<int>> out(batch.scenes.size());
        Vector logits(C);
        for (std::size_t s = 0; s < batch.scenes.size(); ++s) {
            const Matrix& z = batch.scenes[s].z;
            out[s].resize(z.rows);
            for (std::size_t u = 0; u < z.rows; ++u) {
                matvec(model.w_obj, z.row(u), logits.data());
                axpy(1.0, model.b_obj.data(), logits.data(), C);
                out[s][u] = argmax_of(logits.data(), C);
            }
        }
        return out;
    };
}

struct ForwardOut {
    BuiltBatch built;
    GraphBatch final_graph;
    BlockRecords records;  // filled only when with_tape
};

ForwardOut forward_batch(const ModelParams& model, const std::vector<const SceneAnnotation*>& scenes,
                         const TrainConfig& config, const CookMatrix* cook, TaskMode mode,
                         bool with_tape) {
    ForwardOut out;
    out.built = build_graph(model, scenes, config, mode);
    const CookMatrix* effective = config.use_cook ? cook : nullptr;
    const TfIdfParams* tfidf = config.use_tfidf ? &model.tfidf : nullptr;
    LabelRefresh refresh;
    if (mode != TaskMode::predcls) refresh = make_refresh(model);
    out.final_graph =
        run_blocks(out.built.graph, model.layers, tfidf, effective, model.n_objects(), refresh,
                   with_tape ? &out.records : nullptr);
    return out;
}

void check_supervision(const std::vector<const SceneAnnotation*>& scenes,
                       const Supervision& supervision) {
    if (supervision.scenes.size() != scenes.size())
        throw ValidationError("supervision does not align with the scene batch");
    for (std::size_t s = 0; s < scenes.size(); ++s)
        if (supervision.scenes[s].object_targets.size() != scenes[s]->objects.size())
            throw ValidationError("supervision object targets do not align with the scene");
}

} // namespace

// ---------------------------------------------------------------------------
// heads

Vector relation_logits(const Vector& z_u, const Vector& z_v, const Matrix& w_rel,
                       const Vector& b_rel) {
    const std::size_t d = z_u.size();
    if (z_v.size() != d || w_rel.cols != 2 * d || b_rel.size() != w_rel.rows)
        throw ValidationError("relation head: dimension mismatch");
    Vector logits(w_rel.rows);
    for (std::size_t r = 0; r < w_rel.rows; ++r) {
        const double* row = w_rel.row(r);
        logits[r] = b_rel[r] + dot(row, z_u.data(), d) + dot(row + d, z_v.data(), d);
    }
    return logits;
}

Vector predict_relations(const Vector& logits) {
    if (logits.empty()) throw ValidationError("predict: empty logits");
    for (double x : logits)
        if (!std::isfinite(x)) throw DomainError("predict: non-finite logit");
    Vector p = logits;
    softmax_inplace(p);
    return p;
}

LossBreakdown joint_loss(const std::vector<Vector>& object_logits,
                         const std::vector<int>& object_targets,
                         const std::vector<Vector>& rel_logits,
                         const std::vector<int>& rel_targets) {
    if (object_logits.size() != object_targets.size() || rel_logits.size() != rel_targets.size())
        throw ValidationError("joint loss: logits/targets do not align");
    if (object_logits.empty()) throw ValidationError("joint loss: at least one node required");

    LossBreakdown out;
    for (std::size_t i = 0; i < object_logits.size(); ++i)
        out.l_obj += cross_entropy(object_logits[i], object_targets[i]);
    out.l_obj /= static_cast<double>(object_logits.size());

    if (!rel_logits.empty()) {
        for (std::size_t i = 0; i < rel_logits.size(); ++i)
            out.l_rel += cross_entropy(rel_logits[i], rel_targets[i]);
        out.l_rel /= static_cast<double>(rel_logits.size());
    }
    out.total = out.l_obj + out.l_rel;
    return out;
}

// ---------------------------------------------------------------------------
// supervision

Supervision make_supervision(const std::vector<const SceneAnnotation*>& scenes, int n_predicates,
                             double neg_ratio, Rng& rng) {
    Supervision sup;
    for (const SceneAnnotation* scene : scenes) {
        Supervision::Scene s;
        for (const auto& o : scene->objects) s.object_targets.push_back(o.class_id);
        s.pairs = scene->relations;

        const long long n_gt = static_cast<long long>(scene->relations.size());
        const long long want = static_cast<long long>(std::floor(neg_ratio * static_cast<double>(n_gt)));
        if (want > 0) {
            std::set<std::pair<int, int>> positive;
            for (const auto& r : scene->relations) positive.insert({r.subject_idx, r.object_idx});
            std::vector<std::pair<int, int>> candidates;
            const int n = static_cast<int>(scene->objects.size());
            for (int u = 0; u < n; ++u)
                for (int v = 0; v < n; ++v)
                    if (u != v && !positive.count({u, v})) candidates.emplace_back(u, v);
            rng.shuffle(candidates);
            const long long take = std::min<long long>(want, static_cast<long long>(candidates.size()));
            for (long long i = 0; i < take; ++i)
                s.pairs.push_back({candidates[i].first, candidates[i].second, n_predicates});
        }
        sup.scenes.push_back(std::move(s));
    }
    return sup;
}

// ---------------------------------------------------------------------------
// init

Gradients Gradients::zeros_like(const ModelParams& m) {
    Gradients g;
    g.class_embedding = Matrix(m.class_embedding.rows, m.class_embedding.cols);
    g.w_in = Matrix(m.w_in.rows, m.w_in.cols);
    g.b_in.assign(m.b_in.size(), 0.0);
    for (const auto& l : m.layers) {
        g.layer_w.emplace_back(l.W.rows, l.W.cols);
        g.layer_att.emplace_back(l.w_att.size(), 0.0);
    }
    g.w_rel = Matrix(m.w_rel.rows, m.w_rel.cols);
    g.b_rel.assign(m.b_rel.size(), 0.0);
    g.w_obj = Matrix(m.w_obj.rows, m.w_obj.cols);
    g.b_obj.assign(m.b_obj.size(), 0.0);
    return g;
}

ModelParams init_model(const TrainConfig& config, int n_objects, int n_predicates) {
    config.validate();
    if (n_objects < 1 || n_predicates < 1)
        throw ValidationError("init: vocabulary must be nonempty");

    Rng rng(mix_seed(config.seed, "init"));
    const std::size_t d = config.object_dim;
    const std::size_t e = config.embed_dim;

    auto fill_normal = [&rng](Matrix& m, double scale) {
        for (double& x : m.a) x = scale * rng.normal();
    };
    auto fill_normal_v = [&rng](Vector& v, double scale) {
        for (double& x : v) x = scale * rng.normal();
    };

    ModelParams m;
    m.class_embedding = Matrix(n_objects, e);
    fill_normal(m.class_embedding, 0.1);
    m.w_in = Matrix(d, e + 8);
    fill_normal(m.w_in, 1.0 / std::sqrt(static_cast<double>(e + 8)));
    m.b_in.assign(d, 0.0);
    for (int l = 0; l < config.n_layers; ++l) {
        LayerParams lp;
        lp.W = Matrix(d, d);
        fill_normal(lp.W, 0.3 / std::sqrt(static_cast<double>(d)));
        lp.w_att.assign(d, 0.0);
        fill_normal_v(lp.w_att, 1.0 / std::sqrt(static_cast<double>(d)));
        lp.activation = config.activation;
        m.layers.push_back(std::move(lp));
    }
    m.w_rel = Matrix(n_predicates + 1, 2 * d);
    fill_normal(m.w_rel, 1.0 / std::sqrt(static_cast<double>(2 * d)));
    m.b_rel.assign(n_predicates + 1, 0.0);
    m.w_obj = Matrix(n_objects, d);
    fill_normal(m.w_obj, 1.0 / std::sqrt(static_cast<double>(d)));
    m.b_obj.assign(n_objects, 0.0);

    m.tfidf.learnable = config.tfidf_learnable;
    m.tfidf.smoothing_mode = config.tfidf_mode;
    m.tfidf.clamp_negative = config.tfidf_clamp_negative;
    if (config.tfidf_learnable) {
        m.tfidf.epsilon = 0.01 * rng.normal();
        m.tfidf.gamma = 0.01 * rng.normal();
    } else {
        m.tfidf.epsilon = 0.0;
        m.tfidf.gamma = 0.0;
    }
    return m;
}

// ---------------------------------------------------------------------------
// loss + gradients

LossBreakdown compute_loss(const ModelParams& model,
                           const std::vector<const SceneAnnotation*>& scenes,
                           const Supervision& supervision, const TrainConfig& config,
                           const CookMatrix* cook) {
    check_supervision(scenes, supervision);
    const ForwardOut fwd = forward_batch(model, scenes, config, cook, config.task_mode, false);

    const int C = model.n_objects();
    std::vector<Vector> obj_logits, rel_logits;
    std::vector<int> obj_targets, rel_targets;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const Matrix& z = fwd.final_graph.scenes[s].z;
        for (std::size_t u = 0; u < z.rows; ++u) {
            Vector lo(C);
            matvec(model.w_obj, z.row(u), lo.data());
            axpy(1.0, model.b_obj.data(), lo.data(), C);
            obj_logits.push_back(std::move(lo));
            obj_targets.push_back(supervision.scenes[s].object_targets[u]);
        }
        for (const auto& pair : supervision.scenes[s].pairs) {
            Vector zu(z.row(pair.subject_idx), z.row(pair.subject_idx) + z.cols);
            Vector zv(z.row(pair.object_idx), z.row(pair.object_idx) + z.cols);
            rel_logits.push_back(relation_logits(zu, zv, model.w_rel, model.b_rel));
            rel_targets.push_back(pair.predicate_id);
        }
    }
    return joint_loss(obj_logits, obj_targets, rel_logits, rel_targets);
}

LossBreakdown compute_gradients(const ModelParams& model,
                                const std::vector<const SceneAnnotation*>& scenes,
                                const Supervision& supervision, const TrainConfig& config,
                                const CookMatrix* cook, Gradients& out) {
    check_supervision(scenes, supervision);
    out = Gradients::zeros_like(model);
    const ForwardOut fwd = forward_batch(model, scenes, config, cook, config.task_mode, true);

    const int C = model.n_objects();
    const std::size_t d = model.w_in.rows;

    long long n_nodes = 0, n_pairs = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        n_nodes += static_cast<long long>(scenes[s]->objects.size());
        n_pairs += static_cast<long long>(supervision.scenes[s].pairs.size());
    }
    if (n_nodes == 0) throw ValidationError("gradients: batch has no nodes");

    LossBreakdown loss;
    std::vector<Matrix> dz(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const Matrix& z = fwd.final_graph.scenes[s].z;
        dz[s] = Matrix(z.rows, d);

        // object head
        Vector p(C);
        for (std::size_t u = 0; u < z.rows; ++u) {
            matvec(model.w_obj, z.row(u), p.data());
            axpy(1.0, model.b_obj.data(), p.data(), C);
            const int y = supervision.scenes[s].object_targets[u];
            loss.l_obj += cross_entropy(p, y);
            softmax_inplace(p);
            p[y] -= 1.0;
            const double inv = 1.0 / static_cast<double>(n_nodes);
            for (int c = 0; c < C; ++c) {
                const double g = p[c] * inv;
                if (g == 0.0) continue;
                axpy(g, z.row(u), out.w_obj.row(c), d);
                out.b_obj[c] += g;
                axpy(g, model.w_obj.row(c), dz[s].row(u), d);
            }
        }

        // relation head
        for (const auto& pair : supervision.scenes[s].pairs) {
            const double* zu = z.row(pair.subject_idx);
            const double* zv = z.row(pair.object_idx);
            Vector q(model.w_rel.rows);
            for (std::size_t r = 0; r < model.w_rel.rows; ++r) {
                const double* row = model.w_rel.row(r);
                q[r] = model.b_rel[r] + dot(row, zu, d) + dot(row + d, zv, d);
            }
            loss.l_rel += cross_entropy(q, pair.predicate_id);
            softmax_inplace(q);
            q[pair.predicate_id] -= 1.0;
            const double inv = 1.0 / static_cast<double>(n_pairs);
            for (std::size_t r = 0; r < model.w_rel.rows; ++r) {
                const double g = q[r] * inv;
                if (g == 0.0) continue;
                double* wrow = out.w_rel.row(r);
                axpy(g, zu, wrow, d);
                axpy(g, zv, wrow + d, d);
                out.b_rel[r] += g;
                const double* mrow = model.w_rel.row(r);
                axpy(g, mrow, dz[s].row(pair.subject_idx), d);
                axpy(g, mrow + d, dz[s].row(pair.object_idx), d);
            }
        }
    }
    loss.l_obj /= static_cast<double>(n_nodes);
    if (n_pairs > 0) loss.l_rel /= static_cast<double>(n_pairs);
    loss.total = loss.l_obj + loss.l_rel;

    // through the block stack
    BlockGrads bg = run_blocks_backward(fwd.records, model.layers, dz);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        out.layer_w[l] = std::move(bg.dW[l]);
        out.layer_att[l] = std::move(bg.dw_att[l]);
    }
    out.epsilon = bg.d_epsilon;
    out.gamma = bg.d_gamma;

    // input projection and embedding table
    const std::size_t e = model.class_embedding.cols;
    Vector dx(e + 8);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const Matrix& dz0 = bg.dz0[s];
        for (std::size_t u = 0; u < dz0.rows; ++u) {
            add_outer(out.w_in, dz0.row(u), fwd.built.x[s][u].data());
            axpy(1.0, dz0.row(u), out.b_in.data(), d);
            std::fill(dx.begin(), dx.end(), 0.0);
            matvec_transposed_acc(model.w_in, dz0.row(u), dx.data());
            axpy(1.0, dx.data(), out.class_embedding.row(fwd.built.embed_labels[s][u]), e);
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// training loop

namespace {

void sgd_step(ModelParams& m, const Gradients& g, double lr, double wd, const TrainConfig& config) {
    auto upd_m = [lr, wd](Matrix& p, const Matrix& grad) {
        for (std::size_t i = 0; i < p.a.size(); ++i) p.a[i] -= lr * (grad.a[i] + wd * p.a[i]);
    };
    auto upd_v = [lr, wd](Vector& p, const Vector& grad) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (grad[i] + wd * p[i]);
    };
    upd_m(m.class_embedding, g.class_embedding);
    upd_m(m.w_in, g.w_in);
    upd_v(m.b_in, g.b_in);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        upd_m(m.layers[l].W, g.layer_w[l]);
        upd_v(m.layers[l].w_att, g.layer_att[l]);
    }
    if (config.use_tfidf && m.tfidf.learnable) {
        m.tfidf.epsilon -= lr * (g.epsilon + wd * m.tfidf.epsilon);
        m.tfidf.gamma -= lr * (g.gamma + wd * m.tfidf.gamma);
    }
    upd_m(m.w_rel, g.w_rel);
    upd_v(m.b_rel, g.b_rel);
    upd_m(m.w_obj, g.w_obj);
    upd_v(m.b_obj, g.b_obj);
}

} // namespace

TrainResult train(const Dataset& dataset, const CookMatrix* cook, const TrainConfig& config,
                  const StepCallback& on_step, const ModelParams* resume_model,
                  long long resume_step, long long stop_step) {
    config.validate();
    validate_dataset(dataset);
    if (dataset.scenes.empty()) throw ValidationError("train: dataset has no scenes");
    if (dataset.split_tag != Split::train)
        throw ValidationError("train: dataset split must be 'train'");
    const int C = dataset.vocabulary.n_objects();
    const int P = dataset.vocabulary.n_predicates();

    if (config.use_cook) {
        if (!cook) throw ValidationError("train: use_cook is set but no co-occurrence matrix given");
        if (cook->n_classes != C ||
            cook->vocab_fingerprint != fingerprint_names(dataset.vocabulary.object_classes))
            throw ValidationError("train: co-occurrence matrix was built for a different vocabulary");
    }

    TrainResult result;
    result.model = resume_model ? *resume_model : init_model(config, C, P);
    const long long stop = stop_step < 0 ? config.iterations : stop_step;
    if (resume_step < 0 || resume_step > stop || stop > config.iterations)
        throw ValidationError("train: resume/stop steps outside the schedule");

    const long long n = static_cast<long long>(dataset.scenes.size());
    const long long bs = config.batch_size;
    const long long batches_per_epoch = (n + bs - 1) / bs;

    std::vector<std::size_t> perm(dataset.scenes.size());
    long long perm_epoch = -1;

    for (long long step = resume_step; step < stop; ++step) {
        const long long epoch = step / batches_per_epoch;
        const long long pos = step % batches_per_epoch;
        if (epoch != perm_epoch) {
            for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
            Rng perm_rng(mix_seed(config.seed, "perm", static_cast<std::uint64_t>(epoch)));
            perm_rng.shuffle(perm);
            perm_epoch = epoch;
        }
        const long long begin = pos * bs;
        const long long end = std::min(n, begin + bs);
        std::vector<const SceneAnnotation*> batch;
        for (long long i = begin; i < end; ++i) batch.push_back(&dataset.scenes[perm[i]]);

        Rng neg_rng(mix_seed(config.seed, "neg", static_cast<std::uint64_t>(step)));
        const Supervision sup = make_supervision(batch, P, config.neg_ratio, neg_rng);

        Gradients grads;
        const LossBreakdown loss = compute_gradients(result.model, batch, sup, config, cook, grads);
        const double lr_t = config.lr_at(step);
        sgd_step(result.model, grads, lr_t, config.weight_decay, config);

        LogRecord rec;
        rec.step = step;
        rec.lr = lr_t;
        rec.l_obj = loss.l_obj;
        rec.l_rel = loss.l_rel;
        rec.l = loss.total;
        rec.epsilon = result.model.tfidf.epsilon;
        rec.gamma = result.model.tfidf.gamma;
        result.log.push_back(rec);
        if (on_step) on_step(rec);
    }
    result.final_step = stop;
    return result;
}

// ---------------------------------------------------------------------------
// gradient checking

namespace {

struct GroupRef {
    std::string name;
    std::vector<double*> params;
    std::vector<double*> grads;
    bool frozen = false;
};

std::vector<double*> all_of(Matrix& m) {
    std::vector<double*> out;
    out.reserve(m.a.size());
    for (double& x : m.a) out.push_back(&x);
    return out;
}

std::vector<double*> all_of(Vector& v) {
    std::vector<double*> out;
    out.reserve(v.size());
    for (double& x : v) out.push_back(&x);
    return out;
}

void append(std::vector<double*>& dst, std::vector<double*> src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

std::vector<GroupRef> make_groups(ModelParams& m, Gradients& g, const TrainConfig& config) {
    std::vector<GroupRef> out;
    out.push_back({"embedding", all_of(m.class_embedding), all_of(g.class_embedding), false});
    GroupRef proj{"projection", all_of(m.w_in), all_of(g.w_in), false};
    append(proj.params, all_of(m.b_in));
    append(proj.grads, all_of(g.b_in));
    out.push_back(std::move(proj));
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        out.push_back({"layer" + std::to_string(l) + ".W", all_of(m.layers[l].W),
                       all_of(g.layer_w[l]), false});
        out.push_back({"layer" + std::to_string(l) + ".w_att", all_of(m.layers[l].w_att),
                       all_of(g.layer_att[l]), false});
    }
    const bool frozen_idf = !config.use_tfidf || !config.tfidf_learnable;
    out.push_back({"epsilon", {&m.tfidf.epsilon}, {&g.epsilon}, frozen_idf});
    out.push_back({"gamma", {&m.tfidf.gamma}, {&g.gamma}, frozen_idf});
    GroupRef rel{"w_rel", all_of(m.w_rel), all_of(g.w_rel), false};
    append(rel.params, all_of(m.b_rel));
    append(rel.grads, all_of(g.b_rel));
    out.push_back(std::move(rel));
    GroupRef obj{"w_obj", all_of(m.w_obj), all_of(g.w_obj), false};
    append(obj.params, all_of(m.b_obj));
    append(obj.grads, all_of(g.b_obj));
    out.push_back(std::move(obj));
    return out;
}

} // namespace

Gradients fd_gradients(const ModelParams& model, const std::vector<const SceneAnnotation*>& scenes,
                       const Supervision& supervision, const TrainConfig& config,
                       const CookMatrix* cook, double h) {
    ModelParams work = model;
    Gradients fd = Gradients::zeros_like(model);
    auto groups = make_groups(work, fd, config);
    for (auto& group : groups) {
        if (group.frozen) continue;  // analytic gradient pinned to zero by contract
        for (std::size_t i = 0; i < group.params.size(); ++i) {
            double* p = group.params[i];
            const double orig = *p;
            *p = orig + h;
            const double up = compute_loss(work, scenes, supervision, config, cook).total;
            *p = orig - h;
            const double down = compute_loss(work, scenes, supervision, config, cook).total;
            *p = orig;
            *group.grads[i] = (up - down) / (2.0 * h);
        }
    }
    return fd;
}

GradCheckReport compare_gradients(const ModelParams& shape, const TrainConfig& config,
                                  const Gradients& analytic, const Gradients& fd,
                                  double tolerance) {
    ModelParams m = shape;
    Gradients a = analytic, f = fd;
    auto ga = make_groups(m, a, config);
    auto gf = make_groups(m, f, config);

    GradCheckReport report;
    report.tolerance = tolerance;
    report.pass = true;
    for (std::size_t gi = 0; gi < ga.size(); ++gi) {
        GradCheckGroup row;
        row.name = ga[gi].name;
        row.frozen = ga[gi].frozen;
        row.n_coords = ga[gi].grads.size();
        for (std::size_t i = 0; i < ga[gi].grads.size(); ++i) {
            const double av = *ga[gi].grads[i];
            const double fv = ga[gi].frozen ? 0.0 : *gf[gi].grads[i];
            if (!std::isfinite(av)) throw RuntimeError("gradient check: non-finite analytic gradient");
            const double rel = std::abs(av - fv) / std::max({1.0, std::abs(av), std::abs(fv)});
            row.max_rel_err = std::max(row.max_rel_err, rel);
        }
        if (row.max_rel_err >= tolerance) report.pass = false;
        report.groups.push_back(std::move(row));
    }
    return report;
}

GradCheckReport gradient_check(const ModelParams& model,
                               const std::vector<const SceneAnnotation*>& scenes,
                               const Supervision& supervision, const TrainConfig& config,
                               const CookMatrix* cook, double tolerance, double h) {
    Gradients analytic;
    compute_gradients(model, scenes, supervision, config, cook, analytic);
    const Gradients fd = fd_gradients(model, scenes, supervision, config, cook, h);
    return compare_gradients(model, config, analytic, fd, tolerance);
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols; ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    if (!j.is_array()) throw ValidationError("checkpoint: matrix must be an array of rows");
    const std::size_t rows = j.size();
    const std::size_t cols = rows == 0 ? 0 : j[0].size();
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (j[i].size() != cols) throw ValidationError("checkpoint: ragged matrix rows");
        for (std::size_t c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

} // namespace

json config_to_json(const TrainConfig& c) {
    json j;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["iterations"] = c.iterations;
    j["batch_size"] = c.batch_size;
    j["layers"] = c.n_layers;
    j["object_dim"] = c.object_dim;
    j["embed_dim"] = c.embed_dim;
    j["relation_dim"] = c.relation_dim;
    j["warmup_steps"] = c.warmup_steps;
    j["milestones"] = c.milestones;
    j["lr_decay"] = c.lr_decay;
    j["seed"] = c.seed;
    j["task"] = task_name(c.task_mode);
    j["use_cook"] = c.use_cook;
    j["use_tfidf"] = c.use_tfidf;
    j["tfidf_learnable"] = c.tfidf_learnable;
    j["tfidf_mode"] = smoothing_mode_name(c.tfidf_mode);
    j["tfidf_clamp_negative"] = c.tfidf_clamp_negative;
    j["activation"] = activation_name(c.activation);
    j["knn"] = c.knn;
    j["neg_ratio"] = c.neg_ratio;
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    try {
        c.lr = j.at("lr").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.iterations = j.at("iterations").get<long long>();
        c.batch_size = j.at("batch_size").get<int>();
        c.n_layers = j.at("layers").get<int>();
        c.object_dim = j.at("object_dim").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.relation_dim = j.at("relation_dim").get<int>();
        c.warmup_steps = j.at("warmup_steps").get<long long>();
        c.milestones = j.at("milestones").get<std::vector<long long>>();
        c.lr_decay = j.at("lr_decay").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.task_mode = task_from_name(j.at("task").get<std::string>());
        c.use_cook = j.at("use_cook").get<bool>();
        c.use_tfidf = j.at("use_tfidf").get<bool>();
        c.tfidf_learnable = j.at("tfidf_learnable").get<bool>();
        c.tfidf_mode = smoothing_mode_from_name(j.at("tfidf_mode").get<std::string>());
        c.tfidf_clamp_negative = j.at("tfidf_clamp_negative").get<bool>();
        c.activation = activation_from_name(j.at("activation").get<std::string>());
        c.knn = j.at("knn").get<int>();
        c.neg_ratio = j.at("neg_ratio").get<double>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config schema error: ") + e.what());
    }
    c.validate();
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json j;
    j["schema_version"] = ckpt.schema_version;
    j["config"] = config_to_json(ckpt.config);
    j["cook_fingerprint"] = ckpt.cook_fingerprint;
    j["dataset_fingerprint"] = ckpt.dataset_fingerprint;
    j["step"] = ckpt.step;
    json p;
    p["class_embedding"] = matrix_json(ckpt.model.class_embedding);
    p["w_in"] = matrix_json(ckpt.model.w_in);
    p["b_in"] = ckpt.model.b_in;
    json layers = json::array();
    for (const auto& l : ckpt.model.layers)
        layers.push_back({{"w", matrix_json(l.W)},
                          {"w_att", l.w_att},
                          {"activation", activation_name(l.activation)}});
    p["layers"] = std::move(layers);
    p["tfidf"] = {{"epsilon", ckpt.model.tfidf.epsilon},
                  {"gamma", ckpt.model.tfidf.gamma},
                  {"learnable", ckpt.model.tfidf.learnable},
                  {"smoothing_mode", smoothing_mode_name(ckpt.model.tfidf.smoothing_mode)},
                  {"clamp_negative", ckpt.model.tfidf.clamp_negative}};
    p["w_rel"] = matrix_json(ckpt.model.w_rel);
    p["b_rel"] = ckpt.model.b_rel;
    p["w_obj"] = matrix_json(ckpt.model.w_obj);
    p["b_obj"] = ckpt.model.b_obj;
    j["params"] = std::move(p);

    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint parse error: ") + e.what());
    }
    Checkpoint c;
    try {
        c.schema_version = j.at("schema_version").get<int>();
        if (c.schema_version != 1)
            throw ValidationError("checkpoint: unsupported schema version " +
                                  std::to_string(c.schema_version));
        c.config = config_from_json(j.at("config"));
        c.cook_fingerprint = j.at("cook_fingerprint").get<std::string>();
        c.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
        c.step = j.at("step").get<long long>();
        const json& p = j.at("params");
        c.model.class_embedding = matrix_from_json(p.at("class_embedding"));
        c.model.w_in = matrix_from_json(p.at("w_in"));
        c.model.b_in = p.at("b_in").get<Vector>();
        for (const auto& jl : p.at("layers")) {
            LayerParams l;
            l.W = matrix_from_json(jl.at("w"));
            l.w_att = jl.at("w_att").get<Vector>();
            l.activation = activation_from_name(jl.at("activation").get<std::string>());
            c.model.layers.push_back(std::move(l));
        }
        const json& t = p.at("tfidf");
        c.model.tfidf.epsilon = t.at("epsilon").get<double>();
        c.model.tfidf.gamma = t.at("gamma").get<double>();
        c.model.tfidf.learnable = t.at("learnable").get<bool>();
        c.model.tfidf.smoothing_mode = smoothing_mode_from_name(t.at("smoothing_mode").get<std::string>());
        c.model.tfidf.clamp_negative = t.at("clamp_negative").get<bool>();
        c.model.w_rel = matrix_from_json(p.at("w_rel"));
        c.model.b_rel = p.at("b_rel").get<Vector>();
        c.model.w_obj = matrix_from_json(p.at("w_obj"));
        c.model.b_obj = p.at("b_obj").get<Vector>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint schema error: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// scoring

std::vector<SceneScores> score_scenes(const ModelParams& model, const Dataset& dataset,
                                      const CookMatrix* cook, const TrainConfig& config,
                                      TaskMode mode, int batch_size, int jobs) {
    if (batch_size < 1) throw ValidationError("score: batch size must be >= 1");
    if (config.use_cook) {
        if (!cook) throw ValidationError("score: use_cook is set but no co-occurrence matrix given");
        if (cook->n_classes != model.n_objects())
            throw ValidationError("score: co-occurrence matrix size disagrees with the model");
    }
    const int C = model.n_objects();
    const std::size_t n_scenes = dataset.scenes.size();
    std::vector<SceneScores> out(n_scenes);

    const std::size_t n_batches = (n_scenes + batch_size - 1) / batch_size;
    auto score_batch = [&](std::size_t bi) {
        const std::size_t begin = bi * static_cast<std::size_t>(batch_size);
        const std::size_t end = std::min(n_scenes, begin + static_cast<std::size_t>(batch_size));
        std::vector<const SceneAnnotation*> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(&dataset.scenes[i]);
        const ForwardOut fwd = forward_batch(model, batch, config, cook, mode, false);

        for (std::size_t s = 0; s < batch.size(); ++s) {
            const SceneAnnotation& scene = *batch[s];
            const Matrix& z = fwd.final_graph.scenes[s].z;
            const std::size_t n = z.rows;
            SceneScores sc;
            sc.object_probs = Matrix(n, C);
            sc.predicted_class.resize(n);
            sc.boxes = fwd.final_graph.scenes[s].boxes;
            Vector lo(C);
            for (std::size_t u = 0; u < n; ++u) {
                matvec(model.w_obj, z.row(u), lo.data());
                axpy(1.0, model.b_obj.data(), lo.data(), C);
                Vector p = predict_relations(lo);
                std::copy(p.begin(), p.end(), sc.object_probs.row(u));
                sc.predicted_class[u] = mode == TaskMode::predcls ? scene.objects[u].class_id
                                                                  : argmax_of(p.data(), C);
            }
            for (std::size_t u = 0; u < n; ++u) {
                for (std::size_t v = 0; v < n; ++v) {
                    if (u == v) continue;
                    Vector zu(z.row(u), z.row(u) + z.cols);
                    Vector zv(z.row(v), z.row(v) + z.cols);
                    sc.pair_index.emplace_back(static_cast<int>(u), static_cast<int>(v));
                    sc.pair_probs.push_back(
                        predict_relations(relation_logits(zu, zv, model.w_rel, model.b_rel)));
                }
            }
            out[begin + s] = std::move(sc);
        }
    };

    if (jobs <= 1 || n_batches <= 1) {
        for (std::size_t bi = 0; bi < n_batches; ++bi) score_batch(bi);
    } else {
        const std::size_t n_workers = std::min<std::size_t>(jobs, n_batches);
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w] {
                try {
                    for (std::size_t bi = w; bi < n_batches; bi += n_workers) score_batch(bi);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    return out;
}

} // namespace sgg
