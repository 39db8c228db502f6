#include "sgg/mpnn.hpp"

#include <algorithm>
#include <cmath>

namespace sgg {

std::string activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw ValidationError("activation must be relu|tanh, got '" + name + "'");
}

std::vector<std::vector<int>> complete_topology(int n) {
    std::vector<std::vector<int>> adj(n);
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v)
            if (v != u) adj[u].push_back(v);
    return adj;
}

std::vector<std::vector<int>> knn_topology(const std::vector<BoundingBox>& boxes, int k) {
    const int n = static_cast<int>(boxes.size());
    if (k <= 0) throw ValidationError("knn topology: k must be positive");
    std::vector<double> cx(n), cy(n);
    for (int i = 0; i < n; ++i) {
        cx[i] = 0.5 * (boxes[i].x0 + boxes[i].x1);
        cy[i] = 0.5 * (boxes[i].y0 + boxes[i].y1);
    }
    std::vector<std::vector<int>> adj(n);
    std::vector<std::pair<double, int>> dist;
    for (int u = 0; u < n; ++u) {
        dist.clear();
        for (int v = 0; v < n; ++v) {
            if (v == u) continue;
            const double dx = cx[u] - cx[v], dy = cy[u] - cy[v];
            dist.emplace_back(dx * dx + dy * dy, v);
        }
        std::sort(dist.begin(), dist.end());
        const int take = std::min<int>(k, static_cast<int>(dist.size()));
        adj[u].resize(take);
        for (int i = 0; i < take; ++i) adj[u][i] = dist[i].second;
        std::sort(adj[u].begin(), adj[u].end());
    }
    return adj;
}

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double apply_activation(Activation a, double x) {
    return a == Activation::relu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

// derivative expressed through the preactivation
double activation_grad(Activation a, double pre) {
    if (a == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
    const double t = std::tanh(pre);
    return 1.0 - t * t;
}

void check_finite(const Vector& v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw DomainError(std::string(what) + ": non-finite input");
}

} // namespace

double attention(const Vector& z_u, const Vector& z_v, const Vector& w_att) {
    if (z_u.size() != w_att.size() || z_v.size() != w_att.size())
        throw ValidationError("attention: feature/weight dimension mismatch");
    check_finite(z_u, "attention");
    check_finite(z_v, "attention");
    check_finite(w_att, "attention");
    const double a_u = dot(w_att.data(), z_u.data(), w_att.size());
    const double a_v = dot(w_att.data(), z_v.data(), w_att.size());
    return stable_sigmoid(a_u - a_v);
}

GraphBatch node_update(const GraphBatch& batch, const LayerParams& params, const CookMatrix* cook,
                       NodeUpdateRecord* record) {
    const std::size_t d = params.W.rows;
    if (params.W.cols != d) throw ValidationError("node update: W must be square");
    if (params.w_att.size() != d) throw ValidationError("node update: w_att width disagrees with W");

    GraphBatch out = batch;
    if (record) {
        *record = NodeUpdateRecord{};
        record->activation = params.activation;
    }

    for (std::size_t s = 0; s < batch.scenes.size(); ++s) {
        const GraphScene& scene = batch.scenes[s];
        const std::size_t n = scene.z.rows;
        if (scene.z.cols != d) throw ValidationError("node update: feature width disagrees with W");
        if (scene.neighbors.size() != n || scene.lookup_labels.size() != n)
            throw ValidationError("node update: adjacency/labels do not align with features");
        if (cook) {
            for (int c : scene.lookup_labels)
                if (c < 0 || c >= cook->n_classes)
                    throw ValidationError(
                        "node update: lookup label outside the co-occurrence vocabulary");
        }

        Matrix wz(n, d), pre(n, d);
        Vector att_logit(n);
        for (std::size_t v = 0; v < n; ++v) {
            matvec(params.W, scene.z.row(v), wz.row(v));
            att_logit[v] = dot(params.w_att.data(), scene.z.row(v), d);
            if (!std::isfinite(att_logit[v]))
                throw DomainError("node update: non-finite attention logit");
        }

        std::vector<double> alphas, ms;
        Matrix& z_next = out.scenes[s].z;
        for (std::size_t u = 0; u < n; ++u) {
            double* g = pre.row(u);
            std::copy(scene.z.row(u), scene.z.row(u) + d, g);
            for (int v : scene.neighbors[u]) {
                if (v < 0 || static_cast<std::size_t>(v) >= n || static_cast<std::size_t>(v) == u)
                    throw ValidationError("node update: bad neighbor index");
                const double alpha = stable_sigmoid(att_logit[u] - att_logit[v]);
                const double m =
                    cook ? cook->values[scene.lookup_labels[u]][scene.lookup_labels[v]] : 1.0;
                axpy(m * alpha, wz.row(v), g, d);
                alphas.push_back(alpha);
                ms.push_back(m);
            }
            double* zn = z_next.row(u);
            for (std::size_t j = 0; j < d; ++j)
                zn[j] = scene.z(u, j) + apply_activation(params.activation, g[j]);
        }

        if (record) {
            NodeUpdateRecord::Scene rs;
            rs.z_prev = scene.z;
            rs.wz = std::move(wz);
            rs.att_logit = std::move(att_logit);
            rs.pre = std::move(pre);
            rs.neighbors = scene.neighbors;
            rs.alpha = std::move(alphas);
            rs.m = std::move(ms);
            record->scenes.push_back(std::move(rs));
        }
    }
    return out;
}

NodeUpdateGrads node_update_backward(const NodeUpdateRecord& record, const LayerParams& params,
                                     const std::vector<Matrix>& upstream) {
    if (upstream.size() != record.scenes.size())
        throw ValidationError("node update backward: scene count mismatch");
    const std::size_t d = params.W.rows;

    NodeUpdateGrads g;
    g.dW = Matrix(d, d);
    g.dw_att.assign(d, 0.0);
    g.dz_prev.reserve(record.scenes.size());

    for (std::size_t s = 0; s < record.scenes.size(); ++s) {
        const auto& rs = record.scenes[s];
        const std::size_t n = rs.z_prev.rows;
        const Matrix& up = upstream[s];
        if (up.rows != n || up.cols != d)
            throw ValidationError("node update backward: upstream shape mismatch");

        // dh[u] = upstream[u] * sigma'(pre[u]); the residual path passes
        // upstream through unchanged.
        Matrix dh(n, d);
        Matrix dz(n, d);
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t j = 0; j < d; ++j) {
                const double dhj = up(u, j) * activation_grad(record.activation, rs.pre(u, j));
                dh(u, j) = dhj;
                dz(u, j) = up(u, j) + dhj;  // residual + direct z_u term of the preactivation
            }

        // Aggregation term: pre[u] += m * alpha * wz[v] over v in N(u).
        //   acc[v] = sum_u m_uv alpha_uv dh[u]   (coefficient on wz[v])
        //   da[u] += <dh[u], m * wz[v]> * alpha(1-alpha); da[v] -= the same
        Matrix acc(n, d);
        Vector da(n, 0.0);
        std::size_t e = 0;
        for (std::size_t u = 0; u < n; ++u) {
            for (int v : rs.neighbors[u]) {
                const double alpha = rs.alpha[e];
                const double m = rs.m[e];
                ++e;
                axpy(m * alpha, dh.row(u), acc.row(v), d);
                const double s_uv = m * dot(dh.row(u), rs.wz.row(v), d);
                const double dalpha = s_uv * alpha * (1.0 - alpha);
                da[u] += dalpha;
                da[v] -= dalpha;
            }
        }

        for (std::size_t v = 0; v < n; ++v) {
            // wz[v] = W z_prev[v]:  dW += acc[v] (x) z_prev[v], dz[v] += W^T acc[v]
            add_outer(g.dW, acc.row(v), rs.z_prev.row(v));
            matvec_transposed_acc(params.W, acc.row(v), dz.row(v));
            // att_logit[v] = <w_att, z_prev[v]>
            axpy(da[v], rs.z_prev.row(v), g.dw_att.data(), d);
            axpy(da[v], params.w_att.data(), dz.row(v), d);
        }
        g.dz_prev.push_back(std::move(dz));
    }
    return g;
}

// ---------------------------------------------------------------------------
// block stack

namespace {

NodeFeatureBatch to_feature_batch(const GraphBatch& batch, int n_classes) {
    NodeFeatureBatch fb;
    fb.n_classes = n_classes;
    fb.images.resize(batch.scenes.size());
    for (std::size_t s = 0; s < batch.scenes.size(); ++s) {
        const GraphScene& scene = batch.scenes[s];
        auto& img = fb.images[s];
        img.labels = scene.lookup_labels;
        img.features.resize(scene.z.rows);
        for (std::size_t u = 0; u < scene.z.rows; ++u)
            img.features[u].assign(scene.z.row(u), scene.z.row(u) + scene.z.cols);
    }
    return fb;
}

void write_back_features(GraphBatch& batch, const NodeFeatureBatch& fb) {
    for (std::size_t s = 0; s < batch.scenes.size(); ++s) {
        Matrix& z = batch.scenes[s].z;
        for (std::size_t u = 0; u < z.rows; ++u) {
            const Vector& f = fb.images[s].features[u];
            std::copy(f.begin(), f.end(), z.row(u));
        }
    }
}

std::vector<std::vector<Vector>> to_nested(const std::vector<Matrix>& ms) {
    std::vector<std::vector<Vector>> out(ms.size());
    for (std::size_t s = 0; s < ms.size(); ++s) {
        out[s].resize(ms[s].rows);
        for (std::size_t u = 0; u < ms[s].rows; ++u)
            out[s][u].assign(ms[s].row(u), ms[s].row(u) + ms[s].cols);
    }
    return out;
}

std::vector<Matrix> to_matrices(const std::vector<std::vector<Vector>>& nested, std::size_t d) {
    std::vector<Matrix> out;
    out.reserve(nested.size());
    for (const auto& scene : nested) {
        Matrix m(scene.size(), d);
        for (std::size_t u = 0; u < scene.size(); ++u)
            std::copy(scene[u].begin(), scene[u].end(), m.row(u));
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace

GraphBatch run_blocks(GraphBatch batch, const std::vector<LayerParams>& layers,
                      const TfIdfParams* tfidf, const CookMatrix* cook, int n_classes,
                      const LabelRefresh& refresh, BlockRecords* records) {
    if (layers.empty()) throw ValidationError("run blocks: at least one layer required");
    if (records) *records = BlockRecords{};

    for (const LayerParams& layer : layers) {
        if (refresh) {
            const auto labels = refresh(batch);
            if (labels.size() != batch.scenes.size())
                throw ValidationError("run blocks: label refresh returned wrong scene count");
            for (std::size_t s = 0; s < batch.scenes.size(); ++s) {
                if (labels[s].size() != batch.scenes[s].z.rows)
                    throw ValidationError("run blocks: label refresh returned wrong node count");
                batch.scenes[s].lookup_labels = labels[s];
            }
        }
        if (records) {
            std::vector<std::vector<int>> block_labels;
            for (const auto& scene : batch.scenes) block_labels.push_back(scene.lookup_labels);
            records->labels.push_back(std::move(block_labels));
        }

        NodeUpdateRecord nrec;
        batch = node_update(batch, layer, cook, records ? &nrec : nullptr);
        if (records) records->node_records.push_back(std::move(nrec));

        if (tfidf) {
            TfIdfRecord trec;
            const NodeFeatureBatch scaled =
                tfidf_forward(to_feature_batch(batch, n_classes), *tfidf, records ? &trec : nullptr);
            write_back_features(batch, scaled);
            if (records) records->tfidf_records.push_back(std::move(trec));
        }
    }
    return batch;
}

BlockGrads run_blocks_backward(const BlockRecords& records, const std::vector<LayerParams>& layers,
                               const std::vector<Matrix>& upstream) {
    const std::size_t L = records.node_records.size();
    if (L != layers.size())
        throw ValidationError("run blocks backward: record/layer count mismatch");
    const bool with_tfidf = !records.tfidf_records.empty();
    if (with_tfidf && records.tfidf_records.size() != L)
        throw ValidationError("run blocks backward: tf-l-idf records incomplete");
    const std::size_t d = layers.empty() ? 0 : layers[0].W.rows;

    BlockGrads g;
    g.dW.assign(L, Matrix(d, d));
    g.dw_att.assign(L, Vector(d, 0.0));

    std::vector<Matrix> grad = upstream;
    for (std::size_t l = L; l-- > 0;) {
        if (with_tfidf) {
            const TfIdfGrads tg = tfidf_backward(records.tfidf_records[l], to_nested(grad));
            g.d_epsilon += tg.d_epsilon;
            g.d_gamma += tg.d_gamma;
            grad = to_matrices(tg.feature_grads, d);
        }
        NodeUpdateGrads ng = node_update_backward(records.node_records[l], layers[l], grad);
        g.dW[l] = std::move(ng.dW);
        g.dw_att[l] = std::move(ng.dw_att);
        grad = std::move(ng.dz_prev);
    }
    g.dz0 = std::move(grad);
    return g;
}

} // namespace sgg
