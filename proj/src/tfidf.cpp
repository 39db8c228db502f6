#include "sgg/tfidf.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace sgg {

std::string smoothing_mode_name(SmoothingMode m) {
    return m == SmoothingMode::paper ? "paper" : "code";
}

SmoothingMode smoothing_mode_from_name(const std::string& name) {
    if (name == "paper") return SmoothingMode::paper;
    if (name == "code") return SmoothingMode::code;
    throw ValidationError("smoothing mode must be paper|code, got '" + name + "'");
}

double tf(long long n_cb, long long n_b) {
    if (n_b <= 0) throw DomainError("tf: image node count n_b must be positive");
    if (n_cb < 0 || n_cb > n_b) throw DomainError("tf: class count n_cb outside [0, n_b]");
    return static_cast<double>(n_cb) / static_cast<double>(n_b);
}

double l_idf(long long B, long long n_c, const TfIdfParams& params) {
    const double num = static_cast<double>(B) + params.epsilon;
    const double shift = params.smoothing_mode == SmoothingMode::code ? 1.0 : 0.0;
    const double den = static_cast<double>(n_c) + shift + params.gamma;
    if (!(num > 0.0)) {
        std::ostringstream os;
        os << "l_idf: nonpositive numerator B + epsilon = " << num;
        throw DomainError(os.str());
    }
    if (!(den > 0.0)) {
        std::ostringstream os;
        os << "l_idf: nonpositive denominator " << (shift != 0.0 ? "n_c + 1 + gamma" : "n_c + gamma")
           << " = " << den;
        throw DomainError(os.str());
    }
    return std::log(num / den);
}

double classic_tfidf(long long n_td, long long n_d, long long N, long long n_t) {
    if (n_d <= 0) throw DomainError("classic_tfidf: document length n_d must be positive");
    if (n_t <= 0) throw DomainError("classic_tfidf: term document count n_t must be positive");
    if (N <= 0) throw DomainError("classic_tfidf: corpus size N must be positive");
    return (static_cast<double>(n_td) / static_cast<double>(n_d)) *
           std::log(static_cast<double>(N) / static_cast<double>(n_t));
}

BatchLabelStats compute_stats(const NodeFeatureBatch& batch) {
    if (batch.images.empty()) throw ValidationError("tf-l-idf: empty batch");
    if (batch.n_classes <= 0) throw ValidationError("tf-l-idf: batch carries no class count");

    BatchLabelStats st;
    st.B = static_cast<int>(batch.images.size());
    st.n_b.assign(st.B, 0);
    st.n_cb.assign(st.B, std::vector<long long>(batch.n_classes, 0));
    st.n_c.assign(batch.n_classes, 0);

    for (int b = 0; b < st.B; ++b) {
        const auto& img = batch.images[b];
        if (img.labels.size() != img.features.size())
            throw ValidationError("tf-l-idf: label list does not align with features");
        st.n_b[b] = static_cast<long long>(img.labels.size());
        for (int c : img.labels) {
            if (c < 0 || c >= batch.n_classes)
                throw ValidationError("tf-l-idf: node label out of vocabulary range");
            st.n_cb[b][c]++;
        }
        for (int c = 0; c < batch.n_classes; ++c)
            if (st.n_cb[b][c] > 0) st.n_c[c]++;
    }
    return st;
}

NodeFeatureBatch tfidf_forward(const NodeFeatureBatch& batch, const TfIdfParams& params,
                               TfIdfRecord* record) {
    const BatchLabelStats st = compute_stats(batch);

    NodeFeatureBatch out = batch;
    if (record) {
        *record = TfIdfRecord{};
        record->B = st.B;
        record->params = params;
    }

    bool any_node = false;
    bool all_zero = true;
    for (int b = 0; b < st.B; ++b) {
        auto& img = out.images[b];
        if (record) record->nodes_per_image.push_back(img.features.size());
        for (std::size_t i = 0; i < img.features.size(); ++i) {
            const int c = img.labels[i];
            const double tf_v = tf(st.n_cb[b][c], st.n_b[b]);
            double s;
            bool clamped = false;
            try {
                s = tf_v * l_idf(st.B, st.n_c[c], params);
            } catch (const DomainError& e) {
                std::ostringstream os;
                os << e.what() << " (image " << b << ", node " << i << ")";
                throw DomainError(os.str());
            }
            if (params.clamp_negative && s < 0.0) {
                s = 0.0;
                clamped = true;
            }
            any_node = true;
            if (s != 0.0) all_zero = false;
            for (double& x : img.features[i]) x *= s;
            if (record) {
                record->inputs.push_back(batch.images[b].features[i]);
                record->scale.push_back(s);
                record->tf_term.push_back(tf_v);
                record->n_c.push_back(st.n_c[c]);
                record->clamped.push_back(clamped ? 1 : 0);
            }
        }
    }

    if (any_node && all_zero) {
        if (record) record->degenerate_zero = true;
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true))
            std::fprintf(stderr,
                         "warning: tf-l-idf scaled an entire batch to zero "
                         "(single-image single-class batches do this in paper mode); "
                         "features of this batch carry no signal\n");
    }
    return out;
}

TfIdfGrads tfidf_backward(const TfIdfRecord& record, const std::vector<std::vector<Vector>>& upstream) {
    if (upstream.size() != record.nodes_per_image.size())
        throw ValidationError("tf-l-idf backward: upstream image count mismatch");

    TfIdfGrads g;
    g.feature_grads.resize(upstream.size());

    const double shift = record.params.smoothing_mode == SmoothingMode::code ? 1.0 : 0.0;
    const double num = static_cast<double>(record.B) + record.params.epsilon;

    std::size_t flat = 0;
    for (std::size_t b = 0; b < upstream.size(); ++b) {
        if (upstream[b].size() != record.nodes_per_image[b])
            throw ValidationError("tf-l-idf backward: upstream node count mismatch");
        g.feature_grads[b].resize(upstream[b].size());
        for (std::size_t i = 0; i < upstream[b].size(); ++i, ++flat) {
            const Vector& up = upstream[b][i];
            const Vector& x = record.inputs[flat];
            if (up.size() != x.size())
                throw ValidationError("tf-l-idf backward: upstream feature width mismatch");

            const double s = record.scale[flat];
            Vector& fg = g.feature_grads[b][i];
            fg.assign(up.size(), 0.0);
            axpy(s, up.data(), fg.data(), up.size());

            if (!record.params.learnable || record.clamped[flat]) continue;
            const double upx = dot(up.data(), x.data(), up.size());
            const double den = static_cast<double>(record.n_c[flat]) + shift + record.params.gamma;
            g.d_epsilon += upx * record.tf_term[flat] / num;
            g.d_gamma += upx * (-record.tf_term[flat] / den);
        }
    }
    if (flat != record.inputs.size())
        throw ValidationError("tf-l-idf backward: record does not cover the upstream batch");
    return g;
}

} // namespace sgg
