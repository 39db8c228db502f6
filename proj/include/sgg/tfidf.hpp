#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sgg/errors.hpp"
#include "sgg/linalg.hpp"

namespace sgg {

// Two published variants of the inverse-frequency denominator:
//  paper: log((B + eps) / (n_c + gamma))
//  code:  log((B + eps) / (n_c + 1 + gamma))
// Code mode is the default; it never hits the n_c = gamma = 0 singularity.
enum class SmoothingMode { paper, code };

std::string smoothing_mode_name(SmoothingMode m);
SmoothingMode smoothing_mode_from_name(const std::string& name);

struct TfIdfParams {
    double epsilon = 0.0;  // learnable numerator offset
    double gamma = 0.0;    // learnable denominator offset
    bool learnable = true;
    SmoothingMode smoothing_mode = SmoothingMode::code;
    // Negative scales are legitimate (a class present in every batch image
    // gets log(B/(B+1)) < 0 in code mode); clamping is opt-in.
    bool clamp_negative = false;

    bool operator==(const TfIdfParams&) const = default;
};

// Node features grouped by image, with the class labels used for counting.
struct NodeFeatureBatch {
    struct Image {
        std::vector<Vector> features;
        std::vector<int> labels;
    };
    std::vector<Image> images;
    int n_classes = 0;
};

// Label counts for one batch: B images, per-image totals n_b and per-class
// counts n_cb, per-class image-presence counts n_c.
struct BatchLabelStats {
    int B = 0;
    std::vector<long long> n_b;               // [image]
    std::vector<std::vector<long long>> n_cb; // [image][class]
    std::vector<long long> n_c;               // [class]
};

// n_cb / n_b. Throws DomainError when n_b = 0.
double tf(long long n_cb, long long n_b);

// The learnable inverse-frequency term; strictly decreasing in n_c, may be
// negative. Throws DomainError naming the offending side when the ratio
// leaves the log domain.
double l_idf(long long B, long long n_c, const TfIdfParams& params);

// (n_td / n_d) * log(N / n_t), the classic reference formula.
double classic_tfidf(long long n_td, long long n_d, long long N, long long n_t);

BatchLabelStats compute_stats(const NodeFeatureBatch& batch);

// Everything the backward pass needs: input features, the per-node scale and
// its decomposition. Nodes are flattened in (image, node) order.
struct TfIdfRecord {
    std::vector<std::size_t> nodes_per_image;
    std::vector<Vector> inputs;
    std::vector<double> scale;
    std::vector<double> tf_term;
    std::vector<long long> n_c;      // per node: batch images containing its class
    std::vector<char> clamped;       // scale forced to 0 by clamp_negative
    long long B = 0;
    TfIdfParams params;
    bool degenerate_zero = false;    // every scale in the batch came out 0
};

// Scales every node feature by s = tf(n_cb, n_b) * l_idf(B, n_c); the scale
// depends only on the batch's labels and the params, never on the feature
// values. Emits a one-time stderr warning when an entire batch collapses to
// zero scales (single-image single-class batches in paper mode do this).
NodeFeatureBatch tfidf_forward(const NodeFeatureBatch& batch, const TfIdfParams& params,
                               TfIdfRecord* record = nullptr);

struct TfIdfGrads {
    std::vector<std::vector<Vector>> feature_grads; // [image][node]
    double d_epsilon = 0.0;
    double d_gamma = 0.0;
};

// upstream is shaped like the forward output ([image][node] -> vector).
// Parameter gradients are exact zeros when params.learnable is false.
TfIdfGrads tfidf_backward(const TfIdfRecord& record, const std::vector<std::vector<Vector>>& upstream);

} // namespace sgg
