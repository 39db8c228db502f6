#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sgg/cook.hpp"
#include "sgg/linalg.hpp"
#include "sgg/scene_data.hpp"
#include "sgg/tfidf.hpp"

namespace sgg {

enum class Activation { relu, tanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// One message-passing layer: message transform W (d x d), a single linear
// functional w_att producing the scalar attention logit per node, and the
// output nonlinearity.
struct LayerParams {
    Matrix W;
    Vector w_att;
    Activation activation = Activation::relu;
    bool operator==(const LayerParams&) const = default;
};

// One scene inside a batch: node features as rows of z, directed neighbor
// sets without self-loops, the class labels used for co-occurrence lookup
// and tf counting, and the boxes they came from.
struct GraphScene {
    Matrix z;                                 // n x d
    std::vector<std::vector<int>> neighbors;  // N(u)
    std::vector<int> lookup_labels;
    std::vector<BoundingBox> boxes;
};

struct GraphBatch {
    std::vector<GraphScene> scenes;
};

// Complete directed graph over n nodes, no self-loops.
std::vector<std::vector<int>> complete_topology(int n);

// Each node's k nearest other nodes by box-center distance (ties broken by
// ascending index); k >= n-1 degenerates to the complete topology.
std::vector<std::vector<int>> knn_topology(const std::vector<BoundingBox>& boxes, int k);

// alpha_uv = exp(a_u) / (exp(a_u) + exp(a_v)) with a = <w_att, z>, evaluated
// as a stable sigmoid of (a_u - a_v). Complementary: alpha_uv + alpha_vu = 1.
double attention(const Vector& z_u, const Vector& z_v, const Vector& w_att);

// Per-scene tape of one node_update call.
struct NodeUpdateRecord {
    struct Scene {
        Matrix z_prev;                            // input features
        Matrix wz;                                // W z_v per node
        Vector att_logit;                         // <w_att, z_v> per node
        Matrix pre;                               // preactivation per node
        std::vector<std::vector<int>> neighbors;  // adjacency the pass ran with
        std::vector<double> alpha;                // per edge, flattened in (u, N(u)) order
        std::vector<double> m;                    // co-occurrence weight per edge, same order
    };
    std::vector<Scene> scenes;
    Activation activation = Activation::relu;
};

// Synchronous residual update from the pre-update snapshot:
//   z_u' = z_u + sigma(z_u + sum_{v in N(u)} m_uv * alpha_uv * W z_v)
// with m_uv = cook(c_v | c_u) when a matrix is supplied (a constant; no
// gradient flows through the lookup) and m_uv = 1 otherwise.
GraphBatch node_update(const GraphBatch& batch, const LayerParams& params,
                       const CookMatrix* cook = nullptr, NodeUpdateRecord* record = nullptr);

struct NodeUpdateGrads {
    Matrix dW;
    Vector dw_att;
    std::vector<Matrix> dz_prev;  // per scene
};

NodeUpdateGrads node_update_backward(const NodeUpdateRecord& record, const LayerParams& params,
                                     const std::vector<Matrix>& upstream);

// Recomputes the lookup/counting labels from the current features; returns
// one label list per scene. Used by the two open-vocabulary task modes to
// refresh labels from the object head before every block.
using LabelRefresh = std::function<std::vector<std::vector<int>>(const GraphBatch&)>;

// Tape of a full L-block run: per block, the node-update record and (when
// the reweighting layer is enabled) the tf-l-idf record.
struct BlockRecords {
    std::vector<NodeUpdateRecord> node_records;
    std::vector<TfIdfRecord> tfidf_records;   // empty when tfidf is off
    std::vector<std::vector<std::vector<int>>> labels; // per block per scene
};

// Runs L blocks of (node_update, then tfidf_forward) over the batch. The
// refresh callback, when set, replaces every scene's lookup_labels at the
// start of each block. n_classes sizes the tf counting tables.
GraphBatch run_blocks(GraphBatch batch, const std::vector<LayerParams>& layers,
                      const TfIdfParams* tfidf, const CookMatrix* cook, int n_classes,
                      const LabelRefresh& refresh = nullptr, BlockRecords* records = nullptr);

struct BlockGrads {
    std::vector<Matrix> dW;       // per layer
    std::vector<Vector> dw_att;   // per layer
    double d_epsilon = 0.0;
    double d_gamma = 0.0;
    std::vector<Matrix> dz0;      // per scene, gradient at the block-stack input
};

BlockGrads run_blocks_backward(const BlockRecords& records, const std::vector<LayerParams>& layers,
                               const std::vector<Matrix>& upstream);

} // namespace sgg
