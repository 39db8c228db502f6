#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sgg/errors.hpp"

namespace sgg {

// Ordered object/predicate class name lists. Indices are stable 0-based
// positions; names must be unique within each list.
struct ClassVocabulary {
    std::vector<std::string> object_classes;
    std::vector<std::string> predicate_classes;

    int n_objects() const { return static_cast<int>(object_classes.size()); }
    int n_predicates() const { return static_cast<int>(predicate_classes.size()); }

    // Stable 64-bit hex digest over both name lists; ties checkpoints to the
    // vocabulary they were trained against.
    std::string fingerprint() const;

    void validate() const;
    bool operator==(const ClassVocabulary&) const = default;
};

// Digest of a single ordered name list. Co-occurrence matrices fingerprint
// only the object-class list, so they stay valid across predicate changes.
std::string fingerprint_names(const std::vector<std::string>& names);

// Axis-aligned box, normalized coordinates. Invariant 0 <= x0 < x1 <= 1 and
// likewise for y.
struct BoundingBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool operator==(const BoundingBox&) const = default;
};

double iou(const BoundingBox& a, const BoundingBox& b);

// One detected/annotated object. class_id is ground truth; observed_class_id
// stands in for a detector's class output (possibly corrupted by label
// noise), observed_logits optionally stands in for detector class scores.
struct ObjectInstance {
    int class_id = 0;
    int observed_class_id = 0;
    std::optional<std::vector<double>> observed_logits;
    BoundingBox box;
    bool operator==(const ObjectInstance&) const = default;
};

// Directed relation between two objects of a scene, by object-list index.
struct RelationTriplet {
    int subject_idx = 0;
    int object_idx = 0;
    int predicate_id = 0;
    bool operator==(const RelationTriplet&) const = default;
    auto operator<=>(const RelationTriplet&) const = default;
};

// One image's annotation: objects plus relation triplets.
struct SceneAnnotation {
    std::vector<ObjectInstance> objects;
    std::vector<RelationTriplet> relations;
    bool operator==(const SceneAnnotation&) const = default;
};

enum class Split { train, val, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Dataset {
    ClassVocabulary vocabulary;
    std::vector<SceneAnnotation> scenes;
    Split split_tag = Split::train;
    bool operator==(const Dataset&) const = default;
};

// Checks every documented invariant; throws ValidationError naming the scene
// index and field on the first violation.
void validate_dataset(const Dataset& ds);

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Per-class count tables for one dataset.
struct FrequencyProfile {
    std::vector<long long> object_instances;    // object instances per class
    std::vector<long long> object_presence;     // images containing the class
    std::vector<long long> predicate_instances; // relation triplets per predicate
    std::vector<long long> predicate_presence;  // images containing the predicate
    long long n_scenes = 0;
    bool operator==(const FrequencyProfile&) const = default;
};

FrequencyProfile class_frequencies(const Dataset& ds);

// Predicate classes split by descending training count at two cumulative-mass
// boundaries. Classes with zero count belong to no partition.
struct LongTailPartition {
    std::vector<int> head, body, tail;
    double f1 = 0.5, f2 = 0.85;
};

// Sort predicates by descending count (ties by ascending index) and walk the
// cumulative mass: each class joins the current segment, head closes once its
// inclusive mass reaches f1, body once it reaches f2, the rest is tail.
LongTailPartition partition_head_body_tail(const FrequencyProfile& profile, double f1, double f2);

// A group of object classes that preferentially co-occur. A scene themed on
// this block draws each object from the block's members with probability
// `affinity` (renormalized class distribution), otherwise from the global
// distribution. Theme choice is weighted by block mass so class marginals
// stay on the configured Zipf law.
struct CooccurrenceBlock {
    std::vector<int> members;
    double affinity = 0.9;
};

// (subject-class group, object-class group) -> predicate distribution.
// First matching rule wins; a matching ordered pair emits a relation with
// probability `relation_probability`.
struct RelationRule {
    std::vector<int> subject_classes;
    std::vector<int> object_classes;
    std::vector<double> predicate_probs; // length n_predicate_classes, sums to 1
    double relation_probability = 1.0;
};

struct SyntheticConfig {
    int n_scenes = 0;
    int n_object_classes = 0;
    int n_predicate_classes = 0;
    int objects_min = 2;
    int objects_max = 6;
    double zipf_exponent = 1.0;
    std::vector<CooccurrenceBlock> cooccurrence_blocks; // must be disjoint
    std::vector<RelationRule> relation_rules;
    double label_noise_rate = 0.0;
    std::uint64_t seed = 0;
};

void validate_config(const SyntheticConfig& cfg);
SyntheticConfig load_synthetic_config(const std::string& path);
void save_synthetic_config(const SyntheticConfig& cfg, const std::string& path);

// Seeded long-tail corpus generator. Deterministic for a fixed config:
// object-class marginals follow Zipf(zipf_exponent), block members co-occur
// preferentially, relations follow relation_rules, observed_class_id equals
// class_id with probability 1 - label_noise_rate.
Dataset generate_synthetic(const SyntheticConfig& cfg);

// Zipf probability vector p[k] proportional to (k+1)^-s.
std::vector<double> zipf_probs(int n, double s);

} // namespace sgg
