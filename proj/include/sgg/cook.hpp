#pragma once

#include <string>
#include <vector>

#include "sgg/scene_data.hpp"

namespace sgg {

// Raw co-occurrence tallies over one or more corpora. Pair counts are kept
// at image granularity (how many images contain both classes), so matrices
// from different corpora can be merged before normalization.
//
// Invariants: pair_presence symmetric, diagonal equals presence,
// pair_presence[i][j] <= min(presence[i], presence[j]),
// presence[i] <= min(n_images, instances[i]).
struct CoocCounts {
    int n_classes = 0;
    long long n_images = 0;
    std::vector<long long> presence;                    // images containing the class
    std::vector<long long> instances;                   // object instances of the class
    std::vector<std::vector<long long>> pair_presence;  // images containing both classes
    std::string vocab_fingerprint;                      // over object-class names
    std::vector<std::string> provenance;                // source corpus identifiers

    bool operator==(const CoocCounts&) const = default;
    void validate() const;
};

// Normalization rule for the conditional matrix.
//  indicator: P(j present | i present)  = pair_presence[i][j] / presence[i]
//  instance:  pair_presence[i][j] / instances[i]
enum class CookMode { indicator, instance };

std::string cook_mode_name(CookMode m);
CookMode cook_mode_from_name(const std::string& name);

// Normalized conditional co-occurrence matrix. Rows of classes that never
// appeared in the source corpus are all-zero with observed[i] = false, which
// downstream message passing treats as full suppression.
struct CookMatrix {
    int n_classes = 0;
    CookMode mode = CookMode::indicator;
    std::vector<std::vector<double>> values;  // values[i][j] in [0,1]
    std::vector<bool> observed;
    std::string vocab_fingerprint;

    bool operator==(const CookMatrix&) const = default;
};

// Counts every class (presence per image, instances) and every unordered
// class pair's per-image co-presence. jobs > 1 splits scenes across threads;
// the reduction is exact-integer addition, so the result is identical to the
// serial run.
CoocCounts extract_counts(const Dataset& ds, int jobs = 1);

CookMatrix cook_from_counts(const CoocCounts& counts, CookMode mode);

// values[c_i][c_j]; throws ValidationError on out-of-range indices.
double lookup(const CookMatrix& cook, int c_i, int c_j);

// Partial object-class index map from a source vocabulary into a target
// vocabulary. map_to_target[src] is the target index, or -1 for classes that
// should be dropped.
struct LabelMapping {
    std::vector<std::string> source_vocab;
    std::vector<std::string> target_vocab;
    std::vector<int> map_to_target;

    std::vector<int> unmapped_sources() const;
    void validate() const;
};

LabelMapping load_mapping(const std::string& path);
void save_mapping(const LabelMapping& mapping, const std::string& path);

// Re-expresses counts in the mapping's target vocabulary. Unmapped classes
// are dropped. When several source classes collapse onto one target, the
// target's presence is estimated by second-order inclusion-exclusion over
// the sources (exact for one or two sources per target, a clamped bound for
// three or more -- the per-image membership needed for an exact answer is
// not recoverable from pairwise counts) and pair counts are clamped to keep
// every invariant intact. Instance counts add exactly.
CoocCounts relabel_counts(const CoocCounts& src, const LabelMapping& mapping);

// Relabels b through the mapping, then adds counts entrywise onto a.
// n_images adds; provenance concatenates. Identity-style (injective)
// mappings make this exactly equal to extraction from the concatenated
// corpus.
CoocCounts merge_counts(const CoocCounts& a, const CoocCounts& b, const LabelMapping& mapping);

// Persisted pair: the raw counts plus one normalized matrix derived from
// them. Round-trips exactly, including provenance and mode.
struct CookFile {
    CoocCounts counts;
    CookMatrix matrix;
};

void save_cook(const CookFile& file, const std::string& path);

// expect_fingerprint, when nonempty, is checked against the stored value.
CookFile load_cook(const std::string& path, const std::string& expect_fingerprint = "");

} // namespace sgg
