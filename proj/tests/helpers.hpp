#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sgg/rng.hpp"
#include "sgg/scene_data.hpp"

namespace sggtest {

using namespace sgg;

inline ClassVocabulary make_vocab(int n_objects, int n_predicates) {
    ClassVocabulary v;
    char buf[16];
    for (int i = 0; i < n_objects; ++i) {
        std::snprintf(buf, sizeof buf, "o%02d", i);
        v.object_classes.push_back(buf);
    }
    for (int i = 0; i < n_predicates; ++i) {
        std::snprintf(buf, sizeof buf, "p%02d", i);
        v.predicate_classes.push_back(buf);
    }
    return v;
}

// Deterministic small boxes spread along the diagonal, always valid.
inline BoundingBox spread_box(int i) {
    const double t = 0.07 * static_cast<double>(i % 10);
    return {0.05 + t, 0.05 + t, 0.2 + t, 0.2 + t};
}

inline SceneAnnotation make_scene(const std::vector<int>& classes,
                                  const std::vector<RelationTriplet>& relations = {}) {
    SceneAnnotation s;
    for (std::size_t i = 0; i < classes.size(); ++i)
        s.objects.push_back({classes[i], classes[i], std::nullopt, spread_box(static_cast<int>(i))});
    s.relations = relations;
    return s;
}

inline Dataset make_dataset(int n_objects, int n_predicates,
                            const std::vector<SceneAnnotation>& scenes,
                            Split split = Split::train) {
    Dataset d;
    d.vocabulary = make_vocab(n_objects, n_predicates);
    d.scenes = scenes;
    d.split_tag = split;
    return d;
}

inline BoundingBox random_box(Rng& rng) {
    const double w = 0.1 + 0.4 * rng.uniform01();
    const double h = 0.1 + 0.4 * rng.uniform01();
    const double x0 = rng.uniform01() * (1.0 - w);
    const double y0 = rng.uniform01() * (1.0 - h);
    return {x0, y0, x0 + w, y0 + h};
}

// A random but always-valid scene over the given vocabulary.
inline SceneAnnotation random_scene(Rng& rng, int n_objects_max, int n_object_classes,
                                    int n_predicate_classes, double relation_p = 0.4) {
    SceneAnnotation s;
    const int n = 1 + static_cast<int>(rng.uniform_index(n_objects_max));
    for (int i = 0; i < n; ++i) {
        const int c = static_cast<int>(rng.uniform_index(n_object_classes));
        s.objects.push_back({c, c, std::nullopt, random_box(rng)});
    }
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            if (u == v || rng.uniform01() >= relation_p) continue;
            s.relations.push_back({u, v, static_cast<int>(rng.uniform_index(n_predicate_classes))});
        }
    return s;
}

inline std::string tmp_path(const std::string& name) {
    std::filesystem::create_directories("test_tmp");
    return (std::filesystem::path("test_tmp") / name).string();
}

inline std::string read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) return {};
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
    std::fclose(f);
    return out;
}

// True when fn() throws E whose message contains `needle`.
template <typename E>
bool throws_containing(const std::function<void()>& fn, const std::string& needle) {
    try {
        fn();
    } catch (const E& e) {
        return std::string(e.what()).find(needle) != std::string::npos;
    } catch (...) {
        return false;
    }
    return false;
}

} // namespace sggtest
