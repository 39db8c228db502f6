#include "sgg/cook.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace sgg {

using json = nlohmann::ordered_json;

void CoocCounts::validate() const {
    const std::size_t n = static_cast<std::size_t>(n_classes);
    if (presence.size() != n || instances.size() != n || pair_presence.size() != n)
        throw ValidationError("cooc counts: table sizes disagree with n_classes");
    for (const auto& row : pair_presence)
        if (row.size() != n) throw ValidationError("cooc counts: pair table is not square");
    if (n_images < 0) throw ValidationError("cooc counts: negative image count");
    for (std::size_t i = 0; i < n; ++i) {
        if (presence[i] < 0 || instances[i] < 0)
            throw ValidationError("cooc counts: negative count");
        if (presence[i] > n_images)
            throw ValidationError("cooc counts: presence exceeds image count");
        if (presence[i] > instances[i])
            throw ValidationError("cooc counts: presence exceeds instance count");
        if (pair_presence[i][i] != presence[i])
            throw ValidationError("cooc counts: pair diagonal disagrees with presence");
        for (std::size_t j = 0; j < n; ++j) {
            if (pair_presence[i][j] != pair_presence[j][i])
                throw ValidationError("cooc counts: pair table not symmetric");
            if (pair_presence[i][j] > std::min(presence[i], presence[j]))
                throw ValidationError("cooc counts: pair count exceeds marginal presence");
        }
    }
}

std::string cook_mode_name(CookMode m) {
    return m == CookMode::indicator ? "indicator" : "instance";
}

CookMode cook_mode_from_name(const std::string& name) {
    if (name == "indicator") return CookMode::indicator;
    if (name == "instance") return CookMode::instance;
    throw ValidationError("co-occurrence mode must be indicator|instance, got '" + name + "'");
}

// ---------------------------------------------------------------------------
// extraction

namespace {

CoocCounts zero_counts(int n_classes, std::string fingerprint) {
    CoocCounts c;
    c.n_classes = n_classes;
    c.presence.assign(n_classes, 0);
    c.instances.assign(n_classes, 0);
    c.pair_presence.assign(n_classes, std::vector<long long>(n_classes, 0));
    c.vocab_fingerprint = std::move(fingerprint);
    return c;
}

void count_scene_range(const Dataset& ds, std::size_t begin, std::size_t end, CoocCounts& out) {
    const int n = out.n_classes;
    std::vector<char> present(n);
    for (std::size_t s = begin; s < end; ++s) {
        std::fill(present.begin(), present.end(), 0);
        for (const auto& o : ds.scenes[s].objects) {
            if (o.class_id < 0 || o.class_id >= n)
                throw ValidationError("extract: object class out of vocabulary range");
            out.instances[o.class_id]++;
            present[o.class_id] = 1;
        }
        for (int i = 0; i < n; ++i) {
            if (!present[i]) continue;
            out.presence[i]++;
            for (int j = i; j < n; ++j) {
                if (!present[j]) continue;
                out.pair_presence[i][j]++;
                if (j != i) out.pair_presence[j][i]++;
            }
        }
    }
    out.n_images += static_cast<long long>(end - begin);
}

void add_counts_inplace(CoocCounts& a, const CoocCounts& b) {
    a.n_images += b.n_images;
    for (int i = 0; i < a.n_classes; ++i) {
        a.presence[i] += b.presence[i];
        a.instances[i] += b.instances[i];
        for (int j = 0; j < a.n_classes; ++j) a.pair_presence[i][j] += b.pair_presence[i][j];
    }
}

} // namespace

CoocCounts extract_counts(const Dataset& ds, int jobs) {
    const int n = ds.vocabulary.n_objects();
    CoocCounts total = zero_counts(n, fingerprint_names(ds.vocabulary.object_classes));
    const std::size_t n_scenes = ds.scenes.size();

    if (jobs <= 1 || n_scenes < 2) {
        count_scene_range(ds, 0, n_scenes, total);
    } else {
        const std::size_t n_workers = std::min<std::size_t>(jobs, n_scenes);
        std::vector<CoocCounts> partials(n_workers, zero_counts(n, total.vocab_fingerprint));
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) {
            const std::size_t begin = n_scenes * w / n_workers;
            const std::size_t end = n_scenes * (w + 1) / n_workers;
            workers.emplace_back([&, w, begin, end] {
                try {
                    count_scene_range(ds, begin, end, partials[w]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        for (const auto& p : partials) add_counts_inplace(total, p);
    }
    return total;
}

CookMatrix cook_from_counts(const CoocCounts& counts, CookMode mode) {
    counts.validate();
    const int n = counts.n_classes;
    CookMatrix m;
    m.n_classes = n;
    m.mode = mode;
    m.vocab_fingerprint = counts.vocab_fingerprint;
    m.values.assign(n, std::vector<double>(n, 0.0));
    m.observed.assign(n, false);
    for (int i = 0; i < n; ++i) {
        const long long denom = mode == CookMode::indicator ? counts.presence[i] : counts.instances[i];
        m.observed[i] = counts.presence[i] > 0;
        if (denom <= 0) continue;
        for (int j = 0; j < n; ++j) {
            const double v = static_cast<double>(counts.pair_presence[i][j]) / static_cast<double>(denom);
            m.values[i][j] = std::clamp(v, 0.0, 1.0);
        }
    }
    return m;
}

double lookup(const CookMatrix& cook, int c_i, int c_j) {
    if (c_i < 0 || c_i >= cook.n_classes || c_j < 0 || c_j >= cook.n_classes)
        throw ValidationError("co-occurrence lookup index out of range");
    return cook.values[c_i][c_j];
}

// ---------------------------------------------------------------------------
// label mapping + merge

std::vector<int> LabelMapping::unmapped_sources() const {
    std::vector<int> out;
    for (std::size_t s = 0; s < map_to_target.size(); ++s)
        if (map_to_target[s] < 0) out.push_back(static_cast<int>(s));
    return out;
}

void LabelMapping::validate() const {
    if (map_to_target.size() != source_vocab.size())
        throw ValidationError("mapping: map length disagrees with source vocabulary");
    for (int t : map_to_target)
        if (t < -1 || t >= static_cast<int>(target_vocab.size()))
            throw ValidationError("mapping: target index out of range");
    const auto check_unique = [](const std::vector<std::string>& names, const char* what) {
        std::set<std::string> seen;
        for (const auto& n : names)
            if (!seen.insert(n).second)
                throw ValidationError(std::string("mapping: duplicate ") + what + " class name '" + n + "'");
    };
    check_unique(source_vocab, "source");
    check_unique(target_vocab, "target");
}

CoocCounts relabel_counts(const CoocCounts& src, const LabelMapping& mapping) {
    mapping.validate();
    src.validate();
    if (static_cast<int>(mapping.source_vocab.size()) != src.n_classes)
        throw ValidationError("mapping: source vocabulary size disagrees with counts");
    if (fingerprint_names(mapping.source_vocab) != src.vocab_fingerprint)
        throw ValidationError("mapping: source vocabulary does not match the counts fingerprint");

    const int nt = static_cast<int>(mapping.target_vocab.size());
    CoocCounts out = zero_counts(nt, fingerprint_names(mapping.target_vocab));
    out.n_images = src.n_images;
    out.provenance = src.provenance;

    std::vector<std::vector<int>> sources(nt);
    for (int s = 0; s < src.n_classes; ++s) {
        const int t = mapping.map_to_target[s];
        if (t >= 0) sources[t].push_back(s);
    }

    for (int t = 0; t < nt; ++t) {
        const auto& S = sources[t];
        long long inst = 0, sum_presence = 0, max_presence = 0, sum_pairs = 0;
        for (std::size_t a = 0; a < S.size(); ++a) {
            inst += src.instances[S[a]];
            sum_presence += src.presence[S[a]];
            max_presence = std::max(max_presence, src.presence[S[a]]);
            for (std::size_t b = a + 1; b < S.size(); ++b) sum_pairs += src.pair_presence[S[a]][S[b]];
        }
        out.instances[t] = inst;
        // Union of the source presence sets, second-order inclusion-exclusion,
        // clamped into the feasible interval.
        const long long ie = sum_presence - sum_pairs;
        out.presence[t] = std::clamp(ie, max_presence, std::min(out.n_images, sum_presence));
    }

    for (int t = 0; t < nt; ++t) {
        for (int u = t + 1; u < nt; ++u) {
            long long raw = 0;
            for (int s : sources[t])
                for (int s2 : sources[u]) raw += src.pair_presence[s][s2];
            const long long v = std::min(raw, std::min(out.presence[t], out.presence[u]));
            out.pair_presence[t][u] = v;
            out.pair_presence[u][t] = v;
        }
        out.pair_presence[t][t] = out.presence[t];
    }
    out.validate();
    return out;
}

CoocCounts merge_counts(const CoocCounts& a, const CoocCounts& b, const LabelMapping& mapping) {
    a.validate();
    if (static_cast<int>(mapping.target_vocab.size()) != a.n_classes)
        throw ValidationError("mapping: target vocabulary size disagrees with the base counts");
    if (fingerprint_names(mapping.target_vocab) != a.vocab_fingerprint)
        throw ValidationError("mapping: target vocabulary does not match the base counts fingerprint");

    const CoocCounts relabeled = relabel_counts(b, mapping);
    CoocCounts out = a;
    add_counts_inplace(out, relabeled);
    for (const auto& p : relabeled.provenance) out.provenance.push_back(p);
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// persistence

void save_cook(const CookFile& file, const std::string& path) {
    file.counts.validate();
    if (file.counts.vocab_fingerprint != file.matrix.vocab_fingerprint)
        throw ValidationError("cook file: counts and matrix fingerprints disagree");
    json j;
    j["vocab_fingerprint"] = file.counts.vocab_fingerprint;
    j["n_images"] = file.counts.n_images;
    j["presence"] = file.counts.presence;
    j["instances"] = file.counts.instances;
    j["pair_presence"] = file.counts.pair_presence;
    j["mode"] = cook_mode_name(file.matrix.mode);
    j["values"] = file.matrix.values;
    j["provenance"] = file.counts.provenance;
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeError("write failed: " + path);
}

CookFile load_cook(const std::string& path, const std::string& expect_fingerprint) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open co-occurrence file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("co-occurrence file parse error: ") + e.what());
    }

    CookFile file;
    try {
        file.counts.vocab_fingerprint = j.at("vocab_fingerprint").get<std::string>();
        file.counts.n_images = j.at("n_images").get<long long>();
        file.counts.presence = j.at("presence").get<std::vector<long long>>();
        file.counts.instances = j.at("instances").get<std::vector<long long>>();
        file.counts.pair_presence = j.at("pair_presence").get<std::vector<std::vector<long long>>>();
        file.counts.provenance = j.at("provenance").get<std::vector<std::string>>();
        file.counts.n_classes = static_cast<int>(file.counts.presence.size());

        file.matrix.mode = cook_mode_from_name(j.at("mode").get<std::string>());
        file.matrix.values = j.at("values").get<std::vector<std::vector<double>>>();
        file.matrix.n_classes = file.counts.n_classes;
        file.matrix.vocab_fingerprint = file.counts.vocab_fingerprint;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("co-occurrence file schema error: ") + e.what());
    }
    file.counts.validate();
    if (static_cast<int>(file.matrix.values.size()) != file.counts.n_classes)
        throw ValidationError("co-occurrence file: matrix size disagrees with counts");
    for (const auto& row : file.matrix.values) {
        if (static_cast<int>(row.size()) != file.counts.n_classes)
            throw ValidationError("co-occurrence file: matrix is not square");
        for (double v : row)
            if (!(v >= 0.0 && v <= 1.0))
                throw ValidationError("co-occurrence file: matrix value outside [0,1]");
    }
    file.matrix.observed.assign(file.counts.n_classes, false);
    for (int i = 0; i < file.counts.n_classes; ++i) file.matrix.observed[i] = file.counts.presence[i] > 0;
    if (!expect_fingerprint.empty() && expect_fingerprint != file.counts.vocab_fingerprint) {
        std::ostringstream os;
        os << "co-occurrence file " << path << " was built for a different object vocabulary (stored "
           << file.counts.vocab_fingerprint << ", expected " << expect_fingerprint << ")";
        throw ValidationError(os.str());
    }
    return file;
}

LabelMapping load_mapping(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open mapping file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("mapping file parse error: ") + e.what());
    }
    LabelMapping m;
    try {
        m.source_vocab = j.at("source_vocab").get<std::vector<std::string>>();
        m.target_vocab = j.at("target_vocab").get<std::vector<std::string>>();
        m.map_to_target.assign(m.source_vocab.size(), -1);
        for (const auto& [key, value] : j.at("map").items()) {
            const int src = std::stoi(key);
            if (src < 0 || src >= static_cast<int>(m.source_vocab.size()))
                throw ValidationError("mapping: source index out of range: " + key);
            m.map_to_target[src] = value.get<int>();
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("mapping file schema error: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw ValidationError("mapping file: map keys must be integer source indices");
    }
    m.validate();
    return m;
}

void save_mapping(const LabelMapping& mapping, const std::string& path) {
    mapping.validate();
    json j;
    j["source_vocab"] = mapping.source_vocab;
    j["target_vocab"] = mapping.target_vocab;
    json map = json::object();
    for (std::size_t s = 0; s < mapping.map_to_target.size(); ++s)
        if (mapping.map_to_target[s] >= 0) map[std::to_string(s)] = mapping.map_to_target[s];
    j["map"] = std::move(map);
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeError("write failed: " + path);
}

} // namespace sgg
