#include "sgg/scene_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sgg/rng.hpp"

namespace sgg {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// vocabulary

namespace {

struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void feed(std::string_view s) {
        for (char c : s) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 1099511628211ull;
        }
        h ^= 0x1f; // separator so ["ab","c"] != ["a","bc"]
        h *= 1099511628211ull;
    }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf);
    }
};

} // namespace

std::string fingerprint_names(const std::vector<std::string>& names) {
    Fnv f;
    for (const auto& n : names) f.feed(n);
    return f.hex();
}

std::string ClassVocabulary::fingerprint() const {
    Fnv f;
    f.feed("objects");
    for (const auto& n : object_classes) f.feed(n);
    f.feed("predicates");
    for (const auto& n : predicate_classes) f.feed(n);
    return f.hex();
}

void ClassVocabulary::validate() const {
    auto check_unique = [](const std::vector<std::string>& names, const char* what) {
        std::set<std::string> seen;
        for (const auto& n : names) {
            if (n.empty())
                throw ValidationError(std::string("vocabulary: empty ") + what + " class name");
            if (!seen.insert(n).second)
                throw ValidationError(std::string("vocabulary: duplicate ") + what + " class name '" + n + "'");
        }
    };
    check_unique(object_classes, "object");
    check_unique(predicate_classes, "predicate");
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    const double area_a = (a.x1 - a.x0) * (a.y1 - a.y0);
    const double area_b = (b.x1 - b.x0) * (b.y1 - b.y0);
    const double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ValidationError("split must be one of train|val|test, got '" + name + "'");
}

// ---------------------------------------------------------------------------
// validation

namespace {

[[noreturn]] void scene_error(std::size_t scene_idx, const std::string& field, const std::string& msg) {
    std::ostringstream os;
    os << "scene " << scene_idx << ": " << field << ": " << msg;
    throw ValidationError(os.str());
}

void validate_box(std::size_t scene_idx, std::size_t obj_idx, const BoundingBox& b) {
    std::ostringstream field;
    field << "objects[" << obj_idx << "].box";
    if (!(b.x0 >= 0.0 && b.x0 < b.x1 && b.x1 <= 1.0))
        scene_error(scene_idx, field.str(), "x coordinates must satisfy 0 <= x0 < x1 <= 1");
    if (!(b.y0 >= 0.0 && b.y0 < b.y1 && b.y1 <= 1.0))
        scene_error(scene_idx, field.str(), "y coordinates must satisfy 0 <= y0 < y1 <= 1");
}

} // namespace

void validate_dataset(const Dataset& ds) {
    ds.vocabulary.validate();
    const int n_obj = ds.vocabulary.n_objects();
    const int n_pred = ds.vocabulary.n_predicates();

    for (std::size_t s = 0; s < ds.scenes.size(); ++s) {
        const auto& scene = ds.scenes[s];
        for (std::size_t i = 0; i < scene.objects.size(); ++i) {
            const auto& o = scene.objects[i];
            std::ostringstream field;
            field << "objects[" << i << "]";
            if (o.class_id < 0 || o.class_id >= n_obj)
                scene_error(s, field.str() + ".class", "class id out of range");
            if (o.observed_class_id < 0 || o.observed_class_id >= n_obj)
                scene_error(s, field.str() + ".observed_class", "class id out of range");
            if (o.observed_logits && static_cast<int>(o.observed_logits->size()) != n_obj)
                scene_error(s, field.str() + ".observed_logits", "length must equal number of object classes");
            validate_box(s, i, o.box);
        }
        std::set<std::tuple<int, int, int>> seen;
        for (std::size_t r = 0; r < scene.relations.size(); ++r) {
            const auto& t = scene.relations[r];
            std::ostringstream field;
            field << "relations[" << r << "]";
            const int n = static_cast<int>(scene.objects.size());
            if (t.subject_idx < 0 || t.subject_idx >= n)
                scene_error(s, field.str(), "subject index out of range");
            if (t.object_idx < 0 || t.object_idx >= n)
                scene_error(s, field.str(), "object index out of range");
            if (t.subject_idx == t.object_idx)
                scene_error(s, field.str(), "subject and object must differ");
            if (t.predicate_id < 0 || t.predicate_id >= n_pred)
                scene_error(s, field.str(), "predicate id out of range");
            if (!seen.insert({t.subject_idx, t.object_idx, t.predicate_id}).second)
                scene_error(s, field.str(), "duplicate triplet");
        }
    }
}

// ---------------------------------------------------------------------------
// JSON I/O

namespace {

json box_to_json(const BoundingBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

BoundingBox box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ValidationError("box must be an array of 4 numbers");
    return BoundingBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json dataset_to_json(const Dataset& ds) {
    json j;
    j["vocabulary"] = {{"objects", ds.vocabulary.object_classes},
                       {"predicates", ds.vocabulary.predicate_classes}};
    json scenes = json::array();
    for (const auto& scene : ds.scenes) {
        json objs = json::array();
        for (const auto& o : scene.objects) {
            json jo;
            jo["class"] = o.class_id;
            jo["observed_class"] = o.observed_class_id;
            jo["observed_logits"] = o.observed_logits ? json(*o.observed_logits) : json(nullptr);
            jo["box"] = box_to_json(o.box);
            objs.push_back(std::move(jo));
        }
        json rels = json::array();
        for (const auto& r : scene.relations)
            rels.push_back(json::array({r.subject_idx, r.object_idx, r.predicate_id}));
        scenes.push_back({{"objects", std::move(objs)}, {"relations", std::move(rels)}});
    }
    j["scenes"] = std::move(scenes);
    j["split"] = split_name(ds.split_tag);
    return j;
}

Dataset dataset_from_json(const json& j) {
    Dataset ds;
    if (!j.contains("vocabulary")) throw ValidationError("dataset: missing 'vocabulary'");
    ds.vocabulary.object_classes = j["vocabulary"].at("objects").get<std::vector<std::string>>();
    ds.vocabulary.predicate_classes = j["vocabulary"].at("predicates").get<std::vector<std::string>>();
    for (const auto& js : j.at("scenes")) {
        SceneAnnotation scene;
        for (const auto& jo : js.at("objects")) {
            ObjectInstance o;
            o.class_id = jo.at("class").get<int>();
            o.observed_class_id = jo.value("observed_class", o.class_id);
            if (jo.contains("observed_logits") && !jo["observed_logits"].is_null())
                o.observed_logits = jo["observed_logits"].get<std::vector<double>>();
            o.box = box_from_json(jo.at("box"));
            scene.objects.push_back(std::move(o));
        }
        for (const auto& jr : js.at("relations")) {
            if (!jr.is_array() || jr.size() != 3)
                throw ValidationError("relation must be an array [subject, object, predicate]");
            scene.relations.push_back({jr[0].get<int>(), jr[1].get<int>(), jr[2].get<int>()});
        }
        ds.scenes.push_back(std::move(scene));
    }
    ds.split_tag = split_from_name(j.value("split", "train"));
    return ds;
}

} // namespace

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("dataset parse error in " + path + ": " + e.what());
    }
    Dataset ds;
    try {
        ds = dataset_from_json(j);
    } catch (const json::exception& e) {
        throw ValidationError("dataset schema error in " + path + ": " + e.what());
    }
    validate_dataset(ds);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    validate_dataset(ds);
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open for writing: " + path);
    out << dataset_to_json(ds).dump(2) << '\n';
    if (!out) throw RuntimeError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// frequency statistics

FrequencyProfile class_frequencies(const Dataset& ds) {
    FrequencyProfile p;
    p.object_instances.assign(ds.vocabulary.n_objects(), 0);
    p.object_presence.assign(ds.vocabulary.n_objects(), 0);
    p.predicate_instances.assign(ds.vocabulary.n_predicates(), 0);
    p.predicate_presence.assign(ds.vocabulary.n_predicates(), 0);
    p.n_scenes = static_cast<long long>(ds.scenes.size());

    for (const auto& scene : ds.scenes) {
        std::set<int> obj_seen, pred_seen;
        for (const auto& o : scene.objects) {
            p.object_instances[o.class_id]++;
            obj_seen.insert(o.class_id);
        }
        for (const auto& r : scene.relations) {
            p.predicate_instances[r.predicate_id]++;
            pred_seen.insert(r.predicate_id);
        }
        for (int c : obj_seen) p.object_presence[c]++;
        for (int c : pred_seen) p.predicate_presence[c]++;
    }
    return p;
}

LongTailPartition partition_head_body_tail(const FrequencyProfile& profile, double f1, double f2) {
    if (profile.predicate_instances.empty())
        throw ValidationError("partition: profile has no predicate counts");
    if (!(f1 > 0.0 && f1 < f2 && f2 < 1.0))
        throw ValidationError("partition: boundaries must satisfy 0 < f1 < f2 < 1");

    long long total = 0;
    std::vector<int> order;
    for (std::size_t c = 0; c < profile.predicate_instances.size(); ++c) {
        if (profile.predicate_instances[c] > 0) {
            order.push_back(static_cast<int>(c));
            total += profile.predicate_instances[c];
        }
    }
    if (total == 0) throw ValidationError("partition: all predicate counts are zero");

    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (profile.predicate_instances[a] != profile.predicate_instances[b])
            return profile.predicate_instances[a] > profile.predicate_instances[b];
        return a < b;
    });

    // Segments absorb classes until their cumulative mass first crosses the
    // boundary; the crossing class closes the segment it belongs to.
    LongTailPartition part;
    part.f1 = f1;
    part.f2 = f2;
    long long running = 0;
    int segment = 0;
    for (int c : order) {
        running += profile.predicate_instances[c];
        const double mass = static_cast<double>(running) / static_cast<double>(total);
        if (segment == 0) {
            part.head.push_back(c);
            if (mass >= f1) segment = 1;
        } else if (segment == 1) {
            part.body.push_back(c);
            if (mass >= f2) segment = 2;
        } else {
            part.tail.push_back(c);
        }
    }
    return part;
}

// ---------------------------------------------------------------------------
// synthetic generator

std::vector<double> zipf_probs(int n, double s) {
    std::vector<double> p(n);
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        p[k] = std::pow(static_cast<double>(k + 1), -s);
        total += p[k];
    }
    for (double& v : p) v /= total;
    return p;
}

void validate_config(const SyntheticConfig& cfg) {
    if (cfg.n_scenes < 0) throw ValidationError("config: n_scenes must be >= 0");
    if (cfg.n_object_classes <= 0) throw ValidationError("config: n_object_classes must be positive");
    if (cfg.n_predicate_classes <= 0) throw ValidationError("config: n_predicate_classes must be positive");
    if (cfg.objects_min < 1 || cfg.objects_max < cfg.objects_min)
        throw ValidationError("config: objects_per_scene range is empty");
    if (cfg.zipf_exponent < 0.0) throw ValidationError("config: zipf_exponent must be >= 0");
    if (cfg.label_noise_rate < 0.0 || cfg.label_noise_rate > 1.0)
        throw ValidationError("config: label_noise_rate must be in [0,1]");

    std::vector<char> in_block(cfg.n_object_classes, 0);
    for (std::size_t b = 0; b < cfg.cooccurrence_blocks.size(); ++b) {
        const auto& blk = cfg.cooccurrence_blocks[b];
        if (blk.members.empty()) throw ValidationError("config: cooccurrence block is empty");
        if (blk.affinity < 0.0 || blk.affinity > 1.0)
            throw ValidationError("config: block affinity must be in [0,1]");
        for (int c : blk.members) {
            if (c < 0 || c >= cfg.n_object_classes)
                throw ValidationError("config: block references object class out of range");
            if (in_block[c]) throw ValidationError("config: cooccurrence blocks must be disjoint");
            in_block[c] = 1;
        }
    }
    for (const auto& rule : cfg.relation_rules) {
        for (int c : rule.subject_classes)
            if (c < 0 || c >= cfg.n_object_classes)
                throw ValidationError("config: rule subject class out of range");
        for (int c : rule.object_classes)
            if (c < 0 || c >= cfg.n_object_classes)
                throw ValidationError("config: rule object class out of range");
        if (static_cast<int>(rule.predicate_probs.size()) != cfg.n_predicate_classes)
            throw ValidationError("config: rule predicate_probs length must equal n_predicate_classes");
        double sum = 0.0;
        for (double p : rule.predicate_probs) {
            if (p < 0.0 || p > 1.0) throw ValidationError("config: rule predicate probability out of [0,1]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("config: rule predicate_probs must sum to 1");
        if (rule.relation_probability < 0.0 || rule.relation_probability > 1.0)
            throw ValidationError("config: relation_probability must be in [0,1]");
    }
}

namespace {

std::string class_name(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02d", prefix, i);
    return std::string(buf);
}

BoundingBox random_box(Rng& rng) {
    const double w = 0.05 + 0.25 * rng.uniform01();
    const double h = 0.05 + 0.25 * rng.uniform01();
    const double x0 = rng.uniform01() * (1.0 - w);
    const double y0 = rng.uniform01() * (1.0 - h);
    return BoundingBox{x0, y0, x0 + w, y0 + h};
}

} // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
    validate_config(cfg);
    Rng rng(mix_seed(cfg.seed, "synthetic"));

    Dataset ds;
    for (int i = 0; i < cfg.n_object_classes; ++i)
        ds.vocabulary.object_classes.push_back(class_name("obj_", i));
    for (int i = 0; i < cfg.n_predicate_classes; ++i)
        ds.vocabulary.predicate_classes.push_back(class_name("pred_", i));
    ds.split_tag = Split::train;

    const std::vector<double> global = zipf_probs(cfg.n_object_classes, cfg.zipf_exponent);

    // Theme blocks: configured blocks plus an implicit rest-block (affinity 0)
    // covering unassigned classes. Theme weights equal block mass under the
    // global law, which keeps class marginals exactly on the Zipf law.
    struct Theme {
        std::vector<double> member_probs; // renormalized over members, full-length vector
        double affinity;
    };
    std::vector<Theme> themes;
    std::vector<double> theme_weights;
    {
        std::vector<char> assigned(cfg.n_object_classes, 0);
        for (const auto& blk : cfg.cooccurrence_blocks) {
            Theme t;
            t.affinity = blk.affinity;
            t.member_probs.assign(cfg.n_object_classes, 0.0);
            double mass = 0.0;
            for (int c : blk.members) mass += global[c];
            for (int c : blk.members) {
                t.member_probs[c] = global[c] / mass;
                assigned[c] = 1;
            }
            themes.push_back(std::move(t));
            theme_weights.push_back(mass);
        }
        double rest_mass = 0.0;
        for (int c = 0; c < cfg.n_object_classes; ++c)
            if (!assigned[c]) rest_mass += global[c];
        if (rest_mass > 0.0 && !themes.empty()) {
            themes.push_back(Theme{{}, 0.0});
            theme_weights.push_back(rest_mass);
        }
    }

    for (int s = 0; s < cfg.n_scenes; ++s) {
        SceneAnnotation scene;
        const int n_objects =
            cfg.objects_min + static_cast<int>(rng.uniform_index(cfg.objects_max - cfg.objects_min + 1));

        const Theme* theme = nullptr;
        if (!themes.empty()) theme = &themes[rng.discrete(theme_weights)];

        for (int i = 0; i < n_objects; ++i) {
            ObjectInstance o;
            const bool from_block = theme && theme->affinity > 0.0 && rng.uniform01() < theme->affinity;
            o.class_id = static_cast<int>(rng.discrete(from_block ? theme->member_probs : global));
            o.observed_class_id = o.class_id;
            if (rng.uniform01() < cfg.label_noise_rate && cfg.n_object_classes > 1) {
                int other = static_cast<int>(rng.uniform_index(cfg.n_object_classes - 1));
                if (other >= o.class_id) other++;
                o.observed_class_id = other;
            }
            o.box = random_box(rng);
            scene.objects.push_back(std::move(o));
        }

        for (int i = 0; i < n_objects; ++i) {
            for (int j = 0; j < n_objects; ++j) {
                if (i == j) continue;
                const int ci = scene.objects[i].class_id;
                const int cj = scene.objects[j].class_id;
                const RelationRule* rule = nullptr;
                for (const auto& r : cfg.relation_rules) {
                    const bool subj_ok = std::find(r.subject_classes.begin(), r.subject_classes.end(), ci) !=
                                         r.subject_classes.end();
                    const bool obj_ok = std::find(r.object_classes.begin(), r.object_classes.end(), cj) !=
                                        r.object_classes.end();
                    if (subj_ok && obj_ok) {
                        rule = &r;
                        break;
                    }
                }
                if (!rule) continue;
                if (rng.uniform01() < rule->relation_probability) {
                    const int pred = static_cast<int>(rng.discrete(rule->predicate_probs));
                    scene.relations.push_back({i, j, pred});
                }
            }
        }
        ds.scenes.push_back(std::move(scene));
    }

    validate_dataset(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// synthetic config I/O

SyntheticConfig load_synthetic_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("config parse error in " + path + ": " + e.what());
    }
    SyntheticConfig cfg;
    try {
        cfg.n_scenes = j.at("n_scenes").get<int>();
        cfg.n_object_classes = j.at("n_object_classes").get<int>();
        cfg.n_predicate_classes = j.at("n_predicate_classes").get<int>();
        const auto& range = j.at("objects_per_scene");
        cfg.objects_min = range.at(0).get<int>();
        cfg.objects_max = range.at(1).get<int>();
        cfg.zipf_exponent = j.at("zipf_exponent").get<double>();
        for (const auto& jb : j.value("cooccurrence_blocks", json::array())) {
            CooccurrenceBlock b;
            b.members = jb.at("members").get<std::vector<int>>();
            b.affinity = jb.value("affinity", 0.9);
            cfg.cooccurrence_blocks.push_back(std::move(b));
        }
        for (const auto& jr : j.value("relation_rules", json::array())) {
            RelationRule r;
            r.subject_classes = jr.at("subject_classes").get<std::vector<int>>();
            r.object_classes = jr.at("object_classes").get<std::vector<int>>();
            r.predicate_probs = jr.at("predicate_probs").get<std::vector<double>>();
            r.relation_probability = jr.value("relation_probability", 1.0);
            cfg.relation_rules.push_back(std::move(r));
        }
        cfg.label_noise_rate = j.value("label_noise_rate", 0.0);
        cfg.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw ValidationError("config schema error in " + path + ": " + e.what());
    }
    validate_config(cfg);
    return cfg;
}

void save_synthetic_config(const SyntheticConfig& cfg, const std::string& path) {
    json j;
    j["n_scenes"] = cfg.n_scenes;
    j["n_object_classes"] = cfg.n_object_classes;
    j["n_predicate_classes"] = cfg.n_predicate_classes;
    j["objects_per_scene"] = json::array({cfg.objects_min, cfg.objects_max});
    j["zipf_exponent"] = cfg.zipf_exponent;
    json blocks = json::array();
    for (const auto& b : cfg.cooccurrence_blocks)
        blocks.push_back({{"members", b.members}, {"affinity", b.affinity}});
    j["cooccurrence_blocks"] = std::move(blocks);
    json rules = json::array();
    for (const auto& r : cfg.relation_rules)
        rules.push_back({{"subject_classes", r.subject_classes},
                         {"object_classes", r.object_classes},
                         {"predicate_probs", r.predicate_probs},
                         {"relation_probability", r.relation_probability}});
    j["relation_rules"] = std::move(rules);
    j["label_noise_rate"] = cfg.label_noise_rate;
    j["seed"] = cfg.seed;
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeError("write failed: " + path);
}

} // namespace sgg
