#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "sgg/model.hpp"

using namespace sgg;
using namespace sggtest;

namespace {

TrainConfig tiny_config(TaskMode mode = TaskMode::predcls) {
    TrainConfig c = desk_preset(mode);
    c.iterations = 6;
    c.batch_size = 2;
    c.n_layers = 2;
    c.object_dim = 8;
    c.embed_dim = 4;
    c.relation_dim = 8;
    c.warmup_steps = 2;
    c.seed = 9;
    return c;
}

Dataset tiny_corpus(int n_scenes, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_scenes = n_scenes;
    cfg.n_object_classes = 4;
    cfg.n_predicate_classes = 3;
    cfg.objects_min = 2;
    cfg.objects_max = 4;
    cfg.zipf_exponent = 0.5;
    cfg.relation_rules.push_back({{0, 1}, {2, 3}, {0.6, 0.3, 0.1}, 0.9});
    cfg.relation_rules.push_back({{2, 3}, {0, 1}, {0.1, 0.2, 0.7}, 0.5});
    cfg.seed = seed;
    return generate_synthetic(cfg);
}

std::vector<const SceneAnnotation*> scene_ptrs(const Dataset& ds) {
    std::vector<const SceneAnnotation*> out;
    for (const auto& s : ds.scenes) out.push_back(&s);
    return out;
}

CookMatrix cook_of(const Dataset& ds) {
    return cook_from_counts(extract_counts(ds), CookMode::indicator);
}

} // namespace

TEST_CASE("config validation and presets") {
    tiny_config().validate();
    CHECK(paper_preset(TaskMode::predcls).batch_size == 12);
    CHECK(paper_preset(TaskMode::sgcls).batch_size == 9);
    CHECK(paper_preset(TaskMode::predcls).lr == 0.008);
    CHECK(paper_preset(TaskMode::predcls).weight_decay == 5e-5);
    CHECK(paper_preset(TaskMode::predcls).n_layers == 4);
    desk_preset(TaskMode::predcls).validate();

    auto bad = tiny_config();
    bad.lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = tiny_config();
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = tiny_config();
    bad.milestones = {4, 2};  // must be increasing
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("learning-rate schedule") {
    TrainConfig c = tiny_config();
    c.lr = 0.1;
    c.iterations = 1000;
    c.warmup_steps = 10;
    c.milestones = {};
    c.lr_decay = 0.1;

    CHECK(c.resolved_milestones() == std::vector<long long>{600, 850});

    SUBCASE("linear warmup") {
        CHECK(c.lr_at(0) == doctest::Approx(0.01).epsilon(1e-12));
        CHECK(c.lr_at(4) == doctest::Approx(0.05).epsilon(1e-12));
        CHECK(c.lr_at(9) == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(c.lr_at(10) == doctest::Approx(0.1).epsilon(1e-12));
    }
    SUBCASE("milestone decay") {
        CHECK(c.lr_at(599) == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(c.lr_at(600) == doctest::Approx(0.01).epsilon(1e-12));
        CHECK(c.lr_at(849) == doctest::Approx(0.01).epsilon(1e-12));
        CHECK(c.lr_at(850) == doctest::Approx(0.001).epsilon(1e-12));
    }
    SUBCASE("explicit milestones win") {
        c.milestones = {100};
        CHECK(c.lr_at(99) == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(c.lr_at(100) == doctest::Approx(0.01).epsilon(1e-12));
    }
}

TEST_CASE("relation head") {
    SUBCASE("zero weights give zero logits") {
        Matrix w_rel(3, 4, 0.0);
        Vector b_rel(3, 0.0);
        const auto logits = relation_logits(Vector{1.0, 2.0}, Vector{3.0, 4.0}, w_rel, b_rel);
        for (double v : logits) CHECK(v == 0.0);
    }
    SUBCASE("hand-evaluated logits") {
        Matrix w_rel(2, 4);
        // row 0: 1 0 | 0 1 ; row 1: 0 2 | 1 0
        w_rel(0, 0) = 1.0;
        w_rel(0, 3) = 1.0;
        w_rel(1, 1) = 2.0;
        w_rel(1, 2) = 1.0;
        Vector b_rel{0.5, -0.5};
        const auto l = relation_logits(Vector{3.0, 4.0}, Vector{5.0, 6.0}, w_rel, b_rel);
        CHECK(l[0] == doctest::Approx(3.0 + 6.0 + 0.5).epsilon(1e-12));
        CHECK(l[1] == doctest::Approx(8.0 + 5.0 - 0.5).epsilon(1e-12));
        // direction matters: row 1 weighs the two halves differently
        const auto swapped = relation_logits(Vector{5.0, 6.0}, Vector{3.0, 4.0}, w_rel, b_rel);
        CHECK(swapped[1] == doctest::Approx(12.0 + 3.0 - 0.5).epsilon(1e-12));
        CHECK(swapped[1] != l[1]);
    }
}

TEST_CASE("softmax prediction") {
    SUBCASE("uniform on equal logits") {
        const auto p = predict_relations(Vector{0.0, 0.0, 0.0});
        for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("log-count logits give proportional mass") {
        const auto p = predict_relations(Vector{std::log(1.0), std::log(2.0), std::log(3.0)});
        CHECK(p[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
        CHECK(p[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
    }
    SUBCASE("shift invariance") {
        const auto a = predict_relations(Vector{1.0, 2.0, 3.0});
        const auto b = predict_relations(Vector{1001.0, 1002.0, 1003.0});
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
    SUBCASE("non-finite logits are rejected") {
        CHECK_THROWS_AS(predict_relations(Vector{1.0, std::nan("")}), DomainError);
    }
}

TEST_CASE("joint loss") {
    SUBCASE("uniform logits cost ln C") {
        const std::vector<Vector> obj{Vector{0.0, 0.0, 0.0}, Vector{0.0, 0.0, 0.0}};
        const std::vector<Vector> rel{Vector{0.0, 0.0}};
        const auto l = joint_loss(obj, {0, 2}, rel, {1});
        CHECK(l.l_obj == doctest::Approx(std::log(3.0)).epsilon(1e-12));
        CHECK(l.l_rel == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(l.total == doctest::Approx(l.l_obj + l.l_rel).epsilon(1e-12));
    }
    SUBCASE("confident correct predictions cost almost nothing") {
        const std::vector<Vector> obj{Vector{30.0, 0.0}};
        const std::vector<Vector> rel{Vector{0.0, 30.0}};
        const auto l = joint_loss(obj, {0}, rel, {1});
        CHECK(l.total < 1e-9);
    }
    SUBCASE("no supervised pairs contribute exactly zero") {
        const std::vector<Vector> obj{Vector{0.0, 0.0}};
        const auto l = joint_loss(obj, {0}, {}, {});
        CHECK(l.l_rel == 0.0);
        CHECK(l.total == l.l_obj);
    }
    SUBCASE("target out of range") {
        const std::vector<Vector> obj{Vector{0.0, 0.0}};
        CHECK_THROWS_AS(joint_loss(obj, {2}, {}, {}), ValidationError);
    }
}

TEST_CASE("initialization is deterministic and respects the freeze flag") {
    auto c = tiny_config();
    const auto a = init_model(c, 4, 3);
    const auto b = init_model(c, 4, 3);
    CHECK(a == b);

    CHECK(a.class_embedding.rows == 4);
    CHECK(a.w_rel.rows == 4);  // P + 1 background row
    CHECK(a.w_obj.rows == 4);
    CHECK(a.layers.size() == 2);
    CHECK(a.tfidf.learnable);
    CHECK(a.tfidf.epsilon != 0.0);

    auto frozen_cfg = c;
    frozen_cfg.tfidf_learnable = false;
    const auto f = init_model(frozen_cfg, 4, 3);
    CHECK(f.tfidf.epsilon == 0.0);
    CHECK(f.tfidf.gamma == 0.0);
    CHECK_FALSE(f.tfidf.learnable);
    // every other tensor matches the learnable init exactly
    CHECK(f.class_embedding == a.class_embedding);
    CHECK(f.w_in == a.w_in);
    CHECK(f.w_rel == a.w_rel);
    CHECK(f.w_obj == a.w_obj);
    for (std::size_t l = 0; l < f.layers.size(); ++l) {
        CHECK(f.layers[l].W == a.layers[l].W);
        CHECK(f.layers[l].w_att == a.layers[l].w_att);
    }

    auto other_seed = c;
    other_seed.seed = 10;
    CHECK(init_model(other_seed, 4, 3) != a);
}

TEST_CASE("supervision sampling") {
    const Dataset ds = tiny_corpus(6, 31);
    const auto ptrs = scene_ptrs(ds);
    const int P = ds.vocabulary.n_predicates();

    Rng rng(mix_seed(1, "neg", 0));
    const auto sup = make_supervision(ptrs, P, 3.0, rng);
    REQUIRE(sup.scenes.size() == ds.scenes.size());

    for (std::size_t i = 0; i < sup.scenes.size(); ++i) {
        const auto& scene = ds.scenes[i];
        const auto& s = sup.scenes[i];

        // object targets are the ground-truth classes
        REQUIRE(s.object_targets.size() == scene.objects.size());
        for (std::size_t u = 0; u < scene.objects.size(); ++u)
            CHECK(s.object_targets[u] == scene.objects[u].class_id);

        // ground-truth pairs come first, unchanged
        REQUIRE(s.pairs.size() >= scene.relations.size());
        for (std::size_t g = 0; g < scene.relations.size(); ++g)
            CHECK(s.pairs[g] == scene.relations[g]);

        // negatives: background class, within budget, never duplicating a GT pair
        const std::size_t n_neg = s.pairs.size() - scene.relations.size();
        CHECK(n_neg <= static_cast<std::size_t>(3.0 * scene.relations.size()));
        std::set<std::pair<int, int>> gt_pairs, neg_pairs;
        for (const auto& r : scene.relations) gt_pairs.insert({r.subject_idx, r.object_idx});
        for (std::size_t g = scene.relations.size(); g < s.pairs.size(); ++g) {
            const auto& neg = s.pairs[g];
            CHECK(neg.predicate_id == P);
            CHECK(neg.subject_idx != neg.object_idx);
            CHECK_FALSE(gt_pairs.count({neg.subject_idx, neg.object_idx}));
            CHECK_FALSE(neg_pairs.count({neg.subject_idx, neg.object_idx}));
            neg_pairs.insert({neg.subject_idx, neg.object_idx});
        }
    }

    SUBCASE("same stream, same draw") {
        Rng r1(mix_seed(5, "neg", 7)), r2(mix_seed(5, "neg", 7));
        const auto a = make_supervision(ptrs, P, 3.0, r1);
        const auto b = make_supervision(ptrs, P, 3.0, r2);
        for (std::size_t i = 0; i < a.scenes.size(); ++i) CHECK(a.scenes[i].pairs == b.scenes[i].pairs);
    }
    SUBCASE("zero ratio samples nothing") {
        Rng r(mix_seed(5, "neg", 8));
        const auto sup0 = make_supervision(ptrs, P, 0.0, r);
        for (std::size_t i = 0; i < sup0.scenes.size(); ++i)
            CHECK(sup0.scenes[i].pairs.size() == ds.scenes[i].relations.size());
    }
}

TEST_CASE("analytic gradients pass the finite-difference check") {
    const Dataset ds = tiny_corpus(2, 33);
    const auto ptrs = scene_ptrs(ds);
    const auto cook = cook_of(ds);

    auto config = tiny_config();
    config.activation = Activation::tanh;  // keep the loss surface smooth for FD
    const auto model = init_model(config, ds.vocabulary.n_objects(), ds.vocabulary.n_predicates());

    Rng rng(mix_seed(config.seed, "neg", 0));
    const auto sup = make_supervision(ptrs, ds.vocabulary.n_predicates(), 2.0, rng);

    const auto report = gradient_check(model, ptrs, sup, config, &cook, 1e-4, 1e-6);
    CHECK(report.pass);
    CHECK(report.groups.size() >= 7);
    bool saw_eps = false;
    for (const auto& g : report.groups) {
        INFO(g.name, " err=", g.max_rel_err);
        CHECK(g.max_rel_err < 1e-4);
        if (g.name == "epsilon") {
            saw_eps = true;
            CHECK_FALSE(g.frozen);
        }
    }
    CHECK(saw_eps);

    SUBCASE("frozen reweighting parameters are flagged") {
        auto frozen_cfg = config;
        frozen_cfg.tfidf_learnable = false;
        const auto fmodel =
            init_model(frozen_cfg, ds.vocabulary.n_objects(), ds.vocabulary.n_predicates());
        const auto frep = gradient_check(fmodel, ptrs, sup, frozen_cfg, &cook, 1e-4, 1e-6);
        CHECK(frep.pass);
        for (const auto& g : frep.groups)
            if (g.name == "epsilon" || g.name == "gamma") CHECK(g.frozen);
    }
    SUBCASE("a corrupted gradient is caught and localized") {
        Gradients analytic = Gradients::zeros_like(model);
        compute_gradients(model, ptrs, sup, config, &cook, analytic);
        const auto fd = fd_gradients(model, ptrs, sup, config, &cook, 1e-6);
        auto corrupted = analytic;
        corrupted.w_obj.a[0] += 0.5;
        const auto rep = compare_gradients(model, config, corrupted, fd, 1e-4);
        CHECK_FALSE(rep.pass);
        for (const auto& g : rep.groups) {
            if (g.name == "w_obj")
                CHECK(g.max_rel_err > 1e-4);
            else
                CHECK(g.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("gradients flow in every task mode") {
    const Dataset ds = tiny_corpus(2, 35);
    const auto ptrs = scene_ptrs(ds);
    const auto cook = cook_of(ds);
    for (TaskMode mode : {TaskMode::predcls, TaskMode::sgcls, TaskMode::sggen}) {
        auto config = tiny_config(mode);
        config.activation = Activation::tanh;
        const auto model =
            init_model(config, ds.vocabulary.n_objects(), ds.vocabulary.n_predicates());
        Rng rng(mix_seed(1, "neg", 0));
        const auto sup = make_supervision(ptrs, ds.vocabulary.n_predicates(), 2.0, rng);
        const auto report = gradient_check(model, ptrs, sup, config, &cook, 1e-4, 1e-6);
        INFO("mode ", task_name(mode));
        CHECK(report.pass);
    }
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    const Dataset ds = tiny_corpus(4, 37);
    auto config = tiny_config();
    config.lr = 0.0;
    config.iterations = 3;
    const auto cook = cook_of(ds);
    const auto result = train(ds, &cook, config);
    const auto fresh = init_model(config, ds.vocabulary.n_objects(), ds.vocabulary.n_predicates());
    CHECK(result.model == fresh);
    CHECK(result.final_step == 3);
    CHECK(result.log.size() == 3);
}

TEST_CASE("one step applies exactly lr * (grad + wd * param)") {
    const Dataset ds = tiny_corpus(2, 39);
    auto config = tiny_config();
    config.iterations = 1;
    config.batch_size = 2;
    config.warmup_steps = 0;  // full lr at step 0
    const auto cook = cook_of(ds);

    // replicate the single training step by hand
    const auto before = init_model(config, ds.vocabulary.n_objects(), ds.vocabulary.n_predicates());
    const auto ptrs = scene_ptrs(ds);

    // epoch-0 batch order: permutation of {0, 1} under the perm stream
    std::vector<std::size_t> order{0, 1};
    Rng perm_rng(mix_seed(config.seed, "perm", 0));
    perm_rng.shuffle(order);
    std::vector<const SceneAnnotation*> batch{&ds.scenes[order[0]], &ds.scenes[order[1]]};

    Rng neg_rng(mix_seed(config.seed, "neg", 0));
    const auto sup =
        make_supervision(batch, ds.vocabulary.n_predicates(), config.neg_ratio, neg_rng);
    Gradients g = Gradients::zeros_like(before);
    compute_gradients(before, batch, sup, config, &cook, g);

    auto expect = before;
    const double lr = config.lr_at(0);
    const auto upd = [&](Matrix& p, const Matrix& gm) {
        for (std::size_t i = 0; i < p.a.size(); ++i)
            p.a[i] -= lr * (gm.a[i] + config.weight_decay * p.a[i]);
    };
    const auto updv = [&](Vector& p, const Vector& gv) {
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] -= lr * (gv[i] + config.weight_decay * p[i]);
    };
    upd(expect.class_embedding, g.class_embedding);
    upd(expect.w_in, g.w_in);
    updv(expect.b_in, g.b_in);
    for (std::size_t l = 0; l < expect.layers.size(); ++l) {
        upd(expect.layers[l].W, g.layer_w[l]);
        updv(expect.layers[l].w_att, g.layer_att[l]);
    }
    expect.tfidf.epsilon -= lr * (g.epsilon + config.weight_decay * expect.tfidf.epsilon);
    expect.tfidf.gamma -= lr * (g.gamma + config.weight_decay * expect.tfidf.gamma);
    upd(expect.w_rel, g.w_rel);
    updv(expect.b_rel, g.b_rel);
    upd(expect.w_obj, g.w_obj);
    updv(expect.b_obj, g.b_obj);

    const auto result = train(ds, &cook, config);
    CHECK(result.model == expect);
}

TEST_CASE("training is deterministic and the loss comes down") {
    const Dataset ds = tiny_corpus(24, 41);
    auto config = tiny_config();
    config.iterations = 300;
    config.batch_size = 6;
    config.warmup_steps = 20;
    config.lr = 0.03;
    const auto cook = cook_of(ds);

    const auto a = train(ds, &cook, config);
    const auto b = train(ds, &cook, config);
    CHECK(a.model == b.model);
    REQUIRE(a.log.size() == 300);
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].l == b.log[i].l);
        CHECK(std::isfinite(a.log[i].l));
    }

    const auto smoothed = [&](std::size_t from, std::size_t to) {
        double s = 0.0;
        for (std::size_t i = from; i < to; ++i) s += a.log[i].l;
        return s / static_cast<double>(to - from);
    };
    CHECK(smoothed(280, 300) < smoothed(0, 20));
}

TEST_CASE("resumed training reproduces the uninterrupted run exactly") {
    const Dataset ds = tiny_corpus(10, 43);
    auto config = tiny_config();
    config.iterations = 8;
    config.batch_size = 3;
    const auto cook = cook_of(ds);

    const auto full = train(ds, &cook, config);

    const auto half = train(ds, &cook, config, nullptr, nullptr, 0, 4);
    CHECK(half.final_step == 4);
    const auto rest = train(ds, &cook, config, nullptr, &half.model, 4, -1);
    CHECK(rest.final_step == 8);
    CHECK(rest.model == full.model);

    // the log of the resumed run is the tail of the full log
    REQUIRE(rest.log.size() == 4);
    for (std::size_t i = 0; i < rest.log.size(); ++i) {
        CHECK(rest.log[i].step == full.log[i + 4].step);
        CHECK(rest.log[i].l == full.log[i + 4].l);
    }

    SUBCASE("stop past the schedule is rejected") {
        CHECK_THROWS_AS(train(ds, &cook, config, nullptr, nullptr, 0, 9), ValidationError);
    }
}

TEST_CASE("training validates its inputs") {
    const Dataset ds = tiny_corpus(4, 45);
    auto config = tiny_config();
    const auto cook = cook_of(ds);

    SUBCASE("wrong split is rejected") {
        auto test_ds = ds;
        test_ds.split_tag = Split::test;
        CHECK_THROWS_AS(train(test_ds, &cook, config), ValidationError);
    }
    SUBCASE("co-occurrence matrix must match the vocabulary") {
        auto wrong = cook;
        wrong.vocab_fingerprint = "0123456789abcdef";
        CHECK_THROWS_AS(train(ds, &wrong, config), ValidationError);
    }
    SUBCASE("co-occurrence required when enabled") {
        CHECK_THROWS_AS(train(ds, nullptr, config), ValidationError);
    }
    SUBCASE("no matrix needed when disabled") {
        auto no_cook = config;
        no_cook.use_cook = false;
        no_cook.iterations = 2;
        CHECK_NOTHROW(train(ds, nullptr, no_cook));
    }
    SUBCASE("empty training set is rejected") {
        Dataset empty = make_dataset(4, 3, {});
        CHECK_THROWS_AS(train(empty, nullptr, config), ValidationError);
    }
}

TEST_CASE("frozen reweighting keeps epsilon and gamma constant through training") {
    const Dataset ds = tiny_corpus(6, 47);
    auto config = tiny_config();
    config.tfidf_learnable = false;
    config.iterations = 5;
    const auto cook = cook_of(ds);
    const auto result = train(ds, &cook, config);
    CHECK(result.model.tfidf.epsilon == 0.0);
    CHECK(result.model.tfidf.gamma == 0.0);
    for (const auto& rec : result.log) {
        CHECK(rec.epsilon == 0.0);
        CHECK(rec.gamma == 0.0);
    }
}

TEST_CASE("checkpoint round trip is exact") {
    const Dataset ds = tiny_corpus(4, 49);
    auto config = tiny_config();
    config.iterations = 3;
    const auto cook = cook_of(ds);
    const auto result = train(ds, &cook, config);

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.model = result.model;
    ckpt.cook_fingerprint = cook.vocab_fingerprint;
    ckpt.dataset_fingerprint = ds.vocabulary.fingerprint();
    ckpt.step = result.final_step;

    const auto path = tmp_path("ckpt.json");
    save_checkpoint(ckpt, path);
    const auto back = load_checkpoint(path);
    CHECK(back.model == ckpt.model);
    CHECK(back.config == ckpt.config);
    CHECK(back.step == 3);
    CHECK(back.cook_fingerprint == ckpt.cook_fingerprint);
    CHECK(back.dataset_fingerprint == ckpt.dataset_fingerprint);

    SUBCASE("save is byte-stable") {
        const auto path2 = tmp_path("ckpt2.json");
        save_checkpoint(back, path2);
        CHECK(read_file(path) == read_file(path2));
    }
    SUBCASE("foreign schema versions are rejected") {
        auto bad = ckpt;
        bad.schema_version = 2;
        const auto p = tmp_path("ckpt_bad.json");
        save_checkpoint(bad, p);
        CHECK_THROWS_AS(load_checkpoint(p), ValidationError);
    }
    SUBCASE("resume from a reloaded checkpoint matches the uninterrupted run") {
        auto long_cfg = config;
        long_cfg.iterations = 6;
        const auto full = train(ds, &cook, long_cfg);
        const auto half = train(ds, &cook, long_cfg, nullptr, nullptr, 0, 3);
        Checkpoint mid;
        mid.config = long_cfg;
        mid.model = half.model;
        mid.step = half.final_step;
        const auto p = tmp_path("ckpt_mid.json");
        save_checkpoint(mid, p);
        const auto loaded = load_checkpoint(p);
        const auto rest = train(ds, &cook, loaded.config, nullptr, &loaded.model, loaded.step, -1);
        CHECK(rest.model == full.model);
    }
}

TEST_CASE("scene scoring") {
    const Dataset ds = tiny_corpus(9, 51);
    auto config = tiny_config();
    config.iterations = 4;
    const auto cook = cook_of(ds);
    const auto result = train(ds, &cook, config);

    const auto scores =
        score_scenes(result.model, ds, &cook, config, TaskMode::predcls, config.batch_size);
    REQUIRE(scores.size() == ds.scenes.size());

    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& s = scores[i];
        const int n = static_cast<int>(ds.scenes[i].objects.size());
        CHECK(static_cast<int>(s.object_probs.rows) == n);
        CHECK(static_cast<int>(s.pair_index.size()) == n * (n - 1));

        // probabilities normalize
        for (int u = 0; u < n; ++u) {
            double total = 0.0;
            for (std::size_t c = 0; c < s.object_probs.cols; ++c) total += s.object_probs(u, c);
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
            // predcls carries ground-truth classes
            CHECK(s.predicted_class[u] == ds.scenes[i].objects[u].class_id);
        }
        for (const auto& p : s.pair_probs) {
            CHECK(p.size() == static_cast<std::size_t>(ds.vocabulary.n_predicates() + 1));
            double total = 0.0;
            for (double v : p) total += v;
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
    }

    SUBCASE("parallel scoring is bit-identical to serial") {
        const auto par =
            score_scenes(result.model, ds, &cook, config, TaskMode::predcls, config.batch_size, 4);
        REQUIRE(par.size() == scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            CHECK(par[i].object_probs == scores[i].object_probs);
            CHECK(par[i].pair_probs == scores[i].pair_probs);
            CHECK(par[i].predicted_class == scores[i].predicted_class);
        }
    }
    SUBCASE("sgcls predictions come from the object head") {
        const auto sg =
            score_scenes(result.model, ds, &cook, config, TaskMode::sgcls, config.batch_size);
        for (std::size_t i = 0; i < sg.size(); ++i)
            for (std::size_t u = 0; u < sg[i].predicted_class.size(); ++u) {
                int argmax = 0;
                for (std::size_t c = 1; c < sg[i].object_probs.cols; ++c)
                    if (sg[i].object_probs(u, c) > sg[i].object_probs(u, argmax))
                        argmax = static_cast<int>(c);
                CHECK(sg[i].predicted_class[u] == argmax);
            }
    }
    SUBCASE("batch size changes the reweighting statistics, not the contract") {
        const auto other =
            score_scenes(result.model, ds, &cook, config, TaskMode::predcls, 3);
        CHECK(other.size() == scores.size());
    }
}

TEST_CASE("end-to-end: a trained model beats uniform guessing on its corpus") {
    const Dataset ds = tiny_corpus(40, 53);
    auto config = tiny_config();
    config.iterations = 250;
    config.batch_size = 8;
    config.warmup_steps = 20;
    config.lr = 0.05;
    const auto cook = cook_of(ds);
    const auto result = train(ds, &cook, config);
    const auto scores =
        score_scenes(result.model, ds, &cook, config, TaskMode::predcls, config.batch_size);

    EvalOptions opt;
    opt.ks = {20};
    const auto res = evaluate(scores, ds.scenes, ds.vocabulary.n_predicates(), opt);

    // an untrained model of the same shape sets the chance baseline
    const auto fresh = init_model(config, ds.vocabulary.n_objects(), ds.vocabulary.n_predicates());
    const auto base_scores =
        score_scenes(fresh, ds, &cook, config, TaskMode::predcls, config.batch_size);
    const auto base = evaluate(base_scores, ds.scenes, ds.vocabulary.n_predicates(), opt);

    CHECK(res.recall[0] > base.recall[0] + 0.05);
    CHECK(res.any_gt);
}
