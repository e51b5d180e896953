#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "ulab/diffusion.hpp"
#include "ulab/world.hpp"

using namespace ulab;

namespace {

UniverseConfig small_config() {
    UniverseConfig cfg;
    cfg.concept_count = 5;
    cfg.data_dim = 2;
    cfg.vocab_size = 256;
    cfg.min_separation = 6.0;
    cfg.sigma = 1.0;
    cfg.seed = 0;
    return cfg;
}

double dist(const Vector& a, const Vector& b) {
    Vector d = a;
    axpy(-1.0, b, d);
    return norm2(d);
}

bool is_lexicon_token(const Universe& u, TokenId t) {
    auto in = [t](const std::vector<TokenId>& v) {
        return std::find(v.begin(), v.end(), t) != v.end();
    };
    return in(u.lexicon.actions) || in(u.lexicon.entities) || in(u.lexicon.scenes);
}

std::vector<TokenId> lexicon_tokens_of(const Universe& u, const PromptSpec& p) {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < p.length(); ++i)
        if (is_lexicon_token(u, p.tokens[i])) out.push_back(p.tokens[i]);
    return out;
}

}  // namespace

TEST_CASE("build_universe enforces separation and determinism") {
    const UniverseConfig cfg = small_config();
    Universe u = build_universe(cfg);
    CHECK(u.concepts.size() == 5);
    CHECK(u.data_dim == 2);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j)
            CHECK(dist(u.concepts[i].mean, u.concepts[j].mean) >= 6.0);

    Universe again = build_universe(cfg);
    CHECK(again == u);

    UniverseConfig other = cfg;
    other.seed = 1;
    CHECK_FALSE(build_universe(other) == u);
}

TEST_CASE("build_universe rejects impossible packings") {
    UniverseConfig cfg = small_config();
    cfg.concept_count = 50;
    cfg.vocab_size = 1024;
    cfg.min_separation = 100.0;
    CHECK_THROWS_AS(build_universe(cfg), Infeasible);
}

TEST_CASE("build_universe validates its inputs") {
    UniverseConfig cfg = small_config();
    cfg.concept_count = 1;
    CHECK_THROWS_AS(build_universe(cfg), std::invalid_argument);

    cfg = small_config();
    cfg.vocab_size = 10;
    CHECK_THROWS_AS(build_universe(cfg), std::invalid_argument);
}

TEST_CASE("universe token sets are disjoint and in range") {
    Universe u = build_universe(small_config());
    std::set<TokenId> seen{kPadToken};
    auto add_all = [&](const std::vector<TokenId>& v) {
        for (TokenId t : v) {
            CHECK(t < u.vocab_size);
            CHECK(seen.insert(t).second);  // no reuse across groups
        }
    };
    add_all(u.template_tokens);
    for (const ConceptSpec& c : u.concepts) {
        add_all(c.concept_tokens);
        add_all(c.anchor_tokens);
        add_all(c.alias_tokens);
        CHECK(c.concept_tokens.size() >= 1);
        CHECK(c.concept_tokens.size() <= 3);
        CHECK_FALSE(c.alias_tokens.empty());
    }
    add_all(u.lexicon.actions);
    add_all(u.lexicon.entities);
    add_all(u.lexicon.scenes);

    double prior_sum = 0.0;
    for (const ConceptSpec& c : u.concepts) prior_sum += c.prior;
    CHECK(std::abs(prior_sum - 1.0) < 1e-12);
}

TEST_CASE("sample_data basic contracts") {
    Universe u = build_universe(small_config());
    RngState rng(7);
    CHECK(sample_data(u, 0, 0, rng).empty());
    CHECK_THROWS_AS(sample_data(u, 99, 1, rng), UnknownConcept);

    // zero covariance collapses every draw onto the mean
    Universe degenerate = u;
    degenerate.concepts[1].cov = Matrix(2, 2);
    auto pts = sample_data(degenerate, 1, 8, rng);
    for (const Vector& p : pts) CHECK(p == degenerate.concepts[1].mean);
}

TEST_CASE("sample_data matches its mean by the CLT") {
    Universe u = build_universe(small_config());
    RngState rng(3);
    const std::size_t n = 100000;
    auto pts = sample_data(u, 2, n, rng);
    Vector mean(2, 0.0);
    for (const Vector& p : pts) axpy(1.0 / n, p, mean);
    const double bound = 4.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean[0] - u.concepts[2].mean[0]) < bound);
    CHECK(std::abs(mean[1] - u.concepts[2].mean[1]) < bound);
}

TEST_CASE("bayes_classify is a normalized ranked posterior") {
    Universe u = build_universe(small_config());
    RngState rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        Vector x = rng.gauss(2);
        x[0] *= 8.0;
        x[1] *= 8.0;
        auto ranked = bayes_classify(u, x);
        REQUIRE(ranked.size() == u.concepts.size());
        double total = 0.0;
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            total += ranked[i].second;
            if (i) CHECK(ranked[i - 1].second >= ranked[i].second);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("bayes_classify puts a centroid on its own concept") {
    Universe u = build_universe(small_config());
    for (const ConceptSpec& c : u.concepts) {
        auto ranked = bayes_classify(u, c.mean);
        CHECK(ranked[0].first == c.id);
        CHECK(ranked[0].second > 0.99);
    }
}

TEST_CASE("bayes_classify splits a symmetric tie evenly") {
    Universe u;
    u.data_dim = 1;
    for (std::size_t i = 0; i < 2; ++i) {
        ConceptSpec c;
        c.id = i;
        c.name = "c" + std::to_string(i);
        c.concept_tokens = {static_cast<TokenId>(3 + i)};
        c.mean = {i == 0 ? -1.0 : 1.0};
        c.cov = Matrix(1, 1);
        c.cov(0, 0) = 1.0;
        c.prior = 0.5;
        u.concepts.push_back(c);
    }
    auto ranked = bayes_classify(u, {0.0});
    CHECK(ranked[0].first == 0);  // tie broken by lower id
    CHECK(ranked[0].second == 0.5);
    CHECK(ranked[1].second == 0.5);
}

TEST_CASE("bayes_classify matches a brute-force density evaluation") {
    Universe u;
    u.data_dim = 2;
    const double means[3][2] = {{0.0, 0.0}, {2.0, 1.0}, {-1.0, 3.0}};
    const double diag[3][2] = {{1.0, 1.0}, {0.5, 2.0}, {1.5, 0.25}};
    const double priors[3] = {0.5, 0.3, 0.2};
    for (std::size_t i = 0; i < 3; ++i) {
        ConceptSpec c;
        c.id = i;
        c.mean = {means[i][0], means[i][1]};
        c.cov = Matrix(2, 2);
        c.cov(0, 0) = diag[i][0];
        c.cov(1, 1) = diag[i][1];
        c.prior = priors[i];
        c.concept_tokens = {static_cast<TokenId>(3 + i)};
        u.concepts.push_back(c);
    }

    const Vector x{0.7, 1.1};
    double brute[3];
    double z = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double dx = x[0] - means[i][0];
        const double dy = x[1] - means[i][1];
        const double quad = dx * dx / diag[i][0] + dy * dy / diag[i][1];
        brute[i] = priors[i] / std::sqrt(diag[i][0] * diag[i][1]) * std::exp(-0.5 * quad);
        z += brute[i];
    }
    auto ranked = bayes_classify(u, x);
    for (const auto& [id, post] : ranked)
        CHECK(std::abs(post - brute[id] / z) < 1e-12);
}

TEST_CASE("fresh samples classify back to their concept") {
    Universe u = build_universe(small_config());
    RngState rng(21);
    std::size_t hits = 0, total = 0;
    for (const ConceptSpec& c : u.concepts) {
        for (const Vector& x : sample_data(u, c.id, 2000, rng)) {
            hits += bayes_classify(u, x)[0].first == c.id;
            ++total;
        }
    }
    CHECK(total == 10000);
    CHECK(static_cast<double>(hits) / total >= 0.99);
}

TEST_CASE("make_prompt level structure") {
    Universe u = build_universe(small_config());
    RngState rng(5);

    for (std::size_t cid = 0; cid < u.concepts.size(); ++cid) {
        PromptSpec p0 = make_prompt(u, cid, 0, rng);
        const auto& ct = u.concepts[cid].concept_tokens;
        CHECK(p0.tokens.size() == kMaxPromptLen);
        CHECK(p0.length() == u.template_tokens.size() + ct.size());
        REQUIRE(p0.concept_span.has_value());
        CHECK(p0.concept_span->first == u.template_tokens.size());
        CHECK(p0.concept_span->second == ct.size());
        for (std::size_t i = 0; i < ct.size(); ++i)
            CHECK(p0.tokens[p0.concept_span->first + i] == ct[i]);
        CHECK(lexicon_tokens_of(u, p0).empty());
        CHECK(p0.subject == cid);
        CHECK(p0.level == 0);
    }

    PromptSpec p1 = make_prompt(u, 0, 1, rng);
    auto lex1 = lexicon_tokens_of(u, p1);
    REQUIRE(lex1.size() == 1);
    CHECK(std::find(u.lexicon.actions.begin(), u.lexicon.actions.end(), lex1[0]) !=
          u.lexicon.actions.end());

    PromptSpec p2 = make_prompt(u, 0, 2, rng);
    auto lex2 = lexicon_tokens_of(u, p2);
    REQUIRE(lex2.size() == 1);
    CHECK(std::find(u.lexicon.entities.begin(), u.lexicon.entities.end(), lex2[0]) !=
          u.lexicon.entities.end());

    PromptSpec p3 = make_prompt(u, 0, 3, rng);
    auto lex3 = lexicon_tokens_of(u, p3);
    REQUIRE(lex3.size() == 2);
    CHECK(lex3[0] != lex3[1]);

    PromptSpec p4 = make_prompt(u, 0, 4, rng);
    CHECK(lexicon_tokens_of(u, p4).size() == 4);

    CHECK_THROWS_AS(make_prompt(u, 0, 5, rng), BadLevel);
    CHECK_THROWS_AS(make_prompt(u, 0, -1, rng), BadLevel);
    CHECK_THROWS_AS(make_prompt(u, 99, 0, rng), UnknownConcept);
}

TEST_CASE("make_prompt is a pure function of its rng") {
    Universe u = build_universe(small_config());
    RngState a(17);
    RngState b(17);
    for (int level = 0; level <= 4; ++level)
        CHECK(make_prompt(u, 3, level, a) == make_prompt(u, 3, level, b));
}

TEST_CASE("make_indirect_prompt avoids the concept tokens") {
    Universe u = build_universe(small_config());
    RngState rng(9);
    for (std::size_t cid = 0; cid < u.concepts.size(); ++cid) {
        PromptSpec p = make_indirect_prompt(u, cid, rng);
        CHECK_FALSE(p.concept_span.has_value());
        CHECK(p.subject == cid);
        const auto& ct = u.concepts[cid].concept_tokens;
        for (std::size_t i = 0; i < p.length(); ++i)
            CHECK(std::find(ct.begin(), ct.end(), p.tokens[i]) == ct.end());
        // every alias appears
        for (TokenId alias : u.concepts[cid].alias_tokens)
            CHECK(std::find(p.tokens.begin(), p.tokens.end(), alias) != p.tokens.end());
    }

    Universe stripped = u;
    stripped.concepts[0].alias_tokens.clear();
    CHECK_THROWS_AS(make_indirect_prompt(stripped, 0, rng), NoAlias);
}

TEST_CASE("aliases with zero perturbation recover the concept at the direct rate") {
    UniverseConfig ucfg;
    ucfg.concept_count = 3;
    ucfg.min_separation = 12.0;
    ucfg.seed = 0;
    Universe u = build_universe(ucfg);

    EmbeddingConfig ecfg;
    ecfg.alias_rms = 0.0;
    EmbeddingTable table = make_embedding_table(u, ecfg);
    NoiseSchedule sched = make_schedule({});
    Denoiser model = train(init_denoiser({}, 0), u, table, sched, {4000, 1e-3, 64, 0}).model;

    // A single-token concept: both alias rows collapse onto the one concept
    // row, so the indirect pooled embedding keeps the concept direction
    // dominant despite the extra lexicon token.
    const std::size_t cid = 0;
    REQUIRE(u.concepts[cid].concept_tokens.size() == 1);

    RngState rng(606);
    PromptSpec direct = make_prompt(u, cid, 0, rng);
    PromptSpec indirect = make_indirect_prompt(u, cid, rng);
    PooledEmbedding cond_direct = encode_pooled(table, direct);
    PooledEmbedding cond_indirect = encode_pooled(table, indirect);

    auto rate = [&](const PooledEmbedding& cond) {
        int hits = 0;
        for (int i = 0; i < 500; ++i) {
            RngState s = rng.child(i);
            const Vector x = sample(model, cond, sched, s).x;
            if (bayes_classify(u, x)[0].first == cid) ++hits;
        }
        return static_cast<double>(hits) / 500.0;
    };
    const double direct_rate = rate(cond_direct);
    const double indirect_rate = rate(cond_indirect);
    CHECK(direct_rate > 0.80);
    CHECK(std::abs(direct_rate - indirect_rate) <= 0.03);
}

TEST_CASE("universe json round-trip is exact") {
    Universe u = build_universe(small_config());
    Universe back = universe_from_json(universe_to_json(u));
    CHECK(back == u);

    const auto path = std::filesystem::temp_directory_path() / "ulab_universe_test.json";
    save_universe(path, u);
    CHECK(load_universe(path) == u);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(universe_from_json("not json"), IoError);
    CHECK_THROWS_AS(universe_from_json("{\"data_dim\": 2}"), IoError);
    CHECK_THROWS_AS(load_universe("/nonexistent/u.json"), IoError);
}
