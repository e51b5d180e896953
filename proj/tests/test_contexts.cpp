#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "ulab/contexts.hpp"

using namespace ulab;

namespace {

struct Trained {
    Universe u;
    EmbeddingTable table;
    NoiseSchedule sched;
    Denoiser teacher;
};

const Trained& trained() {
    static const Trained t = [] {
        Trained f;
        UniverseConfig ucfg;
        ucfg.concept_count = 5;
        ucfg.seed = 0;
        f.u = build_universe(ucfg);
        f.table = make_embedding_table(f.u, {});
        f.sched = make_schedule({});
        f.teacher = train(init_denoiser({}, 0), f.u, f.table, f.sched,
                          {4000, 1e-3, 64, 0})
                        .model;
        return f;
    }();
    return t;
}

bool in(const std::vector<TokenId>& pool, TokenId t) {
    return std::find(pool.begin(), pool.end(), t) != pool.end();
}

}  // namespace

TEST_CASE("template space sizes follow the lexicon") {
    const Trained& f = trained();
    const std::size_t na = f.u.lexicon.actions.size();
    const std::size_t ne = f.u.lexicon.entities.size();
    const std::size_t ns = f.u.lexicon.scenes.size();

    CHECK(template_space_size(f.u, 1) == na);
    CHECK(template_space_size(f.u, 2) == ne);
    CHECK(template_space_size(f.u, 3) == (ne + ns) * (ne + ns - 1));
    CHECK(template_space_size(f.u, 4) == na * ne * (ne - 1) * ns);
    CHECK_THROWS_AS(template_space_size(f.u, 0), BadLevel);
    CHECK_THROWS_AS(template_space_size(f.u, 5), BadLevel);
}

TEST_CASE("a single level-1 candidate carries exactly one action token") {
    const Trained& f = trained();
    RngState rng(0);
    const auto got = generate_candidates(f.u, 0, 1, 1, rng);
    REQUIRE(got.size() == 1);
    const PromptSpec& p = got[0];
    CHECK(p.level == 1);
    CHECK(p.subject == 0);
    std::size_t actions = 0;
    for (std::size_t i = 0; i < p.length(); ++i)
        actions += in(f.u.lexicon.actions, p.tokens[i]);
    CHECK(actions == 1);

    // the concept tokens are present and covered by the span
    REQUIRE(p.concept_span.has_value());
    const auto [start, len] = *p.concept_span;
    REQUIRE(len == f.u.concepts[0].concept_tokens.size());
    for (std::size_t i = 0; i < len; ++i)
        CHECK(p.tokens[start + i] == f.u.concepts[0].concept_tokens[i]);
}

TEST_CASE("candidate generation is sampling without replacement") {
    const Trained& f = trained();
    RngState rng(0);
    const auto got = generate_candidates(f.u, 1, 3, 20, rng);
    REQUIRE(got.size() == 20);
    for (std::size_t i = 0; i < got.size(); ++i)
        for (std::size_t j = i + 1; j < got.size(); ++j)
            CHECK(got[i].tokens != got[j].tokens);
    for (const PromptSpec& p : got) {
        CHECK(p.level == 3);
        CHECK(p.subject == 1);
    }
}

TEST_CASE("the whole level-1 space can be drawn exactly once") {
    const Trained& f = trained();
    const std::size_t space = template_space_size(f.u, 1);
    RngState rng(4);
    const auto all = generate_candidates(f.u, 2, 1, space, rng);
    std::set<std::vector<TokenId>> seen;
    for (const PromptSpec& p : all) seen.insert(p.tokens);
    CHECK(seen.size() == space);

    RngState rng2(4);
    CHECK_THROWS_AS(generate_candidates(f.u, 2, 1, space + 1, rng2), ExhaustedTemplates);
}

TEST_CASE("candidate generation rejects bad arguments") {
    const Trained& f = trained();
    RngState rng(0);
    CHECK_THROWS_AS(generate_candidates(f.u, 0, 0, 1, rng), BadLevel);
    CHECK_THROWS_AS(generate_candidates(f.u, 0, 5, 1, rng), BadLevel);
    CHECK_THROWS_AS(generate_candidates(f.u, 0, 1, 0, rng), std::invalid_argument);
    CHECK_THROWS_AS(generate_candidates(f.u, 99, 1, 1, rng), UnknownConcept);
}

TEST_CASE("impossible and trivial thresholds bracket the retained set") {
    const Trained& f = trained();
    RngState grng(1);
    const auto cands = generate_candidates(f.u, 0, 1, 10, grng);
    RngState vrng(2);

    VerifyConfig hard;
    hard.confidence_threshold = 1.01;  // posteriors never exceed 1
    const ContextSet none = verify_contexts(cands, f.teacher, f.u, f.table, f.sched,
                                            hard, vrng);
    CHECK(none.prompts.empty());
    CHECK(none.candidates_seen == 10);

    VerifyConfig easy;
    easy.confidence_threshold = 0.0;
    const ContextSet all =
        verify_contexts(cands, f.teacher, f.u, f.table, f.sched, easy, vrng);
    CHECK(all.prompts.size() == 10);
    for (const ContextVerification& v : all.stats) CHECK(v.pass_fraction == 1.0);
}

TEST_CASE("a trained teacher retains at least half of level-1 candidates") {
    const Trained& f = trained();
    RngState grng(3);
    const auto cands = generate_candidates(f.u, 0, 1, 20, grng);
    RngState vrng(5);
    const ContextSet cs =
        verify_contexts(cands, f.teacher, f.u, f.table, f.sched, {}, vrng);
    CHECK(cs.concept_id == 0);
    CHECK(cs.prompts.size() >= 10);
    CHECK(cs.prompts.size() == cs.stats.size());
    for (const ContextVerification& v : cs.stats) {
        CHECK(v.pass_fraction >= cs.config.retain_fraction);
        CHECK(v.mean_confidence > 0.5);
    }
}

TEST_CASE("tightening either knob never enlarges the retained set") {
    const Trained& f = trained();
    RngState grng(7);
    const auto cands = generate_candidates(f.u, 3, 1, 15, grng);
    const RngState vrng(11);

    auto keys = [](const ContextSet& cs) {
        std::set<std::vector<TokenId>> k;
        for (const PromptSpec& p : cs.prompts) k.insert(p.tokens);
        return k;
    };
    auto subset = [](const std::set<std::vector<TokenId>>& a,
                     const std::set<std::vector<TokenId>>& b) {
        return std::includes(b.begin(), b.end(), a.begin(), a.end());
    };

    VerifyConfig base;
    base.confidence_threshold = 0.5;
    base.retain_fraction = 0.5;
    const auto loose = keys(verify_contexts(cands, f.teacher, f.u, f.table, f.sched,
                                            base, vrng));
    for (double th : {0.7, 0.9, 0.99}) {
        VerifyConfig c = base;
        c.confidence_threshold = th;
        const auto tight =
            keys(verify_contexts(cands, f.teacher, f.u, f.table, f.sched, c, vrng));
        CHECK(subset(tight, loose));
    }
    for (double rf : {0.75, 0.9, 1.0}) {
        VerifyConfig c = base;
        c.retain_fraction = rf;
        const auto tight =
            keys(verify_contexts(cands, f.teacher, f.u, f.table, f.sched, c, vrng));
        CHECK(subset(tight, loose));
    }
}

TEST_CASE("verification is deterministic and rejects malformed inputs") {
    const Trained& f = trained();
    RngState grng(9);
    const auto cands = generate_candidates(f.u, 2, 2, 8, grng);
    const RngState vrng(13);

    const ContextSet a = verify_contexts(cands, f.teacher, f.u, f.table, f.sched, {}, vrng);
    const ContextSet b = verify_contexts(cands, f.teacher, f.u, f.table, f.sched, {}, vrng);
    CHECK(a == b);

    const ContextSet empty =
        verify_contexts({}, f.teacher, f.u, f.table, f.sched, {}, vrng);
    CHECK(empty.prompts.empty());
    CHECK(empty.candidates_seen == 0);

    VerifyConfig zero;
    zero.n_seeds = 0;
    CHECK_THROWS_AS(verify_contexts(cands, f.teacher, f.u, f.table, f.sched, zero, vrng),
                    std::invalid_argument);

    auto bad = cands;
    bad[0].subject.reset();
    CHECK_THROWS_AS(verify_contexts(bad, f.teacher, f.u, f.table, f.sched, {}, vrng),
                    std::invalid_argument);

    bad = cands;
    bad[3].subject = 4;  // mixed subjects
    CHECK_THROWS_AS(verify_contexts(bad, f.teacher, f.u, f.table, f.sched, {}, vrng),
                    std::invalid_argument);
}

TEST_CASE("context sets round-trip through json") {
    const Trained& f = trained();
    RngState grng(15);
    const auto cands = generate_candidates(f.u, 1, 3, 6, grng);
    RngState vrng(17);
    VerifyConfig cfg;
    cfg.confidence_threshold = 0.6;
    const ContextSet cs =
        verify_contexts(cands, f.teacher, f.u, f.table, f.sched, cfg, vrng);
    REQUIRE(!cs.prompts.empty());

    const ContextSet back = context_set_from_json(context_set_to_json(cs));
    CHECK(back == cs);

    const auto dir = std::filesystem::temp_directory_path() / "ulab_contexts";
    std::filesystem::create_directories(dir);
    const auto path = dir / "contexts.json";
    save_context_set(path, cs);
    CHECK(load_context_set(path) == cs);
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(context_set_from_json("not json"), IoError);
    CHECK_THROWS_AS(context_set_from_json("{\"concept\": 0}"), IoError);
}
