#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ulab/evalmetrics.hpp"

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

GenRecord rec(bool erased_role, std::size_t cid, int level, std::vector<std::size_t> topk) {
    GenRecord r;
    r.erased_role = erased_role;
    r.concept_id = cid;
    r.level = level;
    r.topk = std::move(topk);
    return r;
}

// 3 x L1 contexts per preserved concept, the attention-task shape.
EraseTask attention_task(const Universe& u) {
    EraseTask task = make_task(u, {0}, {1, 2, 3, 4});
    RngState cr(77);
    for (std::size_t cid = 1; cid <= 4; ++cid) {
        RngState cs = cr.child(cid);
        auto ps = generate_candidates(u, cid, 1, 3, cs);
        task.contexts.insert(task.contexts.end(), ps.begin(), ps.end());
    }
    return task;
}

}  // namespace

TEST_CASE("tabulate recounts hand-listed records") {
    std::vector<GenRecord> always;
    for (int i = 0; i < 6; ++i) always.push_back(rec(true, 0, 1, {0}));
    CHECK(tabulate_records(always, 1).esr_overall == 0.0);

    std::vector<GenRecord> listed;
    for (int i = 0; i < 3; ++i) listed.push_back(rec(true, 0, 1, {0}));
    for (int i = 0; i < 7; ++i) listed.push_back(rec(true, 0, 1, {2}));
    const EsrPsrResult ten = tabulate_records(listed, 1);
    CHECK(ten.esr_overall == doctest::Approx(0.7));
    REQUIRE(ten.levels.size() == 1);
    CHECK(ten.levels[0].level == 1);
    CHECK(ten.levels[0].erased_count == 10);
    CHECK(ten.levels[0].esr == doctest::Approx(0.7));

    std::vector<GenRecord> mixed = listed;
    mixed.push_back(rec(false, 3, 1, {3}));
    mixed.push_back(rec(false, 3, 1, {1}));
    mixed.push_back(rec(false, 3, 2, {3}));
    mixed.push_back(rec(false, 3, 2, {3}));
    const EsrPsrResult m = tabulate_records(mixed, 1);
    CHECK(m.psr_overall == doctest::Approx(0.75));
    REQUIRE(m.levels.size() == 2);
    CHECK(m.levels[0].psr == doctest::Approx(0.5));
    CHECK(m.levels[0].preserved_count == 2);
    CHECK(m.levels[1].psr == doctest::Approx(1.0));
    CHECK(m.levels[1].erased_count == 0);
    CHECK(m.levels[1].esr == 0.0);

    // the recount truncates each stored list to k and repairs hit flags
    GenRecord wide = rec(true, 4, 3, {1, 4, 2});
    wide.hit = false;
    const EsrPsrResult w2 = tabulate_records({wide}, 2);
    CHECK(w2.records[0].hit);
    CHECK(w2.esr_overall == 0.0);
    const EsrPsrResult w1 = tabulate_records({wide}, 1);
    CHECK_FALSE(w1.records[0].hit);
    CHECK(w1.esr_overall == 1.0);

    CHECK_THROWS_AS(tabulate_records({}, 0), BadK);
    CHECK(tabulate_records({}, 1).records.empty());
    CHECK(tabulate_records({}, 1).esr_overall == 0.0);
}

TEST_CASE("esr_psr validates its spec") {
    const Trained& f = trained();
    EvalSpec spec;
    spec.erased = {0};
    spec.preserved = {1};
    spec.prompts_per_cell = 2;
    spec.samples_per_prompt = 1;
    const RngState rng(0);

    EvalSpec bad = spec;
    bad.k = 0;
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng), BadK);
    bad.k = 6;
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng), BadK);

    bad = spec;
    bad.preserved = {0, 1};
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng),
                    std::invalid_argument);
    bad = spec;
    bad.erased = {99};
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng), UnknownConcept);
    bad = spec;
    bad.levels = {5};
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng), BadLevel);
    bad.levels = {-1};
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng), BadLevel);
    bad = spec;
    bad.levels = {};
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng),
                    std::invalid_argument);
    bad = spec;
    bad.prompts_per_cell = 0;
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng),
                    std::invalid_argument);
    bad = spec;
    bad.samples_per_prompt = 0;
    CHECK_THROWS_AS(esr_psr(f.teacher, f.u, f.table, f.sched, bad, rng),
                    std::invalid_argument);
}

TEST_CASE("top-K contains every concept") {
    const Trained& f = trained();
    EvalSpec spec;
    spec.erased = {0};
    spec.preserved = {1, 2};
    spec.levels = {0, 1};
    spec.prompts_per_cell = 4;
    spec.samples_per_prompt = 2;
    spec.k = 5;
    const EsrPsrResult r = esr_psr(f.teacher, f.u, f.table, f.sched, spec, RngState(3));
    CHECK(r.esr_overall == 0.0);
    CHECK(r.psr_overall == 1.0);
    for (const GenRecord& g : r.records) {
        CHECK(g.topk.size() == 5);
        CHECK(g.hit);
    }
}

TEST_CASE("the teacher keeps its concepts at level zero") {
    const Trained& f = trained();
    EvalSpec spec;
    spec.erased = {0};
    spec.preserved = {1, 2, 3, 4};
    spec.levels = {0};
    spec.prompts_per_cell = 25;
    spec.samples_per_prompt = 4;
    const EsrPsrResult r = esr_psr(f.teacher, f.u, f.table, f.sched, spec, RngState(17));

    CHECK(r.records.size() == 500);
    REQUIRE(r.levels.size() == 1);
    CHECK(r.levels[0].erased_count == 100);
    CHECK(r.levels[0].preserved_count == 400);
    CHECK(r.esr_overall <= 0.15);  // an un-erased teacher barely "erases"
    CHECK(r.psr_overall >= 0.85);
}

TEST_CASE("evaluation is deterministic, paired, and worker-invariant") {
    const Trained& f = trained();
    EvalSpec spec;
    spec.erased = {0};
    spec.preserved = {2, 4};
    spec.levels = {0, 2};
    spec.prompts_per_cell = 5;
    spec.samples_per_prompt = 2;
    const RngState rng(23);

    const EsrPsrResult a = esr_psr(f.teacher, f.u, f.table, f.sched, spec, rng);
    const EsrPsrResult b = esr_psr(f.teacher, f.u, f.table, f.sched, spec, rng);
    CHECK(a == b);
    const EsrPsrResult c = esr_psr(f.teacher, f.u, f.table, f.sched, spec, rng, 3);
    CHECK(a == c);

    // same streams, different model: the cell/prompt/sample grid is identical
    AttnEditConfig kcfg;
    RngState er(0);
    const Denoiser kw = erase_concepts(f.teacher, attention_task(f.u), kcfg, f.table,
                                       f.u, er)
                            .model;
    const EsrPsrResult d = esr_psr(kw, f.u, f.table, f.sched, spec, rng);
    REQUIRE(d.records.size() == a.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].erased_role == d.records[i].erased_role);
        CHECK(a.records[i].concept_id == d.records[i].concept_id);
        CHECK(a.records[i].level == d.records[i].level);
        CHECK(a.records[i].prompt_index == d.records[i].prompt_index);
        CHECK(a.records[i].sample_index == d.records[i].sample_index);
    }

    const EsrPsrResult t = tabulate_records(a.records, spec.k);
    CHECK(t.esr_overall == a.esr_overall);
    CHECK(t.psr_overall == a.psr_overall);
    CHECK(t.levels == a.levels);
}

TEST_CASE("records survive the csv round trip") {
    const Trained& f = trained();
    EvalSpec spec;
    spec.erased = {1};
    spec.preserved = {0, 3};
    spec.levels = {0, 1};
    spec.prompts_per_cell = 4;
    spec.samples_per_prompt = 2;
    spec.k = 2;
    const EsrPsrResult r = esr_psr(f.teacher, f.u, f.table, f.sched, spec, RngState(9));

    const auto dir = std::filesystem::temp_directory_path() / "ulab_evalmetrics";
    std::filesystem::create_directories(dir);
    const auto path = dir / "records.csv";
    save_gen_records_csv(path, r.records);
    const std::vector<GenRecord> back = load_gen_records_csv(path);
    CHECK(back == r.records);

    const EsrPsrResult recount = tabulate_records(back, spec.k);
    CHECK(recount.esr_overall == r.esr_overall);
    CHECK(recount.psr_overall == r.psr_overall);
    CHECK(recount.levels == r.levels);

    CHECK_THROWS_AS(load_gen_records_csv(dir / "absent.csv"), IoError);
    {
        std::ofstream os(dir / "bad_header.csv");
        os << "not,the,right,header\n";
    }
    CHECK_THROWS_AS(load_gen_records_csv(dir / "bad_header.csv"), IoError);
    {
        std::ofstream os(dir / "bad_row.csv");
        os << "role,concept,level,prompt,sample,topk,hit\n";
        os << "erased,0,1,0\n";
    }
    CHECK_THROWS_AS(load_gen_records_csv(dir / "bad_row.csv"), IoError);
    {
        std::ofstream os(dir / "bad_role.csv");
        os << "role,concept,level,prompt,sample,topk,hit\n";
        os << "purple,0,1,0,0,0,1\n";
    }
    CHECK_THROWS_AS(load_gen_records_csv(dir / "bad_role.csv"), IoError);
    {
        std::ofstream os(dir / "bad_hit.csv");
        os << "role,concept,level,prompt,sample,topk,hit\n";
        os << "erased,0,1,0,0,0,maybe\n";
    }
    CHECK_THROWS_AS(load_gen_records_csv(dir / "bad_hit.csv"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("gaussian fits and hand frechet values") {
    // (+-a, 0), (0, +-a) has zero mean and Bessel covariance (2a^2/3) I
    auto cross = [](double var) {
        const double a = std::sqrt(1.5 * var);
        return std::vector<Vector>{{a, 0.0}, {-a, 0.0}, {0.0, a}, {0.0, -a}};
    };
    const GaussianStats g4 = fit_gaussian(cross(4.0));
    CHECK(g4.mean[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g4.cov(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(g4.cov(1, 1) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(g4.cov(0, 1) == doctest::Approx(0.0).epsilon(1e-12));

    // same mean, isotropic variances 4 and 9 in dim 2: 2 (2 - 3)^2 = 2
    const GaussianStats g9 = fit_gaussian(cross(9.0));
    CHECK(frechet_stats(g4, g9) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(frechet(cross(4.0), cross(9.0)) == doctest::Approx(2.0).epsilon(1e-9));

    CHECK_THROWS_AS(fit_gaussian({}), TooFewSamples);
    CHECK_THROWS_AS(fit_gaussian({{1.0, 2.0}, {0.0, 1.0}}), TooFewSamples);
    CHECK_THROWS_AS(fit_gaussian({{1.0, 2.0}, {0.0}, {1.0, 1.0}}), std::invalid_argument);

    RngState rng(12);
    std::vector<Vector> a, b;
    for (int i = 0; i < 40; ++i) a.push_back(rng.gauss(2));
    CHECK(frechet(a, a) <= 1e-10);

    const Vector delta = {1.5, -2.0};
    for (const Vector& x : a) {
        Vector y = x;
        axpy(1.0, delta, y);
        b.push_back(y);
    }
    CHECK(frechet(a, b) == doctest::Approx(dot(delta, delta)).epsilon(1e-8));

    std::vector<Vector> c, d;
    for (int i = 0; i < 30; ++i) {
        c.push_back(rng.gauss(3));
        Vector y = rng.gauss(3);
        y[0] = 2.0 * y[0] + 1.0;
        d.push_back(y);
    }
    CHECK(frechet(c, d) == doctest::Approx(frechet(d, c)).epsilon(1e-8));
    CHECK_THROWS_AS(frechet(a, c), std::invalid_argument);
}

TEST_CASE("frechet separates far concepts from resampled ones") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        UniverseConfig ucfg;
        ucfg.concept_count = 4;
        ucfg.seed = 100 + s;
        const Universe u = build_universe(ucfg);
        RngState rng(s);
        const std::vector<Vector> a1 = sample_data(u, 0, 60, rng);
        const std::vector<Vector> a2 = sample_data(u, 0, 60, rng);
        const std::vector<Vector> b = sample_data(u, 1, 60, rng);
        CHECK(frechet(a1, b) > frechet(a1, a2));
    }
}

TEST_CASE("frechet per concept flags the edited one") {
    const Trained& f = trained();
    const RngState rng(5);
    const auto same =
        frechet_by_concept(f.teacher, f.teacher, f.u, f.table, f.sched, 200, rng);
    REQUIRE(same.size() == 5);
    for (double dist : same) CHECK(dist <= 1.0);

    AttnEditConfig kcfg;
    RngState er(0);
    const Denoiser kw = erase_concepts(f.teacher, attention_task(f.u), kcfg, f.table,
                                       f.u, er)
                            .model;
    const auto edited =
        frechet_by_concept(kw, f.teacher, f.u, f.table, f.sched, 200, rng);
    CHECK(edited[0] >= 5.0);
    double worst_preserved = 0.0;
    for (std::size_t cid = 1; cid < edited.size(); ++cid)
        worst_preserved = std::max(worst_preserved, edited[cid]);
    CHECK(worst_preserved <= 1.5);
    CHECK(edited[0] >= 10.0 * worst_preserved);

    CHECK_THROWS_AS(
        frechet_by_concept(f.teacher, f.teacher, f.u, f.table, f.sched, 2, rng),
        TooFewSamples);
}

TEST_CASE("median takes the middle of the pack") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 3.0, 2.0}) == doctest::Approx(2.5));
    CHECK(median({7.0}) == 7.0);
    CHECK_THROWS_AS(median({}), std::invalid_argument);
}

TEST_CASE("alpha one reproduces the keyword edit row") {
    const Trained& f = trained();
    const EraseTask task = attention_task(f.u);

    AblationConfig cfg;
    cfg.seeds = {0, 1, 2};
    cfg.eval.erased = {0};
    cfg.eval.preserved = {1, 2, 3, 4};
    cfg.eval.levels = {1, 2};
    cfg.eval.prompts_per_cell = 8;
    cfg.eval.samples_per_prompt = 2;
    const RngState rng(64);

    const AblationCurve curve =
        ablate_alpha(f.teacher, task, {1.0}, cfg, f.u, f.table, f.sched, rng);
    REQUIRE(curve.rows.size() == 1);
    CHECK(curve.kind == "alpha");
    CHECK(curve.seeds == cfg.seeds);
    CHECK_FALSE(curve.baseline.has_value());
    CHECK_FALSE(curve.best_parameter.has_value());

    AttnEditConfig kcfg = cfg.attention;
    kcfg.method = AttnMethod::keyword;
    RngState er = rng.child("edit");
    const Denoiser kw = erase_concepts(f.teacher, task, kcfg, f.table, f.u, er).model;
    AblationRow expect;
    expect.parameter = 1.0;
    for (std::uint64_t seed : cfg.seeds) {
        const EsrPsrResult m =
            esr_psr(kw, f.u, f.table, f.sched, cfg.eval, rng.child(seed));
        expect.esr_by_seed.push_back(m.esr_overall);
        expect.psr_by_seed.push_back(m.psr_overall);
    }
    expect.esr_median = median(expect.esr_by_seed);
    expect.psr_median = median(expect.psr_by_seed);
    CHECK(curve.rows[0] == expect);

    const AblationCurve again =
        ablate_alpha(f.teacher, task, {1.0}, cfg, f.u, f.table, f.sched, rng);
    CHECK(again == curve);
    CHECK(ablate_alpha(f.teacher, task, {}, cfg, f.u, f.table, f.sched, rng).rows.empty());
    CHECK_THROWS_AS(ablate_alpha(f.teacher, task, {1.5}, cfg, f.u, f.table, f.sched, rng),
                    std::invalid_argument);
}

TEST_CASE("dropping alpha trades preservation, not erasure") {
    const Trained& f = trained();
    const EraseTask task = attention_task(f.u);

    AblationConfig cfg;
    cfg.attention.preserve_contexts = false;
    cfg.eval.erased = {0};
    cfg.eval.preserved = {1, 2, 3, 4};
    cfg.eval.levels = {1, 2, 3};
    cfg.eval.prompts_per_cell = 10;
    cfg.eval.samples_per_prompt = 3;

    const AblationCurve curve = ablate_alpha(f.teacher, task, {0.999, 0.9}, cfg, f.u,
                                             f.table, f.sched, RngState(2024));
    REQUIRE(curve.rows.size() == 2);
    CHECK(curve.rows[0].psr_median >= curve.rows[1].psr_median);
    CHECK(std::abs(curve.rows[0].esr_median - curve.rows[1].esr_median) <= 0.1);
    CHECK(curve.rows[0].esr_median >= 0.9);
    CHECK(curve.rows[1].esr_median >= 0.9);
}

TEST_CASE("prompt count rows are pure and guarded") {
    const Trained& f = trained();
    EraseTask task = make_task(f.u, {0}, {1, 2, 3, 4});
    task.preservation_weight = 2.5;

    AblationConfig cfg;
    cfg.output.steps = 300;
    cfg.seeds = {0};
    cfg.eval.erased = {0};
    cfg.eval.preserved = {1, 2};
    cfg.eval.levels = {1};
    cfg.eval.prompts_per_cell = 6;
    cfg.eval.samples_per_prompt = 2;
    const RngState rng(8);

    const AblationCurve both =
        ablate_prompt_count(f.teacher, task, {5, 20}, cfg, f.u, f.table, f.sched, rng);
    const AblationCurve solo =
        ablate_prompt_count(f.teacher, task, {20}, cfg, f.u, f.table, f.sched, rng);
    REQUIRE(both.rows.size() == 2);
    REQUIRE(solo.rows.size() == 1);
    CHECK(both.kind == "prompt_count");
    CHECK(solo.rows[0] == both.rows[1]);
    CHECK(both.rows[0].parameter == 5.0);

    CHECK_THROWS_AS(ablate_prompt_count(f.teacher, task, {1000000}, cfg, f.u, f.table,
                                        f.sched, rng),
                    ExhaustedTemplates);
    CHECK_THROWS_AS(
        ablate_prompt_count(f.teacher, task, {0}, cfg, f.u, f.table, f.sched, rng),
        std::invalid_argument);
    EraseTask two = make_task(f.u, {0, 1}, {2, 3});
    CHECK_THROWS_AS(
        ablate_prompt_count(f.teacher, two, {5}, cfg, f.u, f.table, f.sched, rng),
        std::invalid_argument);
}

TEST_CASE("the level sweep beats its keyword baseline at level one") {
    const Trained& f = trained();
    EraseTask task = make_task(f.u, {0}, {1, 2, 3, 4});
    task.preservation_weight = 2.5;

    AblationConfig cfg;
    cfg.seeds = {0, 1, 2};
    cfg.eval.erased = {0};
    cfg.eval.preserved = {1, 2, 3, 4};
    cfg.eval.levels = {1};
    cfg.eval.prompts_per_cell = 15;
    cfg.eval.samples_per_prompt = 3;
    const RngState rng(31);

    const AblationCurve curve =
        ablate_level(f.teacher, task, {1}, cfg, f.u, f.table, f.sched, rng);
    REQUIRE(curve.rows.size() == 1);
    REQUIRE(curve.baseline.has_value());
    CHECK(curve.kind == "level");
    CHECK(curve.rows[0].parameter == 1.0);
    CHECK(curve.baseline->parameter == 0.0);
    CHECK(curve.best_parameter == 1.0);
    CHECK(curve.rows[0].esr_median >= 0.9);
    CHECK(curve.rows[0].esr_median >= curve.baseline->esr_median + 0.05);

    CHECK_THROWS_AS(ablate_level(f.teacher, task, {0}, cfg, f.u, f.table, f.sched, rng),
                    BadLevel);
    CHECK_THROWS_AS(ablate_level(f.teacher, task, {5}, cfg, f.u, f.table, f.sched, rng),
                    BadLevel);
    const AblationCurve empty =
        ablate_level(f.teacher, task, {}, cfg, f.u, f.table, f.sched, rng);
    CHECK(empty.rows.empty());
    CHECK_FALSE(empty.baseline.has_value());
}

TEST_CASE("ablation csv and the metrics report serialize") {
    AblationCurve curve;
    curve.kind = "alpha";
    curve.seeds = {0, 1};
    AblationRow row;
    row.parameter = 0.999;
    row.esr_by_seed = {0.9, 0.95};
    row.psr_by_seed = {0.7, 0.72};
    row.esr_median = median(row.esr_by_seed);
    row.psr_median = median(row.psr_by_seed);
    curve.rows.push_back(row);
    row.parameter = 0.9;
    curve.rows.push_back(row);
    AblationRow base = row;
    base.parameter = 0.0;
    curve.baseline = base;

    const auto dir = std::filesystem::temp_directory_path() / "ulab_evalmetrics_csv";
    std::filesystem::create_directories(dir);
    const auto path = dir / "curve.csv";
    save_ablation_csv(path, curve, "seed=7 config=abc");

    std::ifstream is(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(is, line)) lines.push_back(line);
    REQUIRE(lines.size() == 11);  // comment + header + 3 rows of (2 seeds + median)
    CHECK(lines[0] == "# seed=7 config=abc");
    CHECK(lines[1] == "kind,parameter,seed,esr,psr");
    CHECK(lines[2] == "alpha,0.999,0,0.90000000000000002,0.69999999999999996");
    CHECK(lines[4].find("median") != std::string::npos);
    CHECK(lines[8].rfind("alpha_baseline,0,0,", 0) == 0);
    std::filesystem::remove_all(dir);

    MetricsReport report;
    report.master_seed = 42;
    report.config_digest = "deadbeef";
    report.seeds = {0, 1};
    MethodMetrics mm;
    mm.method = "output_diversified";
    mm.esr_overall = 0.95;
    mm.psr_overall = 0.66;
    mm.levels.push_back({1, 0.9, 0.7, 100, 400});
    mm.frechet_by_concept = {12.0, 0.1};
    mm.attack_asr = {{"noise", 0.05}, {"adversarial", 0.2}};
    report.methods.push_back(mm);
    report.alpha_curve = curve;

    const auto j = nlohmann::json::parse(metrics_report_json(report));
    CHECK(j.at("master_seed") == 42);
    CHECK(j.at("config_digest") == "deadbeef");
    CHECK(j.at("methods").size() == 1);
    CHECK(j.at("methods")[0].at("attack_asr").at("noise").get<double>() ==
          doctest::Approx(0.05));
    CHECK(j.at("methods")[0].at("levels")[0].at("erased_count") == 100);
    CHECK(j.at("ablations").at("alpha").at("rows").size() == 2);
    CHECK(j.at("ablations").at("alpha").at("baseline").at("parameter").get<double>() ==
          doctest::Approx(0.0));
    CHECK_FALSE(j.at("ablations").contains("level"));
}
