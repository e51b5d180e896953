#include "ulab/evalmetrics.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace ulab {

namespace {

struct Cell {
    bool erased_role;
    std::size_t concept_id;
    int level;
};

void validate_spec(const Universe& u, const EvalSpec& spec) {
    if (spec.k < 1 || spec.k > u.concepts.size())
        throw BadK("k must be in 1..K");
    for (std::size_t id : spec.erased) u.concept_at(id);
    for (std::size_t id : spec.preserved) u.concept_at(id);
    for (std::size_t e : spec.erased)
        for (std::size_t p : spec.preserved)
            if (e == p) throw std::invalid_argument("erased and preserved sets overlap");
    for (int level : spec.levels)
        if (level < 0 || level > 4) throw BadLevel("eval level must be in 0..4");
    if (spec.levels.empty()) throw std::invalid_argument("no eval levels");
    if (spec.prompts_per_cell == 0 || spec.samples_per_prompt == 0)
        throw std::invalid_argument("prompts_per_cell and samples_per_prompt must be positive");
}

void append_rates(EsrPsrResult& out) {
    std::vector<int> levels;
    for (const GenRecord& r : out.records)
        if (std::find(levels.begin(), levels.end(), r.level) == levels.end())
            levels.push_back(r.level);
    std::sort(levels.begin(), levels.end());

    std::size_t e_hits = 0, e_total = 0, p_hits = 0, p_total = 0;
    for (int level : levels) {
        LevelRates lr;
        lr.level = level;
        std::size_t le_miss = 0, lp_hit = 0;
        for (const GenRecord& r : out.records) {
            if (r.level != level) continue;
            if (r.erased_role) {
                ++lr.erased_count;
                le_miss += !r.hit;
            } else {
                ++lr.preserved_count;
                lp_hit += r.hit;
            }
        }
        lr.esr = lr.erased_count ? static_cast<double>(le_miss) / lr.erased_count : 0.0;
        lr.psr = lr.preserved_count ? static_cast<double>(lp_hit) / lr.preserved_count : 0.0;
        e_total += lr.erased_count;
        e_hits += le_miss;
        p_total += lr.preserved_count;
        p_hits += lp_hit;
        out.levels.push_back(lr);
    }
    out.esr_overall = e_total ? static_cast<double>(e_hits) / e_total : 0.0;
    out.psr_overall = p_total ? static_cast<double>(p_hits) / p_total : 0.0;
}

}  // namespace

EsrPsrResult tabulate_records(std::vector<GenRecord> records, std::size_t k) {
    if (k == 0) throw BadK("k must be positive");
    EsrPsrResult out;
    out.k = k;
    for (GenRecord& r : records) {
        const std::size_t take = std::min(k, r.topk.size());
        r.hit = std::find(r.topk.begin(), r.topk.begin() + take, r.concept_id) !=
                r.topk.begin() + take;
    }
    out.records = std::move(records);
    append_rates(out);
    return out;
}

EsrPsrResult esr_psr(const Denoiser& model, const Universe& u, const EmbeddingTable& table,
                     const NoiseSchedule& sched, const EvalSpec& spec, const RngState& rng,
                     std::size_t workers) {
    validate_spec(u, spec);

    std::vector<Cell> cells;
    for (std::size_t cid : spec.erased)
        for (int level : spec.levels) cells.push_back({true, cid, level});
    for (std::size_t cid : spec.preserved)
        for (int level : spec.levels) cells.push_back({false, cid, level});

    std::vector<std::vector<GenRecord>> per_cell(cells.size());
    auto run_cell = [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        const RngState cell_stream = rng.child(ci);
        std::vector<GenRecord>& recs = per_cell[ci];
        recs.reserve(spec.prompts_per_cell * spec.samples_per_prompt);
        for (std::size_t p = 0; p < spec.prompts_per_cell; ++p) {
            RngState ps = cell_stream.child(p);
            const PromptSpec prompt = make_prompt(u, cell.concept_id, cell.level, ps);
            const PooledEmbedding pooled = encode_pooled(table, prompt);
            for (std::size_t s = 0; s < spec.samples_per_prompt; ++s) {
                RngState ss = ps.child(s);
                const Vector x = sample(model, pooled, sched, ss).x;
                GenRecord r;
                r.erased_role = cell.erased_role;
                r.concept_id = cell.concept_id;
                r.level = cell.level;
                r.prompt_index = p;
                r.sample_index = s;
                for (const auto& [cid, post] : bayes_classify(u, x)) {
                    if (r.topk.size() == spec.k) break;
                    r.topk.push_back(cid);
                }
                r.hit = std::find(r.topk.begin(), r.topk.end(), cell.concept_id) !=
                        r.topk.end();
                recs.push_back(std::move(r));
            }
        }
    };

    const std::size_t n_workers =
        std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(cells.size(), 1));
    if (n_workers <= 1) {
        for (std::size_t ci = 0; ci < cells.size(); ++ci) run_cell(ci);
    } else {
        std::atomic<std::size_t> next{0};
        auto drain = [&] {
            for (;;) {
                const std::size_t ci = next.fetch_add(1);
                if (ci >= cells.size()) return;
                run_cell(ci);
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(drain);
        for (std::thread& t : pool) t.join();
    }

    EsrPsrResult out;
    out.k = spec.k;
    for (std::vector<GenRecord>& recs : per_cell)
        out.records.insert(out.records.end(), std::make_move_iterator(recs.begin()),
                           std::make_move_iterator(recs.end()));
    append_rates(out);
    return out;
}

void save_gen_records_csv(const std::filesystem::path& path,
                          const std::vector<GenRecord>& records) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << "role,concept,level,prompt,sample,topk,hit\n";
    for (const GenRecord& r : records) {
        os << (r.erased_role ? "erased" : "preserved") << ',' << r.concept_id << ','
           << r.level << ',' << r.prompt_index << ',' << r.sample_index << ',';
        for (std::size_t i = 0; i < r.topk.size(); ++i) {
            if (i) os << '|';
            os << r.topk[i];
        }
        os << ',' << (r.hit ? 1 : 0) << '\n';
    }
    if (!os) throw IoError("write failed for " + path.string());
}

std::vector<GenRecord> load_gen_records_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    while (std::getline(is, line) && !line.empty() && line[0] == '#') {
    }
    if (line != "role,concept,level,prompt,sample,topk,hit")
        throw IoError("bad records header in " + path.string());

    std::vector<GenRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7) throw IoError("bad records row: " + line);
        try {
            GenRecord r;
            if (fields[0] == "erased")
                r.erased_role = true;
            else if (fields[0] == "preserved")
                r.erased_role = false;
            else
                throw IoError("bad role: " + fields[0]);
            r.concept_id = std::stoull(fields[1]);
            r.level = std::stoi(fields[2]);
            r.prompt_index = std::stoull(fields[3]);
            r.sample_index = std::stoull(fields[4]);
            std::stringstream ks(fields[5]);
            std::string id;
            while (std::getline(ks, id, '|'))
                if (!id.empty()) r.topk.push_back(std::stoull(id));
            r.hit = fields[6] == "1";
            if (fields[6] != "1" && fields[6] != "0")
                throw IoError("bad hit flag: " + fields[6]);
            out.push_back(std::move(r));
        } catch (const IoError&) {
            throw;
        } catch (const std::exception&) {
            throw IoError("bad records row: " + line);
        }
    }
    return out;
}

GaussianStats fit_gaussian(const std::vector<Vector>& samples) {
    if (samples.empty()) throw TooFewSamples("no samples");
    const std::size_t dim = samples[0].size();
    if (samples.size() < dim + 1)
        throw TooFewSamples("need at least dim + 1 samples");
    for (const Vector& s : samples)
        if (s.size() != dim) throw std::invalid_argument("ragged sample set");

    GaussianStats g;
    g.mean.assign(dim, 0.0);
    for (const Vector& s : samples) axpy(1.0, s, g.mean);
    for (double& m : g.mean) m /= static_cast<double>(samples.size());

    g.cov = Matrix(dim, dim);
    for (const Vector& s : samples) {
        Vector d = s;
        axpy(-1.0, g.mean, d);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) g.cov(i, j) += d[i] * d[j];
    }
    const double bessel = static_cast<double>(samples.size() - 1);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) g.cov(i, j) /= bessel;
    return g;
}

double frechet_stats(const GaussianStats& a, const GaussianStats& b) {
    const std::size_t dim = a.mean.size();
    if (b.mean.size() != dim || a.cov.rows() != dim || b.cov.rows() != dim)
        throw std::invalid_argument("mismatched Gaussian dims");

    Vector delta = a.mean;
    axpy(-1.0, b.mean, delta);
    double d2 = dot(delta, delta);

    const Matrix ra = sqrtm_psd(a.cov);
    Matrix m = matmul(matmul(ra, b.cov), ra);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = i + 1; j < dim; ++j) {
            const double s = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = s;
            m(j, i) = s;
        }
    const Matrix cross = sqrtm_psd(m);
    for (std::size_t i = 0; i < dim; ++i)
        d2 += a.cov(i, i) + b.cov(i, i) - 2.0 * cross(i, i);
    return std::max(d2, 0.0);
}

double frechet(const std::vector<Vector>& a, const std::vector<Vector>& b) {
    return frechet_stats(fit_gaussian(a), fit_gaussian(b));
}

std::vector<double> frechet_by_concept(const Denoiser& edited, const Denoiser& reference,
                                       const Universe& u, const EmbeddingTable& table,
                                       const NoiseSchedule& sched,
                                       std::size_t samples_per_concept, const RngState& rng) {
    if (samples_per_concept < u.data_dim + 1)
        throw TooFewSamples("need at least data_dim + 1 samples per concept");

    std::vector<double> out;
    out.reserve(u.concepts.size());
    for (std::size_t cid = 0; cid < u.concepts.size(); ++cid) {
        RngState prompt_rng(0);
        const PooledEmbedding pooled =
            encode_pooled(table, make_prompt(u, cid, 0, prompt_rng));
        auto draw = [&](const Denoiser& model, const RngState& base) {
            std::vector<Vector> xs;
            xs.reserve(samples_per_concept);
            for (std::size_t i = 0; i < samples_per_concept; ++i) {
                RngState ss = base.child(i);
                xs.push_back(sample(model, pooled, sched, ss).x);
            }
            return xs;
        };
        out.push_back(frechet(draw(edited, rng.child(2 * cid)),
                              draw(reference, rng.child(2 * cid + 1))));
    }
    return out;
}

double median(Vector values) {
    if (values.empty()) throw std::invalid_argument("median of nothing");
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    if (values.size() % 2 == 1) return values[mid];
    return 0.5 * (values[mid - 1] + values[mid]);
}

namespace {

void finish_row(AblationRow& row) {
    row.esr_median = median(row.esr_by_seed);
    row.psr_median = median(row.psr_by_seed);
}

AblationRow eval_output_engine(const Denoiser& teacher, const EraseTask& task,
                               OutputUnlearnConfig ocfg, double parameter,
                               const AblationConfig& cfg, const Universe& u,
                               const EmbeddingTable& table, const NoiseSchedule& sched,
                               const RngState& rng) {
    AblationRow row;
    row.parameter = parameter;
    for (std::uint64_t seed : cfg.seeds) {
        ocfg.seed = seed;
        const EraseResult res = erase_concepts(teacher, task, ocfg, u, table, sched, rng);
        const EsrPsrResult m =
            esr_psr(res.model, u, table, sched, cfg.eval, rng.child(seed));
        row.esr_by_seed.push_back(m.esr_overall);
        row.psr_by_seed.push_back(m.psr_overall);
    }
    finish_row(row);
    return row;
}

}  // namespace

AblationCurve ablate_alpha(const Denoiser& teacher, const EraseTask& task,
                           const std::vector<double>& alpha_grid, const AblationConfig& cfg,
                           const Universe& u, const EmbeddingTable& table,
                           const NoiseSchedule& sched, const RngState& rng) {
    for (double alpha : alpha_grid)
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw std::invalid_argument("alpha grid must lie in [0, 1]");
    if (cfg.seeds.empty()) throw std::invalid_argument("no seeds");

    AblationCurve curve;
    curve.kind = "alpha";
    curve.seeds = cfg.seeds;
    for (double alpha : alpha_grid) {
        AttnEditConfig acfg = cfg.attention;
        acfg.method = AttnMethod::diversified;
        acfg.alpha = alpha;
        RngState edit_rng = rng.child("edit");
        const EraseResult res = erase_concepts(teacher, task, acfg, table, u, edit_rng);

        AblationRow row;
        row.parameter = alpha;
        for (std::uint64_t seed : cfg.seeds) {
            const EsrPsrResult m =
                esr_psr(res.model, u, table, sched, cfg.eval, rng.child(seed));
            row.esr_by_seed.push_back(m.esr_overall);
            row.psr_by_seed.push_back(m.psr_overall);
        }
        finish_row(row);
        curve.rows.push_back(std::move(row));
    }
    return curve;
}

AblationCurve ablate_prompt_count(const Denoiser& teacher, const EraseTask& task_template,
                                  const std::vector<std::size_t>& counts,
                                  const AblationConfig& cfg, const Universe& u,
                                  const EmbeddingTable& table, const NoiseSchedule& sched,
                                  const RngState& rng) {
    if (task_template.erase_set.size() != 1)
        throw std::invalid_argument("the count sweep needs a single erased concept");
    for (std::size_t c : counts)
        if (c == 0) throw std::invalid_argument("counts must be positive");
    if (cfg.seeds.empty()) throw std::invalid_argument("no seeds");

    AblationCurve curve;
    curve.kind = "prompt_count";
    curve.seeds = cfg.seeds;
    for (std::size_t count : counts) {
        RngState ctx_rng = rng.child("ctx").child(count);
        EraseTask task = task_template;
        task.contexts =
            generate_candidates(u, task_template.erase_set[0], 1, count, ctx_rng);
        OutputUnlearnConfig ocfg = cfg.output;
        ocfg.method = OutputMethod::diversified;
        curve.rows.push_back(eval_output_engine(teacher, task, ocfg,
                                                static_cast<double>(count), cfg, u, table,
                                                sched, rng));
    }
    return curve;
}

AblationCurve ablate_level(const Denoiser& teacher, const EraseTask& task_template,
                           const std::vector<int>& levels, const AblationConfig& cfg,
                           const Universe& u, const EmbeddingTable& table,
                           const NoiseSchedule& sched, const RngState& rng) {
    if (task_template.erase_set.size() != 1)
        throw std::invalid_argument("the level sweep needs a single erased concept");
    for (int level : levels)
        if (level < 1 || level > 4) throw BadLevel("sweep level must be in 1..4");
    if (cfg.seeds.empty()) throw std::invalid_argument("no seeds");

    constexpr std::size_t kContextsPerLevel = 20;

    AblationCurve curve;
    curve.kind = "level";
    curve.seeds = cfg.seeds;
    if (levels.empty()) return curve;

    for (int level : levels) {
        RngState ctx_rng = rng.child("ctx").child(static_cast<std::uint64_t>(level));
        EraseTask task = task_template;
        task.contexts = generate_candidates(u, task_template.erase_set[0], level,
                                            kContextsPerLevel, ctx_rng);
        OutputUnlearnConfig ocfg = cfg.output;
        ocfg.method = OutputMethod::diversified;
        curve.rows.push_back(eval_output_engine(teacher, task, ocfg,
                                                static_cast<double>(level), cfg, u, table,
                                                sched, rng));
    }

    EraseTask bare = task_template;
    bare.contexts.clear();
    OutputUnlearnConfig kcfg = cfg.output;
    kcfg.method = OutputMethod::keyword;
    curve.baseline = eval_output_engine(teacher, bare, kcfg, 0.0, cfg, u, table, sched, rng);

    const AblationRow* best = nullptr;
    for (const AblationRow& row : curve.rows)
        if (!best || row.esr_median + row.psr_median > best->esr_median + best->psr_median ||
            (row.esr_median + row.psr_median == best->esr_median + best->psr_median &&
             row.parameter < best->parameter))
            best = &row;
    if (best) curve.best_parameter = best->parameter;
    return curve;
}

namespace {

void write_row(std::ostream& os, const std::string& kind, const AblationRow& row,
               const std::vector<std::uint64_t>& seeds) {
    for (std::size_t i = 0; i < row.esr_by_seed.size(); ++i)
        os << kind << ',' << format_double(row.parameter) << ',' << seeds[i] << ','
           << format_double(row.esr_by_seed[i]) << ',' << format_double(row.psr_by_seed[i])
           << '\n';
    os << kind << ',' << format_double(row.parameter) << ",median,"
       << format_double(row.esr_median) << ',' << format_double(row.psr_median) << '\n';
}

nlohmann::json row_json(const AblationRow& row) {
    return {{"parameter", row.parameter},
            {"esr_by_seed", row.esr_by_seed},
            {"psr_by_seed", row.psr_by_seed},
            {"esr_median", row.esr_median},
            {"psr_median", row.psr_median}};
}

nlohmann::json curve_json(const AblationCurve& curve) {
    nlohmann::json j{{"kind", curve.kind}, {"seeds", curve.seeds}};
    j["rows"] = nlohmann::json::array();
    for (const AblationRow& row : curve.rows) j["rows"].push_back(row_json(row));
    if (curve.baseline) j["baseline"] = row_json(*curve.baseline);
    if (curve.best_parameter) j["best_parameter"] = *curve.best_parameter;
    return j;
}

}  // namespace

void save_ablation_csv(const std::filesystem::path& path, const AblationCurve& curve,
                       const std::string& comment) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    if (!comment.empty()) os << "# " << comment << '\n';
    os << "kind,parameter,seed,esr,psr\n";
    for (const AblationRow& row : curve.rows) write_row(os, curve.kind, row, curve.seeds);
    if (curve.baseline)
        write_row(os, curve.kind + "_baseline", *curve.baseline, curve.seeds);
    if (!os) throw IoError("write failed for " + path.string());
}

std::string ablation_curve_json(const AblationCurve& curve) {
    return curve_json(curve).dump(2);
}

namespace {

AblationRow row_from_json(const nlohmann::json& j) {
    AblationRow row;
    row.parameter = j.at("parameter").get<double>();
    row.esr_by_seed = j.at("esr_by_seed").get<std::vector<double>>();
    row.psr_by_seed = j.at("psr_by_seed").get<std::vector<double>>();
    row.esr_median = j.at("esr_median").get<double>();
    row.psr_median = j.at("psr_median").get<double>();
    return row;
}

}  // namespace

AblationCurve ablation_curve_from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        AblationCurve curve;
        curve.kind = j.at("kind").get<std::string>();
        curve.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        for (const nlohmann::json& rj : j.at("rows")) curve.rows.push_back(row_from_json(rj));
        if (j.contains("baseline")) curve.baseline = row_from_json(j["baseline"]);
        if (j.contains("best_parameter"))
            curve.best_parameter = j["best_parameter"].get<double>();
        return curve;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad ablation curve json: ") + e.what());
    }
}

std::string metrics_report_json(const MetricsReport& r) {
    nlohmann::json j;
    j["master_seed"] = r.master_seed;
    j["config_digest"] = r.config_digest;
    j["seeds"] = r.seeds;
    j["methods"] = nlohmann::json::array();
    for (const MethodMetrics& m : r.methods) {
        nlohmann::json mj{{"method", m.method},
                          {"esr_overall", m.esr_overall},
                          {"psr_overall", m.psr_overall},
                          {"frechet_by_concept", m.frechet_by_concept},
                          {"attack_asr", m.attack_asr}};
        mj["levels"] = nlohmann::json::array();
        for (const LevelRates& lr : m.levels)
            mj["levels"].push_back({{"level", lr.level},
                                    {"esr", lr.esr},
                                    {"psr", lr.psr},
                                    {"erased_count", lr.erased_count},
                                    {"preserved_count", lr.preserved_count}});
        j["methods"].push_back(std::move(mj));
    }
    nlohmann::json ab;
    if (r.alpha_curve) ab["alpha"] = curve_json(*r.alpha_curve);
    if (r.prompt_count_curve) ab["prompt_count"] = curve_json(*r.prompt_count_curve);
    if (r.level_curve) ab["level"] = curve_json(*r.level_curve);
    j["ablations"] = std::move(ab);
    return j.dump(2);
}

void save_metrics_report(const std::filesystem::path& path, const MetricsReport& r) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << metrics_report_json(r) << '\n';
    if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace ulab
