#include "ulab/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace ulab {

using nlohmann::json;

namespace {

PromptSpec level0_prompt(const Universe& u, std::size_t cid) {
    RngState rng(0);  // level 0 draws nothing
    return make_prompt(u, cid, 0, rng);
}

double frobenius_delta(const ParamSet& after, const ParamSet& before) {
    ParamSet d = after;
    axpy(-1.0, before, d);
    double q = 0.0;
    for (const Matrix* m : {&d.cond_proj.w, &d.w1, &d.w2, &d.w3}) {
        const double f = frobenius_norm(*m);
        q += f * f;
    }
    for (const Vector* v : {&d.b1, &d.b2, &d.b3}) {
        const double f = norm2(*v);
        q += f * f;
    }
    return std::sqrt(q);
}

/// Reverse chain from pure noise down to timestep t (exclusive of the
/// final denoising steps), mirroring sample()'s update rule.
Vector partial_sample(const Denoiser& d, const PooledEmbedding& cond, std::size_t t,
                      const NoiseSchedule& sched, RngState& rng) {
    Vector z = rng.gauss(d.dims.data_dim);
    for (std::size_t i = sched.steps(); i-- > t + 1;) {
        const Vector eps_hat = predict(d, z, i, cond, sched);
        const double beta = sched.betas[i];
        const double abar = sched.alpha_bars[i];
        const double alpha = sched.alphas[i];
        for (std::size_t k = 0; k < z.size(); ++k)
            z[k] = (z[k] - beta / std::sqrt(1.0 - abar) * eps_hat[k]) / std::sqrt(alpha);
        const double abar_prev = sched.alpha_bars[i - 1];
        const double sigma = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
        for (double& v : z) v += sigma * rng.next_gauss();
    }
    return z;
}

json task_digest(const EraseTask& task) {
    return json{{"erase_set", task.erase_set},
                {"preserve_set", task.preserve_set},
                {"contexts", task.contexts.size()},
                {"alpha", task.alpha},
                {"preservation_weight", task.preservation_weight}};
}

const char* method_name(OutputMethod m) {
    return m == OutputMethod::keyword ? "keyword" : "diversified";
}

const char* method_name(AttnMethod m) {
    switch (m) {
        case AttnMethod::keyword: return "keyword";
        case AttnMethod::diversified: return "diversified";
        case AttnMethod::noise_mixup: return "noise_mixup";
    }
    return "?";
}

}  // namespace

EraseTask make_task(const Universe& u, std::vector<std::size_t> erase,
                    std::vector<std::size_t> preserve) {
    EraseTask task;
    task.erase_set = std::move(erase);
    task.preserve_set = std::move(preserve);
    for (std::size_t e : task.erase_set) task.anchors[e] = u.concept_at(e).anchor_tokens;
    return task;
}

void validate_task(const Universe& u, const EraseTask& task) {
    if (task.erase_set.empty()) throw InvalidTask("task: empty erase set");
    std::set<std::size_t> erased;
    for (std::size_t e : task.erase_set) {
        if (e >= u.concepts.size())
            throw InvalidTask("task: unknown erased concept " + std::to_string(e));
        if (!erased.insert(e).second)
            throw InvalidTask("task: duplicate erased concept " + std::to_string(e));
        const auto it = task.anchors.find(e);
        if (it == task.anchors.end() || it->second.empty())
            throw InvalidTask("task: concept " + std::to_string(e) + " has no anchor");
    }
    std::set<std::size_t> preserved;
    for (std::size_t p : task.preserve_set) {
        if (p >= u.concepts.size())
            throw InvalidTask("task: unknown preserved concept " + std::to_string(p));
        if (!preserved.insert(p).second)
            throw InvalidTask("task: duplicate preserved concept " + std::to_string(p));
        if (erased.count(p))
            throw InvalidTask("task: concept " + std::to_string(p) +
                              " both erased and preserved");
    }
    if (!(task.alpha >= 0.0 && task.alpha <= 1.0))
        throw InvalidTask("task: alpha outside [0, 1]");
    if (!(task.preservation_weight >= 0.0) || !std::isfinite(task.preservation_weight))
        throw InvalidTask("task: negative preservation weight");
}

PromptSpec replace_concept_tokens(const PromptSpec& prompt,
                                  const std::vector<TokenId>& replacement) {
    if (!prompt.concept_span)
        throw InvalidTask("replace_concept_tokens: prompt has no concept span");
    const auto [start, len] = *prompt.concept_span;
    const std::size_t n = prompt.length();
    if (start + len > n)
        throw InvalidTask("replace_concept_tokens: span outside the prompt");

    PromptSpec out;
    out.level = prompt.level;
    out.tokens.assign(prompt.tokens.begin(), prompt.tokens.begin() + start);
    out.tokens.insert(out.tokens.end(), replacement.begin(), replacement.end());
    out.tokens.insert(out.tokens.end(), prompt.tokens.begin() + start + len,
                      prompt.tokens.begin() + n);
    out.concept_span = {{start, replacement.size()}};
    if (out.tokens.size() > kMaxPromptLen)
        throw InvalidTask("replace_concept_tokens: replacement does not fit");
    out.tokens.resize(kMaxPromptLen, kPadToken);
    return out;
}

void save_unlearn_csv(const std::filesystem::path& path, const UnlearnReport& r) {
    std::ofstream os(path);
    if (!os) throw IoError("save_unlearn_csv: cannot open " + path.string());
    os << "step,l1,l2,total\n";
    for (std::size_t i = 0; i < r.total.size(); ++i)
        os << i << ',' << format_double(r.l1[i]) << ',' << format_double(r.l2[i]) << ','
           << format_double(r.total[i]) << '\n';
    if (!os) throw IoError("save_unlearn_csv: write failed for " + path.string());
}

std::string unlearn_report_json(const UnlearnReport& r) {
    json j;
    j["l1"] = r.l1;
    j["l2"] = r.l2;
    j["total"] = r.total;
    j["pair_residuals"] = r.pair_residuals;
    j["param_delta"] = r.param_delta;
    j["config"] = r.config_echo.empty() ? json() : json::parse(r.config_echo);
    return j.dump(2);
}

EraseResult erase_output_based(const Denoiser& student, const Denoiser& teacher,
                               const EraseTask& task, const OutputUnlearnConfig& cfg,
                               const Universe& u, const EmbeddingTable& table,
                               const NoiseSchedule& sched, const RngState& rng) {
    validate_task(u, task);
    if (cfg.lr <= 0.0 || cfg.batch_size < 1)
        throw std::invalid_argument("erase_output_based: bad config");

    const std::size_t ne = task.erase_set.size();

    // Per erased concept: matching (erase prompt, anchor prompt) cond pairs
    // plus the canonical level-0 cond used by the teacher-sampled chain.
    std::vector<std::vector<PooledEmbedding>> cond_e(ne), cond_a(ne);
    std::vector<PooledEmbedding> cond_canon(ne);
    for (std::size_t i = 0; i < ne; ++i) {
        const std::size_t e = task.erase_set[i];
        const PromptSpec base = level0_prompt(u, e);
        cond_canon[i] = encode_pooled(table, base);
        if (cfg.method == OutputMethod::keyword) {
            cond_e[i].push_back(cond_canon[i]);
            cond_a[i].push_back(
                encode_pooled(table, replace_concept_tokens(base, task.anchors.at(e))));
        }
    }
    if (cfg.method == OutputMethod::diversified) {
        if (task.contexts.empty())
            throw EmptyContexts("erase_output_based: diversified mode with no contexts");
        for (const PromptSpec& ctx : task.contexts) {
            if (!ctx.subject)
                throw InvalidTask("erase_output_based: context without a subject");
            const auto it = std::find(task.erase_set.begin(), task.erase_set.end(),
                                      *ctx.subject);
            if (it == task.erase_set.end())
                throw InvalidTask("erase_output_based: context subject " +
                                  std::to_string(*ctx.subject) + " is not erased");
            const std::size_t i = static_cast<std::size_t>(it - task.erase_set.begin());
            cond_e[i].push_back(encode_pooled(table, ctx));
            cond_a[i].push_back(encode_pooled(
                table, replace_concept_tokens(ctx, task.anchors.at(*ctx.subject))));
        }
        for (std::size_t i = 0; i < ne; ++i)
            if (cond_e[i].empty())
                throw EmptyContexts("erase_output_based: no contexts for concept " +
                                    std::to_string(task.erase_set[i]));
    }

    EraseResult res;
    res.model = student;
    res.report.config_echo = json{{"engine", "output"},
                                  {"method", method_name(cfg.method)},
                                  {"steps", cfg.steps},
                                  {"lr", cfg.lr},
                                  {"batch_size", cfg.batch_size},
                                  {"seed", cfg.seed},
                                  {"latent_strategy",
                                   cfg.latent_strategy == LatentStrategy::data_noised
                                       ? "data_noised"
                                       : "teacher_sampled"},
                                  {"average_contexts", cfg.average_contexts},
                                  {"task", task_digest(task)}}
                                 .dump();
    if (cfg.steps == 0) return res;

    RngState stream = rng.child(cfg.seed);
    const std::size_t steps_t = sched.steps();
    const bool preserve = task.preservation_weight > 0.0 && !task.preserve_set.empty();

    auto draw_latent = [&](const PooledEmbedding& chain_cond, std::size_t cid,
                           std::size_t t) {
        if (cfg.latent_strategy == LatentStrategy::data_noised) {
            const Vector x0 = sample_data(u, cid, 1, stream)[0];
            const Vector eps = stream.gauss(u.data_dim);
            return forward_noise(x0, t, eps, sched);
        }
        return partial_sample(teacher, chain_cond, t, sched, stream);
    };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        DiffusionBatch erase_batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t i = b % ne;
            std::size_t pick = 0;
            if (!cfg.average_contexts) pick = stream.next_u64() % cond_e[i].size();
            const std::size_t t = stream.next_u64() % steps_t;
            const Vector z = draw_latent(cond_canon[i], task.erase_set[i], t);
            const std::size_t lo = cfg.average_contexts ? 0 : pick;
            const std::size_t hi = cfg.average_contexts ? cond_e[i].size() : pick + 1;
            for (std::size_t c = lo; c < hi; ++c) {
                erase_batch.t.push_back(t);
                erase_batch.z_t.push_back(z);
                erase_batch.cond.push_back(cond_e[i][c]);
                erase_batch.eps.push_back(predict(teacher, z, t, cond_a[i][c], sched));
            }
        }
        LossGrads lg = loss_and_grads(res.model, erase_batch, sched);

        double l2 = 0.0;
        if (preserve) {
            DiffusionBatch keep_batch;
            for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                const std::size_t i = b % task.preserve_set.size();
                const std::size_t cid = task.preserve_set[i];
                const int level = static_cast<int>(stream.next_u64() % 2);
                const PooledEmbedding cp =
                    encode_pooled(table, make_prompt(u, cid, level, stream));
                const std::size_t t = stream.next_u64() % steps_t;
                const Vector z = draw_latent(cp, cid, t);
                keep_batch.t.push_back(t);
                keep_batch.z_t.push_back(z);
                keep_batch.cond.push_back(cp);
                keep_batch.eps.push_back(predict(teacher, z, t, cp, sched));
            }
            LossGrads keep = loss_and_grads(res.model, keep_batch, sched);
            l2 = keep.loss;
            axpy(task.preservation_weight, keep.grads, lg.grads);
        }

        const double total = lg.loss + task.preservation_weight * l2;
        if (!std::isfinite(total))
            throw Divergence("erase_output_based: loss diverged at step " +
                             std::to_string(step));
        axpy(-cfg.lr, lg.grads, res.model.p);
        res.report.l1.push_back(lg.loss);
        res.report.l2.push_back(l2);
        res.report.total.push_back(total);
    }
    if (!all_finite(res.model.p))
        throw Divergence("erase_output_based: non-finite parameters");
    res.report.param_delta = frobenius_delta(res.model.p, student.p);
    return res;
}

std::vector<AttnPair> build_attn_pairs(const CondProjection& w, const EraseTask& task,
                                       const AttnEditConfig& cfg, const EmbeddingTable& table,
                                       const Universe& u, RngState& rng) {
    validate_task(u, task);
    const double alpha = cfg.alpha.value_or(task.alpha);
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw InvalidTask("build_attn_pairs: alpha outside [0, 1]");
    for (const PromptSpec& ctx : task.contexts)
        if (ctx.subject &&
            std::find(task.erase_set.begin(), task.erase_set.end(), *ctx.subject) !=
                task.erase_set.end())
            throw InvalidTask("build_attn_pairs: context subject " +
                              std::to_string(*ctx.subject) + " is erased");

    std::vector<TokenEmbeddings> ctx_emb;
    if (cfg.method == AttnMethod::diversified) {
        if (task.contexts.empty())
            throw EmptyContexts("build_attn_pairs: diversified mode with no contexts");
        for (const PromptSpec& ctx : task.contexts) ctx_emb.push_back(encode(table, ctx));
    }

    std::vector<AttnPair> pairs;
    for (std::size_t e : task.erase_set) {
        const PromptSpec base = level0_prompt(u, e);
        const TokenEmbeddings te = encode(table, base);
        TokenEmbeddings mixed = te;
        if (cfg.method == AttnMethod::diversified)
            mixed = mixup_token(te, ctx_emb, alpha);
        else if (cfg.method == AttnMethod::noise_mixup)
            mixed = noise_mixup(te, alpha, rng);
        const PooledEmbedding target_prompt =
            cfg.target_output == TargetOutput::anchor
                ? encode_pooled(table, replace_concept_tokens(base, task.anchors.at(e)))
                : pool(te);
        pairs.push_back({pool(mixed).vector, matvec(w.w, target_prompt.vector)});
    }
    for (std::size_t p : task.preserve_set) {
        const Vector up = encode_pooled(table, level0_prompt(u, p)).vector;
        pairs.push_back({up, matvec(w.w, up)});
    }
    if (cfg.preserve_contexts)
        for (const PromptSpec& ctx : task.contexts) {
            const Vector uc = encode_pooled(table, ctx).vector;
            pairs.push_back({uc, matvec(w.w, uc)});
        }
    return pairs;
}

AttnEditResult erase_attention_based(const CondProjection& w,
                                     const std::vector<AttnPair>& pairs,
                                     std::optional<double> lambda) {
    const std::size_t dim = w.w.cols();
    const std::size_t out_dim = w.w.rows();

    AttnEditResult res;
    if (pairs.empty()) {  // nothing to fit; the ridge keeps w
        res.w = w;
        res.report.config_echo = json{{"engine", "attention"}, {"pairs", 0}}.dump();
        return res;
    }

    Matrix gram(dim, dim);
    Matrix uvt(dim, out_dim);  // sum u v^T = (sum v u^T)^T
    for (const AttnPair& p : pairs) {
        if (p.input.size() != dim || p.target.size() != out_dim)
            throw DimMismatch("erase_attention_based: pair dims");
        axpy(1.0, outer(p.input, p.input), gram);
        axpy(1.0, outer(p.input, p.target), uvt);
    }

    double trace = 0.0;
    for (std::size_t i = 0; i < dim; ++i) trace += gram(i, i);
    double lam = 1e-3 * trace / static_cast<double>(dim);
    if (lambda) {
        if (!(*lambda >= 0.0))
            throw std::invalid_argument("erase_attention_based: negative lambda");
        lam = *lambda;
    }
    if (lam == 0.0) {
        const EigResult eig = sym_eig_psd(gram);
        const double lo = eig.values.back();
        if (lo <= 0.0 || eig.values.front() / lo > 1e12)
            throw SingularSystem(
                "erase_attention_based: Gram condition estimate exceeds 1e12");
    }

    Matrix lhs = gram;
    for (std::size_t i = 0; i < dim; ++i) lhs(i, i) += lam;
    Matrix rhs = uvt;
    axpy(lam, transpose(w.w), rhs);
    res.w.w = transpose(solve_spd(lhs, rhs));

    res.report.pair_residuals.reserve(pairs.size());
    for (const AttnPair& p : pairs) {
        Vector r = matvec(res.w.w, p.input);
        axpy(-1.0, p.target, r);
        res.report.pair_residuals.push_back(norm2(r));
    }
    Matrix dw = res.w.w;
    axpy(-1.0, w.w, dw);
    res.report.param_delta = frobenius_norm(dw);
    res.report.config_echo =
        json{{"engine", "attention"}, {"lambda", lam}, {"pairs", pairs.size()}}.dump();
    return res;
}

EraseResult erase_concepts(const Denoiser& model, const EraseTask& task,
                           const OutputUnlearnConfig& cfg, const Universe& u,
                           const EmbeddingTable& table, const NoiseSchedule& sched,
                           const RngState& rng) {
    return erase_output_based(model, model, task, cfg, u, table, sched, rng);
}

EraseResult erase_concepts(const Denoiser& model, const EraseTask& task,
                           const AttnEditConfig& cfg, const EmbeddingTable& table,
                           const Universe& u, RngState& rng) {
    const std::vector<AttnPair> pairs =
        build_attn_pairs(model.p.cond_proj, task, cfg, table, u, rng);
    AttnEditResult edit = erase_attention_based(model.p.cond_proj, pairs, cfg.ridge_lambda);

    EraseResult res;
    res.model = model;
    res.model.p.cond_proj = edit.w;
    res.report = std::move(edit.report);
    json echo = json::parse(res.report.config_echo);
    echo["method"] = method_name(cfg.method);
    echo["alpha"] = cfg.alpha.value_or(task.alpha);
    echo["target_output"] =
        cfg.target_output == TargetOutput::anchor ? "anchor" : "as_printed";
    echo["preserve_contexts"] = cfg.preserve_contexts;
    echo["task"] = task_digest(task);
    res.report.config_echo = echo.dump();
    return res;
}

}  // namespace ulab
