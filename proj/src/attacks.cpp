#include "ulab/attacks.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace ulab {

namespace {

double posterior_of(const std::vector<std::pair<std::size_t, double>>& ranking,
                    std::size_t target) {
    for (const auto& [cid, post] : ranking)
        if (cid == target) return post;
    return 0.0;
}

AttackTrial classify_trial(const Universe& u, const Vector& x, std::size_t target,
                           double threshold) {
    const auto ranking = bayes_classify(u, x);
    AttackTrial t;
    t.top1 = ranking[0].first == target;
    t.confidence = posterior_of(ranking, target);
    t.recovered = t.top1 && t.confidence >= threshold;
    return t;
}

double finish(AttackResult& r) {
    std::size_t hits = 0;
    for (const AttackTrial& t : r.trials) hits += t.recovered;
    r.asr = r.trials.empty() ? 0.0
                             : static_cast<double>(hits) /
                                   static_cast<double>(r.trials.size());
    return r.asr;
}

}  // namespace

double asr_at(const AttackResult& r, double threshold) {
    if (r.trials.empty()) return 0.0;
    std::size_t hits = 0;
    for (const AttackTrial& t : r.trials)
        hits += t.top1 && t.confidence >= threshold;
    return static_cast<double>(hits) / static_cast<double>(r.trials.size());
}

std::vector<AttackResult> noise_attack(const Denoiser& model, const PromptSpec& prompt,
                                       const std::vector<double>& ratio_grid,
                                       std::size_t n_trials, const NoiseAttackConfig& cfg,
                                       const Universe& u, const EmbeddingTable& table,
                                       const NoiseSchedule& sched, const RngState& rng) {
    if (!prompt.subject)
        throw std::invalid_argument("noise_attack: prompt has no subject");
    if (n_trials < 1) throw std::invalid_argument("noise_attack: n_trials < 1");
    for (double r : ratio_grid)
        if (!(r >= 0.0 && r <= 1.0))
            throw std::invalid_argument("noise_attack: ratio outside [0, 1]");

    const std::size_t target = *prompt.subject;
    const TokenEmbeddings te = encode(table, prompt);
    const PooledEmbedding pooled = pool(te);

    std::vector<AttackResult> out;
    for (double ratio : ratio_grid) {
        AttackResult res;
        res.kind = "noise";
        res.parameter = ratio;
        res.success_threshold = cfg.success_threshold;
        for (std::size_t i = 0; i < n_trials; ++i) {
            RngState ts = rng.child(i);  // replayed per ratio: paired trials
            PooledEmbedding cond;
            if (cfg.pre_pool) {
                TokenEmbeddings rows = te;
                for (std::size_t row = 0; row < rows.length(); ++row) {
                    PooledEmbedding pe;
                    pe.vector.assign(rows.vectors.row(row),
                                     rows.vectors.row(row) + rows.vectors.cols());
                    pe = inject_noise(pe, ratio, cfg.scaling, ts);
                    std::copy(pe.vector.begin(), pe.vector.end(),
                              rows.vectors.row(row));
                }
                cond = pool(rows);
            } else {
                cond = inject_noise(pooled, ratio, cfg.scaling, ts);
            }
            const Vector x = sample(model, cond, sched, ts).x;
            res.trials.push_back(classify_trial(u, x, target, cfg.success_threshold));
        }
        finish(res);
        out.push_back(std::move(res));
    }
    return out;
}

AttackResult adversarial_embedding_search(const Denoiser& model, std::size_t target,
                                          const AdvSearchConfig& cfg, const Universe& u,
                                          const EmbeddingTable& table,
                                          const NoiseSchedule& sched, const RngState& rng) {
    RngState none(0);
    const PromptSpec prompt = make_prompt(u, target, 0, none);  // draws nothing
    const PooledEmbedding plain = encode_pooled(table, prompt);
    const std::size_t n_chains = std::max<std::size_t>(1, cfg.restarts);
    const std::size_t k = u.concepts.size();

    AttackResult res;
    res.kind = "adversarial";
    res.success_threshold = cfg.success_threshold;
    res.best_score = -1.0;

    for (std::size_t r = 0; r < n_chains; ++r) {
        RngState chain = rng.child(r);
        const RngState eval_base = chain.child("eval");
        RngState walk = chain.child("walk");

        // Mean posterior per concept at a candidate embedding; the eval
        // noise is fixed per chain so the objective is a pure function.
        auto evaluate = [&](const Vector& e) {
            Vector means(k, 0.0);
            const PooledEmbedding cond{e};
            for (std::size_t s = 0; s < cfg.samples_per_eval; ++s) {
                RngState ss = eval_base.child(s);
                const Vector x = sample(model, cond, sched, ss).x;
                for (const auto& [cid, post] : bayes_classify(u, x))
                    means[cid] += post;
            }
            for (double& m : means) m /= static_cast<double>(cfg.samples_per_eval);
            return means;
        };

        Vector cur = plain.vector;
        if (r > 0) {
            const Vector jitter = walk.gauss(cur.size());
            axpy(cfg.restart_spread, jitter, cur);
        }
        Vector cur_means = evaluate(cur);
        double cur_score = cur_means[target];

        AttackTrial trial;
        trial.trajectory.reserve(cfg.iters);
        for (std::size_t it = 0; it < cfg.iters; ++it) {
            Vector cand = cur;
            const Vector step = walk.gauss(cur.size());
            axpy(cfg.step_size, step, cand);
            const Vector cand_means = evaluate(cand);
            if (cand_means[target] > cur_score) {
                cur = std::move(cand);
                cur_means = cand_means;
                cur_score = cand_means[target];
            }
            trial.trajectory.push_back(cur_score);
        }

        trial.confidence = cur_score;
        trial.top1 = std::max_element(cur_means.begin(), cur_means.end()) -
                         cur_means.begin() ==
                     static_cast<std::ptrdiff_t>(target);
        trial.recovered = trial.top1 && trial.confidence >= cfg.success_threshold;
        if (cur_score > res.best_score) {
            res.best_score = cur_score;
            res.best_embedding = cur;
        }
        res.trials.push_back(std::move(trial));
    }
    finish(res);
    return res;
}

AttackResult indirect_recovery(const Denoiser& model, std::size_t concept_id,
                               std::size_t n_prompts, std::size_t n_trials,
                               const IndirectConfig& cfg, const Universe& u,
                               const EmbeddingTable& table, const NoiseSchedule& sched,
                               const RngState& rng) {
    if (n_prompts < 1 || n_trials < 1)
        throw std::invalid_argument("indirect_recovery: empty budget");

    AttackResult res;
    res.kind = "indirect";
    res.success_threshold = cfg.success_threshold;
    for (std::size_t i = 0; i < n_prompts; ++i) {
        RngState ps = rng.child(2 * i);
        const PromptSpec prompt = make_indirect_prompt(u, concept_id, ps);
        const PooledEmbedding cond = encode_pooled(table, prompt);
        for (std::size_t j = 0; j < n_trials; ++j) {
            RngState ts = rng.child(2 * i + 1).child(j);
            const Vector x = sample(model, cond, sched, ts).x;
            res.trials.push_back(
                classify_trial(u, x, concept_id, cfg.success_threshold));
        }
    }
    finish(res);
    return res;
}

std::string attack_result_json(const AttackResult& r) {
    json j;
    j["kind"] = r.kind;
    j["parameter"] = r.parameter;
    j["success_threshold"] = r.success_threshold;
    j["trials"] = r.trials.size();
    j["asr"] = r.asr;
    json by_threshold;
    for (double th : {0.3, 0.5, 0.7, 0.8})
        by_threshold[format_double(th)] = asr_at(r, th);
    j["asr_by_threshold"] = by_threshold;
    if (r.kind == "adversarial") {
        j["best_score"] = r.best_score;
        j["best_embedding"] = r.best_embedding;
    }
    return j.dump(2);
}

void save_attack_csv(const std::filesystem::path& path,
                     const std::vector<AttackResult>& results) {
    std::ofstream os(path);
    if (!os) throw IoError("save_attack_csv: cannot open " + path.string());
    os << "kind,parameter,trial,top1,confidence,recovered\n";
    for (const AttackResult& r : results)
        for (std::size_t i = 0; i < r.trials.size(); ++i)
            os << r.kind << ',' << format_double(r.parameter) << ',' << i << ','
               << r.trials[i].top1 << ',' << format_double(r.trials[i].confidence)
               << ',' << r.trials[i].recovered << '\n';
    if (!os) throw IoError("save_attack_csv: write failed for " + path.string());
}

}  // namespace ulab
