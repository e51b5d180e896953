#pragma once

#include "ulab/textenc.hpp"
#include "ulab/diffusion.hpp"

// Recovery attacks against an (erased) model: noise perturbation of the
// conditioning, black-box hill climbing over the pooled embedding, and
// alias-based indirect prompts. Success means the target concept comes back
// top-1 with enough posterior mass.

namespace ulab {

struct AttackTrial {
    bool top1 = false;        // target is the top-1 Bayes label
    double confidence = 0.0;  // Bayes posterior of the target
    bool recovered = false;   // top1 && confidence >= success_threshold
    std::vector<double> trajectory;  // adversarial search: best score per iter

    friend bool operator==(const AttackTrial&, const AttackTrial&) = default;
};

struct AttackResult {
    std::string kind;
    double parameter = 0.0;  // noise ratio for the noise attack, else 0
    double success_threshold = 0.5;
    std::vector<AttackTrial> trials;
    double asr = 0.0;  // recovered fraction
    Vector best_embedding;  // adversarial search only
    double best_score = 0.0;

    friend bool operator==(const AttackResult&, const AttackResult&) = default;
};

/// ASR recomputed at another posterior threshold from the stored trials.
double asr_at(const AttackResult& r, double threshold);

struct NoiseAttackConfig {
    double success_threshold = 0.5;
    NoiseScaling scaling = NoiseScaling::norm_matched;
    bool pre_pool = false;  // perturb token rows instead of the pooled vector

    friend bool operator==(const NoiseAttackConfig&, const NoiseAttackConfig&) = default;
};

/// One result per ratio. Trial i replays the same child stream at every
/// ratio, so the grid is common-random-number paired; ratio 0 is the plain
/// evaluation path (inject_noise still consumes its draws).
std::vector<AttackResult> noise_attack(const Denoiser& model, const PromptSpec& prompt,
                                       const std::vector<double>& ratio_grid,
                                       std::size_t n_trials, const NoiseAttackConfig& cfg,
                                       const Universe& u, const EmbeddingTable& table,
                                       const NoiseSchedule& sched, const RngState& rng);

struct AdvSearchConfig {
    std::size_t restarts = 20;
    std::size_t iters = 30;
    double step_size = 0.25;
    double restart_spread = 0.5;  // start jitter around the plain embedding
    std::size_t samples_per_eval = 8;
    double success_threshold = 0.5;

    friend bool operator==(const AdvSearchConfig&, const AdvSearchConfig&) = default;
};

/// Random-restart hill climb over the pooled conditioning, maximizing the
/// target's mean posterior over samples_per_eval generations (noise held
/// fixed within a restart, so the climbed objective is deterministic).
/// Restart 0 starts at the plain level-0 prompt embedding; zero budgets
/// reduce to evaluating that embedding.
AttackResult adversarial_embedding_search(const Denoiser& model, std::size_t target,
                                          const AdvSearchConfig& cfg, const Universe& u,
                                          const EmbeddingTable& table,
                                          const NoiseSchedule& sched, const RngState& rng);

struct IndirectConfig {
    double success_threshold = 0.5;

    friend bool operator==(const IndirectConfig&, const IndirectConfig&) = default;
};

/// Concept survival under alias prompts: n_prompts indirect prompts,
/// n_trials generations each. Throws NoAlias via make_indirect_prompt.
AttackResult indirect_recovery(const Denoiser& model, std::size_t concept_id,
                               std::size_t n_prompts, std::size_t n_trials,
                               const IndirectConfig& cfg, const Universe& u,
                               const EmbeddingTable& table, const NoiseSchedule& sched,
                               const RngState& rng);

std::string attack_result_json(const AttackResult& r);

/// "kind,parameter,trial,top1,confidence,recovered" rows across results.
void save_attack_csv(const std::filesystem::path& path,
                     const std::vector<AttackResult>& results);

}  // namespace ulab
