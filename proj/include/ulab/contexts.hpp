#pragma once

#include "ulab/diffusion.hpp"

// Context-set construction: templated candidate generation over the
// universe lexicon and the generate-classify-filter verification loop that
// keeps only prompts the teacher reliably renders as their subject.

namespace ulab {

struct ExhaustedTemplates : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Number of distinct prompts the level's template admits (the concept and
/// template tokens are fixed; only lexicon slots vary).
std::size_t template_space_size(const Universe& u, int level);

/// `count` distinct prompts for the concept, sampled without replacement
/// from the level-1..4 template space. Throws BadLevel outside 1..4 and
/// ExhaustedTemplates when the space holds fewer than `count` prompts.
std::vector<PromptSpec> generate_candidates(const Universe& u, std::size_t concept_id,
                                            int level, std::size_t count, RngState& rng);

struct VerifyConfig {
    std::size_t n_seeds = 8;
    double confidence_threshold = 0.8;
    double retain_fraction = 0.75;

    friend bool operator==(const VerifyConfig&, const VerifyConfig&) = default;
};

struct ContextVerification {
    double mean_confidence = 0.0;  // mean Bayes posterior over the seeds
    double pass_fraction = 0.0;    // seeds with posterior >= the threshold

    friend bool operator==(const ContextVerification&, const ContextVerification&) = default;
};

/// Retained prompts in candidate order, each with its verification stats;
/// every retained pass_fraction is >= config.retain_fraction.
struct ContextSet {
    std::size_t concept_id = 0;
    std::vector<PromptSpec> prompts;
    std::vector<ContextVerification> stats;
    std::size_t candidates_seen = 0;
    VerifyConfig config;

    friend bool operator==(const ContextSet&, const ContextSet&) = default;
};

/// Generates n_seeds samples per candidate with per-(candidate, seed) child
/// streams (scheduling-order independent) and retains prompts whose pass
/// fraction clears retain_fraction. Candidates must share one subject.
ContextSet verify_contexts(const std::vector<PromptSpec>& candidates,
                           const Denoiser& teacher, const Universe& u,
                           const EmbeddingTable& table, const NoiseSchedule& sched,
                           const VerifyConfig& cfg, const RngState& rng);

std::string context_set_to_json(const ContextSet& cs);
ContextSet context_set_from_json(const std::string& text);
void save_context_set(const std::filesystem::path& path, const ContextSet& cs);
ContextSet load_context_set(const std::filesystem::path& path);

}  // namespace ulab
