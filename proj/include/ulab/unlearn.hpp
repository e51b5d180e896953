#pragma once

#include <map>
#include <optional>

#include "ulab/diffusion.hpp"

// Erasure engines. The output-based path fine-tunes the student against a
// frozen teacher; the attention-based path re-solves the conditioning
// projection in closed form. Both come in a keyword flavor (the bare
// concept prompt) and a diversified flavor (contextualized prompts for the
// output path, token-wise embedding mixup for the attention path).

namespace ulab {

struct EmptyContexts : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularSystem : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidTask : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EraseTask {
    std::vector<std::size_t> erase_set;
    std::vector<std::size_t> preserve_set;
    std::map<std::size_t, std::vector<TokenId>> anchors;  // per erased concept
    std::vector<PromptSpec> contexts;
    double alpha = 0.999;              // mixup weight
    double preservation_weight = 1.0;  // weight on the L2 term

    friend bool operator==(const EraseTask&, const EraseTask&) = default;
};

/// Task skeleton with anchors copied from the universe and no contexts.
EraseTask make_task(const Universe& u, std::vector<std::size_t> erase,
                    std::vector<std::size_t> preserve);

/// Throws InvalidTask: empty erase set, unknown ids, E and P overlapping,
/// a missing anchor, alpha outside [0,1], or a negative preservation
/// weight.
void validate_task(const Universe& u, const EraseTask& task);

/// Prompt with its concept span swapped for `replacement`; the span then
/// covers the new tokens. Throws InvalidTask when the prompt has no span.
PromptSpec replace_concept_tokens(const PromptSpec& prompt,
                                  const std::vector<TokenId>& replacement);

struct UnlearnReport {
    std::vector<double> l1;     // per step (output-based)
    std::vector<double> l2;
    std::vector<double> total;  // l1 + preservation_weight * l2
    Vector pair_residuals;      // per pair |w'u - v| (attention-based)
    double param_delta = 0.0;   // Frobenius norm of the parameter change
    std::string config_echo;    // JSON of the engine config and task digest
};

/// "step,l1,l2,total" rows; attention reports produce only the header.
void save_unlearn_csv(const std::filesystem::path& path, const UnlearnReport& r);
std::string unlearn_report_json(const UnlearnReport& r);

enum class OutputMethod { keyword, diversified };
enum class LatentStrategy { data_noised, teacher_sampled };

struct OutputUnlearnConfig {
    OutputMethod method = OutputMethod::keyword;
    std::size_t steps = 3300;
    // The combined erase + weighted preservation gradient is what the
    // stability bound sees, so the erase lr sits below the training lr.
    double lr = 6e-4;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    LatentStrategy latent_strategy = LatentStrategy::data_noised;
    bool average_contexts = false;  // all of C per step instead of one draw

    friend bool operator==(const OutputUnlearnConfig&, const OutputUnlearnConfig&) = default;
};

struct EraseResult {
    Denoiser model;
    UnlearnReport report;
};

/// SGD on L1 + preservation_weight * L2. Keyword mode pairs the bare
/// level-0 erased prompt with its anchor prompt; diversified mode draws a
/// context of the erased concept each step and pairs it with the same
/// context under the anchor tokens. L2 matches the student to the teacher
/// on preserved prompts drawn from the level-0/1 training mix. The step
/// stream is rng.child(cfg.seed); the caller's stream is never consumed.
EraseResult erase_output_based(const Denoiser& student, const Denoiser& teacher,
                               const EraseTask& task, const OutputUnlearnConfig& cfg,
                               const Universe& u, const EmbeddingTable& table,
                               const NoiseSchedule& sched, const RngState& rng);

enum class AttnMethod { keyword, diversified, noise_mixup };
enum class TargetOutput { anchor, as_printed };

struct AttnEditConfig {
    AttnMethod method = AttnMethod::keyword;
    std::optional<double> alpha;         // defaults to the task's alpha
    std::optional<double> ridge_lambda;  // defaults to 1e-3 * trace(G) / dim
    TargetOutput target_output = TargetOutput::anchor;
    bool preserve_contexts = true;  // add (u, w u) pairs for every context

    friend bool operator==(const AttnEditConfig&, const AttnEditConfig&) = default;
};

struct AttnPair {
    Vector input;   // text_dim
    Vector target;  // cond_dim
};

/// Erasure pair per erased concept (input depends on cfg.method), one
/// preservation pair per preserved concept, and one per context when
/// preserve_contexts is set. Only the noise_mixup method consumes rng.
std::vector<AttnPair> build_attn_pairs(const CondProjection& w, const EraseTask& task,
                                       const AttnEditConfig& cfg, const EmbeddingTable& table,
                                       const Universe& u, RngState& rng);

struct AttnEditResult {
    CondProjection w;
    UnlearnReport report;
};

/// Closed-form minimizer of sum |w'u - v|^2 + lambda |w' - w|_F^2, i.e.
/// w' = (sum v u^T + lambda w)(sum u u^T + lambda I)^{-1}. A missing
/// lambda becomes 1e-3 * trace(G) / dim; lambda = 0 requires a
/// well-conditioned Gram matrix (estimate <= 1e12), else SingularSystem.
AttnEditResult erase_attention_based(const CondProjection& w,
                                     const std::vector<AttnPair>& pairs,
                                     std::optional<double> lambda = std::nullopt);

/// Dispatch wrappers. The attention overload replaces only cond_proj.
EraseResult erase_concepts(const Denoiser& model, const EraseTask& task,
                           const OutputUnlearnConfig& cfg, const Universe& u,
                           const EmbeddingTable& table, const NoiseSchedule& sched,
                           const RngState& rng);
EraseResult erase_concepts(const Denoiser& model, const EraseTask& task,
                           const AttnEditConfig& cfg, const EmbeddingTable& table,
                           const Universe& u, RngState& rng);

}  // namespace ulab
