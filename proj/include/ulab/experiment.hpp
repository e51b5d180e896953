#pragma once

#include "ulab/attacks.hpp"
#include "ulab/evalmetrics.hpp"

// Config-driven pipeline: universe -> teacher -> contexts -> erasure ->
// evaluation -> attacks -> ablations -> report, all rooted in one output
// directory. Every artifact embeds the master seed and a digest of the
// config, and every stage is a deterministic function of (config, master
// seed), so reruns are byte-identical.

namespace ulab {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigInvalid : std::runtime_error {
    ConfigInvalid(const std::string& msg, std::vector<std::string> violations_in)
        : std::runtime_error(msg), violations(std::move(violations_in)) {}

    std::vector<std::string> violations;
};

struct EraseSection {
    std::vector<std::size_t> erase = {0};
    std::vector<std::size_t> preserve = {1, 2, 3, 4};
    double alpha = 0.999;
    double preservation_weight = 2.5;
    std::vector<std::string> methods = {"output_keyword", "output_diversified",
                                        "attention_keyword", "attention_diversified"};
    OutputUnlearnConfig output;   // method and seed are set per run
    AttnEditConfig attention;     // method is set per run; alpha comes from the task

    friend bool operator==(const EraseSection&, const EraseSection&) = default;
};

struct ContextSection {
    int level = 1;
    std::size_t count = 20;              // verified contexts per erased concept
    std::size_t candidate_factor = 2;    // candidates generated per retained context
    std::size_t attention_per_preserved = 3;
    VerifyConfig verify;

    friend bool operator==(const ContextSection&, const ContextSection&) = default;
};

struct EvalSection {
    std::vector<int> levels = {1, 2, 3};
    std::size_t prompts_per_cell = 20;
    std::size_t samples_per_prompt = 5;
    std::size_t k = 1;
    std::size_t frechet_samples = 500;

    friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

struct NoiseSection {
    std::vector<double> ratios = {0.0, 0.1, 0.3, 0.5, 0.8, 1.0};
    std::size_t trials = 250;
    NoiseScaling scaling = NoiseScaling::norm_matched;
    bool pre_pool = false;

    friend bool operator==(const NoiseSection&, const NoiseSection&) = default;
};

struct IndirectSection {
    std::size_t prompts = 10;
    std::size_t trials = 30;

    friend bool operator==(const IndirectSection&, const IndirectSection&) = default;
};

struct AttackSection {
    NoiseSection noise;
    AdvSearchConfig adversarial{.restarts = 10, .iters = 20, .samples_per_eval = 6};
    IndirectSection indirect;
    double threshold = 0.5;  // copied into every attack's success_threshold

    friend bool operator==(const AttackSection&, const AttackSection&) = default;
};

struct AblationSection {
    std::vector<double> alpha_grid = {0.999, 0.99, 0.95, 0.9};
    std::vector<std::size_t> counts = {5, 10, 20, 50};
    std::vector<int> levels = {1, 2, 3, 4};
    // The alpha sweep edits with its own attention config; context
    // preservation stays off there so the sweep exposes the contexts the
    // pinning would otherwise hold fixed.
    AttnEditConfig alpha_edit{.preserve_contexts = false};

    friend bool operator==(const AblationSection&, const AblationSection&) = default;
};

struct ExperimentConfig {
    int version = 1;
    std::uint64_t master_seed = 0;
    std::string out_dir = "out";
    UniverseConfig universe{.concept_count = 5};
    EmbeddingConfig embedding;
    ScheduleConfig schedule;
    TrainConfig train;  // seed is derived from the master stream, not the config
    EraseSection erase;
    ContextSection contexts;
    EvalSection eval;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    AttackSection attacks;
    AblationSection ablations;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Strict parse: unknown keys, wrong types, or malformed JSON throw
/// ParseError. Absent keys keep their defaults; the bundled config sets
/// every key explicitly and parses back to ExperimentConfig{}.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON (sorted keys); parse_config(config_json(c)) == c.
std::string config_json(const ExperimentConfig& c);

/// 16 hex digits of fnv1a64 over the canonical JSON with master_seed and
/// out_dir blanked, so the digest names the experimental setup and the
/// seed rides alongside it.
std::string config_digest(const ExperimentConfig& c);

/// Every violated invariant, one message each; empty iff the config is
/// runnable.
std::vector<std::string> validate(const ExperimentConfig& c);

struct RunOptions {
    std::filesystem::path out_dir;
    std::uint64_t master_seed = 0;
    std::size_t workers = 1;
};

/// Flag resolution: ULAB_OUT beats --out beats config.out_dir; --seed
/// beats config.master_seed.
RunOptions resolve_options(const ExperimentConfig& c,
                           const std::optional<std::string>& out_flag,
                           const std::optional<std::uint64_t>& seed_flag,
                           std::size_t workers);

/// Stages: init-universe, train, build-contexts, erase, eval, attack,
/// ablate, report, all. Each writes only its own artifacts under
/// opts.out_dir and reads its inputs from the stages before it
/// (MissingArtifact when one is absent). Throws ConfigInvalid when
/// validate() is nonempty and std::invalid_argument for an unknown stage.
void run_stage(const std::string& stage, const ExperimentConfig& c, const RunOptions& opts);

/// Full command line: subcommands mirror the stages plus "validate";
/// errors print one machine-readable JSON object to stderr and return
/// nonzero. validate prints its report to stdout and returns 0 iff valid.
int run_cli(int argc, const char* const* argv);

}  // namespace ulab
