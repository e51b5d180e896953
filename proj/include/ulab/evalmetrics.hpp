#pragma once

#include "ulab/contexts.hpp"
#include "ulab/unlearn.hpp"

// Erasure/preservation success rates, a closed-form Frechet distance on
// fitted Gaussians (the lab's FID analog), and the ablation sweeps
// (mixup weight, context count, context level) behind the report stage.

namespace ulab {

struct BadK : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TooFewSamples : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvalSpec {
    std::vector<std::size_t> erased;
    std::vector<std::size_t> preserved;
    std::vector<int> levels = {1, 2, 3};
    std::size_t prompts_per_cell = 20;
    std::size_t samples_per_prompt = 5;
    std::size_t k = 1;

    friend bool operator==(const EvalSpec&, const EvalSpec&) = default;
};

/// One generation: the prompt cell it came from and the top-k concepts the
/// recognizer saw. hit means the prompted concept appears in the top k.
struct GenRecord {
    bool erased_role = false;
    std::size_t concept_id = 0;
    int level = 0;
    std::size_t prompt_index = 0;
    std::size_t sample_index = 0;
    std::vector<std::size_t> topk;
    bool hit = false;

    friend bool operator==(const GenRecord&, const GenRecord&) = default;
};

struct LevelRates {
    int level = 0;
    double esr = 0.0;
    double psr = 0.0;
    std::size_t erased_count = 0;
    std::size_t preserved_count = 0;

    friend bool operator==(const LevelRates&, const LevelRates&) = default;
};

struct EsrPsrResult {
    std::size_t k = 1;
    std::vector<LevelRates> levels;  // ascending level order
    double esr_overall = 0.0;        // pooled over every erased-role record
    double psr_overall = 0.0;
    std::vector<GenRecord> records;

    friend bool operator==(const EsrPsrResult&, const EsrPsrResult&) = default;
};

/// Recount core: recomputes every hit flag from the stored top-k lists
/// (truncated to k) and rebuilds the rate tables from the records alone.
/// Rates over an empty cell set are 0.
EsrPsrResult tabulate_records(std::vector<GenRecord> records, std::size_t k);

/// ESR-k = fraction of erased-prompt generations whose top-k excludes the
/// prompted concept; PSR-k = fraction of preserved-prompt generations whose
/// top-k contains it. One cell per (role, concept, level); cell i draws
/// from rng.child(i), prompt p from child(p), sample s from child(s), so
/// two models evaluated with the same rng see identical prompts and
/// latents. Worker count never changes the result.
EsrPsrResult esr_psr(const Denoiser& model, const Universe& u, const EmbeddingTable& table,
                     const NoiseSchedule& sched, const EvalSpec& spec, const RngState& rng,
                     std::size_t workers = 1);

/// "role,concept,level,prompt,sample,topk,hit" rows; topk is |-joined.
void save_gen_records_csv(const std::filesystem::path& path,
                          const std::vector<GenRecord>& records);
std::vector<GenRecord> load_gen_records_csv(const std::filesystem::path& path);

struct GaussianStats {
    Vector mean;
    Matrix cov;

    friend bool operator==(const GaussianStats&, const GaussianStats&) = default;
};

/// Sample mean and Bessel-corrected covariance. Throws TooFewSamples when
/// fewer than dim + 1 points are given.
GaussianStats fit_gaussian(const std::vector<Vector>& samples);

/// |mu_a - mu_b|^2 + tr(cov_a + cov_b - 2 (sqrt(cov_a) cov_b sqrt(cov_a))^{1/2}).
double frechet_stats(const GaussianStats& a, const GaussianStats& b);
double frechet(const std::vector<Vector>& a, const std::vector<Vector>& b);

/// Frechet distance per concept between sample sets of the two models,
/// both conditioned on the bare level-0 prompt (samples_per_concept each).
std::vector<double> frechet_by_concept(const Denoiser& edited, const Denoiser& reference,
                                       const Universe& u, const EmbeddingTable& table,
                                       const NoiseSchedule& sched,
                                       std::size_t samples_per_concept, const RngState& rng);

/// Middle order statistic; mean of the two middle values for even sizes.
double median(Vector values);

struct AblationRow {
    double parameter = 0.0;
    std::vector<double> esr_by_seed;
    std::vector<double> psr_by_seed;
    double esr_median = 0.0;
    double psr_median = 0.0;

    friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct AblationCurve {
    std::string kind;
    std::vector<std::uint64_t> seeds;
    std::vector<AblationRow> rows;
    std::optional<AblationRow> baseline;   // level sweep: keyword engine reference
    std::optional<double> best_parameter;  // level sweep: best erase/preserve trade-off

    friend bool operator==(const AblationCurve&, const AblationCurve&) = default;
};

struct AblationConfig {
    OutputUnlearnConfig output;  // engine for the count and level sweeps
    AttnEditConfig attention;    // engine for the alpha sweep
    EvalSpec eval;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

    friend bool operator==(const AblationConfig&, const AblationConfig&) = default;
};

/// Re-solves the diversified attention edit once per alpha and evaluates it
/// under per-seed streams rng.child(seed); the same eval streams are reused
/// across grid points, so rows are paired. Each row is a pure function of
/// (task, alpha, seeds, rng) and never depends on the rest of the grid.
AblationCurve ablate_alpha(const Denoiser& teacher, const EraseTask& task,
                           const std::vector<double>& alpha_grid, const AblationConfig& cfg,
                           const Universe& u, const EmbeddingTable& table,
                           const NoiseSchedule& sched, const RngState& rng);

/// Diversified output-based erasure with |C| freshly drawn Level-1 contexts
/// of the single erased concept per count (context stream
/// rng.child("ctx").child(count)); cfg.output.seed is replaced by each
/// harness seed. Throws ExhaustedTemplates when a count exceeds the
/// template space.
AblationCurve ablate_prompt_count(const Denoiser& teacher, const EraseTask& task_template,
                                  const std::vector<std::size_t>& counts,
                                  const AblationConfig& cfg, const Universe& u,
                                  const EmbeddingTable& table, const NoiseSchedule& sched,
                                  const RngState& rng);

/// Like the count sweep but varies context complexity at 20 contexts per
/// level (1-4), plus a context-free keyword baseline row evaluated under
/// the same streams. best_parameter flags the level maximizing
/// esr_median + psr_median (ties to the lower level).
AblationCurve ablate_level(const Denoiser& teacher, const EraseTask& task_template,
                           const std::vector<int>& levels, const AblationConfig& cfg,
                           const Universe& u, const EmbeddingTable& table,
                           const NoiseSchedule& sched, const RngState& rng);

/// Long format: "kind,parameter,seed,esr,psr" with one row per seed and a
/// median row per parameter; baseline rows carry kind "<kind>_baseline".
/// A nonempty comment becomes a leading "# ..." line.
void save_ablation_csv(const std::filesystem::path& path, const AblationCurve& curve,
                       const std::string& comment = "");

std::string ablation_curve_json(const AblationCurve& curve);
/// Throws IoError on malformed input.
AblationCurve ablation_curve_from_json(const std::string& text);

struct MethodMetrics {
    std::string method;
    std::vector<LevelRates> levels;
    double esr_overall = 0.0;
    double psr_overall = 0.0;
    std::vector<double> frechet_by_concept;
    std::map<std::string, double> attack_asr;

    friend bool operator==(const MethodMetrics&, const MethodMetrics&) = default;
};

struct MetricsReport {
    std::uint64_t master_seed = 0;
    std::string config_digest;
    std::vector<std::uint64_t> seeds;
    std::vector<MethodMetrics> methods;
    std::optional<AblationCurve> alpha_curve;
    std::optional<AblationCurve> prompt_count_curve;
    std::optional<AblationCurve> level_curve;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

std::string metrics_report_json(const MetricsReport& r);
void save_metrics_report(const std::filesystem::path& path, const MetricsReport& r);

}  // namespace ulab
