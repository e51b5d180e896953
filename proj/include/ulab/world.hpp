#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ulab/numerics.hpp"

// The synthetic concept universe: Gaussian-mixture concepts with token
// identities, a small context lexicon, prompt construction at complexity
// levels 0-4, and the Bayes-optimal recognizer used by every metric.

namespace ulab {

using TokenId = std::uint32_t;

inline constexpr TokenId kPadToken = 0;
inline constexpr std::size_t kMaxPromptLen = 16;

struct Infeasible : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownConcept : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadLevel : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoAlias : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConceptSpec {
    std::size_t id = 0;
    std::string name;
    std::vector<TokenId> concept_tokens;  // 1-3 tokens naming the concept
    std::vector<TokenId> anchor_tokens;   // generic replacement target
    std::vector<TokenId> alias_tokens;    // indirect-recovery surrogates
    Vector mean;
    Matrix cov;
    double prior = 0.0;

    friend bool operator==(const ConceptSpec&, const ConceptSpec&) = default;
};

struct Lexicon {
    std::vector<TokenId> actions;
    std::vector<TokenId> entities;
    std::vector<TokenId> scenes;

    friend bool operator==(const Lexicon&, const Lexicon&) = default;
};

struct Universe {
    std::size_t data_dim = 2;
    std::size_t vocab_size = 0;
    double min_separation = 0.0;
    std::vector<TokenId> template_tokens;  // fixed prompt prefix
    Lexicon lexicon;
    std::vector<ConceptSpec> concepts;

    const ConceptSpec& concept_at(std::size_t id) const;

    friend bool operator==(const Universe&, const Universe&) = default;
};

/// Prompt as a fixed-length padded token sequence. concept_span = (start,
/// length) marks the tokens carrying the subject concept, when present.
struct PromptSpec {
    std::vector<TokenId> tokens;
    std::optional<std::pair<std::size_t, std::size_t>> concept_span;
    int level = 0;
    std::optional<std::size_t> subject;

    /// Leading non-PAD prefix length.
    std::size_t length() const;

    friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct UniverseConfig {
    std::size_t concept_count = 8;
    std::size_t data_dim = 2;
    std::size_t vocab_size = 256;
    double min_separation = 6.0;
    double sigma = 1.0;  // isotropic stddev of every concept
    std::uint64_t seed = 0;

    friend bool operator==(const UniverseConfig&, const UniverseConfig&) = default;
};

/// Centroids are rejection-sampled inside a fixed box (side 2 * max(10,
/// 1.5 * min_separation), independent of concept_count) until all pairs are
/// min_separation apart; throws Infeasible after 1e5 attempts.
Universe build_universe(const UniverseConfig& config);

std::vector<Vector> sample_data(const Universe& u, std::size_t concept_id, std::size_t n,
                                RngState& rng);

/// Posterior over concepts for one point, sorted by descending posterior,
/// ties broken by lower concept id.
std::vector<std::pair<std::size_t, double>> bayes_classify(const Universe& u,
                                                           const Vector& x);

PromptSpec make_prompt(const Universe& u, std::size_t concept_id, int level, RngState& rng);

/// Alias-token prompt that avoids every concept token of the subject.
PromptSpec make_indirect_prompt(const Universe& u, std::size_t concept_id, RngState& rng);

std::string universe_to_json(const Universe& u);
Universe universe_from_json(const std::string& text);
void save_universe(const std::filesystem::path& path, const Universe& u);
Universe load_universe(const std::filesystem::path& path);

}  // namespace ulab
