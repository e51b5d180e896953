#pragma once

#include "ulab/world.hpp"

// Text encoder tau: a frozen embedding table over the universe vocabulary,
// mean pooling, and the embedding-space manipulations (token-wise mixup,
// prompt-level mixup, noise mixup, and the noise-injection probe).

namespace ulab {

struct TokenOutOfRange : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyPrompt : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyContextSet : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SpanMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmbeddingTable {
    std::size_t vocab_size = 0;
    std::size_t text_dim = 8;
    Matrix weights;  // vocab_size x text_dim, PAD row all zeros

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

struct EmbeddingConfig {
    std::size_t text_dim = 8;
    double alias_rms = 0.1;  // rms of the alias-row perturbation
    std::uint64_t seed = 0;

    friend bool operator==(const EmbeddingConfig&, const EmbeddingConfig&) = default;
};

/// Rows are unit-RMS Gaussian directions; each alias row copies its concept
/// token row plus an N(0, alias_rms^2) perturbation per entry.
EmbeddingTable make_embedding_table(const Universe& u, const EmbeddingConfig& config);

struct TokenEmbeddings {
    Matrix vectors;                   // length x text_dim
    std::vector<char> concept_mask;  // nonzero where the token carries the concept

    std::size_t length() const { return vectors.rows(); }

    friend bool operator==(const TokenEmbeddings&, const TokenEmbeddings&) = default;
};

struct PooledEmbedding {
    Vector vector;

    friend bool operator==(const PooledEmbedding&, const PooledEmbedding&) = default;
};

TokenEmbeddings encode(const EmbeddingTable& table, const PromptSpec& prompt);

/// Arithmetic mean over the rows.
PooledEmbedding pool(const TokenEmbeddings& te);

PooledEmbedding encode_pooled(const EmbeddingTable& table, const PromptSpec& prompt);

/// Token-wise mixup: rows outside the concept mask are untouched; masked row
/// i becomes alpha * row_i + (1 - alpha) * mean over contexts of that
/// context's aligned concept row. Context rows align to the span by
/// truncating or repeating their last row. alpha = 1 is the exact identity.
TokenEmbeddings mixup_token(const TokenEmbeddings& te,
                            const std::vector<TokenEmbeddings>& contexts, double alpha);

/// Whole-prompt convex combination (the ablation baseline).
PooledEmbedding mixup_prompt(const PooledEmbedding& pe_e, const PooledEmbedding& pe_c,
                             double alpha);

/// Masked rows mix with a fresh standard-normal vector: alpha * row + (1 -
/// alpha) * n. alpha = 1 is the exact identity and consumes no draws.
TokenEmbeddings noise_mixup(const TokenEmbeddings& te, double alpha, RngState& rng);

enum class NoiseScaling { unit, norm_matched };

/// Continuity probe: (1 - noise_ratio) * pe + noise_ratio * n. norm_matched
/// scales n by the rms entry of pe. Always consumes dim draws, so paired
/// runs across ratios can share a stream.
PooledEmbedding inject_noise(const PooledEmbedding& pe, double noise_ratio,
                             NoiseScaling scaling, RngState& rng);

struct MixupAnalysisCase {
    double alpha = 0.0;
    double norm_x = 0.0;
    std::size_t dim = 1;
};

struct MixupGeometry {
    double snr = 0.0;  // +inf at alpha = 1
    double cosine = 0.0;
};

/// Closed-form SNR and cosine alignment of y = alpha * x + (1 - alpha) * z
/// against x, for z standard normal in dim entries.
MixupGeometry mixup_geometry(const MixupAnalysisCase& c);

}  // namespace ulab
