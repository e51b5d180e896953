#include "ulab/textenc.hpp"

#include <cmath>
#include <limits>

namespace ulab {

namespace {

void require_alpha(double alpha, const char* who) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument(std::string(who) + ": alpha outside [0, 1]");
}

}  // namespace

EmbeddingTable make_embedding_table(const Universe& u, const EmbeddingConfig& config) {
    if (config.text_dim < 1)
        throw std::invalid_argument("make_embedding_table: text_dim < 1");

    EmbeddingTable table;
    table.vocab_size = u.vocab_size;
    table.text_dim = config.text_dim;
    table.weights = Matrix(u.vocab_size, config.text_dim);

    RngState rng(config.seed);
    RngState row_rng = rng.child("rows");
    for (std::size_t t = 1; t < u.vocab_size; ++t) {
        Vector g = row_rng.gauss(config.text_dim);
        const double rms = norm2(g) / std::sqrt(static_cast<double>(config.text_dim));
        if (rms > 0.0)
            for (double& v : g) v /= rms;
        table.weights.set_row(t, g);
    }

    RngState alias_rng = rng.child("alias");
    for (const ConceptSpec& c : u.concepts) {
        for (std::size_t j = 0; j < c.alias_tokens.size(); ++j) {
            const std::size_t src =
                c.concept_tokens[std::min(j, c.concept_tokens.size() - 1)];
            Vector row = table.weights.row_vec(src);
            axpy(config.alias_rms, alias_rng.gauss(config.text_dim), row);
            table.weights.set_row(c.alias_tokens[j], row);
        }
    }
    return table;
}

TokenEmbeddings encode(const EmbeddingTable& table, const PromptSpec& prompt) {
    const std::size_t n = prompt.length();
    TokenEmbeddings te;
    te.vectors = Matrix(n, table.text_dim);
    te.concept_mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const TokenId t = prompt.tokens[i];
        if (t >= table.vocab_size)
            throw TokenOutOfRange("encode: token " + std::to_string(t) + " >= vocab " +
                                  std::to_string(table.vocab_size));
        te.vectors.set_row(i, table.weights.row_vec(t));
    }
    if (prompt.concept_span) {
        const auto [start, len] = *prompt.concept_span;
        for (std::size_t i = start; i < start + len && i < n; ++i) te.concept_mask[i] = 1;
    }
    return te;
}

PooledEmbedding pool(const TokenEmbeddings& te) {
    const std::size_t n = te.length();
    if (n == 0) throw EmptyPrompt("pool: no tokens");
    PooledEmbedding pe;
    pe.vector.assign(te.vectors.cols(), 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(1.0, te.vectors.row_vec(i), pe.vector);
    for (double& v : pe.vector) v /= static_cast<double>(n);
    return pe;
}

PooledEmbedding encode_pooled(const EmbeddingTable& table, const PromptSpec& prompt) {
    return pool(encode(table, prompt));
}

TokenEmbeddings mixup_token(const TokenEmbeddings& te,
                            const std::vector<TokenEmbeddings>& contexts, double alpha) {
    require_alpha(alpha, "mixup_token");
    if (contexts.empty()) throw EmptyContextSet("mixup_token: no contexts");
    if (alpha == 1.0) return te;

    std::vector<std::size_t> span;
    for (std::size_t i = 0; i < te.concept_mask.size(); ++i)
        if (te.concept_mask[i]) span.push_back(i);

    // mean over contexts of the row aligned to each span position
    Matrix ctx_mean(span.size(), te.vectors.cols());
    for (const TokenEmbeddings& ctx : contexts) {
        if (ctx.vectors.cols() != te.vectors.cols())
            throw SpanMismatch("mixup_token: context dim mismatch");
        std::vector<std::size_t> ctx_span;
        for (std::size_t i = 0; i < ctx.concept_mask.size(); ++i)
            if (ctx.concept_mask[i]) ctx_span.push_back(i);
        if (ctx_span.empty())
            throw SpanMismatch("mixup_token: context has no concept span");
        for (std::size_t j = 0; j < span.size(); ++j) {
            const std::size_t src = ctx_span[std::min(j, ctx_span.size() - 1)];
            for (std::size_t d = 0; d < te.vectors.cols(); ++d)
                ctx_mean(j, d) += ctx.vectors(src, d);
        }
    }
    const double inv = 1.0 / static_cast<double>(contexts.size());

    TokenEmbeddings out = te;
    for (std::size_t j = 0; j < span.size(); ++j)
        for (std::size_t d = 0; d < te.vectors.cols(); ++d)
            out.vectors(span[j], d) =
                alpha * te.vectors(span[j], d) + (1.0 - alpha) * ctx_mean(j, d) * inv;
    return out;
}

PooledEmbedding mixup_prompt(const PooledEmbedding& pe_e, const PooledEmbedding& pe_c,
                             double alpha) {
    require_alpha(alpha, "mixup_prompt");
    if (pe_e.vector.size() != pe_c.vector.size())
        throw DimMismatch("mixup_prompt: dim mismatch");
    PooledEmbedding out = pe_e;
    if (alpha == 1.0) return out;
    for (std::size_t d = 0; d < out.vector.size(); ++d)
        out.vector[d] = alpha * pe_e.vector[d] + (1.0 - alpha) * pe_c.vector[d];
    return out;
}

TokenEmbeddings noise_mixup(const TokenEmbeddings& te, double alpha, RngState& rng) {
    require_alpha(alpha, "noise_mixup");
    if (alpha == 1.0) return te;
    TokenEmbeddings out = te;
    for (std::size_t i = 0; i < te.length(); ++i) {
        if (!te.concept_mask[i]) continue;
        for (std::size_t d = 0; d < te.vectors.cols(); ++d)
            out.vectors(i, d) =
                alpha * te.vectors(i, d) + (1.0 - alpha) * rng.next_gauss();
    }
    return out;
}

PooledEmbedding inject_noise(const PooledEmbedding& pe, double noise_ratio,
                             NoiseScaling scaling, RngState& rng) {
    require_alpha(noise_ratio, "inject_noise");
    const std::size_t dim = pe.vector.size();
    Vector n = rng.gauss(dim);
    if (noise_ratio == 0.0) return pe;

    double scale = 1.0;
    if (scaling == NoiseScaling::norm_matched) {
        double msq = 0.0;
        for (double v : pe.vector) msq += v * v;
        scale = std::sqrt(msq / static_cast<double>(dim ? dim : 1));
    }
    PooledEmbedding out = pe;
    for (std::size_t d = 0; d < dim; ++d)
        out.vector[d] = (1.0 - noise_ratio) * pe.vector[d] + noise_ratio * scale * n[d];
    return out;
}

MixupGeometry mixup_geometry(const MixupAnalysisCase& c) {
    require_alpha(c.alpha, "mixup_geometry");
    if (c.dim < 1) throw std::invalid_argument("mixup_geometry: dim < 1");
    MixupGeometry g;
    if (c.alpha == 1.0) {
        g.snr = std::numeric_limits<double>::infinity();
        g.cosine = 1.0;
        return g;
    }
    const double signal = c.alpha * c.alpha * c.norm_x * c.norm_x;
    const double noise =
        (1.0 - c.alpha) * (1.0 - c.alpha) * static_cast<double>(c.dim);
    g.snr = signal / noise;
    g.cosine = c.alpha * c.norm_x / std::sqrt(signal + noise);
    return g;
}

}  // namespace ulab
