#include "ulab/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ulab {

using nlohmann::json;

const ConceptSpec& Universe::concept_at(std::size_t id) const {
    if (id >= concepts.size())
        throw UnknownConcept("concept id " + std::to_string(id) + " out of range");
    return concepts[id];
}

std::size_t PromptSpec::length() const {
    std::size_t n = 0;
    while (n < tokens.size() && tokens[n] != kPadToken) ++n;
    return n;
}

namespace {

constexpr std::size_t kTemplateLen = 2;
constexpr std::size_t kTokensPerConcept = 8;  // 3 concept + 3 anchor + 2 alias slots
constexpr std::size_t kActionCount = 60;
constexpr std::size_t kEntityCount = 40;
constexpr std::size_t kSceneCount = 20;
constexpr std::size_t kMaxPlacementAttempts = 100000;

std::size_t pick(RngState& rng, std::size_t n) { return rng.next_u64() % n; }

TokenId pick_token(RngState& rng, const std::vector<TokenId>& pool) {
    return pool[pick(rng, pool.size())];
}

void pad_prompt(PromptSpec& p) {
    if (p.tokens.size() > kMaxPromptLen)
        throw std::invalid_argument("prompt exceeds max length");
    p.tokens.resize(kMaxPromptLen, kPadToken);
}

}  // namespace

Universe build_universe(const UniverseConfig& config) {
    const std::size_t k = config.concept_count;
    if (k < 2) throw std::invalid_argument("build_universe: need at least 2 concepts");
    if (config.data_dim < 1) throw std::invalid_argument("build_universe: data_dim < 1");

    const std::size_t lexicon_total = kActionCount + kEntityCount + kSceneCount;
    const std::size_t needed = 1 + kTemplateLen + k * kTokensPerConcept + lexicon_total;
    if (config.vocab_size < needed)
        throw std::invalid_argument("build_universe: vocab_size " +
                                    std::to_string(config.vocab_size) + " < required " +
                                    std::to_string(needed));

    Universe u;
    u.data_dim = config.data_dim;
    u.vocab_size = config.vocab_size;
    u.min_separation = config.min_separation;
    for (std::size_t i = 0; i < kTemplateLen; ++i)
        u.template_tokens.push_back(static_cast<TokenId>(1 + i));

    TokenId next = static_cast<TokenId>(1 + kTemplateLen + k * kTokensPerConcept);
    auto take = [&next](std::size_t n) {
        std::vector<TokenId> ids(n);
        for (auto& id : ids) id = next++;
        return ids;
    };
    u.lexicon.actions = take(kActionCount);
    u.lexicon.entities = take(kEntityCount);
    u.lexicon.scenes = take(kSceneCount);

    RngState rng(config.seed);
    RngState centroid_rng = rng.child("centroids");
    const double radius = std::max(10.0, 1.5 * config.min_separation);

    std::vector<Vector> centroids;
    std::size_t attempts = 0;
    while (centroids.size() < k) {
        if (++attempts > kMaxPlacementAttempts)
            throw Infeasible("build_universe: cannot place " + std::to_string(k) +
                             " centroids at separation " +
                             std::to_string(config.min_separation));
        Vector x(config.data_dim);
        for (auto& v : x) v = radius * (2.0 * centroid_rng.next_uniform() - 1.0);
        bool ok = true;
        for (const Vector& c : centroids) {
            Vector d = x;
            axpy(-1.0, c, d);
            if (norm2(d) < config.min_separation) {
                ok = false;
                break;
            }
        }
        if (ok) centroids.push_back(std::move(x));
    }

    for (std::size_t i = 0; i < k; ++i) {
        ConceptSpec c;
        c.id = i;
        c.name = "concept_" + std::to_string(i);
        const TokenId base = static_cast<TokenId>(1 + kTemplateLen + i * kTokensPerConcept);
        for (std::size_t j = 0; j < 1 + i % 3; ++j)
            c.concept_tokens.push_back(base + static_cast<TokenId>(j));
        for (std::size_t j = 0; j < 1 + (i + 1) % 3; ++j)
            c.anchor_tokens.push_back(base + 3 + static_cast<TokenId>(j));
        c.alias_tokens = {base + 6, base + 7};
        c.mean = centroids[i];
        c.cov = Matrix(config.data_dim, config.data_dim);
        for (std::size_t d = 0; d < config.data_dim; ++d)
            c.cov(d, d) = config.sigma * config.sigma;
        c.prior = 1.0 / static_cast<double>(k);
        u.concepts.push_back(std::move(c));
    }
    return u;
}

std::vector<Vector> sample_data(const Universe& u, std::size_t concept_id, std::size_t n,
                                RngState& rng) {
    const ConceptSpec& spec = u.concept_at(concept_id);
    const Matrix a = sqrtm_psd(spec.cov);
    std::vector<Vector> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vector x = matvec(a, rng.gauss(u.data_dim));
        axpy(1.0, spec.mean, x);
        out.push_back(std::move(x));
    }
    return out;
}

std::vector<std::pair<std::size_t, double>> bayes_classify(const Universe& u,
                                                           const Vector& x) {
    const std::size_t k = u.concepts.size();
    std::vector<double> logp(k);
    for (std::size_t i = 0; i < k; ++i) {
        const ConceptSpec& c = u.concepts[i];
        const Matrix l = cholesky_spd(c.cov);
        double logdet = 0.0;
        for (std::size_t d = 0; d < l.rows(); ++d) logdet += 2.0 * std::log(l(d, d));

        // forward-substitute L y = (x - mean); quad form = |y|^2
        Vector y = x;
        axpy(-1.0, c.mean, y);
        double quad = 0.0;
        for (std::size_t r = 0; r < l.rows(); ++r) {
            double s = y[r];
            for (std::size_t j = 0; j < r; ++j) s -= l(r, j) * y[j];
            y[r] = s / l(r, r);
            quad += y[r] * y[r];
        }
        logp[i] = std::log(c.prior) - 0.5 * logdet - 0.5 * quad;
    }

    const double m = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (double& lp : logp) {
        lp = std::exp(lp - m);
        z += lp;
    }
    std::vector<std::pair<std::size_t, double>> ranked(k);
    for (std::size_t i = 0; i < k; ++i) ranked[i] = {i, logp[i] / z};
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return ranked;
}

PromptSpec make_prompt(const Universe& u, std::size_t concept_id, int level, RngState& rng) {
    const ConceptSpec& spec = u.concept_at(concept_id);
    if (level < 0 || level > 4)
        throw BadLevel("make_prompt: level " + std::to_string(level));

    PromptSpec p;
    p.level = level;
    p.subject = concept_id;
    p.tokens = u.template_tokens;
    p.concept_span = {p.tokens.size(), spec.concept_tokens.size()};
    p.tokens.insert(p.tokens.end(), spec.concept_tokens.begin(),
                    spec.concept_tokens.end());

    std::vector<TokenId> mixed = u.lexicon.entities;
    mixed.insert(mixed.end(), u.lexicon.scenes.begin(), u.lexicon.scenes.end());

    switch (level) {
        case 0:
            break;
        case 1:
            p.tokens.push_back(pick_token(rng, u.lexicon.actions));
            break;
        case 2:
            p.tokens.push_back(pick_token(rng, u.lexicon.entities));
            break;
        case 3: {
            const TokenId first = pick_token(rng, mixed);
            TokenId second = first;
            while (second == first) second = pick_token(rng, mixed);
            p.tokens.push_back(first);
            p.tokens.push_back(second);
            break;
        }
        case 4: {
            p.tokens.push_back(pick_token(rng, u.lexicon.actions));
            const TokenId first = pick_token(rng, u.lexicon.entities);
            TokenId second = first;
            while (second == first) second = pick_token(rng, u.lexicon.entities);
            p.tokens.push_back(first);
            p.tokens.push_back(second);
            p.tokens.push_back(pick_token(rng, u.lexicon.scenes));
            break;
        }
    }
    pad_prompt(p);
    return p;
}

PromptSpec make_indirect_prompt(const Universe& u, std::size_t concept_id, RngState& rng) {
    const ConceptSpec& spec = u.concept_at(concept_id);
    if (spec.alias_tokens.empty())
        throw NoAlias("make_indirect_prompt: concept " + std::to_string(concept_id) +
                      " has no aliases");

    PromptSpec p;
    p.level = 1;
    p.subject = concept_id;
    p.tokens = u.template_tokens;
    p.tokens.insert(p.tokens.end(), spec.alias_tokens.begin(), spec.alias_tokens.end());
    p.tokens.push_back(pick_token(rng, u.lexicon.actions));
    pad_prompt(p);
    return p;
}

namespace {

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    const std::size_t rows = j.size();
    const std::size_t cols = rows ? j.at(0).size() : 0;
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    return m;
}

}  // namespace

std::string universe_to_json(const Universe& u) {
    json j;
    j["data_dim"] = u.data_dim;
    j["vocab_size"] = u.vocab_size;
    j["min_separation"] = u.min_separation;
    j["template_tokens"] = u.template_tokens;
    j["lexicon"] = {{"actions", u.lexicon.actions},
                    {"entities", u.lexicon.entities},
                    {"scenes", u.lexicon.scenes}};
    json concepts = json::array();
    for (const ConceptSpec& c : u.concepts) {
        json jc;
        jc["id"] = c.id;
        jc["name"] = c.name;
        jc["concept_tokens"] = c.concept_tokens;
        jc["anchor_tokens"] = c.anchor_tokens;
        jc["alias_tokens"] = c.alias_tokens;
        jc["mean"] = c.mean;
        jc["cov"] = matrix_to_json(c.cov);
        jc["prior"] = c.prior;
        concepts.push_back(std::move(jc));
    }
    j["concepts"] = std::move(concepts);
    return j.dump(2);
}

Universe universe_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("universe_from_json: ") + e.what());
    }
    try {
        Universe u;
        u.data_dim = j.at("data_dim").get<std::size_t>();
        u.vocab_size = j.at("vocab_size").get<std::size_t>();
        u.min_separation = j.at("min_separation").get<double>();
        u.template_tokens = j.at("template_tokens").get<std::vector<TokenId>>();
        u.lexicon.actions = j.at("lexicon").at("actions").get<std::vector<TokenId>>();
        u.lexicon.entities = j.at("lexicon").at("entities").get<std::vector<TokenId>>();
        u.lexicon.scenes = j.at("lexicon").at("scenes").get<std::vector<TokenId>>();
        for (const json& jc : j.at("concepts")) {
            ConceptSpec c;
            c.id = jc.at("id").get<std::size_t>();
            c.name = jc.at("name").get<std::string>();
            c.concept_tokens = jc.at("concept_tokens").get<std::vector<TokenId>>();
            c.anchor_tokens = jc.at("anchor_tokens").get<std::vector<TokenId>>();
            c.alias_tokens = jc.at("alias_tokens").get<std::vector<TokenId>>();
            c.mean = jc.at("mean").get<Vector>();
            c.cov = matrix_from_json(jc.at("cov"));
            c.prior = jc.at("prior").get<double>();
            u.concepts.push_back(std::move(c));
        }
        return u;
    } catch (const json::exception& e) {
        throw IoError(std::string("universe_from_json: ") + e.what());
    }
}

void save_universe(const std::filesystem::path& path, const Universe& u) {
    std::ofstream os(path);
    if (!os) throw IoError("save_universe: cannot open " + path.string());
    os << universe_to_json(u) << "\n";
    if (!os) throw IoError("save_universe: write failed for " + path.string());
}

Universe load_universe(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_universe: cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return universe_from_json(ss.str());
}

}  // namespace ulab
