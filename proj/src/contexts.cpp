#include "ulab/contexts.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

using nlohmann::json;

namespace ulab {

namespace {

json prompt_to_json(const PromptSpec& p) {
    json j;
    j["tokens"] = std::vector<TokenId>(p.tokens.begin(), p.tokens.begin() + p.length());
    j["level"] = p.level;
    if (p.concept_span)
        j["span"] = {p.concept_span->first, p.concept_span->second};
    else
        j["span"] = nullptr;
    if (p.subject)
        j["subject"] = *p.subject;
    else
        j["subject"] = nullptr;
    return j;
}

PromptSpec prompt_from_json(const json& j) {
    PromptSpec p;
    p.tokens = j.at("tokens").get<std::vector<TokenId>>();
    if (p.tokens.size() > kMaxPromptLen)
        throw IoError("context set: prompt longer than the padded length");
    p.tokens.resize(kMaxPromptLen, kPadToken);
    p.level = j.at("level").get<int>();
    if (!j.at("span").is_null()) {
        const auto s = j.at("span");
        p.concept_span = {{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()}};
    }
    if (!j.at("subject").is_null()) p.subject = j.at("subject").get<std::size_t>();
    return p;
}

}  // namespace

std::size_t template_space_size(const Universe& u, int level) {
    const std::size_t na = u.lexicon.actions.size();
    const std::size_t ne = u.lexicon.entities.size();
    const std::size_t ns = u.lexicon.scenes.size();
    switch (level) {
        case 1:
            return na;
        case 2:
            return ne;
        case 3:
            return (ne + ns) * (ne + ns - 1);
        case 4:
            return na * ne * (ne - 1) * ns;
        default:
            throw BadLevel("template_space_size: level " + std::to_string(level));
    }
}

std::vector<PromptSpec> generate_candidates(const Universe& u, std::size_t concept_id,
                                            int level, std::size_t count,
                                            RngState& rng) {
    if (count < 1) throw std::invalid_argument("generate_candidates: count < 1");
    const std::size_t space = template_space_size(u, level);  // validates the level
    if (count > space)
        throw ExhaustedTemplates("generate_candidates: level " + std::to_string(level) +
                                 " offers " + std::to_string(space) + " prompts, " +
                                 std::to_string(count) + " requested");

    std::vector<PromptSpec> out;
    std::set<std::vector<TokenId>> seen;
    // Rejection sampling; the expected draw count is space * H(space) even
    // when the whole space is requested, far below the safety cap.
    for (std::size_t attempt = 0; out.size() < count; ++attempt) {
        if (attempt > 200 * space + 10000)
            throw std::logic_error("generate_candidates: sampling stalled");
        PromptSpec p = make_prompt(u, concept_id, level, rng);
        if (seen.insert(p.tokens).second) out.push_back(std::move(p));
    }
    return out;
}

ContextSet verify_contexts(const std::vector<PromptSpec>& candidates,
                           const Denoiser& teacher, const Universe& u,
                           const EmbeddingTable& table, const NoiseSchedule& sched,
                           const VerifyConfig& cfg, const RngState& rng) {
    if (cfg.n_seeds < 1) throw std::invalid_argument("verify_contexts: n_seeds < 1");

    ContextSet cs;
    cs.config = cfg;
    cs.candidates_seen = candidates.size();
    if (candidates.empty()) return cs;

    if (!candidates.front().subject)
        throw std::invalid_argument("verify_contexts: candidate without a subject");
    cs.concept_id = *candidates.front().subject;
    for (const PromptSpec& p : candidates)
        if (p.subject != candidates.front().subject)
            throw std::invalid_argument("verify_contexts: mixed candidate subjects");

    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const PooledEmbedding cond = encode_pooled(table, candidates[i]);
        const RngState prompt_stream = rng.child(i);
        double conf_sum = 0.0;
        std::size_t passes = 0;
        for (std::size_t s = 0; s < cfg.n_seeds; ++s) {
            RngState seed_stream = prompt_stream.child(s);
            const Vector x = sample(teacher, cond, sched, seed_stream).x;
            double posterior = 0.0;
            for (const auto& [cid, post] : bayes_classify(u, x))
                if (cid == cs.concept_id) {
                    posterior = post;
                    break;
                }
            conf_sum += posterior;
            passes += posterior >= cfg.confidence_threshold;
        }
        ContextVerification v;
        v.mean_confidence = conf_sum / static_cast<double>(cfg.n_seeds);
        v.pass_fraction = static_cast<double>(passes) / static_cast<double>(cfg.n_seeds);
        if (v.pass_fraction >= cfg.retain_fraction) {
            cs.prompts.push_back(candidates[i]);
            cs.stats.push_back(v);
        }
    }
    return cs;
}

std::string context_set_to_json(const ContextSet& cs) {
    json j;
    j["concept"] = cs.concept_id;
    j["candidates_seen"] = cs.candidates_seen;
    j["n_seeds"] = cs.config.n_seeds;
    j["confidence_threshold"] = cs.config.confidence_threshold;
    j["retain_fraction"] = cs.config.retain_fraction;
    j["prompts"] = json::array();
    for (std::size_t i = 0; i < cs.prompts.size(); ++i) {
        json p = prompt_to_json(cs.prompts[i]);
        p["mean_confidence"] = cs.stats[i].mean_confidence;
        p["pass_fraction"] = cs.stats[i].pass_fraction;
        j["prompts"].push_back(std::move(p));
    }
    return j.dump(2);
}

ContextSet context_set_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError(std::string("context set: ") + e.what());
    }
    ContextSet cs;
    try {
        cs.concept_id = j.at("concept").get<std::size_t>();
        cs.candidates_seen = j.at("candidates_seen").get<std::size_t>();
        cs.config.n_seeds = j.at("n_seeds").get<std::size_t>();
        cs.config.confidence_threshold = j.at("confidence_threshold").get<double>();
        cs.config.retain_fraction = j.at("retain_fraction").get<double>();
        for (const json& pj : j.at("prompts")) {
            cs.prompts.push_back(prompt_from_json(pj));
            ContextVerification v;
            v.mean_confidence = pj.at("mean_confidence").get<double>();
            v.pass_fraction = pj.at("pass_fraction").get<double>();
            cs.stats.push_back(v);
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("context set: ") + e.what());
    }
    return cs;
}

void save_context_set(const std::filesystem::path& path, const ContextSet& cs) {
    std::ofstream os(path);
    if (!os) throw IoError("save_context_set: cannot open " + path.string());
    os << context_set_to_json(cs) << '\n';
    if (!os) throw IoError("save_context_set: write failed for " + path.string());
}

ContextSet load_context_set(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_context_set: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    return context_set_from_json(text);
}

}  // namespace ulab
