#include "ulab/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

namespace ulab {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// strict JSON field access

[[noreturn]] void parse_fail(const std::string& msg) { throw ParseError(msg); }

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) parse_fail(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* key : allowed)
            if (it.key() == key) {
                known = true;
                break;
            }
        if (!known) parse_fail(where + ": unknown key \"" + it.key() + "\"");
    }
}

std::uint64_t as_u64(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    parse_fail(where + ": expected a nonnegative integer");
}

void read_u64(const json& obj, const std::string& where, const char* key,
              std::uint64_t& out) {
    if (auto it = obj.find(key); it != obj.end()) out = as_u64(*it, where + "." + key);
}

void read_size(const json& obj, const std::string& where, const char* key,
               std::size_t& out) {
    if (auto it = obj.find(key); it != obj.end())
        out = static_cast<std::size_t>(as_u64(*it, where + "." + key));
}

void read_int(const json& obj, const std::string& where, const char* key, int& out) {
    if (auto it = obj.find(key); it != obj.end()) {
        if (!it->is_number_integer() && !it->is_number_unsigned())
            parse_fail(where + "." + key + ": expected an integer");
        out = it->get<int>();
    }
}

void read_double(const json& obj, const std::string& where, const char* key, double& out) {
    if (auto it = obj.find(key); it != obj.end()) {
        if (!it->is_number()) parse_fail(where + "." + key + ": expected a number");
        out = it->get<double>();
    }
}

void read_bool(const json& obj, const std::string& where, const char* key, bool& out) {
    if (auto it = obj.find(key); it != obj.end()) {
        if (!it->is_boolean()) parse_fail(where + "." + key + ": expected a boolean");
        out = it->get<bool>();
    }
}

void read_string(const json& obj, const std::string& where, const char* key,
                 std::string& out) {
    if (auto it = obj.find(key); it != obj.end()) {
        if (!it->is_string()) parse_fail(where + "." + key + ": expected a string");
        out = it->get<std::string>();
    }
}

template <typename T, typename Elem>
void read_vec(const json& obj, const std::string& where, const char* key,
              std::vector<T>& out, Elem elem) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (!it->is_array()) parse_fail(where + "." + key + ": expected an array");
    out.clear();
    for (const json& v : *it) out.push_back(elem(v, where + "." + key));
}

void read_vec_double(const json& obj, const std::string& where, const char* key,
                     std::vector<double>& out) {
    read_vec(obj, where, key, out, [](const json& v, const std::string& w) {
        if (!v.is_number()) parse_fail(w + ": expected numbers");
        return v.get<double>();
    });
}

void read_vec_size(const json& obj, const std::string& where, const char* key,
                   std::vector<std::size_t>& out) {
    read_vec(obj, where, key, out, [](const json& v, const std::string& w) {
        return static_cast<std::size_t>(as_u64(v, w));
    });
}

void read_vec_u64(const json& obj, const std::string& where, const char* key,
                  std::vector<std::uint64_t>& out) {
    read_vec(obj, where, key, out,
             [](const json& v, const std::string& w) { return as_u64(v, w); });
}

void read_vec_int(const json& obj, const std::string& where, const char* key,
                  std::vector<int>& out) {
    read_vec(obj, where, key, out, [](const json& v, const std::string& w) {
        if (!v.is_number_integer() && !v.is_number_unsigned())
            parse_fail(w + ": expected integers");
        return v.get<int>();
    });
}

void read_vec_string(const json& obj, const std::string& where, const char* key,
                     std::vector<std::string>& out) {
    read_vec(obj, where, key, out, [](const json& v, const std::string& w) {
        if (!v.is_string()) parse_fail(w + ": expected strings");
        return v.get<std::string>();
    });
}

// ---------------------------------------------------------------------------
// enum names

template <typename E>
E enum_from(const std::string& name, const std::string& where,
            std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [key, value] : table)
        if (name == key) return value;
    parse_fail(where + ": unknown value \"" + name + "\"");
}

const char* latent_name(LatentStrategy s) {
    return s == LatentStrategy::data_noised ? "data_noised" : "teacher_sampled";
}

const char* scaling_name(NoiseScaling s) {
    return s == NoiseScaling::unit ? "unit" : "norm_matched";
}

const char* target_name(TargetOutput t) {
    return t == TargetOutput::anchor ? "anchor" : "as_printed";
}

// ---------------------------------------------------------------------------
// section parse / emit

void parse_attn_edit(const json& j, const std::string& where, AttnEditConfig& cfg) {
    check_keys(j, where, {"ridge_lambda", "target_output", "preserve_contexts"});
    if (auto it = j.find("ridge_lambda"); it != j.end()) {
        if (it->is_null())
            cfg.ridge_lambda.reset();
        else if (it->is_number())
            cfg.ridge_lambda = it->get<double>();
        else
            parse_fail(where + ".ridge_lambda: expected a number or null");
    }
    std::string target = target_name(cfg.target_output);
    read_string(j, where, "target_output", target);
    cfg.target_output = enum_from<TargetOutput>(
        target, where + ".target_output",
        {{"anchor", TargetOutput::anchor}, {"as_printed", TargetOutput::as_printed}});
    read_bool(j, where, "preserve_contexts", cfg.preserve_contexts);
}

json attn_edit_json(const AttnEditConfig& cfg) {
    json j;
    j["ridge_lambda"] = cfg.ridge_lambda ? json(*cfg.ridge_lambda) : json(nullptr);
    j["target_output"] = target_name(cfg.target_output);
    j["preserve_contexts"] = cfg.preserve_contexts;
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    check_keys(j, "config",
               {"version", "master_seed", "out_dir", "universe", "embedding", "schedule",
                "train", "erase", "contexts", "eval", "seeds", "attacks", "ablations"});
    ExperimentConfig c;
    read_int(j, "config", "version", c.version);
    read_u64(j, "config", "master_seed", c.master_seed);
    read_string(j, "config", "out_dir", c.out_dir);
    read_vec_u64(j, "config", "seeds", c.seeds);

    if (auto it = j.find("universe"); it != j.end()) {
        const json& u = *it;
        check_keys(u, "universe",
                   {"concept_count", "data_dim", "vocab_size", "min_separation", "sigma",
                    "seed"});
        read_size(u, "universe", "concept_count", c.universe.concept_count);
        read_size(u, "universe", "data_dim", c.universe.data_dim);
        read_size(u, "universe", "vocab_size", c.universe.vocab_size);
        read_double(u, "universe", "min_separation", c.universe.min_separation);
        read_double(u, "universe", "sigma", c.universe.sigma);
        read_u64(u, "universe", "seed", c.universe.seed);
    }
    if (auto it = j.find("embedding"); it != j.end()) {
        const json& e = *it;
        check_keys(e, "embedding", {"text_dim", "alias_rms", "seed"});
        read_size(e, "embedding", "text_dim", c.embedding.text_dim);
        read_double(e, "embedding", "alias_rms", c.embedding.alias_rms);
        read_u64(e, "embedding", "seed", c.embedding.seed);
    }
    if (auto it = j.find("schedule"); it != j.end()) {
        const json& s = *it;
        check_keys(s, "schedule", {"steps", "beta_min", "beta_max"});
        read_size(s, "schedule", "steps", c.schedule.steps);
        read_double(s, "schedule", "beta_min", c.schedule.beta_min);
        read_double(s, "schedule", "beta_max", c.schedule.beta_max);
    }
    if (auto it = j.find("train"); it != j.end()) {
        const json& t = *it;
        check_keys(t, "train", {"steps", "lr", "batch_size"});
        read_size(t, "train", "steps", c.train.steps);
        read_double(t, "train", "lr", c.train.lr);
        read_size(t, "train", "batch_size", c.train.batch_size);
    }
    if (auto it = j.find("erase"); it != j.end()) {
        const json& e = *it;
        check_keys(e, "erase",
                   {"erase", "preserve", "alpha", "preservation_weight", "methods",
                    "output", "attention"});
        read_vec_size(e, "erase", "erase", c.erase.erase);
        read_vec_size(e, "erase", "preserve", c.erase.preserve);
        read_double(e, "erase", "alpha", c.erase.alpha);
        read_double(e, "erase", "preservation_weight", c.erase.preservation_weight);
        read_vec_string(e, "erase", "methods", c.erase.methods);
        if (auto ot = e.find("output"); ot != e.end()) {
            const json& o = *ot;
            check_keys(o, "erase.output",
                       {"steps", "lr", "batch_size", "latent_strategy", "average_contexts"});
            read_size(o, "erase.output", "steps", c.erase.output.steps);
            read_double(o, "erase.output", "lr", c.erase.output.lr);
            read_size(o, "erase.output", "batch_size", c.erase.output.batch_size);
            std::string latent = latent_name(c.erase.output.latent_strategy);
            read_string(o, "erase.output", "latent_strategy", latent);
            c.erase.output.latent_strategy = enum_from<LatentStrategy>(
                latent, "erase.output.latent_strategy",
                {{"data_noised", LatentStrategy::data_noised},
                 {"teacher_sampled", LatentStrategy::teacher_sampled}});
            read_bool(o, "erase.output", "average_contexts", c.erase.output.average_contexts);
        }
        if (auto at = e.find("attention"); at != e.end())
            parse_attn_edit(*at, "erase.attention", c.erase.attention);
    }
    if (auto it = j.find("contexts"); it != j.end()) {
        const json& x = *it;
        check_keys(x, "contexts",
                   {"level", "count", "candidate_factor", "attention_per_preserved",
                    "verify"});
        read_int(x, "contexts", "level", c.contexts.level);
        read_size(x, "contexts", "count", c.contexts.count);
        read_size(x, "contexts", "candidate_factor", c.contexts.candidate_factor);
        read_size(x, "contexts", "attention_per_preserved",
                  c.contexts.attention_per_preserved);
        if (auto vt = x.find("verify"); vt != x.end()) {
            const json& v = *vt;
            check_keys(v, "contexts.verify",
                       {"n_seeds", "confidence_threshold", "retain_fraction"});
            read_size(v, "contexts.verify", "n_seeds", c.contexts.verify.n_seeds);
            read_double(v, "contexts.verify", "confidence_threshold",
                        c.contexts.verify.confidence_threshold);
            read_double(v, "contexts.verify", "retain_fraction",
                        c.contexts.verify.retain_fraction);
        }
    }
    if (auto it = j.find("eval"); it != j.end()) {
        const json& e = *it;
        check_keys(e, "eval",
                   {"levels", "prompts_per_cell", "samples_per_prompt", "k",
                    "frechet_samples"});
        read_vec_int(e, "eval", "levels", c.eval.levels);
        read_size(e, "eval", "prompts_per_cell", c.eval.prompts_per_cell);
        read_size(e, "eval", "samples_per_prompt", c.eval.samples_per_prompt);
        read_size(e, "eval", "k", c.eval.k);
        read_size(e, "eval", "frechet_samples", c.eval.frechet_samples);
    }
    if (auto it = j.find("attacks"); it != j.end()) {
        const json& a = *it;
        check_keys(a, "attacks", {"noise", "adversarial", "indirect", "threshold"});
        if (auto nt = a.find("noise"); nt != a.end()) {
            const json& n = *nt;
            check_keys(n, "attacks.noise", {"ratios", "trials", "scaling", "pre_pool"});
            read_vec_double(n, "attacks.noise", "ratios", c.attacks.noise.ratios);
            read_size(n, "attacks.noise", "trials", c.attacks.noise.trials);
            std::string scaling = scaling_name(c.attacks.noise.scaling);
            read_string(n, "attacks.noise", "scaling", scaling);
            c.attacks.noise.scaling = enum_from<NoiseScaling>(
                scaling, "attacks.noise.scaling",
                {{"unit", NoiseScaling::unit}, {"norm_matched", NoiseScaling::norm_matched}});
            read_bool(n, "attacks.noise", "pre_pool", c.attacks.noise.pre_pool);
        }
        if (auto at = a.find("adversarial"); at != a.end()) {
            const json& v = *at;
            check_keys(v, "attacks.adversarial",
                       {"restarts", "iters", "step_size", "restart_spread",
                        "samples_per_eval"});
            read_size(v, "attacks.adversarial", "restarts", c.attacks.adversarial.restarts);
            read_size(v, "attacks.adversarial", "iters", c.attacks.adversarial.iters);
            read_double(v, "attacks.adversarial", "step_size",
                        c.attacks.adversarial.step_size);
            read_double(v, "attacks.adversarial", "restart_spread",
                        c.attacks.adversarial.restart_spread);
            read_size(v, "attacks.adversarial", "samples_per_eval",
                      c.attacks.adversarial.samples_per_eval);
        }
        if (auto dt = a.find("indirect"); dt != a.end()) {
            const json& d = *dt;
            check_keys(d, "attacks.indirect", {"prompts", "trials"});
            read_size(d, "attacks.indirect", "prompts", c.attacks.indirect.prompts);
            read_size(d, "attacks.indirect", "trials", c.attacks.indirect.trials);
        }
        read_double(a, "attacks", "threshold", c.attacks.threshold);
    }
    if (auto it = j.find("ablations"); it != j.end()) {
        const json& a = *it;
        check_keys(a, "ablations", {"alpha_grid", "counts", "levels", "alpha_edit"});
        read_vec_double(a, "ablations", "alpha_grid", c.ablations.alpha_grid);
        read_vec_size(a, "ablations", "counts", c.ablations.counts);
        read_vec_int(a, "ablations", "levels", c.ablations.levels);
        if (auto et = a.find("alpha_edit"); et != a.end())
            parse_attn_edit(*et, "ablations.alpha_edit", c.ablations.alpha_edit);
    }
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["version"] = c.version;
    j["master_seed"] = c.master_seed;
    j["out_dir"] = c.out_dir;
    j["seeds"] = c.seeds;
    j["universe"] = {{"concept_count", c.universe.concept_count},
                     {"data_dim", c.universe.data_dim},
                     {"vocab_size", c.universe.vocab_size},
                     {"min_separation", c.universe.min_separation},
                     {"sigma", c.universe.sigma},
                     {"seed", c.universe.seed}};
    j["embedding"] = {{"text_dim", c.embedding.text_dim},
                      {"alias_rms", c.embedding.alias_rms},
                      {"seed", c.embedding.seed}};
    j["schedule"] = {{"steps", c.schedule.steps},
                     {"beta_min", c.schedule.beta_min},
                     {"beta_max", c.schedule.beta_max}};
    j["train"] = {{"steps", c.train.steps},
                  {"lr", c.train.lr},
                  {"batch_size", c.train.batch_size}};
    j["erase"] = {{"erase", c.erase.erase},
                  {"preserve", c.erase.preserve},
                  {"alpha", c.erase.alpha},
                  {"preservation_weight", c.erase.preservation_weight},
                  {"methods", c.erase.methods},
                  {"output",
                   {{"steps", c.erase.output.steps},
                    {"lr", c.erase.output.lr},
                    {"batch_size", c.erase.output.batch_size},
                    {"latent_strategy", latent_name(c.erase.output.latent_strategy)},
                    {"average_contexts", c.erase.output.average_contexts}}},
                  {"attention", attn_edit_json(c.erase.attention)}};
    j["contexts"] = {{"level", c.contexts.level},
                     {"count", c.contexts.count},
                     {"candidate_factor", c.contexts.candidate_factor},
                     {"attention_per_preserved", c.contexts.attention_per_preserved},
                     {"verify",
                      {{"n_seeds", c.contexts.verify.n_seeds},
                       {"confidence_threshold", c.contexts.verify.confidence_threshold},
                       {"retain_fraction", c.contexts.verify.retain_fraction}}}};
    j["eval"] = {{"levels", c.eval.levels},
                 {"prompts_per_cell", c.eval.prompts_per_cell},
                 {"samples_per_prompt", c.eval.samples_per_prompt},
                 {"k", c.eval.k},
                 {"frechet_samples", c.eval.frechet_samples}};
    j["attacks"] = {{"noise",
                     {{"ratios", c.attacks.noise.ratios},
                      {"trials", c.attacks.noise.trials},
                      {"scaling", scaling_name(c.attacks.noise.scaling)},
                      {"pre_pool", c.attacks.noise.pre_pool}}},
                    {"adversarial",
                     {{"restarts", c.attacks.adversarial.restarts},
                      {"iters", c.attacks.adversarial.iters},
                      {"step_size", c.attacks.adversarial.step_size},
                      {"restart_spread", c.attacks.adversarial.restart_spread},
                      {"samples_per_eval", c.attacks.adversarial.samples_per_eval}}},
                    {"indirect",
                     {{"prompts", c.attacks.indirect.prompts},
                      {"trials", c.attacks.indirect.trials}}},
                    {"threshold", c.attacks.threshold}};
    j["ablations"] = {{"alpha_grid", c.ablations.alpha_grid},
                      {"counts", c.ablations.counts},
                      {"levels", c.ablations.levels},
                      {"alpha_edit", attn_edit_json(c.ablations.alpha_edit)}};
    return j;
}

// ---------------------------------------------------------------------------
// artifact plumbing

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Ctx {
    const ExperimentConfig& c;
    const RunOptions& o;
    std::string digest;

    RngState master() const { return RngState(o.master_seed); }
    std::string comment() const {
        return "master_seed=" + std::to_string(o.master_seed) + " config=" + digest;
    }
    json meta() const {
        return {{"master_seed", o.master_seed}, {"config_digest", digest}};
    }
    std::filesystem::path dir() const { return o.out_dir; }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string());
    os << text;
    if (!os) throw IoError("write failed for " + path.string());
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void require_artifact(const std::filesystem::path& path, const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw MissingArtifact("missing artifact " + path.string() + "; run the " +
                              producer + " stage first");
}

json read_json_artifact(const std::filesystem::path& path, const std::string& producer) {
    require_artifact(path, producer);
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw IoError("corrupt artifact " + path.string() + ": " + e.what());
    }
}

/// Re-writes `path` with a "# <comment>" first line.
void prepend_comment(const std::filesystem::path& path, const std::string& comment) {
    write_text(path, "# " + comment + "\n" + read_text(path));
}

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(workers, n); ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// shared loads

struct World {
    Universe u;
    EmbeddingTable table;
    NoiseSchedule sched;
};

World load_world(const Ctx& ctx) {
    const auto path = ctx.dir() / "universe.json";
    const json a = read_json_artifact(path, "init-universe");
    World w;
    w.u = universe_from_json(a.at("universe").dump());
    w.table = make_embedding_table(w.u, ctx.c.embedding);
    w.sched = make_schedule(ctx.c.schedule);
    return w;
}

Denoiser load_model(const std::filesystem::path& dir, const std::string& producer) {
    require_artifact(dir / "manifest.json", producer);
    return load_checkpoint(dir).model;
}

bool is_output_method(const std::string& m) { return m.rfind("output_", 0) == 0; }

OutputMethod output_method(const std::string& m) {
    return m == "output_keyword" ? OutputMethod::keyword : OutputMethod::diversified;
}

AttnMethod attn_method(const std::string& m) {
    if (m == "attention_keyword") return AttnMethod::keyword;
    if (m == "attention_diversified") return AttnMethod::diversified;
    return AttnMethod::noise_mixup;
}

std::filesystem::path model_dir(const Ctx& ctx, const std::string& method,
                                std::uint64_t seed) {
    const auto base = ctx.dir() / "erased" / method;
    return is_output_method(method) ? base / ("seed" + std::to_string(seed))
                                    : base / "model";
}

std::vector<PromptSpec> context_prompts(const json& sets) {
    std::vector<PromptSpec> out;
    for (const auto& [key, value] : sets.items()) {
        const ContextSet cs = context_set_from_json(value.dump());
        out.insert(out.end(), cs.prompts.begin(), cs.prompts.end());
    }
    return out;
}

EraseTask build_task(const Ctx& ctx, const Universe& u, const json& contexts_artifact,
                     const char* which) {
    EraseTask task = make_task(u, ctx.c.erase.erase, ctx.c.erase.preserve);
    task.alpha = ctx.c.erase.alpha;
    task.preservation_weight = ctx.c.erase.preservation_weight;
    task.contexts = context_prompts(contexts_artifact.at(which));
    validate_task(u, task);
    return task;
}

// ---------------------------------------------------------------------------
// stages

void stage_init_universe(const Ctx& ctx) {
    const Universe u = build_universe(ctx.c.universe);
    json a = ctx.meta();
    a["universe"] = json::parse(universe_to_json(u));
    write_json_file(ctx.dir() / "universe.json", a);
}

void stage_train(const Ctx& ctx) {
    const World w = load_world(ctx);
    TrainConfig tc = ctx.c.train;
    tc.seed = ctx.master().child("train").seed();
    DenoiserDims dims;
    dims.data_dim = w.u.data_dim;
    dims.text_dim = ctx.c.embedding.text_dim;
    const TrainResult res = train(init_denoiser(dims, tc.seed), w.u, w.table, w.sched, tc);

    const auto dir = ctx.dir() / "teacher";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, res.model, ctx.c.schedule, tc);
    write_json_file(dir / "meta.json", ctx.meta());
    std::ostringstream losses;
    losses << "# " << ctx.comment() << "\nstep,loss\n";
    for (std::size_t i = 0; i < res.losses.size(); ++i)
        losses << i << ',' << fmt(res.losses[i]) << '\n';
    write_text(dir / "losses.csv", losses.str());
}

json verified_set(const Ctx& ctx, const World& w, const Denoiser& teacher,
                  std::size_t concept_id, std::size_t keep, const RngState& cand_rng,
                  const RngState& verify_rng) {
    RngState cs = cand_rng;
    const auto candidates = generate_candidates(
        w.u, concept_id, ctx.c.contexts.level, keep * ctx.c.contexts.candidate_factor, cs);
    ContextSet set = verify_contexts(candidates, teacher, w.u, w.table, w.sched,
                                     ctx.c.contexts.verify, verify_rng);
    if (set.prompts.size() < keep)
        throw std::runtime_error("context verification for concept " +
                                 std::to_string(concept_id) + " retained " +
                                 std::to_string(set.prompts.size()) + " of " +
                                 std::to_string(keep) + " required prompts");
    set.prompts.resize(keep);
    set.stats.resize(keep);
    return json::parse(context_set_to_json(set));
}

void stage_build_contexts(const Ctx& ctx) {
    const World w = load_world(ctx);
    const Denoiser teacher = load_model(ctx.dir() / "teacher", "train");
    const RngState croot = ctx.master().child("contexts");

    json a = ctx.meta();
    json output = json::object();
    for (std::size_t e : ctx.c.erase.erase)
        output[std::to_string(e)] =
            verified_set(ctx, w, teacher, e, ctx.c.contexts.count,
                         croot.child("output").child(e), croot.child("verify-output").child(e));
    json attention = json::object();
    for (std::size_t p : ctx.c.erase.preserve)
        attention[std::to_string(p)] = verified_set(
            ctx, w, teacher, p, ctx.c.contexts.attention_per_preserved,
            croot.child("attention").child(p), croot.child("verify-attention").child(p));
    a["output"] = std::move(output);
    a["attention"] = std::move(attention);
    write_json_file(ctx.dir() / "contexts.json", a);
}

void stage_erase(const Ctx& ctx) {
    const World w = load_world(ctx);
    const Denoiser teacher = load_model(ctx.dir() / "teacher", "train");
    const json contexts =
        read_json_artifact(ctx.dir() / "contexts.json", "build-contexts");
    const EraseTask task_output = build_task(ctx, w.u, contexts, "output");
    const EraseTask task_attn = build_task(ctx, w.u, contexts, "attention");
    const RngState eroot = ctx.master().child("erase");

    std::filesystem::remove_all(ctx.dir() / "erased");
    struct Job {
        std::string method;
        std::uint64_t seed = 0;
    };
    std::vector<Job> jobs;
    for (const std::string& m : ctx.c.erase.methods) {
        if (is_output_method(m))
            for (std::uint64_t s : ctx.c.seeds) jobs.push_back({m, s});
        else
            jobs.push_back({m, 0});
    }
    parallel_for(jobs.size(), ctx.o.workers, [&](std::size_t i) {
        const Job& job = jobs[i];
        EraseResult result;
        TrainConfig echo;  // erase run identity in the checkpoint manifest
        if (is_output_method(job.method)) {
            OutputUnlearnConfig oc = ctx.c.erase.output;
            oc.method = output_method(job.method);
            oc.seed = job.seed;
            result = erase_output_based(teacher, teacher, task_output, oc, w.u, w.table,
                                        w.sched, eroot);
            echo = {oc.steps, oc.lr, oc.batch_size, oc.seed};
        } else {
            AttnEditConfig ac = ctx.c.erase.attention;
            ac.method = attn_method(job.method);
            RngState ar = eroot.child(job.method);
            result = erase_concepts(teacher, task_attn, ac, w.table, w.u, ar);
            echo = {0, 0.0, 0, 0};
        }
        const auto dir = model_dir(ctx, job.method, job.seed);
        save_checkpoint(dir, result.model, ctx.c.schedule, echo);
        write_json_file(dir / "meta.json", ctx.meta());
        save_unlearn_csv(dir / "report.csv", result.report);
        prepend_comment(dir / "report.csv", ctx.comment());
    });
}

EvalSpec eval_spec(const ExperimentConfig& c) {
    EvalSpec spec;
    spec.erased = c.erase.erase;
    spec.preserved = c.erase.preserve;
    spec.levels = c.eval.levels;
    spec.prompts_per_cell = c.eval.prompts_per_cell;
    spec.samples_per_prompt = c.eval.samples_per_prompt;
    spec.k = c.eval.k;
    return spec;
}

std::vector<std::string> families(const ExperimentConfig& c) {
    std::vector<std::string> out = {"teacher"};
    out.insert(out.end(), c.erase.methods.begin(), c.erase.methods.end());
    return out;
}

void stage_eval(const Ctx& ctx) {
    const World w = load_world(ctx);
    const Denoiser teacher = load_model(ctx.dir() / "teacher", "train");
    const EvalSpec spec = eval_spec(ctx.c);
    const RngState evroot = ctx.master().child("eval");

    std::filesystem::remove_all(ctx.dir() / "eval");
    for (const std::string& fam : families(ctx.c)) {
        std::optional<Denoiser> fixed;  // teacher and attention edits: one model
        if (fam == "teacher")
            fixed = teacher;
        else if (!is_output_method(fam))
            fixed = load_model(model_dir(ctx, fam, 0), "erase");

        json per_seed = json::array();
        Vector esr, psr;
        for (std::uint64_t s : ctx.c.seeds) {
            const Denoiser model =
                fixed ? *fixed : load_model(model_dir(ctx, fam, s), "erase");
            const EsrPsrResult r = esr_psr(model, w.u, w.table, w.sched, spec,
                                           evroot.child(s), ctx.o.workers);
            const auto csv =
                ctx.dir() / "eval" / fam / ("seed" + std::to_string(s) + ".csv");
            std::filesystem::create_directories(csv.parent_path());
            save_gen_records_csv(csv, r.records);
            prepend_comment(csv, ctx.comment());

            json levels = json::array();
            for (const LevelRates& lr : r.levels)
                levels.push_back({{"level", lr.level},
                                  {"esr", lr.esr},
                                  {"psr", lr.psr},
                                  {"erased_count", lr.erased_count},
                                  {"preserved_count", lr.preserved_count}});
            per_seed.push_back({{"seed", s},
                                {"esr_overall", r.esr_overall},
                                {"psr_overall", r.psr_overall},
                                {"levels", std::move(levels)}});
            esr.push_back(r.esr_overall);
            psr.push_back(r.psr_overall);
        }
        json a = ctx.meta();
        a["per_seed"] = std::move(per_seed);
        a["esr_median"] = median(esr);
        a["psr_median"] = median(psr);
        if (fam == "teacher") {
            a["frechet_by_concept"] = json::array();
        } else {
            const Denoiser model =
                fixed ? *fixed : load_model(model_dir(ctx, fam, ctx.c.seeds.front()), "erase");
            a["frechet_by_concept"] =
                frechet_by_concept(model, teacher, w.u, w.table, w.sched,
                                   ctx.c.eval.frechet_samples, evroot.child("frechet"));
        }
        write_json_file(ctx.dir() / "eval" / (fam + ".json"), a);
    }
}

void stage_attack(const Ctx& ctx) {
    const World w = load_world(ctx);
    const Denoiser teacher = load_model(ctx.dir() / "teacher", "train");
    const auto fams = families(ctx.c);
    const auto& targets = ctx.c.erase.erase;
    const std::size_t n_seeds = ctx.c.seeds.size();

    NoiseAttackConfig ncfg;
    ncfg.success_threshold = ctx.c.attacks.threshold;
    ncfg.scaling = ctx.c.attacks.noise.scaling;
    ncfg.pre_pool = ctx.c.attacks.noise.pre_pool;
    AdvSearchConfig acfg = ctx.c.attacks.adversarial;
    acfg.success_threshold = ctx.c.attacks.threshold;
    IndirectConfig icfg;
    icfg.success_threshold = ctx.c.attacks.threshold;

    struct Cell {
        std::vector<std::vector<double>> noise;  // per target, per ratio
        std::vector<double> adv, adv_best, ind;
        std::vector<AttackResult> trials;  // kept for the first seed only
    };
    std::vector<Cell> cells(fams.size() * n_seeds);

    parallel_for(cells.size(), ctx.o.workers, [&](std::size_t i) {
        const std::string& fam = fams[i / n_seeds];
        const std::size_t si = i % n_seeds;
        const std::uint64_t s = ctx.c.seeds[si];
        const Denoiser model =
            fam == "teacher" ? teacher
                             : load_model(model_dir(ctx, fam, s), "erase");
        Cell& cell = cells[i];
        for (std::size_t e : targets) {
            RngState pr(0);
            const PromptSpec prompt = make_prompt(w.u, e, 0, pr);
            const auto grid = noise_attack(
                model, prompt, ctx.c.attacks.noise.ratios, ctx.c.attacks.noise.trials,
                ncfg, w.u, w.table, w.sched,
                ctx.master().child("attack:noise").child(e).child(s));
            std::vector<double> asr;
            for (const AttackResult& r : grid) asr.push_back(r.asr);
            cell.noise.push_back(std::move(asr));
            const AttackResult adv = adversarial_embedding_search(
                model, e, acfg, w.u, w.table, w.sched,
                ctx.master().child("attack:adversarial").child(e).child(s));
            cell.adv.push_back(adv.asr);
            cell.adv_best.push_back(adv.best_score);
            const AttackResult ind = indirect_recovery(
                model, e, ctx.c.attacks.indirect.prompts, ctx.c.attacks.indirect.trials,
                icfg, w.u, w.table, w.sched,
                ctx.master().child("attack:indirect").child(e).child(s));
            cell.ind.push_back(ind.asr);
            if (si == 0) {
                for (const AttackResult& r : grid) cell.trials.push_back(r);
                cell.trials.push_back(adv);
                cell.trials.push_back(ind);
            }
        }
    });

    std::filesystem::remove_all(ctx.dir() / "attack");
    std::filesystem::create_directories(ctx.dir() / "attack");
    for (std::size_t fi = 0; fi < fams.size(); ++fi) {
        const std::string& fam = fams[fi];
        json tj = json::object();
        for (std::size_t ti = 0; ti < targets.size(); ++ti) {
            const std::size_t n_ratios = ctx.c.attacks.noise.ratios.size();
            json noise_by_seed = json::array();
            Vector best_by_seed, adv_by_seed, adv_best_by_seed, ind_by_seed;
            std::vector<Vector> by_ratio(n_ratios);
            for (std::size_t si = 0; si < n_seeds; ++si) {
                const Cell& cell = cells[fi * n_seeds + si];
                noise_by_seed.push_back(cell.noise[ti]);
                double best = 0.0;
                for (std::size_t ri = 0; ri < n_ratios; ++ri) {
                    by_ratio[ri].push_back(cell.noise[ti][ri]);
                    best = std::max(best, cell.noise[ti][ri]);
                }
                best_by_seed.push_back(best);
                adv_by_seed.push_back(cell.adv[ti]);
                adv_best_by_seed.push_back(cell.adv_best[ti]);
                ind_by_seed.push_back(cell.ind[ti]);
            }
            Vector median_by_ratio;
            for (const Vector& col : by_ratio) median_by_ratio.push_back(median(col));
            tj[std::to_string(targets[ti])] = {
                {"noise",
                 {{"ratios", ctx.c.attacks.noise.ratios},
                  {"asr_by_seed", std::move(noise_by_seed)},
                  {"median_by_ratio", median_by_ratio},
                  {"best_by_seed", best_by_seed},
                  {"best_median", median(best_by_seed)}}},
                {"adversarial",
                 {{"asr_by_seed", adv_by_seed},
                  {"asr_median", median(adv_by_seed)},
                  {"best_score_by_seed", adv_best_by_seed}}},
                {"indirect",
                 {{"asr_by_seed", ind_by_seed}, {"asr_median", median(ind_by_seed)}}}};
        }
        json a = ctx.meta();
        a["targets"] = std::move(tj);
        write_json_file(ctx.dir() / "attack" / (fam + ".json"), a);

        const auto csv = ctx.dir() / "attack" / (fam + "_trials.csv");
        save_attack_csv(csv, cells[fi * n_seeds].trials);
        prepend_comment(csv, ctx.comment());
    }
}

void stage_ablate(const Ctx& ctx) {
    const World w = load_world(ctx);
    const Denoiser teacher = load_model(ctx.dir() / "teacher", "train");
    const json contexts =
        read_json_artifact(ctx.dir() / "contexts.json", "build-contexts");
    const RngState abroot = ctx.master().child("ablate");

    AblationConfig acfg;
    acfg.output = ctx.c.erase.output;
    acfg.attention = ctx.c.ablations.alpha_edit;
    acfg.eval = eval_spec(ctx.c);
    acfg.seeds = ctx.c.seeds;

    std::filesystem::remove_all(ctx.dir() / "ablate");
    const auto emit = [&](const char* name, const AblationCurve& curve) {
        const auto base = ctx.dir() / "ablate";
        save_ablation_csv(base / (std::string(name) + ".csv"), curve, ctx.comment());
        json a = ctx.meta();
        a["curve"] = json::parse(ablation_curve_json(curve));
        write_json_file(base / (std::string(name) + ".json"), a);
    };

    const EraseTask task_attn = build_task(ctx, w.u, contexts, "attention");
    emit("alpha", ablate_alpha(teacher, task_attn, ctx.c.ablations.alpha_grid, acfg, w.u,
                               w.table, w.sched, abroot.child("alpha")));

    EraseTask bare = make_task(w.u, ctx.c.erase.erase, ctx.c.erase.preserve);
    bare.alpha = ctx.c.erase.alpha;
    bare.preservation_weight = ctx.c.erase.preservation_weight;
    emit("prompt_count", ablate_prompt_count(teacher, bare, ctx.c.ablations.counts, acfg,
                                             w.u, w.table, w.sched, abroot.child("count")));
    emit("level", ablate_level(teacher, bare, ctx.c.ablations.levels, acfg, w.u, w.table,
                               w.sched, abroot.child("level")));
}

std::string attack_key(const std::string& name, std::size_t target, bool single) {
    return single ? name : name + ":" + std::to_string(target);
}

void stage_report(const Ctx& ctx) {
    MetricsReport report;
    report.master_seed = ctx.o.master_seed;
    report.config_digest = ctx.digest;
    report.seeds = ctx.c.seeds;

    const auto& targets = ctx.c.erase.erase;
    const bool single = targets.size() == 1;
    std::map<std::string, json> attack_artifacts;

    for (const std::string& fam : families(ctx.c)) {
        const json ev = read_json_artifact(ctx.dir() / "eval" / (fam + ".json"), "eval");
        const json at =
            read_json_artifact(ctx.dir() / "attack" / (fam + ".json"), "attack");
        attack_artifacts[fam] = at;

        MethodMetrics m;
        m.method = fam;
        m.esr_overall = ev.at("esr_median").get<double>();
        m.psr_overall = ev.at("psr_median").get<double>();
        m.frechet_by_concept = ev.at("frechet_by_concept").get<std::vector<double>>();
        const json& per_seed = ev.at("per_seed");
        const std::size_t n_levels = per_seed.at(0).at("levels").size();
        for (std::size_t li = 0; li < n_levels; ++li) {
            Vector esr, psr;
            for (const json& seed_entry : per_seed) {
                esr.push_back(seed_entry.at("levels").at(li).at("esr").get<double>());
                psr.push_back(seed_entry.at("levels").at(li).at("psr").get<double>());
            }
            const json& first = per_seed.at(0).at("levels").at(li);
            m.levels.push_back({first.at("level").get<int>(), median(esr), median(psr),
                                first.at("erased_count").get<std::size_t>(),
                                first.at("preserved_count").get<std::size_t>()});
        }
        for (std::size_t e : targets) {
            const json& tj = at.at("targets").at(std::to_string(e));
            m.attack_asr[attack_key("noise", e, single)] =
                tj.at("noise").at("best_median").get<double>();
            m.attack_asr[attack_key("adversarial", e, single)] =
                tj.at("adversarial").at("asr_median").get<double>();
            m.attack_asr[attack_key("indirect", e, single)] =
                tj.at("indirect").at("asr_median").get<double>();
        }
        report.methods.push_back(std::move(m));
    }

    const auto curve = [&](const char* name) {
        const json a = read_json_artifact(
            ctx.dir() / "ablate" / (std::string(name) + ".json"), "ablate");
        return ablation_curve_from_json(a.at("curve").dump());
    };
    report.alpha_curve = curve("alpha");
    report.prompt_count_curve = curve("prompt_count");
    report.level_curve = curve("level");

    const auto base = ctx.dir() / "report";
    std::filesystem::remove_all(base);
    std::filesystem::create_directories(base);
    save_metrics_report(base / "report.json", report);
    save_ablation_csv(base / "table5.csv", *report.alpha_curve, ctx.comment());
    save_ablation_csv(base / "table17.csv", *report.prompt_count_curve, ctx.comment());
    save_ablation_csv(base / "fig4.csv", *report.level_curve, ctx.comment());

    std::ostringstream t18;
    t18 << "# " << ctx.comment() << "\nmethod,ratio,seed,asr\n";
    std::ostringstream t14;
    t14 << "# " << ctx.comment() << "\nmethod,attack,seed,asr\n";
    for (const std::string& fam : families(ctx.c)) {
        const json& at = attack_artifacts[fam];
        for (std::size_t e : targets) {
            const std::string row_name = attack_key(fam, e, single);
            const json& tj = at.at("targets").at(std::to_string(e));
            const json& noise = tj.at("noise");
            const auto& ratios = noise.at("ratios");
            for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
                for (std::size_t si = 0; si < ctx.c.seeds.size(); ++si)
                    t18 << row_name << ',' << fmt(ratios.at(ri).get<double>()) << ','
                        << ctx.c.seeds[si] << ','
                        << fmt(noise.at("asr_by_seed").at(si).at(ri).get<double>())
                        << '\n';
                t18 << row_name << ',' << fmt(ratios.at(ri).get<double>()) << ",median,"
                    << fmt(noise.at("median_by_ratio").at(ri).get<double>()) << '\n';
            }
            const auto attack_rows = [&](const char* name, const json& by_seed,
                                         double med) {
                for (std::size_t si = 0; si < ctx.c.seeds.size(); ++si)
                    t14 << row_name << ',' << name << ',' << ctx.c.seeds[si] << ','
                        << fmt(by_seed.at(si).get<double>()) << '\n';
                t14 << row_name << ',' << name << ",median," << fmt(med) << '\n';
            };
            attack_rows("noise", noise.at("best_by_seed"),
                        noise.at("best_median").get<double>());
            attack_rows("adversarial", tj.at("adversarial").at("asr_by_seed"),
                        tj.at("adversarial").at("asr_median").get<double>());
            attack_rows("indirect", tj.at("indirect").at("asr_by_seed"),
                        tj.at("indirect").at("asr_median").get<double>());
        }
    }
    write_text(base / "table18.csv", t18.str());
    write_text(base / "table14.csv", t14.str());
}

constexpr const char* kStages[] = {"init-universe", "train", "build-contexts",
                                   "erase",         "eval",  "attack",
                                   "ablate",        "report"};

}  // namespace

// ---------------------------------------------------------------------------
// public API

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        parse_fail(std::string("malformed JSON: ") + e.what());
    }
    return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string config_json(const ExperimentConfig& c) { return config_to_json(c).dump(2); }

std::string config_digest(const ExperimentConfig& c) {
    ExperimentConfig keyed = c;
    keyed.master_seed = 0;
    keyed.out_dir.clear();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_json(keyed))));
    return buf;
}

std::vector<std::string> validate(const ExperimentConfig& c) {
    std::vector<std::string> v;
    const auto bad = [&](std::string msg) { v.push_back(std::move(msg)); };
    const std::size_t k = c.universe.concept_count;

    if (c.version != 1) bad("version: expected 1, got " + std::to_string(c.version));
    try {
        build_universe(c.universe);
    } catch (const std::exception& e) {
        bad(std::string("universe: ") + e.what());
    }
    if (c.embedding.text_dim == 0) bad("embedding.text_dim: must be positive");
    if (c.embedding.alias_rms < 0) bad("embedding.alias_rms: must be nonnegative");
    if (c.schedule.steps < 2) bad("schedule.steps: need at least 2 timesteps");
    if (c.schedule.beta_min <= 0 || c.schedule.beta_max >= 1 ||
        c.schedule.beta_min > c.schedule.beta_max)
        bad("schedule: betas must satisfy 0 < beta_min <= beta_max < 1");
    if (c.train.steps == 0) bad("train.steps: must be positive");
    if (!(c.train.lr > 0)) bad("train.lr: must be positive");
    if (c.train.batch_size == 0) bad("train.batch_size: must be positive");

    const auto check_ids = [&](const std::vector<std::size_t>& ids, const char* name) {
        for (std::size_t id : ids)
            if (id >= k)
                bad(std::string("erase.") + name + ": concept " + std::to_string(id) +
                    " does not exist (universe has " + std::to_string(k) + ")");
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j2 = i + 1; j2 < ids.size(); ++j2)
                if (ids[i] == ids[j2])
                    bad(std::string("erase.") + name + ": duplicate concept " +
                        std::to_string(ids[i]));
    };
    if (c.erase.erase.empty()) bad("erase.erase: nothing to erase");
    check_ids(c.erase.erase, "erase");
    check_ids(c.erase.preserve, "preserve");
    for (std::size_t e : c.erase.erase)
        for (std::size_t p : c.erase.preserve)
            if (e == p)
                bad("erase: concept " + std::to_string(e) +
                    " appears in both erase and preserve");
    if (c.erase.alpha < 0 || c.erase.alpha > 1)
        bad("erase.alpha: " + fmt(c.erase.alpha) + " outside [0, 1]");
    if (c.erase.preservation_weight < 0)
        bad("erase.preservation_weight: must be nonnegative");
    static const std::vector<std::string> kKnown = {
        "output_keyword", "output_diversified", "attention_keyword",
        "attention_diversified", "attention_noise_mixup"};
    for (const std::string& m : c.erase.methods)
        if (std::find(kKnown.begin(), kKnown.end(), m) == kKnown.end())
            bad("erase.methods: unknown method \"" + m + "\"");
    for (std::size_t i = 0; i < c.erase.methods.size(); ++i)
        for (std::size_t j2 = i + 1; j2 < c.erase.methods.size(); ++j2)
            if (c.erase.methods[i] == c.erase.methods[j2])
                bad("erase.methods: duplicate method \"" + c.erase.methods[i] + "\"");
    if (c.erase.output.steps == 0) bad("erase.output.steps: must be positive");
    if (!(c.erase.output.lr > 0)) bad("erase.output.lr: must be positive");
    if (c.erase.output.batch_size == 0) bad("erase.output.batch_size: must be positive");
    if (c.erase.attention.ridge_lambda && *c.erase.attention.ridge_lambda < 0)
        bad("erase.attention.ridge_lambda: must be nonnegative");

    const bool needs_attn_contexts =
        std::find(c.erase.methods.begin(), c.erase.methods.end(),
                  "attention_diversified") != c.erase.methods.end() ||
        !c.ablations.alpha_grid.empty();
    if (needs_attn_contexts && c.erase.preserve.empty())
        bad("erase.preserve: the diversified attention edit needs context concepts");

    if (c.contexts.level < 1 || c.contexts.level > 4)
        bad("contexts.level: must lie in 1..4");
    if (c.contexts.count == 0) bad("contexts.count: must be positive");
    if (c.contexts.candidate_factor == 0)
        bad("contexts.candidate_factor: must be positive");
    if (c.contexts.attention_per_preserved == 0)
        bad("contexts.attention_per_preserved: must be positive");
    if (c.contexts.verify.n_seeds == 0) bad("contexts.verify.n_seeds: must be positive");
    if (c.contexts.verify.confidence_threshold < 0 ||
        c.contexts.verify.confidence_threshold > 1)
        bad("contexts.verify.confidence_threshold: outside [0, 1]");
    if (c.contexts.verify.retain_fraction < 0 || c.contexts.verify.retain_fraction > 1)
        bad("contexts.verify.retain_fraction: outside [0, 1]");

    if (c.eval.levels.empty()) bad("eval.levels: need at least one level");
    for (int level : c.eval.levels)
        if (level < 0 || level > 4)
            bad("eval.levels: level " + std::to_string(level) + " outside 0..4");
    if (c.eval.prompts_per_cell == 0) bad("eval.prompts_per_cell: must be positive");
    if (c.eval.samples_per_prompt == 0) bad("eval.samples_per_prompt: must be positive");
    if (c.eval.k == 0 || c.eval.k > k)
        bad("eval.k: must lie in 1.." + std::to_string(k));
    if (c.eval.frechet_samples <= c.universe.data_dim)
        bad("eval.frechet_samples: need more than data_dim samples to fit moments");

    if (c.seeds.empty()) bad("seeds: need at least one seed");
    for (std::size_t i = 0; i < c.seeds.size(); ++i)
        for (std::size_t j2 = i + 1; j2 < c.seeds.size(); ++j2)
            if (c.seeds[i] == c.seeds[j2])
                bad("seeds: duplicate seed " + std::to_string(c.seeds[i]));

    if (c.attacks.noise.ratios.empty()) bad("attacks.noise.ratios: empty grid");
    for (double r : c.attacks.noise.ratios)
        if (r < 0 || r > 1) bad("attacks.noise.ratios: " + fmt(r) + " outside [0, 1]");
    if (c.attacks.noise.trials == 0) bad("attacks.noise.trials: must be positive");
    if (!(c.attacks.adversarial.step_size > 0))
        bad("attacks.adversarial.step_size: must be positive");
    if (c.attacks.adversarial.restart_spread < 0)
        bad("attacks.adversarial.restart_spread: must be nonnegative");
    if (c.attacks.adversarial.samples_per_eval == 0)
        bad("attacks.adversarial.samples_per_eval: must be positive");
    if (c.attacks.indirect.prompts == 0) bad("attacks.indirect.prompts: must be positive");
    if (c.attacks.indirect.trials == 0) bad("attacks.indirect.trials: must be positive");
    if (c.attacks.threshold < 0 || c.attacks.threshold > 1)
        bad("attacks.threshold: outside [0, 1]");

    for (double a : c.ablations.alpha_grid)
        if (a < 0 || a > 1) bad("ablations.alpha_grid: " + fmt(a) + " outside [0, 1]");
    for (std::size_t count : c.ablations.counts)
        if (count == 0) bad("ablations.counts: counts must be positive");
    for (int level : c.ablations.levels)
        if (level < 1 || level > 4)
            bad("ablations.levels: level " + std::to_string(level) + " outside 1..4");
    if ((!c.ablations.counts.empty() || !c.ablations.levels.empty()) &&
        c.erase.erase.size() != 1)
        bad("ablations: the count and level sweeps need exactly one erased concept");
    if (c.ablations.alpha_edit.ridge_lambda && *c.ablations.alpha_edit.ridge_lambda < 0)
        bad("ablations.alpha_edit.ridge_lambda: must be nonnegative");

    return v;
}

RunOptions resolve_options(const ExperimentConfig& c,
                           const std::optional<std::string>& out_flag,
                           const std::optional<std::uint64_t>& seed_flag,
                           std::size_t workers) {
    RunOptions o;
    const char* env = std::getenv("ULAB_OUT");
    if (env && *env)
        o.out_dir = env;
    else if (out_flag)
        o.out_dir = *out_flag;
    else
        o.out_dir = c.out_dir;
    o.master_seed = seed_flag.value_or(c.master_seed);
    o.workers = workers == 0 ? 1 : workers;
    return o;
}

void run_stage(const std::string& stage, const ExperimentConfig& c, const RunOptions& opts) {
    auto violations = validate(c);
    if (!violations.empty())
        throw ConfigInvalid("config failed validation", std::move(violations));
    const Ctx ctx{c, opts, config_digest(c)};

    if (stage == "all") {
        for (const char* name : kStages) run_stage(name, c, opts);
        return;
    }
    if (stage == "init-universe") return stage_init_universe(ctx);
    if (stage == "train") return stage_train(ctx);
    if (stage == "build-contexts") return stage_build_contexts(ctx);
    if (stage == "erase") return stage_erase(ctx);
    if (stage == "eval") return stage_eval(ctx);
    if (stage == "attack") return stage_attack(ctx);
    if (stage == "ablate") return stage_ablate(ctx);
    if (stage == "report") return stage_report(ctx);
    throw std::invalid_argument("unknown stage: " + stage);
}

namespace {

int fail_json(const char* kind, const std::string& message,
              const std::vector<std::string>* violations, int code) {
    json j{{"error", kind}, {"message", message}};
    if (violations) j["violations"] = *violations;
    std::cerr << j.dump() << std::endl;
    return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"toy concept-unlearning laboratory"};
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "experiment config JSON")->required();
    std::optional<std::string> out_flag;
    app.add_option("--out", out_flag, "output directory (ULAB_OUT overrides)");
    std::optional<std::uint64_t> seed_flag;
    app.add_option("--seed", seed_flag, "master seed (overrides the config)");
    std::size_t workers = 1;
    app.add_option("--workers", workers, "within-stage worker threads");
    std::string stage_flag;
    app.add_option("--stage", stage_flag, "stage to run (alternative to a subcommand)");
    for (const char* name : kStages) app.add_subcommand(name);
    app.add_subcommand("all");
    app.add_subcommand("validate");

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    std::string stage = stage_flag;
    const auto chosen = app.get_subcommands();
    if (!chosen.empty()) stage = chosen.front()->get_name();
    if (stage.empty())
        return fail_json("Usage", "no stage selected; pass a subcommand or --stage",
                         nullptr, 2);

    try {
        const ExperimentConfig c = load_config(config_path);
        if (stage == "validate") {
            const auto violations = validate(c);
            const json j{{"valid", violations.empty()}, {"violations", violations}};
            std::cout << j.dump(2) << std::endl;
            return violations.empty() ? 0 : 2;
        }
        run_stage(stage, c, resolve_options(c, out_flag, seed_flag, workers));
        return 0;
    } catch (const ConfigInvalid& e) {
        return fail_json("ConfigInvalid", e.what(), &e.violations, 2);
    } catch (const ParseError& e) {
        return fail_json("ParseError", e.what(), nullptr, 2);
    } catch (const MissingArtifact& e) {
        return fail_json("MissingArtifact", e.what(), nullptr, 3);
    } catch (const IoError& e) {
        return fail_json("IoError", e.what(), nullptr, 4);
    } catch (const std::exception& e) {
        return fail_json("Error", e.what(), nullptr, 1);
    }
}

}  // namespace ulab
