#include "ulab/diffusion.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace ulab {

using nlohmann::json;

NoiseSchedule make_schedule(const ScheduleConfig& config) {
    if (config.steps < 1) throw std::invalid_argument("make_schedule: steps < 1");
    NoiseSchedule s;
    s.betas.resize(config.steps);
    s.alphas.resize(config.steps);
    s.alpha_bars.resize(config.steps);
    double prod = 1.0;
    for (std::size_t t = 0; t < config.steps; ++t) {
        const double frac =
            config.steps == 1
                ? 0.0
                : static_cast<double>(t) / static_cast<double>(config.steps - 1);
        const double beta = config.beta_min + (config.beta_max - config.beta_min) * frac;
        if (!(beta > 0.0 && beta < 1.0))
            throw std::invalid_argument("make_schedule: beta outside (0, 1)");
        s.betas[t] = beta;
        s.alphas[t] = 1.0 - beta;
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

Vector time_features(std::size_t t, std::size_t steps) {
    const double u = static_cast<double>(t) / static_cast<double>(steps);
    Vector f(DenoiserDims::time_dim);
    double freq = 1.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = std::cos(std::numbers::pi * freq * u);
        freq *= 2.0;
    }
    return f;
}

void axpy(double alpha, const ParamSet& x, ParamSet& y) {
    axpy(alpha, x.cond_proj.w, y.cond_proj.w);
    axpy(alpha, x.w1, y.w1);
    axpy(alpha, x.b1, y.b1);
    axpy(alpha, x.w2, y.w2);
    axpy(alpha, x.b2, y.b2);
    axpy(alpha, x.w3, y.w3);
    axpy(alpha, x.b3, y.b3);
}

bool all_finite(const ParamSet& p) {
    return all_finite(p.cond_proj.w) && all_finite(p.w1) && all_finite(p.b1) &&
           all_finite(p.w2) && all_finite(p.b2) && all_finite(p.w3) && all_finite(p.b3);
}

namespace {

Matrix gauss_matrix(RngState& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.next_gauss();
    return m;
}

ParamSet zero_params(const DenoiserDims& dims) {
    ParamSet p;
    p.cond_proj.w = Matrix(dims.cond_dim, dims.text_dim);
    p.w1 = Matrix(dims.hidden, dims.input_dim());
    p.b1 = Vector(dims.hidden, 0.0);
    p.w2 = Matrix(dims.hidden, dims.hidden);
    p.b2 = Vector(dims.hidden, 0.0);
    p.w3 = Matrix(dims.data_dim, dims.hidden);
    p.b3 = Vector(dims.data_dim, 0.0);
    return p;
}

struct ForwardCache {
    Vector in;
    Vector h1;
    Vector h2;
    Vector out;
};

void forward(const Denoiser& d, const Vector& z_t, std::size_t t,
             const PooledEmbedding& cond, const NoiseSchedule& sched,
             ForwardCache& cache) {
    const DenoiserDims& dims = d.dims;
    if (z_t.size() != dims.data_dim) throw DimMismatch("predict: z_t dim");
    if (cond.vector.size() != dims.text_dim) throw DimMismatch("predict: cond dim");
    if (t >= sched.steps())
        throw BadTimestep("predict: t " + std::to_string(t) + " >= " +
                          std::to_string(sched.steps()));

    cache.in.clear();
    cache.in.reserve(dims.input_dim());
    for (double v : z_t) cache.in.push_back(v / dims.data_scale);
    for (double v : time_features(t, sched.steps())) cache.in.push_back(v);
    for (double v : matvec(d.p.cond_proj.w, cond.vector)) cache.in.push_back(v);

    cache.h1 = matvec(d.p.w1, cache.in);
    axpy(1.0, d.p.b1, cache.h1);
    for (double& v : cache.h1) v = DenoiserDims::act_gain * std::tanh(v);

    cache.h2 = matvec(d.p.w2, cache.h1);
    axpy(1.0, d.p.b2, cache.h2);
    for (double& v : cache.h2) v = DenoiserDims::act_gain * std::tanh(v);

    cache.out = matvec(d.p.w3, cache.h2);
    axpy(1.0, d.p.b3, cache.out);
}

}  // namespace

Denoiser init_denoiser(const DenoiserDims& dims, std::uint64_t seed) {
    if (dims.data_dim < 1 || dims.text_dim < 1 || dims.cond_dim < 1 || dims.hidden < 1)
        throw std::invalid_argument("init_denoiser: bad dims");
    Denoiser d;
    d.dims = dims;
    RngState rng = RngState(seed).child("init");
    d.p = zero_params(dims);
    d.p.cond_proj.w = gauss_matrix(rng, dims.cond_dim, dims.text_dim, 1.25);
    d.p.w1 = gauss_matrix(rng, dims.hidden, dims.input_dim(),
                          1.5 / std::sqrt(static_cast<double>(dims.input_dim())));
    d.p.w2 = gauss_matrix(rng, dims.hidden, dims.hidden,
                          0.21 / std::sqrt(static_cast<double>(dims.hidden)));
    d.p.w3 = gauss_matrix(rng, dims.data_dim, dims.hidden,
                          0.21 / std::sqrt(static_cast<double>(dims.hidden)));
    return d;
}

Vector forward_noise(const Vector& x0, std::size_t t, const Vector& eps,
                     const NoiseSchedule& sched) {
    if (t >= sched.steps())
        throw BadTimestep("forward_noise: t " + std::to_string(t) + " >= " +
                          std::to_string(sched.steps()));
    if (x0.size() != eps.size()) throw DimMismatch("forward_noise: dim mismatch");
    const double abar = sched.alpha_bars[t];
    Vector z(x0.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = std::sqrt(abar) * x0[i] + std::sqrt(1.0 - abar) * eps[i];
    return z;
}

Vector predict(const Denoiser& d, const Vector& z_t, std::size_t t,
               const PooledEmbedding& cond, const NoiseSchedule& sched) {
    ForwardCache cache;
    forward(d, z_t, t, cond, sched, cache);
    return cache.out;
}

LossGrads loss_and_grads(const Denoiser& d, const DiffusionBatch& batch,
                         const NoiseSchedule& sched) {
    const std::size_t n = batch.size();
    if (batch.eps.size() != n || batch.z_t.size() != n || batch.cond.size() != n ||
        (!batch.x0.empty() && batch.x0.size() != n))
        throw DimMismatch("loss_and_grads: ragged batch");

    LossGrads lg;
    lg.grads = zero_params(d.dims);
    if (n == 0) return lg;

    const double dout = static_cast<double>(d.dims.data_dim);
    const double scale = 2.0 / (static_cast<double>(n) * dout);

    ForwardCache c;
    for (std::size_t i = 0; i < n; ++i) {
        forward(d, batch.z_t[i], batch.t[i], batch.cond[i], sched, c);
        if (batch.eps[i].size() != d.dims.data_dim)
            throw DimMismatch("loss_and_grads: target dim");

        Vector d3(d.dims.data_dim);
        for (std::size_t k = 0; k < d3.size(); ++k) {
            const double diff = c.out[k] - batch.eps[i][k];
            lg.loss += diff * diff;
            d3[k] = scale * diff;
        }

        axpy(1.0, outer(d3, c.h2), lg.grads.w3);
        axpy(1.0, d3, lg.grads.b3);

        constexpr double gain = DenoiserDims::act_gain;
        Vector d2 = matvec(transpose(d.p.w3), d3);
        for (std::size_t k = 0; k < d2.size(); ++k)
            d2[k] *= gain - c.h2[k] * c.h2[k] / gain;
        axpy(1.0, outer(d2, c.h1), lg.grads.w2);
        axpy(1.0, d2, lg.grads.b2);

        Vector d1 = matvec(transpose(d.p.w2), d2);
        for (std::size_t k = 0; k < d1.size(); ++k)
            d1[k] *= gain - c.h1[k] * c.h1[k] / gain;
        axpy(1.0, outer(d1, c.in), lg.grads.w1);
        axpy(1.0, d1, lg.grads.b1);

        const Vector din = matvec(transpose(d.p.w1), d1);
        Vector dproj(din.end() - d.dims.cond_dim, din.end());
        axpy(1.0, outer(dproj, batch.cond[i].vector), lg.grads.cond_proj.w);
    }
    lg.loss /= static_cast<double>(n) * dout;
    return lg;
}

TrainResult train(const Denoiser& d, const Universe& u, const EmbeddingTable& table,
                  const NoiseSchedule& sched, const TrainConfig& config) {
    if (config.lr <= 0.0 || config.batch_size < 1)
        throw std::invalid_argument("train: bad config");

    TrainResult result;
    result.model = d;
    result.losses.reserve(config.steps);
    RngState rng = RngState(config.seed).child("train");
    const std::size_t k = u.concepts.size();

    for (std::size_t step = 0; step < config.steps; ++step) {
        DiffusionBatch batch;
        // Concepts and timesteps are stratified across the batch (uniform
        // marginals, lower gradient variance than i.i.d. draws).
        const std::size_t toff = rng.next_u64() % sched.steps();
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const std::size_t cid = b % k;
            const int level = static_cast<int>(rng.next_u64() % 2);
            const PromptSpec prompt = make_prompt(u, cid, level, rng);
            batch.cond.push_back(encode_pooled(table, prompt));
            batch.x0.push_back(sample_data(u, cid, 1, rng)[0]);
            batch.t.push_back((b * sched.steps() / config.batch_size + toff) %
                              sched.steps());
            batch.eps.push_back(rng.gauss(u.data_dim));
            batch.z_t.push_back(
                forward_noise(batch.x0.back(), batch.t.back(), batch.eps.back(), sched));
        }
        LossGrads lg = loss_and_grads(result.model, batch, sched);
        if (!std::isfinite(lg.loss))
            throw Divergence("train: loss diverged at step " + std::to_string(step));
        axpy(-config.lr, lg.grads, result.model.p);
        result.losses.push_back(lg.loss);
    }
    if (!all_finite(result.model.p)) throw Divergence("train: non-finite parameters");
    return result;
}

SampleResult sample(const Denoiser& d, const PooledEmbedding& cond,
                    const NoiseSchedule& sched, RngState& rng, bool keep_trajectory) {
    const std::size_t steps = sched.steps();
    SampleResult res;
    Vector z = rng.gauss(d.dims.data_dim);
    if (keep_trajectory) res.trajectory.push_back(z);

    for (std::size_t i = steps; i-- > 0;) {
        const Vector eps_hat = predict(d, z, i, cond, sched);
        const double beta = sched.betas[i];
        const double abar = sched.alpha_bars[i];
        const double alpha = sched.alphas[i];
        for (std::size_t kk = 0; kk < z.size(); ++kk)
            z[kk] = (z[kk] - beta / std::sqrt(1.0 - abar) * eps_hat[kk]) /
                    std::sqrt(alpha);
        if (i > 0) {
            const double abar_prev = sched.alpha_bars[i - 1];
            const double sigma =
                std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
            for (double& v : z) v += sigma * rng.next_gauss();
        }
        if (keep_trajectory) res.trajectory.push_back(z);
    }
    res.x = z;
    return res;
}

namespace {

Matrix vec_as_row(const Vector& v) {
    Matrix m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
    return m;
}

Vector row_as_vec(const Matrix& m) {
    if (m.rows() != 1) throw IoError("checkpoint: expected a single-row matrix");
    return m.row_vec(0);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Denoiser& d,
                     const ScheduleConfig& schedule, const TrainConfig& train) {
    std::filesystem::create_directories(dir);
    save_matrix(dir / "cond_proj.mat", d.p.cond_proj.w);
    save_matrix(dir / "w1.mat", d.p.w1);
    save_matrix(dir / "b1.mat", vec_as_row(d.p.b1));
    save_matrix(dir / "w2.mat", d.p.w2);
    save_matrix(dir / "b2.mat", vec_as_row(d.p.b2));
    save_matrix(dir / "w3.mat", d.p.w3);
    save_matrix(dir / "b3.mat", vec_as_row(d.p.b3));

    json j;
    j["dims"] = {{"data_dim", d.dims.data_dim},   {"text_dim", d.dims.text_dim},
                 {"cond_dim", d.dims.cond_dim},   {"hidden", d.dims.hidden},
                 {"data_scale", d.dims.data_scale}};
    j["schedule"] = {{"steps", schedule.steps},
                     {"beta_min", schedule.beta_min},
                     {"beta_max", schedule.beta_max}};
    j["train"] = {{"steps", train.steps},
                  {"lr", train.lr},
                  {"batch_size", train.batch_size},
                  {"seed", train.seed}};
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("save_checkpoint: cannot open manifest");
    os << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("load_checkpoint: cannot open manifest in " + dir.string());
    json j;
    try {
        is >> j;
        Checkpoint ck;
        ck.model.dims.data_dim = j.at("dims").at("data_dim").get<std::size_t>();
        ck.model.dims.text_dim = j.at("dims").at("text_dim").get<std::size_t>();
        ck.model.dims.cond_dim = j.at("dims").at("cond_dim").get<std::size_t>();
        ck.model.dims.hidden = j.at("dims").at("hidden").get<std::size_t>();
        ck.model.dims.data_scale = j.at("dims").at("data_scale").get<double>();
        ck.schedule.steps = j.at("schedule").at("steps").get<std::size_t>();
        ck.schedule.beta_min = j.at("schedule").at("beta_min").get<double>();
        ck.schedule.beta_max = j.at("schedule").at("beta_max").get<double>();
        ck.train.steps = j.at("train").at("steps").get<std::size_t>();
        ck.train.lr = j.at("train").at("lr").get<double>();
        ck.train.batch_size = j.at("train").at("batch_size").get<std::size_t>();
        ck.train.seed = j.at("train").at("seed").get<std::uint64_t>();

        ck.model.p.cond_proj.w = load_matrix(dir / "cond_proj.mat");
        ck.model.p.w1 = load_matrix(dir / "w1.mat");
        ck.model.p.b1 = row_as_vec(load_matrix(dir / "b1.mat"));
        ck.model.p.w2 = load_matrix(dir / "w2.mat");
        ck.model.p.b2 = row_as_vec(load_matrix(dir / "b2.mat"));
        ck.model.p.w3 = load_matrix(dir / "w3.mat");
        ck.model.p.b3 = row_as_vec(load_matrix(dir / "b3.mat"));
        return ck;
    } catch (const json::exception& e) {
        throw IoError(std::string("load_checkpoint: ") + e.what());
    }
}

}  // namespace ulab
