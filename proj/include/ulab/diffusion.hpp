#pragma once

#include "ulab/textenc.hpp"

// Toy conditional DDPM. The denoiser is a fixed two-hidden-layer MLP with
// gained tanh activations over concat(scaled z_t, time features, projected
// conditioning); the conditioning projection w is the lab's cross-attention
// analog and the only tensor the closed-form editors touch.

namespace ulab {

struct BadTimestep : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct Divergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ScheduleConfig {
    std::size_t steps = 50;
    double beta_min = 1e-4;
    double beta_max = 0.2;

    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct NoiseSchedule {
    Vector betas;       // linear beta_min..beta_max over steps entries
    Vector alphas;      // 1 - beta
    Vector alpha_bars;  // running product of alphas

    std::size_t steps() const { return betas.size(); }

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

NoiseSchedule make_schedule(const ScheduleConfig& config = {});

/// Four cosine features of t/steps at frequencies 1, 2, 4, 8 (half
/// periods, so the first feature is monotone in t).
Vector time_features(std::size_t t, std::size_t steps);

struct CondProjection {
    Matrix w;  // cond_dim x text_dim

    friend bool operator==(const CondProjection&, const CondProjection&) = default;
};

struct DenoiserDims {
    std::size_t data_dim = 2;
    std::size_t text_dim = 8;
    std::size_t cond_dim = 4;
    std::size_t hidden = 64;
    double data_scale = 4.5;  // z_t is divided by this before the MLP

    static constexpr std::size_t time_dim = 4;
    // Hidden activation is act_gain * tanh(x). The gain raises hidden
    // feature second moments so plain SGD at small constant lr converges
    // within a few thousand steps.
    static constexpr double act_gain = 7.0;

    std::size_t input_dim() const { return data_dim + time_dim + cond_dim; }

    friend bool operator==(const DenoiserDims&, const DenoiserDims&) = default;
};

struct ParamSet {
    CondProjection cond_proj;
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    Matrix w3;
    Vector b3;

    friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

void axpy(double alpha, const ParamSet& x, ParamSet& y);
bool all_finite(const ParamSet& p);

struct Denoiser {
    DenoiserDims dims;
    ParamSet p;

    friend bool operator==(const Denoiser&, const Denoiser&) = default;
};

Denoiser init_denoiser(const DenoiserDims& dims, std::uint64_t seed);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Vector forward_noise(const Vector& x0, std::size_t t, const Vector& eps,
                     const NoiseSchedule& sched);

Vector predict(const Denoiser& d, const Vector& z_t, std::size_t t,
               const PooledEmbedding& cond, const NoiseSchedule& sched);

/// Training/fine-tuning batch. eps holds the regression target (the true
/// noise during training, a teacher prediction during erasure); x0 may be
/// empty when targets do not come from the forward process.
struct DiffusionBatch {
    std::vector<Vector> x0;
    std::vector<std::size_t> t;
    std::vector<Vector> eps;
    std::vector<Vector> z_t;
    std::vector<PooledEmbedding> cond;

    std::size_t size() const { return t.size(); }
};

struct LossGrads {
    double loss = 0.0;
    ParamSet grads;
};

/// Mean over samples and output coordinates of the squared prediction
/// error, with exact hand-derived gradients for every parameter.
LossGrads loss_and_grads(const Denoiser& d, const DiffusionBatch& batch,
                         const NoiseSchedule& sched);

struct TrainConfig {
    std::size_t steps = 4000;
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
    Denoiser model;
    Vector losses;  // one entry per SGD step
};

/// Plain SGD on fresh batches: uniform concept, level 0 or 1 prompt, fresh
/// data draw, uniform timestep. Deterministic in config.seed.
TrainResult train(const Denoiser& d, const Universe& u, const EmbeddingTable& table,
                  const NoiseSchedule& sched, const TrainConfig& config);

struct SampleResult {
    Vector x;
    std::vector<Vector> trajectory;  // steps + 1 states when kept
};

SampleResult sample(const Denoiser& d, const PooledEmbedding& cond,
                    const NoiseSchedule& sched, RngState& rng,
                    bool keep_trajectory = false);

struct Checkpoint {
    Denoiser model;
    ScheduleConfig schedule;
    TrainConfig train;
};

/// Directory of one matrix file per tensor plus manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const Denoiser& d,
                     const ScheduleConfig& schedule, const TrainConfig& train);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace ulab
