#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relpos/encoder.hpp"
#include "relpos/optim.hpp"
#include "relpos/rng.hpp"

namespace relpos {

enum class TaskKind { offset_copy, masked_lm };

TaskKind parse_task_kind(const std::string& name);
const char* task_kind_name(TaskKind kind);

struct TaskSpec {
    TaskKind kind = TaskKind::offset_copy;
    std::size_t vocab = 32;
    /// offset_copy: target at i is input at i - offset.
    std::int64_t offset = 2;
    /// masked_lm: fraction of positions replaced by the mask symbol.
    double mask_rate = 0.15;
    /// masked_lm: probability that a token follows its predecessor's fixed successor.
    double transition_strength = 0.9;
    /// masked_lm: seed of the fixed transition table.
    std::uint64_t table_seed = 7;
    std::size_t train_len_lo = 16;
    std::size_t train_len_hi = 32;
    std::vector<std::size_t> eval_lens{32};

    void validate() const;
    /// masked_lm reserves the last id as the mask symbol.
    std::size_t mask_token() const { return vocab - 1; }
};

/// Inputs, targets and the loss mask for one batch.
struct TaskBatch {
    TokenBatch inputs;
    std::vector<std::size_t> targets;
    std::vector<std::uint8_t> loss_mask;
};

TaskBatch gen_offset_copy(const TaskSpec& spec, SeededRng& rng, std::size_t batch, std::size_t seq_len);
TaskBatch gen_masked_lm(const TaskSpec& spec, SeededRng& rng, std::size_t batch, std::size_t seq_len);
TaskBatch gen_batch(const TaskSpec& spec, SeededRng& rng, std::size_t batch, std::size_t seq_len);

struct TrainConfig {
    OptimizerConfig optimizer;
    std::size_t steps = 3000;
    std::size_t batch = 32;
    /// Steps per metrics record ("epoch").
    std::size_t eval_every = 500;
    /// Evaluation sequences per length.
    std::size_t eval_sequences = 128;
    std::uint64_t seed = 1;
};

struct EpochMetrics {
    std::size_t step = 0;
    double loss = 0.0;
    std::map<std::size_t, double> accuracy;
};

struct RunMetrics {
    std::vector<EpochMetrics> epochs;
    double wall_clock_s = 0.0;
    std::size_t param_count = 0;
    std::size_t position_param_count = 0;

    const EpochMetrics& final() const { return epochs.back(); }
};

/// Fraction of loss-masked positions whose argmax prediction matches the target.
/// Returns the number of correct and scored positions.
std::pair<std::size_t, std::size_t> score_batch(Encoder& model, const TaskBatch& batch);

/// Accuracy on a fixed, seeded evaluation set at one length.
double evaluate(Encoder& model, const TaskSpec& spec, std::size_t seq_len, std::size_t sequences, std::uint64_t seed);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Forward/backward/update over seeded batches; deterministic under the seed.
/// Throws TrainingError when the loss stops being finite.
RunMetrics train(Encoder& model, const TaskSpec& spec, const TrainConfig& config,
                 const EpochCallback& on_epoch = nullptr);

struct EvalOutcome {
    std::optional<double> accuracy;
    /// Set when evaluation raised an error (e.g. capacity), which is the outcome.
    std::string error;
    bool capacity_error = false;
};

std::map<std::size_t, EvalOutcome> extrapolate_eval(Encoder& model, const TaskSpec& spec, std::size_t sequences,
                                                    std::uint64_t seed);

struct SweepRow {
    int k = 0;
    std::vector<double> accuracy;  // per seed, at the first eval length
    double mean = 0.0;
    /// Per-length mean over seeds for every eval length.
    std::map<std::size_t, double> mean_by_len;
};

struct SweepResult {
    std::vector<SweepRow> rows;  // ordered by k
};

/// Trains one independent model per (k, seed) and tabulates final accuracy.
/// Runs up to `workers` models concurrently.
SweepResult sweep_k(const EncoderConfig& base, const std::vector<int>& ks, const TaskSpec& spec,
                    const TrainConfig& train_config, const std::vector<std::uint64_t>& seeds, std::size_t workers);

/// Head-averaged post-softmax weights of one layer for a single sequence (L x L).
Tensor export_attention(Encoder& model, const std::vector<std::size_t>& tokens, std::size_t layer);

/// Mean over rows of the attention mass on keys with |j - i| <= band.
double band_mass(const Tensor& attention, std::size_t band);

}  // namespace relpos
