#include "relpos/tasks.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "relpos/errors.hpp"

namespace relpos {

TaskKind parse_task_kind(const std::string& name) {
    if (name == "offset_copy") return TaskKind::offset_copy;
    if (name == "masked_lm") return TaskKind::masked_lm;
    throw ConfigError("unknown task '" + name + "' (expected offset_copy or masked_lm)");
}

const char* task_kind_name(TaskKind kind) { return kind == TaskKind::offset_copy ? "offset_copy" : "masked_lm"; }

void TaskSpec::validate() const {
    if (train_len_lo == 0 || train_len_lo > train_len_hi)
        throw ConfigError("train length range [" + std::to_string(train_len_lo) + ", " + std::to_string(train_len_hi) +
                          "] is empty");
    if (eval_lens.empty()) throw ConfigError("at least one evaluation length is required");
    if (kind == TaskKind::offset_copy) {
        if (vocab < 2) throw ConfigError("offset_copy needs vocab >= 2");
        const auto mag = static_cast<std::size_t>(offset < 0 ? -offset : offset);
        if (mag >= train_len_lo)
            throw ConfigError("|offset| = " + std::to_string(mag) + " must be below the shortest training length " +
                              std::to_string(train_len_lo));
    } else {
        if (vocab < 3) throw ConfigError("masked_lm needs vocab >= 3 (tokens plus mask symbol)");
        if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in (0, 1)");
        if (!(transition_strength >= 0.0 && transition_strength <= 1.0))
            throw ConfigError("transition_strength must lie in [0, 1]");
    }
}

TaskBatch gen_offset_copy(const TaskSpec& spec, SeededRng& rng, std::size_t batch, std::size_t seq_len) {
    const std::int64_t delta = spec.offset;
    const auto mag = static_cast<std::size_t>(delta < 0 ? -delta : delta);
    if (seq_len <= mag)
        throw TaskError("sequence length " + std::to_string(seq_len) + " must exceed |offset| = " + std::to_string(mag));
    TaskBatch out;
    out.inputs.batch = batch;
    out.inputs.seq_len = seq_len;
    out.inputs.tokens.resize(batch * seq_len);
    out.targets.assign(batch * seq_len, 0);
    out.loss_mask.assign(batch * seq_len, 0);
    for (auto& t : out.inputs.tokens) t = static_cast<std::size_t>(rng.below(spec.vocab));
    const auto L = static_cast<std::int64_t>(seq_len);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < L; ++i) {
            const std::int64_t src = i - delta;
            if (src < 0 || src >= L) continue;
            const std::size_t at = b * seq_len + static_cast<std::size_t>(i);
            out.targets[at] = out.inputs.tokens[b * seq_len + static_cast<std::size_t>(src)];
            out.loss_mask[at] = 1;
        }
    return out;
}

namespace {

std::vector<std::size_t> successor_table(const TaskSpec& spec) {
    const std::size_t content = spec.vocab - 1;
    std::vector<std::size_t> succ(content);
    std::iota(succ.begin(), succ.end(), std::size_t{0});
    SeededRng rng(spec.table_seed);
    for (std::size_t i = content; i-- > 1;) std::swap(succ[i], succ[rng.below(i + 1)]);
    return succ;
}

}  // namespace

TaskBatch gen_masked_lm(const TaskSpec& spec, SeededRng& rng, std::size_t batch, std::size_t seq_len) {
    if (spec.vocab < 3) throw TaskError("masked_lm needs vocab >= 3");
    const std::size_t content = spec.vocab - 1;
    const auto succ = successor_table(spec);
    TaskBatch out;
    out.inputs.batch = batch;
    out.inputs.seq_len = seq_len;
    out.inputs.tokens.resize(batch * seq_len);
    out.targets.assign(batch * seq_len, 0);
    out.loss_mask.assign(batch * seq_len, 0);
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t prev = rng.below(content);
        for (std::size_t i = 0; i < seq_len; ++i) {
            std::size_t tok = prev;
            if (i > 0) tok = rng.uniform() < spec.transition_strength ? succ[prev] : rng.below(content);
            prev = tok;
            const std::size_t at = b * seq_len + i;
            out.targets[at] = tok;
            if (rng.uniform() < spec.mask_rate) {
                out.inputs.tokens[at] = spec.mask_token();
                out.loss_mask[at] = 1;
            } else {
                out.inputs.tokens[at] = tok;
            }
        }
    }
    return out;
}

TaskBatch gen_batch(const TaskSpec& spec, SeededRng& rng, std::size_t batch, std::size_t seq_len) {
    return spec.kind == TaskKind::offset_copy ? gen_offset_copy(spec, rng, batch, seq_len)
                                              : gen_masked_lm(spec, rng, batch, seq_len);
}

std::pair<std::size_t, std::size_t> score_batch(Encoder& model, const TaskBatch& batch) {
    Tape tape;
    Var logits = model.forward(tape, batch.inputs);
    const Tensor& lv = logits.value();
    std::size_t correct = 0, total = 0;
    for (std::size_t r = 0; r < lv.rows(); ++r) {
        if (!batch.loss_mask[r]) continue;
        auto row = lv.row(r);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        correct += best == batch.targets[r] ? 1 : 0;
        ++total;
    }
    return {correct, total};
}

double evaluate(Encoder& model, const TaskSpec& spec, std::size_t seq_len, std::size_t sequences, std::uint64_t seed) {
    SeededRng rng = SeededRng(seed).fork(0xe7a1 + seq_len);
    constexpr std::size_t kChunk = 32;
    std::size_t correct = 0, total = 0;
    for (std::size_t done = 0; done < sequences; done += kChunk) {
        const std::size_t b = std::min(kChunk, sequences - done);
        auto batch = gen_batch(spec, rng, b, seq_len);
        auto [c, t] = score_batch(model, batch);
        correct += c;
        total += t;
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

RunMetrics train(Encoder& model, const TaskSpec& spec, const TrainConfig& config, const EpochCallback& on_epoch) {
    spec.validate();
    if (model.config().vocab != spec.vocab)
        throw ConfigError("model vocab " + std::to_string(model.config().vocab) + " differs from task vocab " +
                          std::to_string(spec.vocab));
    if (config.steps == 0 || config.batch == 0 || config.eval_every == 0)
        throw ConfigError("steps, batch and eval_every must be positive");
    const auto start = std::chrono::steady_clock::now();
    RunMetrics metrics;
    metrics.param_count = model.trainable_count();
    metrics.position_param_count = model.position_param_count();

    Optimizer opt(config.optimizer, model.parameters());
    SeededRng data_rng = SeededRng(config.seed).fork(0xda7a);
    double interval_loss = 0.0;
    std::size_t interval_steps = 0;
    for (std::size_t step = 1; step <= config.steps; ++step) {
        const auto len =
            static_cast<std::size_t>(data_rng.range(static_cast<std::int64_t>(spec.train_len_lo),
                                                    static_cast<std::int64_t>(spec.train_len_hi)));
        auto batch = gen_batch(spec, data_rng, config.batch, len);
        opt.zero_grad();
        double loss_value = 0.0;
        try {
            Tape tape;
            Var logits = model.forward(tape, batch.inputs);
            Var loss = ops::cross_entropy(logits, batch.targets, batch.loss_mask);
            loss_value = loss.value().item();
            if (!std::isfinite(loss_value))
                throw TrainingError("loss became non-finite at step " + std::to_string(step));
            tape.backward(loss);
        } catch (const NumericError& e) {
            throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        opt.step();
        interval_loss += loss_value;
        ++interval_steps;
        if (step % config.eval_every == 0 || step == config.steps) {
            EpochMetrics em;
            em.step = step;
            em.loss = interval_loss / static_cast<double>(interval_steps);
            for (auto len_eval : spec.eval_lens) {
                try {
                    em.accuracy[len_eval] = evaluate(model, spec, len_eval, config.eval_sequences, config.seed);
                } catch (const CapacityError&) {
                    // lengths the model cannot represent are reported by extrapolate_eval
                }
            }
            metrics.epochs.push_back(em);
            if (on_epoch) on_epoch(em);
            interval_loss = 0.0;
            interval_steps = 0;
        }
    }
    metrics.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return metrics;
}

std::map<std::size_t, EvalOutcome> extrapolate_eval(Encoder& model, const TaskSpec& spec, std::size_t sequences,
                                                    std::uint64_t seed) {
    std::map<std::size_t, EvalOutcome> out;
    for (auto len : spec.eval_lens) {
        EvalOutcome o;
        try {
            o.accuracy = evaluate(model, spec, len, sequences, seed);
        } catch (const CapacityError& e) {
            o.error = e.what();
            o.capacity_error = true;
        } catch (const Error& e) {
            o.error = e.what();
        }
        out[len] = std::move(o);
    }
    return out;
}

SweepResult sweep_k(const EncoderConfig& base, const std::vector<int>& ks, const TaskSpec& spec,
                    const TrainConfig& train_config, const std::vector<std::uint64_t>& seeds, std::size_t workers) {
    if (ks.empty() || seeds.empty()) throw ConfigError("sweep needs at least one k and one seed");
    if (!accepts_clip(base.method.kind))
        throw ConfigError(std::string("method ") + method_kind_name(base.method.kind) + " has no clipping distance");
    for (int k : ks)
        if (k < 1 || static_cast<std::size_t>(k) > base.max_len - 1)
            throw ConfigError("k=" + std::to_string(k) + " outside [1, " + std::to_string(base.max_len - 1) + "]");
    spec.validate();

    struct Job {
        std::size_t k_index, seed_index;
    };
    std::vector<Job> jobs;
    for (std::size_t a = 0; a < ks.size(); ++a)
        for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({a, s});

    std::vector<std::vector<std::map<std::size_t, double>>> acc(ks.size(),
                                                                std::vector<std::map<std::size_t, double>>(seeds.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            try {
                EncoderConfig cfg = base;
                cfg.method.clip_k = ks[jobs[j].k_index];
                TrainConfig tc = train_config;
                tc.seed = seeds[jobs[j].seed_index];
                Encoder model(cfg, tc.seed);
                auto metrics = train(model, spec, tc);
                acc[jobs[j].k_index][jobs[j].seed_index] = metrics.final().accuracy;
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, jobs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    SweepResult result;
    const std::size_t primary_len = spec.eval_lens.front();
    for (std::size_t a = 0; a < ks.size(); ++a) {
        SweepRow row;
        row.k = ks[a];
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            auto it = acc[a][s].find(primary_len);
            row.accuracy.push_back(it == acc[a][s].end() ? 0.0 : it->second);
            for (const auto& [len, v] : acc[a][s]) row.mean_by_len[len] += v / static_cast<double>(seeds.size());
        }
        row.mean = std::accumulate(row.accuracy.begin(), row.accuracy.end(), 0.0) /
                   static_cast<double>(row.accuracy.size());
        result.rows.push_back(std::move(row));
    }
    std::sort(result.rows.begin(), result.rows.end(), [](const SweepRow& x, const SweepRow& y) { return x.k < y.k; });
    return result;
}

Tensor export_attention(Encoder& model, const std::vector<std::size_t>& tokens, std::size_t layer) {
    if (layer >= model.config().layers)
        throw BoundsError("layer " + std::to_string(layer) + " out of range (model has " +
                          std::to_string(model.config().layers) + ")");
    if (tokens.empty()) throw DimensionError("export_attention needs at least one token");
    TokenBatch batch{1, tokens.size(), tokens, {}};
    AttentionTrace trace;
    Tape tape;
    model.forward(tape, batch, &trace);
    const auto& heads = trace.weights[layer];
    const std::size_t L = tokens.size();
    Tensor avg({L, L});
    for (const auto& w : heads)
        for (std::size_t i = 0; i < L * L; ++i) avg[i] += w[i];
    for (auto& v : avg.data()) v /= static_cast<double>(heads.size());
    return avg;
}

double band_mass(const Tensor& attention, std::size_t band) {
    const std::size_t L = attention.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < attention.cols(); ++j) {
            const std::size_t dist = i > j ? i - j : j - i;
            if (dist <= band) total += attention.at(i, j);
        }
    return total / static_cast<double>(L);
}

}  // namespace relpos
