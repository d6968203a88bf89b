#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "relpos/autograd.hpp"
#include "relpos/posembed.hpp"

namespace relpos {

/// Per-pair storage rows for a sequence of length L: entry i*L + j is the
/// relative-table row used when query i attends to key j.
struct RelIndex {
    std::size_t seq_len = 0;
    std::vector<std::size_t> rows;

    static RelIndex build(const RelTable& table, std::size_t seq_len);
};

// Logit ops. q and k are B*L x d_z matrices holding B stacked sequences of
// length L; every op returns the stacked B*L x L logit blocks, scaled by
// 1/sqrt(d_z).

/// e_ij = q_i . k_j
Var logits_vanilla(Var q, Var k, std::size_t seq_len);
/// e_ij = q_i . (k_j + a_ij)
Var logits_shaw(Var q, Var k, Var table, const RelIndex& index);
/// e_ij = (q_i . k_j) * a_ij with scalar a_ij
Var logits_m1m2(Var q, Var k, Var table, const RelIndex& index);
/// e_ij = sum_t q_i[t] k_j[t] a_ij[t]
Var logits_m3(Var q, Var k, Var table, const RelIndex& index);
/// e_ij = q_i . k_j + q_i . a_ij + k_j . a_ij
Var logits_m4(Var q, Var k, Var table, const RelIndex& index);
/// e_ij = (q_i + a_ij) . (k_j + a_ij) - a_ij . a_ij; same value as logits_m4.
Var logits_m4_alt(Var q, Var k, Var table, const RelIndex& index);
/// e_ij = (q_i + u) . k_j + (q_i + v) . r_(j-i), where `rw` holds the
/// projected sinusoid rows for offsets -(L-1)..(L-1) (row 0 is offset -(L-1)).
Var logits_xlnet(Var q, Var k, Var u, Var v, Var rw, std::size_t seq_len);

/// Adds a large negative constant to logits whose key is masked out
/// (key_valid[b*L + j] == 0).
Var mask_keys(Var logits, std::span<const std::uint8_t> key_valid, std::size_t seq_len);

constexpr double kMaskedLogit = -1e30;

struct HeadParams {
    Parameter w_q, w_k, w_v;
};

/// Transformer-XL style extras for one head. u and v stay frozen at zero
/// unless the biases are enabled.
struct XlnetParams {
    Parameter w_r, u, v;
};

/// Everything a head needs to compute position-aware logits for one batch.
struct HeadContext {
    const PositionMethod* method = nullptr;
    /// Relative table parameter for this (layer, head); null for methods without one.
    Parameter* table = nullptr;
    const RelIndex* index = nullptr;
    XlnetParams* xlnet = nullptr;
    /// Sinusoid rows for offsets -(L-1)..(L-1); xlnet only.
    const Tensor* sinusoid = nullptr;
    std::span<const std::uint8_t> key_valid;
    /// Trained maximum length n; bounds absolute-position inputs.
    std::size_t max_len = 0;
};

/// Dispatches to the logit op selected by the method (vanilla for
/// absolute/sinusoid).
Var method_logits(Tape& tape, Var q, Var k, std::size_t seq_len, const HeadContext& ctx);

struct AttentionOutput {
    Var z;
    Var weights;
};

/// z = softmax_rows(e) * (x W_V) with e from the method's logits.
/// Absolute rejects L > ctx.max_len with CapacityError.
AttentionOutput attention_forward(Tape& tape, Var x, HeadParams& head, std::size_t seq_len, const HeadContext& ctx);

}  // namespace relpos
