#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relpos/attention.hpp"
#include "relpos/autograd.hpp"
#include "relpos/posembed.hpp"
#include "relpos/rng.hpp"

namespace relpos {

struct EncoderConfig {
    std::size_t layers = 2;    // m
    std::size_t heads = 2;     // h
    std::size_t d_model = 32;  // d_x
    std::size_t d_head = 16;   // d_z
    std::size_t max_len = 64;  // n
    std::size_t d_ff = 128;
    std::size_t vocab = 32;
    PositionMethod method = default_method(MethodKind::method4, 64);
    DType dtype = DType::f64;

    /// Throws ConfigError unless h * d_z == d_x, n >= 2 and the method is valid.
    void validate() const;

    /// Flat key/value view used by checkpoints and config echo.
    std::map<std::string, std::string> to_kv() const;
    static EncoderConfig from_kv(const std::map<std::string, std::string>& kv);
};

struct EncoderLayer {
    std::vector<HeadParams> heads;
    std::vector<XlnetParams> xlnet;
    Parameter ff_w1, ff_b1, ff_w2, ff_b2;
};

/// A batch of B token sequences of equal length L, row-major (B x L).
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<std::size_t> tokens;
    /// Optional per-token key validity (B x L); empty means all valid.
    std::vector<std::uint8_t> key_valid;
};

/// Post-softmax attention weights captured during a forward pass,
/// indexed [layer][head], each B*L x L.
struct AttentionTrace {
    std::vector<std::vector<Tensor>> weights;
};

/// Minimal encoder: token embedding (+ absolute/sinusoid input positions),
/// m layers of {multi-head attention, concat, residual, ReLU feed-forward,
/// residual}, linear projection to vocabulary logits. No layer norm, no dropout.
class Encoder {
public:
    Encoder(EncoderConfig config, std::uint64_t seed);

    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;
    Encoder(Encoder&&) = default;
    Encoder& operator=(Encoder&&) = default;

    const EncoderConfig& config() const { return config_; }

    /// Returns B*L x vocab logits.
    Var forward(Tape& tape, const TokenBatch& batch, AttentionTrace* trace = nullptr);

    /// Every parameter in a fixed order (frozen ones included).
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    Parameter* find_parameter(const std::string& name);

    /// Element count of all parameters, frozen ones excluded.
    std::size_t trainable_count() const;
    /// Element count of the position-specific parameters only.
    std::size_t position_param_count() const;

    RelTable& rel_table() { return rel_; }
    const RelTable& rel_table() const { return rel_; }
    bool has_rel_table() const { return layout_for(config_.method.kind) != TableLayout::none; }
    AbsTable* abs_table() { return abs_ ? &*abs_ : nullptr; }
    EncoderLayer& layer(std::size_t i) { return layers_.at(i); }

private:
    EncoderConfig config_;
    Parameter tok_emb_;
    std::optional<AbsTable> abs_;
    RelTable rel_;
    std::vector<EncoderLayer> layers_;
    Parameter out_w_, out_b_;
};

}  // namespace relpos
