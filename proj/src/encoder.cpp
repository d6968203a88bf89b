#include "relpos/encoder.hpp"

#include <cmath>

#include "relpos/errors.hpp"

namespace relpos {

void EncoderConfig::validate() const {
    if (heads == 0 || d_head == 0 || d_model == 0) throw ConfigError("heads, d_head and d_model must be positive");
    if (heads * d_head != d_model)
        throw ConfigError("heads * d_head must equal d_model (" + std::to_string(heads) + " * " +
                          std::to_string(d_head) + " != " + std::to_string(d_model) + ")");
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    if (d_ff == 0) throw ConfigError("d_ff must be positive");
    if (vocab < 2) throw ConfigError("vocab must be at least 2");
    if (method.kind == MethodKind::sinusoid && d_model % 2 != 0)
        throw ConfigError("sinusoid input encoding needs an even d_model");
    if (method.kind == MethodKind::xlnet && d_head % 2 != 0)
        throw ConfigError("xlnet sinusoid rows need an even d_head");
    method.validate(max_len);
}

std::map<std::string, std::string> EncoderConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["layers"] = std::to_string(layers);
    kv["heads"] = std::to_string(heads);
    kv["d_model"] = std::to_string(d_model);
    kv["d_head"] = std::to_string(d_head);
    kv["max_len"] = std::to_string(max_len);
    kv["d_ff"] = std::to_string(d_ff);
    kv["vocab"] = std::to_string(vocab);
    kv["method"] = method_kind_name(method.kind);
    kv["k"] = method.clip_k ? std::to_string(*method.clip_k) : "none";
    kv["xlnet_bias"] = method.xlnet_bias_enabled ? "true" : "false";
    kv["saturate"] = method.saturate ? "true" : "false";
    kv["dtype"] = dtype_name(dtype);
    return kv;
}

namespace {

const std::string& require_key(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("missing config key '" + key + "'");
    return it->second;
}

std::size_t to_size(const std::string& s, const std::string& key) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        throw FormatError("config key '" + key + "' is not an integer: " + s);
    }
    if (pos != s.size() || (!s.empty() && s[0] == '-'))
        throw FormatError("config key '" + key + "' is not a non-negative integer: " + s);
    return static_cast<std::size_t>(v);
}

}  // namespace

EncoderConfig EncoderConfig::from_kv(const std::map<std::string, std::string>& kv) {
    EncoderConfig c;
    c.layers = to_size(require_key(kv, "layers"), "layers");
    c.heads = to_size(require_key(kv, "heads"), "heads");
    c.d_model = to_size(require_key(kv, "d_model"), "d_model");
    c.d_head = to_size(require_key(kv, "d_head"), "d_head");
    c.max_len = to_size(require_key(kv, "max_len"), "max_len");
    c.d_ff = to_size(require_key(kv, "d_ff"), "d_ff");
    c.vocab = to_size(require_key(kv, "vocab"), "vocab");
    c.method.kind = parse_method_kind(require_key(kv, "method"));
    const auto& k = require_key(kv, "k");
    c.method.clip_k = k == "none" ? std::nullopt : std::optional<int>(static_cast<int>(to_size(k, "k")));
    c.method.xlnet_bias_enabled = require_key(kv, "xlnet_bias") == "true";
    c.method.saturate = require_key(kv, "saturate") == "true";
    const auto& dt = require_key(kv, "dtype");
    if (dt != "f64" && dt != "f32") throw FormatError("unknown dtype " + dt);
    c.dtype = dt == "f64" ? DType::f64 : DType::f32;
    c.validate();
    return c;
}

namespace {

Parameter normal_param(std::string name, Shape shape, SeededRng& rng, double stddev, DType dtype) {
    Tensor t(std::move(shape), dtype);
    for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    t.round_to_dtype();
    return Parameter(std::move(name), std::move(t));
}

Parameter zero_param(std::string name, Shape shape, DType dtype) {
    return Parameter(std::move(name), Tensor::zeros(std::move(shape), dtype));
}

void cast_param(Parameter& p, DType dtype) {
    p.value = Tensor(p.value.shape(), p.value.storage(), dtype);
    p.grad = Tensor::zeros(p.value.shape(), dtype);
}

}  // namespace

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    const auto& c = config_;
    const DType dt = c.dtype;
    SeededRng rng(seed);
    const double dx = static_cast<double>(c.d_model);
    tok_emb_ = normal_param("tok_emb", {c.vocab, c.d_model}, rng, 1.0, dt);
    if (c.method.kind == MethodKind::absolute) {
        abs_.emplace(c.max_len, c.d_model, rng, 1.0);
        cast_param(abs_->weights(), dt);
    }
    if (layout_for(c.method.kind) != TableLayout::none) {
        rel_ = RelTable(c.method, c.layers, c.heads, c.max_len, c.d_head);
        for (auto* p : rel_.parameters()) cast_param(*p, dt);
    }
    for (std::size_t l = 0; l < c.layers; ++l) {
        EncoderLayer layer;
        const std::string pre = "l" + std::to_string(l) + ".";
        for (std::size_t h = 0; h < c.heads; ++h) {
            const std::string hp = pre + "h" + std::to_string(h) + ".";
            layer.heads.push_back({normal_param(hp + "w_q", {c.d_model, c.d_head}, rng, 1.0 / std::sqrt(dx), dt),
                                   normal_param(hp + "w_k", {c.d_model, c.d_head}, rng, 1.0 / std::sqrt(dx), dt),
                                   normal_param(hp + "w_v", {c.d_model, c.d_head}, rng, 1.0 / std::sqrt(dx), dt)});
            if (c.method.kind == MethodKind::xlnet) {
                XlnetParams xp{zero_param(hp + "w_r", {c.d_head, c.d_head}, dt), zero_param(hp + "u", {c.d_head}, dt),
                               zero_param(hp + "v", {c.d_head}, dt)};
                xp.u.trainable = xp.v.trainable = c.method.xlnet_bias_enabled;
                layer.xlnet.push_back(std::move(xp));
            }
        }
        layer.ff_w1 = normal_param(pre + "ff_w1", {c.d_model, c.d_ff}, rng, std::sqrt(2.0 / dx), dt);
        layer.ff_b1 = zero_param(pre + "ff_b1", {c.d_ff}, dt);
        layer.ff_w2 = normal_param(pre + "ff_w2", {c.d_ff, c.d_model}, rng,
                                   1.0 / std::sqrt(static_cast<double>(c.d_ff)), dt);
        layer.ff_b2 = zero_param(pre + "ff_b2", {c.d_model}, dt);
        layers_.push_back(std::move(layer));
    }
    out_w_ = normal_param("out_w", {c.d_model, c.vocab}, rng, 1.0 / std::sqrt(dx), dt);
    out_b_ = zero_param("out_b", {c.vocab}, dt);
}

Var Encoder::forward(Tape& tape, const TokenBatch& batch, AttentionTrace* trace) {
    const auto& c = config_;
    const std::size_t B = batch.batch, L = batch.seq_len;
    if (B == 0 || L == 0 || batch.tokens.size() != B * L)
        throw DimensionError("token batch of " + std::to_string(batch.tokens.size()) + " tokens does not match " +
                             std::to_string(B) + "x" + std::to_string(L));
    if (!batch.key_valid.empty() && batch.key_valid.size() != B * L)
        throw DimensionError("key mask size does not match the token batch");
    for (auto tok : batch.tokens)
        if (tok >= c.vocab)
            throw BoundsError("token id " + std::to_string(tok) + " outside vocabulary of " + std::to_string(c.vocab));
    if (c.method.kind == MethodKind::absolute && L > c.max_len)
        throw CapacityError("absolute position embeddings cover " + std::to_string(c.max_len) +
                            " positions; sequence has " + std::to_string(L));

    Var x = ops::gather_rows(tape.param(tok_emb_), batch.tokens);
    if (c.method.kind == MethodKind::absolute || c.method.kind == MethodKind::sinusoid) {
        std::vector<std::size_t> positions(B * L);
        for (std::size_t i = 0; i < B * L; ++i) positions[i] = i % L;
        Var table = c.method.kind == MethodKind::absolute
                        ? tape.param(abs_->weights())
                        : tape.constant(Tensor(Shape{L, c.d_model}, sinusoid_table(0, L, c.d_model).storage(), c.dtype));
        x = ops::add(x, ops::gather_rows(table, positions));
    }

    std::optional<RelIndex> index;
    if (has_rel_table()) index = RelIndex::build(rel_, L);
    std::optional<Tensor> sinusoid_rows;
    if (c.method.kind == MethodKind::xlnet)
        sinusoid_rows = Tensor(Shape{2 * L - 1, c.d_head},
                               sinusoid_table(-static_cast<std::int64_t>(L) + 1, 2 * L - 1, c.d_head).storage(), c.dtype);

    if (trace) trace->weights.assign(c.layers, {});
    for (std::size_t l = 0; l < c.layers; ++l) {
        auto& layer = layers_[l];
        std::vector<Var> head_out;
        for (std::size_t h = 0; h < c.heads; ++h) {
            HeadContext ctx;
            ctx.method = &c.method;
            ctx.max_len = c.max_len;
            ctx.key_valid = batch.key_valid;
            if (index) {
                ctx.table = &rel_.weights(l, h);
                ctx.index = &*index;
            }
            if (sinusoid_rows) {
                ctx.xlnet = &layer.xlnet[h];
                ctx.sinusoid = &*sinusoid_rows;
            }
            auto att = attention_forward(tape, x, layer.heads[h], L, ctx);
            if (trace) trace->weights[l].push_back(att.weights.value());
            head_out.push_back(att.z);
        }
        x = ops::add(x, ops::concat_cols(head_out));
        Var hidden = ops::relu(ops::add_row_vector(ops::matmul(x, tape.param(layer.ff_w1)), tape.param(layer.ff_b1)));
        Var ff = ops::add_row_vector(ops::matmul(hidden, tape.param(layer.ff_w2)), tape.param(layer.ff_b2));
        x = ops::add(x, ff);
    }
    return ops::add_row_vector(ops::matmul(x, tape.param(out_w_)), tape.param(out_b_));
}

std::vector<Parameter*> Encoder::parameters() {
    std::vector<Parameter*> out{&tok_emb_};
    if (abs_) out.push_back(&abs_->weights());
    for (auto* p : rel_.parameters()) out.push_back(p);
    for (auto& layer : layers_) {
        for (auto& h : layer.heads) {
            out.push_back(&h.w_q);
            out.push_back(&h.w_k);
            out.push_back(&h.w_v);
        }
        for (auto& xp : layer.xlnet) {
            out.push_back(&xp.w_r);
            out.push_back(&xp.u);
            out.push_back(&xp.v);
        }
        out.push_back(&layer.ff_w1);
        out.push_back(&layer.ff_b1);
        out.push_back(&layer.ff_w2);
        out.push_back(&layer.ff_b2);
    }
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
}

std::vector<const Parameter*> Encoder::parameters() const {
    auto mut = const_cast<Encoder*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

Parameter* Encoder::find_parameter(const std::string& name) {
    for (auto* p : parameters())
        if (p->name == name) return p;
    return nullptr;
}

std::size_t Encoder::trainable_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters())
        if (p->trainable) n += p->value.numel();
    return n;
}

std::size_t Encoder::position_param_count() const {
    std::size_t n = 0;
    if (abs_) n += abs_->weights().value.numel();
    n += rel_.element_count();
    for (const auto& layer : layers_)
        for (const auto& xp : layer.xlnet) {
            n += xp.w_r.value.numel();
            if (xp.u.trainable) n += xp.u.value.numel() + xp.v.value.numel();
        }
    return n;
}

}  // namespace relpos
