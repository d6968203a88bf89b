#include "relpos/checks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include "relpos/attention.hpp"
#include "relpos/encoder.hpp"
#include "relpos/rng.hpp"

namespace relpos {

namespace {

Tensor random_tensor(Shape shape, SeededRng& rng, double sd = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal(0.0, sd);
    return t;
}

void perturb(Parameter& p, SeededRng& rng, double sd) {
    for (auto& v : p.value.data()) v += rng.normal(0.0, sd);
}

// Logits for a method on stacked q, k; position parameters live in `table` or `xl`.
Var logits_for(Tape& tape, MethodKind kind, Var q, Var k, Parameter* table, const RelIndex* index, XlnetParams* xl,
               const Tensor* sinusoid, std::size_t L) {
    PositionMethod method;
    method.kind = kind;
    HeadContext ctx;
    ctx.method = &method;
    ctx.table = table;
    ctx.index = index;
    ctx.xlnet = xl;
    ctx.sinusoid = sinusoid;
    return method_logits(tape, q, k, L, ctx);
}

}  // namespace

std::vector<GradCheckResult> logit_gradcheck(MethodKind kind, std::uint64_t seed) {
    constexpr std::size_t B = 2, L = 5, n = 5, d = 4;
    SeededRng rng(seed);
    Parameter q("q", random_tensor({B * L, d}, rng));
    Parameter k("k", random_tensor({B * L, d}, rng));
    const Tensor weight = random_tensor({B * L, L}, rng);

    PositionMethod method;
    method.kind = kind;
    if (accepts_clip(kind)) method.clip_k = 2;
    std::optional<RelTable> table;
    std::optional<RelIndex> index;
    if (layout_for(kind) != TableLayout::none) {
        table.emplace(method, 1, 1, n, d);
        perturb(table->weights(0, 0), rng, 0.5);
        index = RelIndex::build(*table, L);
    }
    std::optional<XlnetParams> xl;
    std::optional<Tensor> sinusoid;
    if (kind == MethodKind::xlnet) {
        xl = XlnetParams{Parameter("w_r", random_tensor({d, d}, rng, 0.5)), Parameter("u", random_tensor({d}, rng)),
                         Parameter("v", random_tensor({d}, rng))};
        sinusoid = sinusoid_table(-static_cast<std::int64_t>(L) + 1, 2 * L - 1, d);
    }

    std::vector<Parameter*> params{&q, &k};
    if (table) params.push_back(&table->weights(0, 0));
    if (xl) {
        params.push_back(&xl->w_r);
        params.push_back(&xl->u);
        params.push_back(&xl->v);
    }
    auto loss = [&](Tape& tape) {
        Var e = logits_for(tape, kind, tape.param(q), tape.param(k), table ? &table->weights(0, 0) : nullptr,
                           index ? &*index : nullptr, xl ? &*xl : nullptr, sinusoid ? &*sinusoid : nullptr, L);
        return ops::sum(ops::mul(e, tape.constant(weight)));
    };
    return check_parameter_grads(loss, params);
}

std::vector<GradCheckResult> encoder_gradcheck(MethodKind kind, std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.d_model = 4;
    cfg.d_head = 2;
    cfg.max_len = 6;
    cfg.d_ff = 8;
    cfg.vocab = 5;
    cfg.method = default_method(kind, cfg.max_len);
    if (accepts_clip(kind)) cfg.method.clip_k = 3;
    if (kind == MethodKind::xlnet) cfg.method.xlnet_bias_enabled = true;
    Encoder model(cfg, seed);
    SeededRng rng = SeededRng(seed).fork(0x9c);
    for (auto* p : model.parameters()) {
        if (p->name.rfind("rel.", 0) == 0 || p->name.find("w_r") != std::string::npos ||
            p->name.find(".u") != std::string::npos || p->name.find(".v") != std::string::npos ||
            p->name.find("_b") != std::string::npos)
            perturb(*p, rng, 0.3);
    }

    constexpr std::size_t B = 2, L = 5;
    TokenBatch batch{B, L, {}, std::vector<std::uint8_t>(B * L, 1)};
    for (std::size_t i = 0; i < B * L; ++i) batch.tokens.push_back(rng.below(cfg.vocab));
    batch.key_valid[B * L - 1] = 0;
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < B * L; ++i) targets.push_back(rng.below(cfg.vocab));
    std::vector<std::uint8_t> mask(B * L, 1);
    mask[1] = 0;

    std::vector<Parameter*> params;
    for (auto* p : model.parameters())
        if (p->trainable) params.push_back(p);
    auto loss = [&](Tape& tape) { return ops::cross_entropy(model.forward(tape, batch), targets, mask); };
    return check_parameter_grads(loss, params);
}

double m4_forms_max_diff(std::size_t instances, std::uint64_t seed) {
    SeededRng rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < instances; ++t) {
        const auto L = static_cast<std::size_t>(rng.range(1, 8));
        const auto d = static_cast<std::size_t>(rng.range(1, 8));
        const auto B = static_cast<std::size_t>(rng.range(1, 3));
        const auto n = std::max<std::size_t>(L, 2);
        PositionMethod method{MethodKind::method4, static_cast<int>(rng.range(1, static_cast<std::int64_t>(n) - 1))};
        RelTable table(method, 1, 1, n, d);
        perturb(table.weights(0, 0), rng, 1.0);
        const auto index = RelIndex::build(table, L);
        Tape tape;
        Var q = tape.constant(random_tensor({B * L, d}, rng));
        Var k = tape.constant(random_tensor({B * L, d}, rng));
        Var a = tape.param(table.weights(0, 0));
        const Tensor direct = logits_m4(q, k, a, index).value();
        const Tensor rewritten = logits_m4_alt(q, k, a, index).value();
        worst = std::max(worst, max_abs_diff(direct, rewritten));
    }
    return worst;
}

std::vector<IdentityInitCheck> identity_init_checks(std::uint64_t seed) {
    constexpr std::size_t B = 2, L = 6, n = 8, d = 4;
    SeededRng rng(seed);
    std::vector<IdentityInitCheck> out;
    for (auto kind : all_method_kinds()) {
        if (!is_relative(kind)) continue;
        const auto method = default_method(kind, n);
        std::optional<RelTable> table;
        std::optional<RelIndex> index;
        if (layout_for(kind) != TableLayout::none) {
            table.emplace(method, 1, 1, n, d);
            index = RelIndex::build(*table, L);
        }
        std::optional<XlnetParams> xl;
        std::optional<Tensor> sinusoid;
        if (kind == MethodKind::xlnet) {
            // Fresh xlnet extras: W^R and both biases start at zero.
            xl = XlnetParams{Parameter("w_r", Tensor::zeros({d, d})), Parameter("u", Tensor::zeros({d})),
                             Parameter("v", Tensor::zeros({d}))};
            sinusoid = sinusoid_table(-static_cast<std::int64_t>(L) + 1, 2 * L - 1, d);
        }
        Tape tape;
        Var q = tape.constant(random_tensor({B * L, d}, rng));
        Var k = tape.constant(random_tensor({B * L, d}, rng));
        Var e = logits_for(tape, kind, q, k, table ? &table->weights(0, 0) : nullptr, index ? &*index : nullptr,
                           xl ? &*xl : nullptr, sinusoid ? &*sinusoid : nullptr, L);
        const Tensor with_positions = e.value();
        const Tensor plain = logits_vanilla(q, k, L).value();
        out.push_back({kind, max_abs_diff(with_positions, plain)});
    }
    return out;
}

std::vector<GradCheckResult> group_results(const std::vector<GradCheckResult>& results) {
    std::map<std::string, GradCheckResult> groups;
    for (const auto& r : results) {
        // "l1.h0.w_q" -> "w_q", "rel.l0.h1" -> "rel", "l0.ff_w1" -> "ff_w1"
        std::string key = r.name;
        if (key.rfind("rel.", 0) == 0) key = "rel";
        else if (auto dot = key.find_last_of('.'); dot != std::string::npos) key = key.substr(dot + 1);
        auto& g = groups[key];
        g.name = key;
        g.max_rel_error = std::max(g.max_rel_error, r.max_rel_error);
        g.coords += r.coords;
    }
    std::vector<GradCheckResult> out;
    for (auto& [_, g] : groups) out.push_back(g);
    return out;
}

}  // namespace relpos
