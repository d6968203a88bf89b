#include "relpos/attention.hpp"

#include <cmath>
#include <string>

#include "relpos/errors.hpp"

namespace relpos {

RelIndex RelIndex::build(const RelTable& table, std::size_t seq_len) {
    RelIndex idx;
    idx.seq_len = seq_len;
    idx.rows.resize(seq_len * seq_len);
    for (std::size_t i = 0; i < seq_len; ++i)
        for (std::size_t j = 0; j < seq_len; ++j) idx.rows[i * seq_len + j] = table.row_index(i, j);
    return idx;
}

namespace {

struct Dims {
    std::size_t rows, d, seq_len, blocks;
};

Dims check_qk(const Tensor& q, const Tensor& k, std::size_t seq_len, const char* op) {
    require_same_dtype(q, k, op);
    require_same_shape(q, k, op);
    const std::size_t rows = q.rows();
    if (seq_len == 0 || rows % seq_len != 0)
        throw DimensionError(std::string(op) + ": " + std::to_string(rows) + " rows is not a multiple of length " +
                             std::to_string(seq_len));
    return {rows, q.cols(), seq_len, rows / seq_len};
}

void check_table(const Tensor& table, const RelIndex& index, std::size_t width, std::size_t seq_len, const char* op) {
    if (index.seq_len != seq_len)
        throw DimensionError(std::string(op) + ": index built for length " + std::to_string(index.seq_len) +
                             ", batch has length " + std::to_string(seq_len));
    if (table.ndim() != 2 || table.cols() != width)
        throw DimensionError(std::string(op) + ": table shape " + shape_str(table.shape()) + " needs row width " +
                             std::to_string(width));
    for (auto r : index.rows)
        if (r >= table.rows()) throw BoundsError(std::string(op) + ": index row outside table");
}

Tensor& grad_or_scratch(Tape& t, std::size_t id, Tensor& scratch) {
    if (t.requires_grad(id)) return t.grad(id);
    scratch = Tensor::zeros(t.value(id).shape());
    return scratch;
}

// Shared driver for the relative logit ops. `value(q, k, a, d)` returns the
// unscaled logit; `grad(g, q, k, a, gq, gk, ga, d)` accumulates its gradient
// with upstream g already scaled.
template <class Value, class Grad>
Var pairwise_logits(Var q, Var k, Var table, const RelIndex& index, std::size_t width, const char* op, Value value,
                    Grad grad) {
    Tape& t = q.tape();
    const Dims dm = check_qk(q.value(), k.value(), index.seq_len, op);
    check_table(table.value(), index, width, dm.seq_len, op);
    const std::size_t L = dm.seq_len, d = dm.d;
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& av = table.value();
    Tensor out({dm.rows, L}, qv.dtype());
    for (std::size_t b = 0; b < dm.blocks; ++b)
        for (std::size_t i = 0; i < L; ++i) {
            const double* qi = &qv[(b * L + i) * d];
            double* orow = &out[(b * L + i) * L];
            for (std::size_t j = 0; j < L; ++j) {
                const double* kj = &kv[(b * L + j) * d];
                const double* a = &av[index.rows[i * L + j] * width];
                orow[j] = value(qi, kj, a, d) * inv;
            }
        }
    const std::size_t iq = q.id(), ik = k.id(), ia = table.id();
    return t.record(std::move(out), {iq, ik, ia}, [iq, ik, ia, dm, inv, width, index, grad](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& av = t.value(ia);
        Tensor sq, sk, sa;
        Tensor& gq = grad_or_scratch(t, iq, sq);
        Tensor& gk = grad_or_scratch(t, ik, sk);
        Tensor& ga = grad_or_scratch(t, ia, sa);
        const std::size_t L = dm.seq_len, d = dm.d;
        for (std::size_t b = 0; b < dm.blocks; ++b)
            for (std::size_t i = 0; i < L; ++i) {
                const std::size_t qi = (b * L + i) * d;
                for (std::size_t j = 0; j < L; ++j) {
                    const double gij = g[(b * L + i) * L + j] * inv;
                    if (gij == 0.0) continue;
                    const std::size_t kj = (b * L + j) * d;
                    const std::size_t ar = index.rows[i * L + j] * width;
                    grad(gij, &qv[qi], &kv[kj], &av[ar], &gq[qi], &gk[kj], &ga[ar], d);
                }
            }
    });
}

}  // namespace

Var logits_vanilla(Var q, Var k, std::size_t seq_len) {
    Tape& t = q.tape();
    const Dims dm = check_qk(q.value(), k.value(), seq_len, "logits_vanilla");
    const std::size_t L = dm.seq_len, d = dm.d;
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    Tensor out({dm.rows, L}, qv.dtype());
    for (std::size_t b = 0; b < dm.blocks; ++b)
        for (std::size_t i = 0; i < L; ++i) {
            const double* qi = &qv[(b * L + i) * d];
            for (std::size_t j = 0; j < L; ++j) {
                const double* kj = &kv[(b * L + j) * d];
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
                out[(b * L + i) * L + j] = s * inv;
            }
        }
    const std::size_t iq = q.id(), ik = k.id();
    return t.record(std::move(out), {iq, ik}, [iq, ik, dm, inv](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        Tensor sq, sk;
        Tensor& gq = grad_or_scratch(t, iq, sq);
        Tensor& gk = grad_or_scratch(t, ik, sk);
        const std::size_t L = dm.seq_len, d = dm.d;
        for (std::size_t b = 0; b < dm.blocks; ++b)
            for (std::size_t i = 0; i < L; ++i) {
                const std::size_t qi = (b * L + i) * d;
                for (std::size_t j = 0; j < L; ++j) {
                    const double gij = g[(b * L + i) * L + j] * inv;
                    const std::size_t kj = (b * L + j) * d;
                    for (std::size_t c = 0; c < d; ++c) {
                        gq[qi + c] += gij * kv[kj + c];
                        gk[kj + c] += gij * qv[qi + c];
                    }
                }
            }
    });
}

Var logits_shaw(Var q, Var k, Var table, const RelIndex& index) {
    const std::size_t d = q.value().cols();
    return pairwise_logits(
        q, k, table, index, d, "logits_shaw",
        [](const double* qi, const double* kj, const double* a, std::size_t d) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += qi[c] * (kj[c] + a[c]);
            return s;
        },
        [](double g, const double* qi, const double* kj, const double* a, double* gq, double* gk, double* ga,
           std::size_t d) {
            for (std::size_t c = 0; c < d; ++c) {
                gq[c] += g * (kj[c] + a[c]);
                gk[c] += g * qi[c];
                ga[c] += g * qi[c];
            }
        });
}

Var logits_m1m2(Var q, Var k, Var table, const RelIndex& index) {
    return pairwise_logits(
        q, k, table, index, 1, "logits_m1m2",
        [](const double* qi, const double* kj, const double* a, std::size_t d) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
            return s * a[0];
        },
        [](double g, const double* qi, const double* kj, const double* a, double* gq, double* gk, double* ga,
           std::size_t d) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                s += qi[c] * kj[c];
                gq[c] += g * a[0] * kj[c];
                gk[c] += g * a[0] * qi[c];
            }
            ga[0] += g * s;
        });
}

Var logits_m3(Var q, Var k, Var table, const RelIndex& index) {
    const std::size_t d = q.value().cols();
    return pairwise_logits(
        q, k, table, index, d, "logits_m3",
        [](const double* qi, const double* kj, const double* a, std::size_t d) {
            return sum_prod3({qi, d}, {kj, d}, {a, d});
        },
        [](double g, const double* qi, const double* kj, const double* a, double* gq, double* gk, double* ga,
           std::size_t d) {
            for (std::size_t c = 0; c < d; ++c) {
                gq[c] += g * kj[c] * a[c];
                gk[c] += g * qi[c] * a[c];
                ga[c] += g * qi[c] * kj[c];
            }
        });
}

Var logits_m4(Var q, Var k, Var table, const RelIndex& index) {
    const std::size_t d = q.value().cols();
    return pairwise_logits(
        q, k, table, index, d, "logits_m4",
        [](const double* qi, const double* kj, const double* a, std::size_t d) {
            double qk = 0.0, qa = 0.0, ka = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                qk += qi[c] * kj[c];
                qa += qi[c] * a[c];
                ka += kj[c] * a[c];
            }
            return qk + qa + ka;
        },
        [](double g, const double* qi, const double* kj, const double* a, double* gq, double* gk, double* ga,
           std::size_t d) {
            for (std::size_t c = 0; c < d; ++c) {
                gq[c] += g * (kj[c] + a[c]);
                gk[c] += g * (qi[c] + a[c]);
                ga[c] += g * (qi[c] + kj[c]);
            }
        });
}

Var logits_m4_alt(Var q, Var k, Var table, const RelIndex& index) {
    const std::size_t d = q.value().cols();
    return pairwise_logits(
        q, k, table, index, d, "logits_m4_alt",
        [](const double* qi, const double* kj, const double* a, std::size_t d) {
            double shifted = 0.0, aa = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                shifted += (qi[c] + a[c]) * (kj[c] + a[c]);
                aa += a[c] * a[c];
            }
            return shifted - aa;
        },
        // d/dq = k + a, d/dk = q + a, d/da = (k + a) + (q + a) - 2a
        [](double g, const double* qi, const double* kj, const double* a, double* gq, double* gk, double* ga,
           std::size_t d) {
            for (std::size_t c = 0; c < d; ++c) {
                const double qa = qi[c] + a[c];
                const double ka = kj[c] + a[c];
                gq[c] += g * ka;
                gk[c] += g * qa;
                ga[c] += g * (ka + qa - 2.0 * a[c]);
            }
        });
}

Var logits_xlnet(Var q, Var k, Var u, Var v, Var rw, std::size_t seq_len) {
    Tape& t = q.tape();
    const Dims dm = check_qk(q.value(), k.value(), seq_len, "logits_xlnet");
    const std::size_t L = dm.seq_len, d = dm.d;
    if (u.value().numel() != d || v.value().numel() != d)
        throw DimensionError("logits_xlnet: bias vectors must have length " + std::to_string(d));
    if (rw.value().ndim() != 2 || rw.value().rows() != 2 * L - 1 || rw.value().cols() != d)
        throw DimensionError("logits_xlnet: position rows " + shape_str(rw.value().shape()) + " must be " +
                             std::to_string(2 * L - 1) + "x" + std::to_string(d));
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& uv = u.value();
    const Tensor& vv = v.value();
    const Tensor& rv = rw.value();
    Tensor out({dm.rows, L}, qv.dtype());
    for (std::size_t b = 0; b < dm.blocks; ++b)
        for (std::size_t i = 0; i < L; ++i) {
            const double* qi = &qv[(b * L + i) * d];
            for (std::size_t j = 0; j < L; ++j) {
                const double* kj = &kv[(b * L + j) * d];
                const double* r = &rv[(j + L - 1 - i) * d];
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += (qi[c] + uv[c]) * kj[c] + (qi[c] + vv[c]) * r[c];
                out[(b * L + i) * L + j] = s * inv;
            }
        }
    const std::size_t iq = q.id(), ik = k.id(), iu = u.id(), iv = v.id(), ir = rw.id();
    return t.record(std::move(out), {iq, ik, iu, iv, ir}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& qv = t.value(iq);
        const Tensor& kv = t.value(ik);
        const Tensor& uv = t.value(iu);
        const Tensor& vv = t.value(iv);
        const Tensor& rv = t.value(ir);
        Tensor sq, sk, su, sv, sr;
        Tensor& gq = grad_or_scratch(t, iq, sq);
        Tensor& gk = grad_or_scratch(t, ik, sk);
        Tensor& gu = grad_or_scratch(t, iu, su);
        Tensor& gv = grad_or_scratch(t, iv, sv);
        Tensor& gr = grad_or_scratch(t, ir, sr);
        for (std::size_t b = 0; b < dm.blocks; ++b)
            for (std::size_t i = 0; i < L; ++i) {
                const std::size_t qi = (b * L + i) * d;
                for (std::size_t j = 0; j < L; ++j) {
                    const double gij = g[(b * L + i) * L + j] * inv;
                    if (gij == 0.0) continue;
                    const std::size_t kj = (b * L + j) * d;
                    const std::size_t r = (j + L - 1 - i) * d;
                    for (std::size_t c = 0; c < d; ++c) {
                        gq[qi + c] += gij * (kv[kj + c] + rv[r + c]);
                        gk[kj + c] += gij * (qv[qi + c] + uv[c]);
                        gu[c] += gij * kv[kj + c];
                        gv[c] += gij * rv[r + c];
                        gr[r + c] += gij * (qv[qi + c] + vv[c]);
                    }
                }
            }
    });
}

Var mask_keys(Var logits, std::span<const std::uint8_t> key_valid, std::size_t seq_len) {
    Tape& t = logits.tape();
    const Tensor& lv = logits.value();
    const std::size_t rows = lv.rows();
    if (lv.cols() != seq_len || rows % seq_len != 0 || key_valid.size() != rows)
        throw DimensionError("mask_keys: logits " + shape_str(lv.shape()) + " with " +
                             std::to_string(key_valid.size()) + " mask entries and length " +
                             std::to_string(seq_len));
    Tensor out = lv;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = (r / seq_len) * seq_len;
        for (std::size_t j = 0; j < seq_len; ++j)
            if (!key_valid[base + j]) out[r * seq_len + j] += kMaskedLogit;
    }
    const std::size_t il = logits.id();
    return t.record(std::move(out), {il}, [il](Tape& t, std::size_t self) {
        auto& gl = t.grad(il);
        const Tensor& g = t.grad(self);
        for (std::size_t i = 0; i < gl.numel(); ++i) gl[i] += g[i];
    });
}

Var method_logits(Tape& tape, Var q, Var k, std::size_t seq_len, const HeadContext& ctx) {
    if (ctx.method == nullptr) throw UsageError("method_logits: no position method");
    auto need_table = [&]() -> Var {
        if (ctx.table == nullptr || ctx.index == nullptr)
            throw UsageError(std::string("method ") + method_kind_name(ctx.method->kind) + " needs a relative table");
        return tape.param(*ctx.table);
    };
    switch (ctx.method->kind) {
        case MethodKind::absolute:
        case MethodKind::sinusoid: return logits_vanilla(q, k, seq_len);
        case MethodKind::shaw: return logits_shaw(q, k, need_table(), *ctx.index);
        case MethodKind::method1:
        case MethodKind::method2: return logits_m1m2(q, k, need_table(), *ctx.index);
        case MethodKind::method3: return logits_m3(q, k, need_table(), *ctx.index);
        case MethodKind::method4: return logits_m4(q, k, need_table(), *ctx.index);
        case MethodKind::xlnet: {
            if (ctx.xlnet == nullptr || ctx.sinusoid == nullptr)
                throw UsageError("xlnet logits need W_R, biases and sinusoid rows");
            Var rw = ops::matmul(tape.constant(*ctx.sinusoid), tape.param(ctx.xlnet->w_r));
            return logits_xlnet(q, k, tape.param(ctx.xlnet->u), tape.param(ctx.xlnet->v), rw, seq_len);
        }
    }
    throw UsageError("unhandled position method");
}

AttentionOutput attention_forward(Tape& tape, Var x, HeadParams& head, std::size_t seq_len, const HeadContext& ctx) {
    if (ctx.method != nullptr && ctx.method->kind == MethodKind::absolute && seq_len > ctx.max_len)
        throw CapacityError("absolute position embeddings cover " + std::to_string(ctx.max_len) +
                            " positions; sequence has " + std::to_string(seq_len));
    Var q = ops::matmul(x, tape.param(head.w_q));
    Var k = ops::matmul(x, tape.param(head.w_k));
    Var v = ops::matmul(x, tape.param(head.w_v));
    Var e = method_logits(tape, q, k, seq_len, ctx);
    if (!ctx.key_valid.empty()) e = mask_keys(e, ctx.key_valid, seq_len);
    Var w = ops::softmax_rows(e);
    return {ops::block_matmul(w, v, seq_len), w};
}

}  // namespace relpos
