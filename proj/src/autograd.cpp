#include "relpos/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "relpos/errors.hpp"

namespace relpos {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape(), value.dtype())) {}

void Parameter::zero_grad() { grad.fill(0.0); }

void zero_grads(std::span<Parameter* const> params) {
    for (auto* p : params) p->zero_grad();
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Node n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    Node n;
    value.round_to_dtype();
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape(), n.value.dtype());
    return n.grad;
}

const Tensor& Tape::grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.grad.numel() == 0) throw UsageError("gradient not available for node " + std::to_string(id));
    return n.grad;
}

void Tape::backward(Var loss) {
    if (&loss.tape() != this) throw UsageError("backward: variable belongs to another tape");
    const std::size_t root = loss.id();
    if (nodes_[root].value.numel() != 1)
        throw UsageError("backward: root must be a scalar, got shape " + shape_str(nodes_[root].value.shape()));
    for (auto& n : nodes_)
        if (n.grad.numel() != 0) n.grad.fill(0.0);
    if (!nodes_[root].requires_grad) return;
    grad(root)[0] = 1.0;
    for (std::size_t id = root + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.numel() == 0) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param != nullptr && n.param->trainable) {
            auto& pg = n.param->grad;
            for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
            pg.round_to_dtype();
        }
    }
}

namespace ops {

namespace {

Tape& tape_of(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw UsageError("operands recorded on different tapes");
    return a.tape();
}

void accumulate(Tape& t, std::size_t id, const Tensor& delta) {
    if (!t.requires_grad(id)) return;
    auto& g = t.grad(id);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = relpos::matmul(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) accumulate(t, ia, matmul_nt(g, t.value(ib)));
        if (t.requires_grad(ib)) accumulate(t, ib, matmul_tn(t.value(ia), g));
    });
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = relpos::add(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        accumulate(t, ia, t.grad(self));
        accumulate(t, ib, t.grad(self));
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = relpos::add(a.value(), relpos::scale(b.value(), -1.0));
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        accumulate(t, ia, t.grad(self));
        accumulate(t, ib, relpos::scale(t.grad(self), -1.0));
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor out = relpos::mul(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) accumulate(t, ia, relpos::mul(g, t.value(ib)));
        if (t.requires_grad(ib)) accumulate(t, ib, relpos::mul(g, t.value(ia)));
    });
}

Var scale(Var a, double s) {
    Tape& t = a.tape();
    const std::size_t ia = a.id();
    return t.record(relpos::scale(a.value(), s), {ia}, [ia, s](Tape& t, std::size_t self) {
        accumulate(t, ia, relpos::scale(t.grad(self), s));
    });
}

Var transpose(Var a) {
    Tape& t = a.tape();
    const std::size_t ia = a.id();
    return t.record(relpos::transpose(a.value()), {ia}, [ia](Tape& t, std::size_t self) {
        accumulate(t, ia, relpos::transpose(t.grad(self)));
    });
}

Var relu(Var a) {
    Tape& t = a.tape();
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.id();
    return t.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Tensor& x = t.value(ia);
        const Tensor& g = t.grad(self);
        auto& gi = t.grad(ia);
        for (std::size_t i = 0; i < gi.numel(); ++i)
            if (x[i] > 0.0) gi[i] += g[i];
    });
}

Var add_row_vector(Var a, Var bias) {
    Tape& t = tape_of(a, bias);
    const Tensor& av = a.value();
    const Tensor& bv = bias.value();
    require_same_dtype(av, bv, "add_row_vector");
    const std::size_t r = av.rows(), c = av.cols();
    if (bv.numel() != c)
        throw DimensionError("add_row_vector: bias " + shape_str(bv.shape()) + " vs matrix " + shape_str(av.shape()));
    Tensor out = av;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) += bv[j];
    const std::size_t ia = a.id(), ib = bias.id();
    return t.record(std::move(out), {ia, ib}, [ia, ib, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        accumulate(t, ia, g);
        if (t.requires_grad(ib)) {
            auto& gb = t.grad(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
    });
}

Var softmax_rows(Var e) {
    Tape& t = e.tape();
    const std::size_t ie = e.id();
    return t.record(relpos::softmax_rows(e.value()), {ie}, [ie](Tape& t, std::size_t self) {
        const Tensor& y = t.value(self);
        const Tensor& g = t.grad(self);
        auto& ge = t.grad(ie);
        const std::size_t p = y.rows(), q = y.cols();
        for (std::size_t i = 0; i < p; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < q; ++j) inner += g[i * q + j] * y[i * q + j];
            for (std::size_t j = 0; j < q; ++j) ge[i * q + j] += y[i * q + j] * (g[i * q + j] - inner);
        }
    });
}

Var sum(Var a) {
    Tape& t = a.tape();
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    const std::size_t ia = a.id();
    return t.record(Tensor::scalar(s, a.value().dtype()), {ia}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        auto& gi = t.grad(ia);
        for (auto& v : gi.data()) v += g;
    });
}

Var sum_prod3(Var a, Var b, Var c) {
    Tape& t = tape_of(a, b);
    tape_of(a, c);
    const double s = relpos::sum_prod3(a.value().data(), b.value().data(), c.value().data());
    const std::size_t ia = a.id(), ib = b.id(), ic = c.id();
    return t.record(Tensor::scalar(s, a.value().dtype()), {ia, ib, ic}, [ia, ib, ic](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        const Tensor& cv = t.value(ic);
        const std::size_t n = av.numel();
        if (t.requires_grad(ia)) {
            auto& ga = t.grad(ia);
            for (std::size_t k = 0; k < n; ++k) ga[k] += g * bv[k] * cv[k];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad(ib);
            for (std::size_t k = 0; k < n; ++k) gb[k] += g * av[k] * cv[k];
        }
        if (t.requires_grad(ic)) {
            auto& gc = t.grad(ic);
            for (std::size_t k = 0; k < n; ++k) gc[k] += g * av[k] * bv[k];
        }
    });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
    Tape& t = table.tape();
    const Tensor& tv = table.value();
    const std::size_t r = tv.rows(), c = tv.cols();
    if (indices.empty()) throw DimensionError("gather_rows: empty index list");
    Tensor out({indices.size(), c}, tv.dtype());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= r)
            throw BoundsError("gather_rows: index " + std::to_string(indices[i]) + " outside table of " +
                              std::to_string(r) + " rows");
        std::copy_n(tv.row(indices[i]).begin(), c, out.row(i).begin());
    }
    const std::size_t it = table.id();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return t.record(std::move(out), {it}, [it, idx = std::move(idx), c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        auto& gt = t.grad(it);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += g[i * c + j];
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    Tape& t = parts[0].tape();
    const std::size_t r = parts[0].value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> ids, widths;
    for (const auto& p : parts) {
        tape_of(parts[0], p);
        require_same_dtype(parts[0].value(), p.value(), "concat_cols");
        if (p.value().rows() != r)
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].value().shape()) + " vs " +
                                 shape_str(p.value().shape()));
        ids.push_back(p.id());
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor out({r, total}, parts[0].value().dtype());
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(pv.row(i).begin(), widths[k], out.row(i).begin() + off);
        off += widths[k];
    }
    auto inputs = ids;
    return t.record(std::move(out), std::move(inputs), [ids, widths, r, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.requires_grad(ids[k])) {
                auto& gk = t.grad(ids[k]);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) gk[i * widths[k] + j] += g[i * total + off + j];
            }
            off += widths[k];
        }
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    Tape& t = a.tape();
    const Tensor& av = a.value();
    const std::size_t r = av.rows(), c = av.cols();
    if (count == 0 || begin + count > c)
        throw BoundsError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") outside " + std::to_string(c) + " columns");
    Tensor out({r, count}, av.dtype());
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(av.row(i).begin() + begin, count, out.row(i).begin());
    const std::size_t ia = a.id();
    return t.record(std::move(out), {ia}, [ia, r, c, begin, count](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j) ga[i * c + begin + j] += g[i * count + j];
    });
}

Var block_matmul(Var p, Var v, std::size_t block) {
    Tape& t = tape_of(p, v);
    const Tensor& pv = p.value();
    const Tensor& vv = v.value();
    require_same_dtype(pv, vv, "block_matmul");
    const std::size_t rows = pv.rows(), d = vv.cols();
    if (block == 0 || pv.cols() != block || rows % block != 0 || vv.rows() != rows)
        throw DimensionError("block_matmul: shapes " + shape_str(pv.shape()) + " and " + shape_str(vv.shape()) +
                             " with block " + std::to_string(block));
    const std::size_t nblocks = rows / block;
    Tensor out({rows, d}, pv.dtype());
    for (std::size_t b = 0; b < nblocks; ++b) {
        const std::size_t base = b * block;
        for (std::size_t i = 0; i < block; ++i) {
            double* orow = &out[(base + i) * d];
            for (std::size_t j = 0; j < block; ++j) {
                const double w = pv[(base + i) * block + j];
                const double* vrow = &vv[(base + j) * d];
                for (std::size_t c = 0; c < d; ++c) orow[c] += w * vrow[c];
            }
        }
    }
    const std::size_t ip = p.id(), iv = v.id();
    return t.record(std::move(out), {ip, iv}, [ip, iv, block, nblocks, d](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& pv = t.value(ip);
        const Tensor& vv = t.value(iv);
        const bool need_p = t.requires_grad(ip), need_v = t.requires_grad(iv);
        Tensor* gp = need_p ? &t.grad(ip) : nullptr;
        Tensor* gv = need_v ? &t.grad(iv) : nullptr;
        for (std::size_t b = 0; b < nblocks; ++b) {
            const std::size_t base = b * block;
            for (std::size_t i = 0; i < block; ++i) {
                const double* grow = &g[(base + i) * d];
                for (std::size_t j = 0; j < block; ++j) {
                    const double* vrow = &vv[(base + j) * d];
                    if (need_p) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < d; ++c) s += grow[c] * vrow[c];
                        (*gp)[(base + i) * block + j] += s;
                    }
                    if (need_v) {
                        const double w = pv[(base + i) * block + j];
                        double* gvrow = &(*gv)[(base + j) * d];
                        for (std::size_t c = 0; c < d; ++c) gvrow[c] += w * grow[c];
                    }
                }
            }
        }
    });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const std::uint8_t> mask) {
    Tape& t = logits.tape();
    const Tensor& lv = logits.value();
    const std::size_t r = lv.rows(), c = lv.cols();
    if (targets.size() != r || mask.size() != r)
        throw DimensionError("cross_entropy: " + std::to_string(r) + " rows but " + std::to_string(targets.size()) +
                             " targets and " + std::to_string(mask.size()) + " mask entries");
    require_finite(lv, "cross_entropy");
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    Tensor probs({r, c}, DType::f64);
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        if (!mask[i]) continue;
        if (targets[i] >= c)
            throw BoundsError("cross_entropy: target " + std::to_string(targets[i]) + " outside " +
                              std::to_string(c) + " classes");
        auto row = lv.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs.at(i, j) = std::exp(row[j] - mx);
            z += probs.at(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) probs.at(i, j) /= z;
        total += -(row[targets[i]] - mx - std::log(z));
    }
    const double loss = count ? total / static_cast<double>(count) : 0.0;
    const std::size_t il = logits.id();
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    return t.record(Tensor::scalar(loss, lv.dtype()), {il},
                    [il, probs = std::move(probs), tg = std::move(tg), mk = std::move(mk), count, c](Tape& t,
                                                                                                     std::size_t self) {
                        if (count == 0) return;
                        const double g = t.grad(self)[0] / static_cast<double>(count);
                        auto& gl = t.grad(il);
                        for (std::size_t i = 0; i < mk.size(); ++i) {
                            if (!mk[i]) continue;
                            for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * probs.at(i, j);
                            gl[i * c + tg[i]] -= g;
                        }
                    });
}

}  // namespace ops

}  // namespace relpos
