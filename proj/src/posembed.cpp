#include "relpos/posembed.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "relpos/errors.hpp"
#include "relpos/format.hpp"

namespace relpos {

namespace {

struct KindName {
    MethodKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {MethodKind::absolute, "absolute"}, {MethodKind::sinusoid, "sinusoid"}, {MethodKind::shaw, "shaw"},
    {MethodKind::xlnet, "xlnet"},       {MethodKind::method1, "method1"},   {MethodKind::method2, "method2"},
    {MethodKind::method3, "method3"},   {MethodKind::method4, "method4"},
};

}  // namespace

MethodKind parse_method_kind(const std::string& name) {
    for (const auto& kn : kKindNames)
        if (name == kn.name) return kn.kind;
    if (name == "m1") return MethodKind::method1;
    if (name == "m2") return MethodKind::method2;
    if (name == "m3") return MethodKind::method3;
    if (name == "m4") return MethodKind::method4;
    throw ConfigError("unknown position method '" + name + "'");
}

const char* method_kind_name(MethodKind kind) {
    for (const auto& kn : kKindNames)
        if (kn.kind == kind) return kn.name;
    return "?";
}

std::vector<MethodKind> all_method_kinds() {
    std::vector<MethodKind> out;
    for (const auto& kn : kKindNames) out.push_back(kn.kind);
    return out;
}

bool is_relative(MethodKind kind) { return kind != MethodKind::absolute && kind != MethodKind::sinusoid; }

bool accepts_clip(MethodKind kind) {
    return kind == MethodKind::shaw || kind == MethodKind::method2 || kind == MethodKind::method3 ||
           kind == MethodKind::method4;
}

TableLayout layout_for(MethodKind kind) {
    switch (kind) {
        case MethodKind::method1: return TableLayout::scalar_unsigned;
        case MethodKind::method2: return TableLayout::scalar_signed;
        case MethodKind::shaw:
        case MethodKind::method3:
        case MethodKind::method4: return TableLayout::vector_signed;
        default: return TableLayout::none;
    }
}

void PositionMethod::validate(std::size_t n) const {
    if (clip_k) {
        if (!accepts_clip(kind))
            throw ConfigError(std::string("clip distance is not used by method ") + method_kind_name(kind));
        if (*clip_k < 1 || static_cast<std::size_t>(*clip_k) > n - 1)
            throw ConfigError("clip distance k=" + std::to_string(*clip_k) + " outside [1, " + std::to_string(n - 1) +
                              "]");
    }
    if (xlnet_bias_enabled && kind != MethodKind::xlnet)
        throw ConfigError("query biases only apply to the xlnet method");
}

PositionMethod default_method(MethodKind kind, std::size_t n) {
    PositionMethod m;
    m.kind = kind;
    if (accepts_clip(kind)) m.clip_k = static_cast<int>(std::min<std::size_t>(32, n - 1));
    m.saturate = kind == MethodKind::method1;
    return m;
}

std::int64_t clip(std::int64_t x, std::int64_t k) { return std::max(-k, std::min(k, x)); }

std::vector<double> sinusoid_encoding(std::int64_t pos, std::size_t d) {
    if (d == 0 || d % 2 != 0) throw ConfigError("sinusoid dimension must be even and positive, got " + std::to_string(d));
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d / 2; ++i) {
        const double angle =
            static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
        out[2 * i] = std::sin(angle);
        out[2 * i + 1] = std::cos(angle);
    }
    return out;
}

Tensor sinusoid_table(std::int64_t first, std::size_t count, std::size_t d) {
    Tensor t({count, d});
    for (std::size_t r = 0; r < count; ++r) {
        auto v = sinusoid_encoding(first + static_cast<std::int64_t>(r), d);
        std::copy(v.begin(), v.end(), t.row(r).begin());
    }
    return t;
}

RelTable::RelTable(const PositionMethod& method, std::size_t layers, std::size_t heads, std::size_t n,
                   std::size_t d_z)
    : method_(method), layout_(layout_for(method.kind)), layers_(layers), heads_(heads), n_(n) {
    if (layout_ == TableLayout::none)
        throw ConfigError(std::string("method ") + method_kind_name(method.kind) + " has no relative table");
    if (n < 2) throw ConfigError("maximum length must be at least 2");
    method.validate(n);
    width_ = layout_ == TableLayout::vector_signed ? d_z : 1;
    const double init = (method.kind == MethodKind::shaw || method.kind == MethodKind::method4) ? 0.0 : 1.0;
    weights_.reserve(layers * heads);
    for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t h = 0; h < heads; ++h)
            weights_.emplace_back("rel.l" + std::to_string(l) + ".h" + std::to_string(h),
                                  Tensor::full({rows(), width_}, init));
}

std::size_t RelTable::rows() const { return layout_ == TableLayout::scalar_unsigned ? n_ : 2 * n_ - 1; }

std::size_t RelTable::element_count() const {
    std::size_t total = 0;
    for (const auto& w : weights_) total += w.value.numel();
    return total;
}

Parameter& RelTable::weights(std::size_t layer, std::size_t head) {
    if (layer >= layers_ || head >= heads_)
        throw BoundsError("relative table has no layer " + std::to_string(layer) + " head " + std::to_string(head));
    return weights_[layer * heads_ + head];
}

const Parameter& RelTable::weights(std::size_t layer, std::size_t head) const {
    return const_cast<RelTable*>(this)->weights(layer, head);
}

std::vector<Parameter*> RelTable::parameters() {
    std::vector<Parameter*> out;
    for (auto& w : weights_) out.push_back(&w);
    return out;
}

std::int64_t RelTable::min_offset() const {
    return layout_ == TableLayout::scalar_unsigned ? 0 : -static_cast<std::int64_t>(n_ - 1);
}

std::int64_t RelTable::max_offset() const { return static_cast<std::int64_t>(n_ - 1); }

std::size_t RelTable::row_for_offset(std::int64_t offset) const {
    const auto limit = static_cast<std::int64_t>(n_ - 1);
    if (layout_ == TableLayout::scalar_unsigned) {
        std::int64_t dist = offset < 0 ? -offset : offset;
        if (dist > limit) {
            if (!method_.saturate)
                throw CapacityError("relative distance " + std::to_string(dist) + " exceeds table extent " +
                                    std::to_string(limit));
            dist = limit;
        }
        return static_cast<std::size_t>(dist);
    }
    std::int64_t d = method_.clip_k ? clip(offset, *method_.clip_k) : offset;
    if (d > limit || d < -limit) {
        if (!method_.saturate)
            throw CapacityError("relative offset " + std::to_string(d) + " exceeds table extent +/-" +
                                std::to_string(limit));
        d = clip(d, limit);
    }
    return static_cast<std::size_t>(d + limit);
}

std::size_t RelTable::row_index(std::size_t i, std::size_t j) const {
    return row_for_offset(static_cast<std::int64_t>(j) - static_cast<std::int64_t>(i));
}

std::span<const double> RelTable::resolve(std::size_t layer, std::size_t head, std::size_t i, std::size_t j) const {
    const auto& w = weights(layer, head);
    return w.value.row(row_index(i, j));
}

Tensor RelTable::export_weights(std::size_t layer, std::size_t head, std::int64_t lo, std::int64_t hi) const {
    if (lo > hi || lo < min_offset() || hi > max_offset())
        throw BoundsError("export range [" + std::to_string(lo) + ", " + std::to_string(hi) + "] outside table [" +
                          std::to_string(min_offset()) + ", " + std::to_string(max_offset()) + "]");
    const auto& w = weights(layer, head).value;
    const std::size_t count = static_cast<std::size_t>(hi - lo + 1);
    Tensor out({count, width_});
    const std::int64_t base = layout_ == TableLayout::scalar_unsigned ? 0 : static_cast<std::int64_t>(n_ - 1);
    for (std::size_t r = 0; r < count; ++r) {
        const auto src = static_cast<std::size_t>(lo + static_cast<std::int64_t>(r) + base);
        std::copy_n(w.row(src).begin(), width_, out.row(r).begin());
    }
    return out;
}

AbsTable::AbsTable(std::size_t n, std::size_t d_x, SeededRng& rng, double stddev) {
    Tensor t({n, d_x});
    for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    weights_ = Parameter("abs", std::move(t));
}

std::size_t param_count(const PositionMethod& method, std::size_t m, std::size_t h, std::size_t n, std::size_t d) {
    switch (method.kind) {
        case MethodKind::absolute: return n * d;
        case MethodKind::sinusoid: return 0;
        case MethodKind::shaw:
        case MethodKind::method3:
        case MethodKind::method4: return m * h * (2 * n - 1) * d;
        case MethodKind::method1: return m * h * n;
        case MethodKind::method2: return m * h * (2 * n - 1);
        case MethodKind::xlnet: return m * h * d * d + (method.xlnet_bias_enabled ? 2 * m * h * d : 0);
    }
    return 0;
}

std::string param_count_formula(const PositionMethod& method) {
    switch (method.kind) {
        case MethodKind::absolute: return "nd";
        case MethodKind::sinusoid: return "0";
        case MethodKind::shaw:
        case MethodKind::method3:
        case MethodKind::method4: return "mh(2n-1)d";
        case MethodKind::method1: return "mhn";
        case MethodKind::method2: return "mh(2n-1)";
        case MethodKind::xlnet: return method.xlnet_bias_enabled ? "mhd^2+2mhd" : "mhd^2";
    }
    return "?";
}

std::string embedding_weights_csv(const Tensor& weights, std::int64_t lo) {
    std::ostringstream os;
    os << "rel_pos";
    for (std::size_t c = 0; c < weights.cols(); ++c) os << ",dim_" << c;
    os << '\n';
    for (std::size_t r = 0; r < weights.rows(); ++r) {
        os << lo + static_cast<std::int64_t>(r);
        for (double v : weights.row(r)) os << ',' << format_double(v);
        os << '\n';
    }
    return os.str();
}

}  // namespace relpos
