#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relpos/autograd.hpp"
#include "relpos/rng.hpp"
#include "relpos/tensor.hpp"

namespace relpos {

enum class MethodKind { absolute, sinusoid, shaw, xlnet, method1, method2, method3, method4 };

MethodKind parse_method_kind(const std::string& name);
const char* method_kind_name(MethodKind kind);
std::vector<MethodKind> all_method_kinds();

/// True for schemes that act inside attention (everything except absolute/sinusoid).
bool is_relative(MethodKind kind);
/// True for schemes that accept a clipping distance.
bool accepts_clip(MethodKind kind);

enum class TableLayout { none, scalar_unsigned, scalar_signed, vector_signed };

TableLayout layout_for(MethodKind kind);

struct PositionMethod {
    MethodKind kind = MethodKind::method4;
    std::optional<int> clip_k;
    bool xlnet_bias_enabled = false;
    /// When set, offsets beyond the table clamp to its outermost entry instead
    /// of raising CapacityError. Inference-time extrapolation rule for
    /// unclipped tables.
    bool saturate = false;

    /// Throws ConfigError unless the invariants hold for maximum length n.
    void validate(std::size_t n) const;
};

/// Method with the library defaults for maximum length n: clip distance
/// min(32, n - 1) where clipping applies, saturation on for method1.
PositionMethod default_method(MethodKind kind, std::size_t n);

/// max(-k, min(k, x))
std::int64_t clip(std::int64_t x, std::int64_t k);

/// Sinusoid vector: entry 2i = sin(pos / 10000^(2i/d)), entry 2i+1 = cos(same).
/// Negative positions are evaluated directly.
std::vector<double> sinusoid_encoding(std::int64_t pos, std::size_t d);

/// Rows for positions first, first+1, ..., first+count-1.
Tensor sinusoid_table(std::int64_t first, std::size_t count, std::size_t d);

/// Learnable relative-position storage: one Parameter per (layer, head).
/// Signed layouts hold 2n-1 rows where row 0 is offset -(n-1) and row n-1 is
/// offset 0; method1 holds n rows indexed by |offset|.
class RelTable {
public:
    RelTable() = default;
    /// Allocates and initialises so step-0 logits equal plain attention:
    /// ones for method1/2/3, zeros for shaw/method4.
    RelTable(const PositionMethod& method, std::size_t layers, std::size_t heads, std::size_t n, std::size_t d_z);

    TableLayout layout() const { return layout_; }
    const PositionMethod& method() const { return method_; }
    std::size_t layers() const { return layers_; }
    std::size_t heads() const { return heads_; }
    std::size_t max_len() const { return n_; }
    /// Rows per (layer, head): n or 2n-1.
    std::size_t rows() const;
    /// Values per row: 1 for scalar layouts, d_z for vectors.
    std::size_t width() const { return width_; }
    std::size_t element_count() const;

    Parameter& weights(std::size_t layer, std::size_t head);
    const Parameter& weights(std::size_t layer, std::size_t head) const;
    std::vector<Parameter*> parameters();

    /// Smallest and largest offset with its own row.
    std::int64_t min_offset() const;
    std::int64_t max_offset() const;

    /// Storage row used for query position i attending to key position j.
    std::size_t row_index(std::size_t i, std::size_t j) const;
    /// Storage row for a raw offset j - i after clipping / saturation.
    std::size_t row_for_offset(std::int64_t offset) const;

    /// View of the learnable entry for (i, j); aliases the parameter storage.
    std::span<const double> resolve(std::size_t layer, std::size_t head, std::size_t i, std::size_t j) const;

    /// Rows for offsets lo..hi inclusive (method1: distances lo..hi) as a
    /// (hi-lo+1) x width matrix.
    Tensor export_weights(std::size_t layer, std::size_t head, std::int64_t lo, std::int64_t hi) const;

private:
    PositionMethod method_;
    TableLayout layout_ = TableLayout::none;
    std::size_t layers_ = 0, heads_ = 0, n_ = 0, width_ = 0;
    std::vector<Parameter> weights_;
};

/// Learned absolute table added to token embeddings at the input (n x d_x).
class AbsTable {
public:
    AbsTable() = default;
    AbsTable(std::size_t n, std::size_t d_x, SeededRng& rng, double stddev);

    Parameter& weights() { return weights_; }
    const Parameter& weights() const { return weights_; }
    std::size_t max_len() const { return weights_.value.rows(); }

private:
    Parameter weights_;
};

/// Learnable position parameters for a method:
/// absolute n*d, shaw/method3/method4 m*h*(2n-1)*d, method1 m*h*n,
/// method2 m*h*(2n-1), sinusoid 0, xlnet m*h*d*d for W^R plus 2*m*h*d when
/// the query biases are enabled. `d` is d_x for absolute and d_z otherwise.
std::size_t param_count(const PositionMethod& method, std::size_t m, std::size_t h, std::size_t n, std::size_t d);

/// Human-readable size formula matching param_count.
std::string param_count_formula(const PositionMethod& method);

/// CSV: header `rel_pos,dim_0,...`, one row per offset, shortest round-trip doubles.
std::string embedding_weights_csv(const Tensor& weights, std::int64_t lo);

}  // namespace relpos
