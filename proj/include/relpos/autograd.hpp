#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relpos/tensor.hpp"

namespace relpos {

/// A learnable tensor paired with its accumulated gradient.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value);

    std::string name;
    Tensor value;
    Tensor grad;
    /// Frozen parameters take part in forward passes but never receive
    /// gradients and are skipped by optimizers.
    bool trainable = true;

    void zero_grad();
};

void zero_grads(std::span<Parameter* const> params);

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape is alive.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Tensor& grad() const;
    std::size_t id() const { return id_; }
    Tape& tape() const { return *tape_; }
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Per-forward-pass record of operations. Build one, run the forward pass,
/// call backward, then drop it.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Leaf bound to a Parameter. Repeated calls with the same Parameter
    /// return the same node.
    Var param(Parameter& p);
    /// Records an op result. `fn` reads grad(self) and accumulates into its inputs.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

    /// Reverse sweep from a scalar root; adds d(loss)/d(value) into every
    /// reachable trainable Parameter's grad.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Gradient buffer of a node, allocated (zeroed) on first access.
    Tensor& grad(std::size_t id);
    const Tensor& grad(std::size_t id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Recorded operations. All follow the plain-tensor contracts in tensor.hpp
// and register a backward rule.
namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);
Var relu(Var a);
/// Adds a length-c vector to every row of an r x c matrix.
Var add_row_vector(Var a, Var bias);
Var softmax_rows(Var e);
/// Scalar sum over all elements (shape [1]).
Var sum(Var a);
/// Sum of the elementwise product of three equal-length vectors (shape [1]).
Var sum_prod3(Var a, Var b, Var c);
/// Rows `indices` of a 2-D table, stacked.
Var gather_rows(Var table, std::span<const std::size_t> indices);
/// Horizontal concatenation of matrices with equal row counts.
Var concat_cols(std::span<const Var> parts);
/// Columns [begin, begin + count) of a matrix.
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Treats p (B*L x L) and v (B*L x d) as B stacked blocks and returns the
/// stacked per-block products p_b * v_b.
Var block_matmul(Var p, Var v, std::size_t block);
/// Mean token cross-entropy over rows whose mask entry is set. Targets index
/// columns of `logits`. Returns 0 when no row is selected.
Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const std::uint8_t> mask);

}  // namespace ops

}  // namespace relpos
