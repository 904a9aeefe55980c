#pragma once

#include "centrifuge/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace centrifuge {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

// Reverse-mode recording of one forward pass. A tape is single-use: build,
// call backward once, discard. Parameters bound with param() receive their
// gradient (accumulated into Parameter::grad) only if they are trainable.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Trainable binding: gradients flow back into p.grad when p.trainable.
    Var param(Parameter& p);
    // Read-only binding for inference; records a copy without gradient.
    Var param(const Parameter& p);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a single element.
    void backward(Var loss);

    // Used by op implementations.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;
    Var record(Tensor value, bool requires_grad, BackwardFn fn);
    Tensor& grad_of(std::size_t id);
    const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

namespace ops {

// [m x k] * [k x n]
Var matmul(Var a, Var b);
// x * W (+ bias), x [n x d_in].
Var linear(Var x, Var weight, const Var* bias = nullptr);
Var add(Var a, Var b);
// Adds a [d] vector to every row of a [r x d] matrix.
Var add_row(Var a, Var row);
// Adds row b of `per_group` [g x d] to each of `group_size` consecutive rows of `a` [g*group_size x d].
Var add_grouped(Var a, Var per_group, std::size_t group_size);
Var scale(Var a, double s);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Row-wise softmax of a [r x c] matrix.
Var softmax_rows(Var logits);
// Multi-head scaled dot-product attention core. q, k, v are [batch*n x d];
// each group of n consecutive rows is one sequence.
Var attention(Var q, Var k, Var v, std::size_t n, std::size_t heads);
// Mean over each group of n consecutive rows: [batch*n x d] -> [batch x d].
Var mean_pool(Var x, std::size_t n);
// Column-wise concatenation of [r x a] and [r x b].
Var concat_cols(Var a, Var b);
// Row-wise stacking of [a x c] over [b x c].
Var concat_rows(Var a, Var b);
// Adds `tile` [n x d] to every group of n consecutive rows of `a` [g*n x d].
Var add_tiled(Var a, Var tile);
// [batch x k] -> [batch*n x k]: repeats each row n times.
Var repeat_rows(Var a, std::size_t n);
// Sum over one-hot rows: row r of the output is sum_t weight[index[r*width+t]]
// where negative indices are skipped. Equivalent to onehot(index) * weight.
Var embed_sum(std::span<const std::int32_t> index, std::size_t rows, std::size_t width, Var weight);
// Mean over rows of label-smoothed cross-entropy on probability rows.
Var ce_label_smoothed(Var probs, std::span<const std::size_t> targets, double eps);
Var sum(Var a);
Var add_scalar_terms(Var a, Var b, double b_weight);

} // namespace ops

} // namespace centrifuge
