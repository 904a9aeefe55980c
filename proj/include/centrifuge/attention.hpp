#pragma once

#include "centrifuge/autograd.hpp"
#include "centrifuge/rng.hpp"
#include "centrifuge/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace centrifuge {

// Sizes of one attention classifier (sub-net or main-net).
struct NetConfig {
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t ffn = 128;
    std::size_t blocks = 2;

    void validate() const;
    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), the scheme used for every weight matrix.
Tensor init_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Post-norm transformer block:
//   h = LN(x + MHA(x)),  out = LN(h + W2 gelu(W1 h + b1) + b2)
struct AttentionBlock {
    AttentionBlock() = default;
    AttentionBlock(const std::string& prefix, const NetConfig& cfg, Rng& rng);

    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln1_gain, ln1_bias;
    Parameter w1, b1, w2, b2;
    Parameter ln2_gain, ln2_bias;
    std::size_t heads = 1;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    // x is [batch*n x d]; rows are grouped into sequences of n.
    template <typename Binder>
    Var forward(Tape& tape, Var x, std::size_t n, Binder&& bind) const;
};

// Standalone single-sequence evaluation of one block: seq [n x d] -> [n x d].
Tensor attention_block_forward(const Tensor& seq, const AttentionBlock& block);

// Positional embedding (optional) + attention stack + mean-pool + linear head +
// softmax. The input embedding is owned by the caller.
struct Encoder {
    Encoder() = default;
    Encoder(const std::string& prefix, const NetConfig& cfg, std::size_t out_dim, std::size_t positions,
            bool positional, Rng& rng);

    std::vector<AttentionBlock> blocks;
    Parameter positional;  // [n x d], empty when disabled
    Parameter head_w, head_b;
    bool has_positional = false;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    // Returns class probabilities [batch x out_dim].
    template <typename Binder>
    Var forward(Tape& tape, Var embedded, std::size_t n, Binder&& bind) const;
};

// Binds parameters either for training (gradient-tracking) or inference.
struct TrainBinder {
    Var operator()(Tape& t, const Parameter& p) const { return t.param(const_cast<Parameter&>(p)); }
};
struct InferBinder {
    Var operator()(Tape& t, const Parameter& p) const { return t.param(p); }
};

template <typename Binder>
Var AttentionBlock::forward(Tape& tape, Var x, std::size_t n, Binder&& bind) const {
    Var bq_v = bind(tape, bq), bk_v = bind(tape, bk), bv_v = bind(tape, bv), bo_v = bind(tape, bo);
    Var q = ops::linear(x, bind(tape, wq), &bq_v);
    Var k = ops::linear(x, bind(tape, wk), &bk_v);
    Var v = ops::linear(x, bind(tape, wv), &bv_v);
    Var att = ops::attention(q, k, v, n, heads);
    Var o = ops::linear(att, bind(tape, wo), &bo_v);
    Var h = ops::layer_norm(ops::add(x, o), bind(tape, ln1_gain), bind(tape, ln1_bias));
    Var b1_v = bind(tape, b1), b2_v = bind(tape, b2);
    Var f = ops::linear(ops::gelu(ops::linear(h, bind(tape, w1), &b1_v)), bind(tape, w2), &b2_v);
    return ops::layer_norm(ops::add(h, f), bind(tape, ln2_gain), bind(tape, ln2_bias));
}

template <typename Binder>
Var Encoder::forward(Tape& tape, Var embedded, std::size_t n, Binder&& bind) const {
    Var x = has_positional ? ops::add_tiled(embedded, bind(tape, positional)) : embedded;
    for (const auto& block : blocks) x = block.forward(tape, x, n, bind);
    Var pooled = ops::mean_pool(x, n);
    Var hb = bind(tape, head_b);
    return ops::softmax_rows(ops::linear(pooled, bind(tape, head_w), &hb));
}

} // namespace centrifuge
