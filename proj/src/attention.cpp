#include "centrifuge/attention.hpp"

#include "centrifuge/error.hpp"

#include <cmath>

namespace centrifuge {

void NetConfig::validate() const {
    if (d_model == 0 || heads == 0 || ffn == 0) throw ConfigError("network sizes must be positive");
    if (d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                          std::to_string(heads));
    }
}

Tensor init_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor t = Tensor::matrix(fan_in, fan_out);
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

namespace {

Parameter zeros(const std::string& name, std::size_t n) { return Parameter(name, Tensor({n})); }

Parameter ones(const std::string& name, std::size_t n) {
    Tensor t({n});
    t.fill(1.0);
    return Parameter(name, std::move(t));
}

} // namespace

AttentionBlock::AttentionBlock(const std::string& prefix, const NetConfig& cfg, Rng& rng) : heads(cfg.heads) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    wq = Parameter(prefix + ".wq", init_uniform(d, d, rng));
    bq = zeros(prefix + ".bq", d);
    wk = Parameter(prefix + ".wk", init_uniform(d, d, rng));
    bk = zeros(prefix + ".bk", d);
    wv = Parameter(prefix + ".wv", init_uniform(d, d, rng));
    bv = zeros(prefix + ".bv", d);
    wo = Parameter(prefix + ".wo", init_uniform(d, d, rng));
    bo = zeros(prefix + ".bo", d);
    ln1_gain = ones(prefix + ".ln1.gain", d);
    ln1_bias = zeros(prefix + ".ln1.bias", d);
    w1 = Parameter(prefix + ".ffn.w1", init_uniform(d, cfg.ffn, rng));
    b1 = zeros(prefix + ".ffn.b1", cfg.ffn);
    w2 = Parameter(prefix + ".ffn.w2", init_uniform(cfg.ffn, d, rng));
    b2 = zeros(prefix + ".ffn.b2", d);
    ln2_gain = ones(prefix + ".ln2.gain", d);
    ln2_bias = zeros(prefix + ".ln2.bias", d);
}

std::vector<Parameter*> AttentionBlock::parameters() {
    return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln1_gain, &ln1_bias,
            &w1, &b1, &w2, &b2, &ln2_gain, &ln2_bias};
}

std::vector<const Parameter*> AttentionBlock::parameters() const {
    return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln1_gain, &ln1_bias,
            &w1, &b1, &w2, &b2, &ln2_gain, &ln2_bias};
}

Tensor attention_block_forward(const Tensor& seq, const AttentionBlock& block) {
    if (seq.rank() != 2) throw DimensionError("attention block expects [n x d], got " + seq.shape_str());
    if (seq.cols() % block.heads != 0) throw ConfigError("width not divisible by head count");
    Tape tape;
    Var out = block.forward(tape, tape.constant(seq), seq.rows(), InferBinder{});
    return tape.value(out);
}

Encoder::Encoder(const std::string& prefix, const NetConfig& cfg, std::size_t out_dim, std::size_t positions,
                 bool use_positional, Rng& rng)
    : has_positional(use_positional) {
    cfg.validate();
    if (out_dim == 0) throw ConfigError(prefix + ": output width must be positive");
    if (has_positional) {
        Tensor p = Tensor::matrix(positions, cfg.d_model);
        const double bound = std::sqrt(1.0 / static_cast<double>(cfg.d_model));
        for (auto& v : p.values()) v = rng.uniform(-bound, bound);
        positional = Parameter(prefix + ".pos", std::move(p));
    }
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        blocks.emplace_back(prefix + ".block" + std::to_string(i), cfg, rng);
    }
    head_w = Parameter(prefix + ".head.w", init_uniform(cfg.d_model, out_dim, rng));
    head_b = zeros(prefix + ".head.b", out_dim);
}

std::vector<Parameter*> Encoder::parameters() {
    std::vector<Parameter*> out;
    if (has_positional) out.push_back(&positional);
    for (auto& b : blocks)
        for (auto* p : b.parameters()) out.push_back(p);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

std::vector<const Parameter*> Encoder::parameters() const {
    std::vector<const Parameter*> out;
    if (has_positional) out.push_back(&positional);
    for (const auto& b : blocks)
        for (const auto* p : b.parameters()) out.push_back(p);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

} // namespace centrifuge
