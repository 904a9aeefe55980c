#pragma once

#include "centrifuge/attention.hpp"
#include "centrifuge/autograd.hpp"
#include "centrifuge/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace centrifuge {

inline constexpr std::size_t kByteVocab = 256;

// One byte window as a sequence of one-hot blocks. Stored sparsely: for each
// position, `block_size` column indices (slot * 256 + byte) into the dense
// row of width 256 * block_size; -1 marks zero padding in the last block.
struct BlockSequence {
    std::size_t positions = 0;
    std::size_t block_size = 1;
    std::vector<std::int32_t> index;

    std::size_t width() const noexcept { return kByteVocab * block_size; }
    Tensor dense() const;
};

BlockSequence tokenize_bytes(std::span<const std::uint8_t> window, std::size_t block_size);

// Row i of the result is [x1[i] | y_1 | ... | y_J].
Tensor broadcast_concat(const Tensor& x1, const std::vector<Tensor>& y_list);
Tensor broadcast_concat(const BlockSequence& x1, const std::vector<Tensor>& y_list);

// Several equally shaped BlockSequences stacked for a batched forward pass.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t positions = 0;
    std::size_t block_size = 1;
    std::vector<std::int32_t> index;

    static TokenBatch from(std::span<const BlockSequence* const> seqs);
    static TokenBatch from(const BlockSequence& seq);
};

enum class CentrifugeMode : std::uint16_t { self = 0, source_target = 1 };

struct CentrifugeConfig {
    CentrifugeMode mode = CentrifugeMode::self;
    std::size_t window = 235;
    std::size_t block_size = 1;
    std::size_t main_classes = 2;
    std::vector<std::size_t> sub_classes{2};
    NetConfig sub_net;
    NetConfig main_net;
    bool positional = false;

    std::size_t sub_net_count() const noexcept { return sub_classes.size(); }
    std::size_t positions() const noexcept { return (window + block_size - 1) / block_size; }
    std::size_t input_width() const noexcept { return kByteVocab * block_size; }
    std::size_t cond_width() const noexcept;
    void validate() const;

    friend bool operator==(const CentrifugeConfig&, const CentrifugeConfig&) = default;
};

struct ForwardResult {
    Tensor y_main;              // [C_M]
    std::vector<Tensor> y_sub;  // [k_j] per sub-net
    Tensor x_prime;             // [n x d_model]
};

struct MainOutput {
    Tensor y_main;
    Tensor x_prime;
};

struct FirstLayerDecomposition {
    Tensor lhs;  // Linear(x1 (+) y_S) with the stacked weight [w1; w2]
    Tensor rhs;  // x1 w1 + y_S w2
};

struct BatchOutput {
    Tensor y_main;              // [B x C_M]
    std::vector<Tensor> y_sub;  // [B x k_j]
    Tensor x_prime;             // [B*n x d_model]
};

class CentrifugeModel {
public:
    struct SubNet {
        Parameter embed_w;  // [256*bs x d]
        Parameter embed_b;  // [d]
        Encoder encoder;
    };
    // First layer is bias-free: x' = x1 w1 + y_S w2.
    struct MainNet {
        Parameter w1;  // [256*bs x d]
        Parameter w2;  // [sum k_j x d]
        Encoder encoder;
    };

    CentrifugeModel(const CentrifugeConfig& config, std::uint64_t seed);

    const CentrifugeConfig& config() const noexcept { return config_; }

    SubNet& sub_net(std::size_t j);
    const SubNet& sub_net(std::size_t j) const;
    MainNet& main_net() noexcept { return main_; }
    const MainNet& main_net() const noexcept { return main_; }

    // Declaration order: every sub-net in order, then the main-net.
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::vector<Parameter*> sub_parameters();
    std::vector<Parameter*> main_parameters();
    std::size_t parameter_count() const;

    // Tape-level batched passes. The Binder chooses training or inference binding.
    template <typename Binder>
    Var sub_forward(Tape& tape, const TokenBatch& x2, std::size_t j, Binder bind) const;
    // `cond` is [B x sum k_j]. When `dense_first_layer` is set the first layer is
    // evaluated literally as Linear(x1 (+) cond) over the dense one-hot input.
    template <typename Binder>
    Var main_forward(Tape& tape, const TokenBatch& x1, Var cond, Binder bind, Var* x_prime = nullptr,
                     bool dense_first_layer = false) const;

    BatchOutput infer(const TokenBatch& x1, const std::vector<TokenBatch>* x2 = nullptr) const;

    Tensor forward_sub(const BlockSequence& x2, std::size_t j) const;
    MainOutput forward_main(const BlockSequence& x1, const std::vector<Tensor>& cond) const;
    ForwardResult forward_centrifuge(const BlockSequence& x1, const std::vector<BlockSequence>& x2_list = {}) const;
    FirstLayerDecomposition first_layer_decompose(const BlockSequence& x1, const std::vector<Tensor>& y_sub) const;

private:
    void check_tokens(const TokenBatch& tokens, bool main_input) const;

    CentrifugeConfig config_;
    std::vector<SubNet> subs_;
    MainNet main_;
};

// Binary checkpoint ("CFGM"). `schema_text` is carried verbatim and may be empty.
void save_checkpoint(const CentrifugeModel& model, const std::string& schema_text, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const CentrifugeModel& model, const std::string& schema_text);

struct LoadedCheckpoint {
    CentrifugeModel model;
    std::string schema_text;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

} // namespace centrifuge
