#include "centrifuge/model.hpp"

#include "binary_io.hpp"
#include "centrifuge/error.hpp"

#include <numeric>

namespace centrifuge {

Tensor BlockSequence::dense() const {
    Tensor out = Tensor::matrix(positions, width());
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t s = 0; s < block_size; ++s) {
            const std::int32_t idx = index[p * block_size + s];
            if (idx >= 0) out(p, static_cast<std::size_t>(idx)) = 1.0;
        }
    return out;
}

BlockSequence tokenize_bytes(std::span<const std::uint8_t> window, std::size_t block_size) {
    if (window.empty()) throw InputError("tokenize_bytes: empty window");
    if (block_size == 0) throw ConfigError("tokenize_bytes: block_size must be >= 1");
    BlockSequence seq;
    seq.block_size = block_size;
    seq.positions = (window.size() + block_size - 1) / block_size;
    seq.index.assign(seq.positions * block_size, -1);
    for (std::size_t i = 0; i < window.size(); ++i) {
        const std::size_t slot = i % block_size;
        seq.index[i] = static_cast<std::int32_t>(slot * kByteVocab + window[i]);
    }
    return seq;
}

Tensor broadcast_concat(const Tensor& x1, const std::vector<Tensor>& y_list) {
    if (x1.rank() != 2) throw DimensionError("broadcast_concat: x1 must be [n x d], got " + x1.shape_str());
    std::size_t extra = 0;
    for (const auto& y : y_list) {
        if (y.rank() != 1) throw DimensionError("broadcast_concat: conditioning must be flat, got " + y.shape_str());
        extra += y.size();
    }
    const std::size_t n = x1.rows(), d = x1.cols();
    Tensor out = Tensor::matrix(n, d + extra);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out(i, j) = x1(i, j);
        std::size_t col = d;
        for (const auto& y : y_list)
            for (std::size_t j = 0; j < y.size(); ++j) out(i, col++) = y[j];
    }
    return out;
}

Tensor broadcast_concat(const BlockSequence& x1, const std::vector<Tensor>& y_list) {
    return broadcast_concat(x1.dense(), y_list);
}

TokenBatch TokenBatch::from(std::span<const BlockSequence* const> seqs) {
    TokenBatch tb;
    tb.batch = seqs.size();
    if (seqs.empty()) return tb;
    tb.positions = seqs.front()->positions;
    tb.block_size = seqs.front()->block_size;
    tb.index.reserve(tb.batch * tb.positions * tb.block_size);
    for (const auto* s : seqs) {
        if (s->positions != tb.positions || s->block_size != tb.block_size) {
            throw DimensionError("TokenBatch: sequences differ in length or block size");
        }
        tb.index.insert(tb.index.end(), s->index.begin(), s->index.end());
    }
    return tb;
}

TokenBatch TokenBatch::from(const BlockSequence& seq) {
    const BlockSequence* p = &seq;
    return from(std::span<const BlockSequence* const>(&p, 1));
}

std::size_t CentrifugeConfig::cond_width() const noexcept {
    return std::accumulate(sub_classes.begin(), sub_classes.end(), std::size_t{0});
}

void CentrifugeConfig::validate() const {
    if (sub_classes.empty() || sub_classes.size() > 2) {
        throw ConfigError("sub_net_count must be 1 or 2, got " + std::to_string(sub_classes.size()));
    }
    for (auto k : sub_classes)
        if (k == 0) throw ConfigError("sub-net output width must be positive");
    if (main_classes == 0) throw ConfigError("main class count must be positive");
    if (window == 0) throw ConfigError("window length must be positive");
    if (block_size == 0) throw ConfigError("block_size must be positive");
    sub_net.validate();
    main_net.validate();
}

CentrifugeModel::CentrifugeModel(const CentrifugeConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t n = config_.positions();
    for (std::size_t j = 0; j < config_.sub_net_count(); ++j) {
        const std::string prefix = "sub" + std::to_string(j);
        SubNet s;
        s.embed_w = Parameter(prefix + ".embed.w", init_uniform(config_.input_width(), config_.sub_net.d_model, rng));
        s.embed_b = Parameter(prefix + ".embed.b", Tensor({config_.sub_net.d_model}));
        s.encoder = Encoder(prefix, config_.sub_net, config_.sub_classes[j], n, config_.positional, rng);
        subs_.push_back(std::move(s));
    }
    // w1 and w2 are the two row blocks of one Linear over d + sum k inputs, so
    // they share that layer's fan-in.
    const std::size_t fan_in = config_.input_width() + config_.cond_width();
    Tensor full = init_uniform(fan_in, config_.main_net.d_model, rng);
    const std::size_t d = config_.main_net.d_model;
    const std::size_t split = config_.input_width() * d;
    main_.w1 = Parameter("main.w1", Tensor({config_.input_width(), d},
                                           std::vector<double>(full.values().begin(), full.values().begin() + split)));
    main_.w2 = Parameter("main.w2", Tensor({config_.cond_width(), d},
                                           std::vector<double>(full.values().begin() + split, full.values().end())));
    main_.encoder = Encoder("main", config_.main_net, config_.main_classes, n, config_.positional, rng);
}

CentrifugeModel::SubNet& CentrifugeModel::sub_net(std::size_t j) {
    if (j >= subs_.size()) throw InputError("sub-net index " + std::to_string(j) + " out of range");
    return subs_[j];
}

const CentrifugeModel::SubNet& CentrifugeModel::sub_net(std::size_t j) const {
    if (j >= subs_.size()) throw InputError("sub-net index " + std::to_string(j) + " out of range");
    return subs_[j];
}

std::vector<Parameter*> CentrifugeModel::sub_parameters() {
    std::vector<Parameter*> out;
    for (auto& s : subs_) {
        out.push_back(&s.embed_w);
        out.push_back(&s.embed_b);
        for (auto* p : s.encoder.parameters()) out.push_back(p);
    }
    return out;
}

std::vector<Parameter*> CentrifugeModel::main_parameters() {
    std::vector<Parameter*> out{&main_.w1, &main_.w2};
    for (auto* p : main_.encoder.parameters()) out.push_back(p);
    return out;
}

std::vector<Parameter*> CentrifugeModel::parameters() {
    auto out = sub_parameters();
    for (auto* p : main_parameters()) out.push_back(p);
    return out;
}

std::vector<const Parameter*> CentrifugeModel::parameters() const {
    auto mut = const_cast<CentrifugeModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::size_t CentrifugeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

void CentrifugeModel::check_tokens(const TokenBatch& tokens, bool main_input) const {
    if (tokens.block_size != config_.block_size) {
        throw DimensionError("input block size " + std::to_string(tokens.block_size) + " does not match model " +
                             std::to_string(config_.block_size));
    }
    if (tokens.batch == 0 || tokens.positions == 0) throw InputError("empty input batch");
    if ((main_input || config_.positional) && tokens.positions != config_.positions()) {
        throw DimensionError("input has " + std::to_string(tokens.positions) + " positions, model expects " +
                             std::to_string(config_.positions()));
    }
}

template <typename Binder>
Var CentrifugeModel::sub_forward(Tape& tape, const TokenBatch& x2, std::size_t j, Binder bind) const {
    const SubNet& s = sub_net(j);
    check_tokens(x2, false);
    const std::size_t rows = x2.batch * x2.positions;
    Var e = ops::embed_sum(x2.index, rows, x2.block_size, bind(tape, s.embed_w));
    e = ops::add_row(e, bind(tape, s.embed_b));
    return s.encoder.forward(tape, e, x2.positions, bind);
}

template <typename Binder>
Var CentrifugeModel::main_forward(Tape& tape, const TokenBatch& x1, Var cond, Binder bind, Var* x_prime,
                                  bool dense_first_layer) const {
    check_tokens(x1, true);
    const Tensor& cv = tape.value(cond);
    if (cv.rank() != 2 || cv.rows() != x1.batch || cv.cols() != config_.cond_width()) {
        throw ConfigError("conditioning " + cv.shape_str() + " does not match [" + std::to_string(x1.batch) + "x" +
                          std::to_string(config_.cond_width()) + "]");
    }
    const std::size_t n = x1.positions;
    const std::size_t rows = x1.batch * n;
    Var xp;
    if (dense_first_layer) {
        Tensor dense = Tensor::matrix(rows, config_.input_width());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t s = 0; s < x1.block_size; ++s) {
                const std::int32_t idx = x1.index[r * x1.block_size + s];
                if (idx >= 0) dense(r, static_cast<std::size_t>(idx)) = 1.0;
            }
        Var joined = ops::concat_cols(tape.constant(std::move(dense)), ops::repeat_rows(cond, n));
        xp = ops::matmul(joined, ops::concat_rows(bind(tape, main_.w1), bind(tape, main_.w2)));
    } else {
        xp = ops::embed_sum(x1.index, rows, x1.block_size, bind(tape, main_.w1));
        xp = ops::add_grouped(xp, ops::matmul(cond, bind(tape, main_.w2)), n);
    }
    if (x_prime != nullptr) *x_prime = xp;
    return main_.encoder.forward(tape, xp, n, bind);
}

template Var CentrifugeModel::sub_forward<TrainBinder>(Tape&, const TokenBatch&, std::size_t, TrainBinder) const;
template Var CentrifugeModel::sub_forward<InferBinder>(Tape&, const TokenBatch&, std::size_t, InferBinder) const;
template Var CentrifugeModel::main_forward<TrainBinder>(Tape&, const TokenBatch&, Var, TrainBinder, Var*,
                                                        bool) const;
template Var CentrifugeModel::main_forward<InferBinder>(Tape&, const TokenBatch&, Var, InferBinder, Var*,
                                                        bool) const;

BatchOutput CentrifugeModel::infer(const TokenBatch& x1, const std::vector<TokenBatch>* x2) const {
    const std::size_t J = config_.sub_net_count();
    if (config_.mode == CentrifugeMode::source_target && (x2 == nullptr || x2->size() != J)) {
        throw InputError("source-target centrifuge needs one sub-net input per sub-net");
    }
    Tape tape;
    std::vector<Var> ys;
    for (std::size_t j = 0; j < J; ++j) {
        const TokenBatch& in = config_.mode == CentrifugeMode::self ? x1 : (*x2)[j];
        if (in.batch != x1.batch) throw InputError("sub-net input batch size differs from main input");
        ys.push_back(sub_forward(tape, in, j, InferBinder{}));
    }
    Var cond = ys.front();
    for (std::size_t j = 1; j < J; ++j) cond = ops::concat_cols(cond, ys[j]);
    Var xp;
    Var ym = main_forward(tape, x1, cond, InferBinder{}, &xp);
    BatchOutput out;
    out.y_main = tape.value(ym);
    for (auto y : ys) out.y_sub.push_back(tape.value(y));
    out.x_prime = tape.value(xp);
    return out;
}

namespace {

Tensor row_of(const Tensor& m) { return Tensor::vector(m.values()); }

} // namespace

Tensor CentrifugeModel::forward_sub(const BlockSequence& x2, std::size_t j) const {
    Tape tape;
    return row_of(tape.value(sub_forward(tape, TokenBatch::from(x2), j, InferBinder{})));
}

MainOutput CentrifugeModel::forward_main(const BlockSequence& x1, const std::vector<Tensor>& cond) const {
    std::vector<double> joined;
    for (const auto& c : cond) joined.insert(joined.end(), c.values().begin(), c.values().end());
    if (joined.size() != config_.cond_width()) {
        throw ConfigError("conditioning width " + std::to_string(joined.size()) + " does not match " +
                          std::to_string(config_.cond_width()));
    }
    Tape tape;
    const std::size_t w = joined.size();
    Var c = tape.constant(Tensor({1, w}, std::move(joined)));
    Var xp;
    Var ym = main_forward(tape, TokenBatch::from(x1), c, InferBinder{}, &xp);
    return MainOutput{row_of(tape.value(ym)), tape.value(xp)};
}

ForwardResult CentrifugeModel::forward_centrifuge(const BlockSequence& x1,
                                                  const std::vector<BlockSequence>& x2_list) const {
    const TokenBatch main_in = TokenBatch::from(x1);
    BatchOutput b;
    if (config_.mode == CentrifugeMode::self) {
        b = infer(main_in);
    } else {
        if (x2_list.size() != config_.sub_net_count()) {
            throw InputError("source-target centrifuge needs " + std::to_string(config_.sub_net_count()) +
                             " sub-net inputs, got " + std::to_string(x2_list.size()));
        }
        std::vector<TokenBatch> x2;
        for (const auto& s : x2_list) x2.push_back(TokenBatch::from(s));
        b = infer(main_in, &x2);
    }
    ForwardResult r;
    r.y_main = row_of(b.y_main);
    for (const auto& y : b.y_sub) r.y_sub.push_back(row_of(y));
    r.x_prime = std::move(b.x_prime);
    return r;
}

FirstLayerDecomposition CentrifugeModel::first_layer_decompose(const BlockSequence& x1,
                                                               const std::vector<Tensor>& y_sub) const {
    // lhs: the literal layer over the concatenated input.
    Tensor joined = broadcast_concat(x1, y_sub);
    if (joined.cols() != config_.input_width() + config_.cond_width()) {
        throw ConfigError("conditioning width does not match the main-net first layer");
    }
    std::vector<double> stacked(main_.w1.value.values());
    stacked.insert(stacked.end(), main_.w2.value.values().begin(), main_.w2.value.values().end());
    Parameter w("stacked", Tensor({joined.cols(), config_.main_net.d_model}, std::move(stacked)));
    FirstLayerDecomposition out;
    out.lhs = linear_forward(joined, w);

    // rhs: the model's own first-layer route (sparse x1 w1 plus broadcast y_S w2).
    out.rhs = forward_main(x1, y_sub).x_prime;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'F', 'G', 'M'};
constexpr std::uint16_t kCheckpointVersion = 1;

void write_net(io::Writer& w, const NetConfig& c) {
    w.u32(static_cast<std::uint32_t>(c.d_model));
    w.u32(static_cast<std::uint32_t>(c.heads));
    w.u32(static_cast<std::uint32_t>(c.ffn));
    w.u32(static_cast<std::uint32_t>(c.blocks));
}

NetConfig read_net(io::Reader& r) {
    NetConfig c;
    c.d_model = r.u32();
    c.heads = r.u32();
    c.ffn = r.u32();
    c.blocks = r.u32();
    return c;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const CentrifugeModel& model, const std::string& schema_text) {
    const auto& cfg = model.config();
    io::Writer w;
    for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u16(kCheckpointVersion);
    w.u16(static_cast<std::uint16_t>(cfg.mode));
    w.u16(static_cast<std::uint16_t>(cfg.sub_net_count()));
    w.u8(cfg.positional ? 1 : 0);
    w.u8(0);
    w.u32(static_cast<std::uint32_t>(cfg.window));
    w.u32(static_cast<std::uint32_t>(cfg.block_size));
    w.u32(static_cast<std::uint32_t>(cfg.main_classes));
    for (auto k : cfg.sub_classes) w.u32(static_cast<std::uint32_t>(k));
    write_net(w, cfg.sub_net);
    write_net(w, cfg.main_net);
    w.u32(static_cast<std::uint32_t>(schema_text.size()));
    w.text(schema_text);
    const auto params = model.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        const auto& shape = p->value.shape();
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : p->value.values()) w.f64(v);
    }
    return std::move(w.buffer());
}

void save_checkpoint(const CentrifugeModel& model, const std::string& schema_text,
                     const std::filesystem::path& path) {
    io::write_file(path, encode_checkpoint(model, schema_text));
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes, "checkpoint");
    auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) {
        throw IntegrityError("checkpoint: bad magic (expected CFGM)");
    }
    const auto version = r.u16();
    if (version != kCheckpointVersion) {
        throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));
    }
    CentrifugeConfig cfg;
    const auto mode = r.u16();
    if (mode > 1) throw IntegrityError("checkpoint: unknown centrifuge mode " + std::to_string(mode));
    cfg.mode = static_cast<CentrifugeMode>(mode);
    const std::size_t subs = r.u16();
    cfg.positional = r.u8() != 0;
    r.u8();
    cfg.window = r.u32();
    cfg.block_size = r.u32();
    cfg.main_classes = r.u32();
    if (subs == 0 || subs > 2) throw IntegrityError("checkpoint: invalid sub-net count");
    cfg.sub_classes.clear();
    for (std::size_t j = 0; j < subs; ++j) cfg.sub_classes.push_back(r.u32());
    cfg.sub_net = read_net(r);
    cfg.main_net = read_net(r);
    std::string schema = r.text(r.u32());
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw IntegrityError(std::string("checkpoint: invalid configuration: ") + e.what());
    }
    CentrifugeModel model(cfg, 0);
    auto params = model.parameters();
    const std::size_t count = r.u32();
    if (count != params.size()) {
        throw IntegrityError("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                             std::to_string(count));
    }
    for (auto* p : params) {
        const std::size_t rank = r.u8();
        std::vector<std::size_t> shape;
        for (std::size_t i = 0; i < rank; ++i) shape.push_back(r.u32());
        if (shape != p->value.shape()) {
            throw IntegrityError("checkpoint: tensor " + p->name + " has unexpected shape");
        }
        for (auto& v : p->value.values()) v = r.f64();
    }
    if (r.remaining() != 0) throw IntegrityError("checkpoint: trailing bytes");
    return LoadedCheckpoint{std::move(model), std::move(schema)};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path));
}

} // namespace centrifuge
