#include "centrifuge/regimes.hpp"

#include "binary_io.hpp"
#include "centrifuge/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace centrifuge {

RegimeKind parse_regime(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "baseline") return RegimeKind::baseline;
    if (s == "utl") return RegimeKind::utl;
    if (s == "dtl") return RegimeKind::dtl;
    if (s == "uft") return RegimeKind::uft;
    if (s == "dft") return RegimeKind::dft;
    if (s == "2lf" || s == "twolf" || s == "two_lf") return RegimeKind::two_lf;
    throw UsageError("unknown regime '" + name + "' (expected baseline, utl, dtl, uft, dft or 2lf)");
}

std::string to_string(RegimeKind kind) {
    switch (kind) {
    case RegimeKind::baseline: return "baseline";
    case RegimeKind::utl: return "utl";
    case RegimeKind::dtl: return "dtl";
    case RegimeKind::uft: return "uft";
    case RegimeKind::dft: return "dft";
    case RegimeKind::two_lf: return "2lf";
    }
    return "baseline";
}

std::string Phase::describe() const {
    std::string who = part == TrainedPart::sub ? "Sub" : part == TrainedPart::main ? "Main" : "Both";
    std::string loss = objective == Objective::main_loss  ? "L_M"
                       : objective == Objective::sub_loss ? "L_S"
                                                          : "L_M&L_S";
    return who + " w/ " + loss;
}

std::vector<Phase> regime_phases(RegimeKind kind) {
    using enum TrainedPart;
    using enum Objective;
    using enum Conditioning;
    switch (kind) {
    case RegimeKind::baseline: return {{both, main_loss, predicted}};
    case RegimeKind::utl: return {{sub, sub_loss, predicted}, {main, main_loss, predicted}};
    case RegimeKind::dtl: return {{main, main_loss, ground_truth}, {sub, main_loss, predicted}};
    case RegimeKind::uft: return {{sub, sub_loss, predicted}, {both, main_loss, predicted}};
    case RegimeKind::dft: return {{main, main_loss, ground_truth}, {both, main_loss, predicted}};
    case RegimeKind::two_lf: return {{both, main_and_sub_loss, predicted}};
    }
    return {};
}

std::pair<std::string, std::string> regime_ledger(RegimeKind kind) {
    const auto phases = regime_phases(kind);
    return {phases.size() == 2 ? phases.front().describe() : std::string("none"), phases.back().describe()};
}

void RegimeSpec::validate() const {
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    pretrain_optimizer.validate();
    train_optimizer.validate();
}

void TrainConfig::validate() const {
    if (batch == 0) throw ConfigError("mini-batch size must be >= 1");
    if (folds < 2) throw ConfigError("fold count must be >= 2");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
    if (window == 0) throw ConfigError("window length must be >= 1");
}

// ---------------------------------------------------------------------------

TrainingData::TrainingData(const std::vector<Sample>& samples, const CentrifugeConfig& config) {
    if (samples.empty()) throw InputError("training set is empty");
    const std::size_t J = config.sub_net_count();
    const bool with_subs = std::all_of(samples.begin(), samples.end(),
                                       [&](const Sample& s) { return s.sub_labels.size() == J; });
    if (with_subs) sub_.assign(J, {});
    if (config.mode == CentrifugeMode::source_target) x2_.assign(J, {});
    x1_.reserve(samples.size());
    main_.reserve(samples.size());
    for (const auto& s : samples) {
        x1_.push_back(tokenize_bytes(s.bytes, config.block_size));
        if (s.main_label >= config.main_classes) throw InputError("main label outside the model's class count");
        main_.push_back(s.main_label);
        if (with_subs) {
            for (std::size_t j = 0; j < J; ++j) {
                if (s.sub_labels[j] >= config.sub_classes[j]) throw InputError("sub label outside sub-net width");
                sub_[j].push_back(s.sub_labels[j]);
            }
        }
        if (config.mode == CentrifugeMode::source_target) {
            if (s.source.empty()) throw InputError("source-target centrifuge needs a source window per sample");
            for (std::size_t j = 0; j < J; ++j) x2_[j].push_back(tokenize_bytes(s.source, config.block_size));
        }
    }
}

const BlockSequence& TrainingData::x2(std::size_t i, std::size_t j) const {
    return x2_.empty() ? x1_[i] : x2_[j][i];
}

RegimeRunner::RegimeRunner(CentrifugeModel& model, const TrainingData& data, RegimeSpec spec, TrainConfig cfg)
    : model_(model), data_(data), spec_(std::move(spec)), cfg_(cfg), phases_(regime_phases(spec_.kind)) {
    spec_.validate();
    cfg_.validate();
    for (const auto& p : phases_) {
        const bool needs_subs = p.objective != Objective::main_loss || p.conditioning == Conditioning::ground_truth;
        if (needs_subs && !data_.has_sub_labels()) {
            throw InputError("regime " + to_string(spec_.kind) + " needs sub labels on every training sample");
        }
    }
}

void RegimeRunner::set_trainable(TrainedPart part) {
    for (auto* p : model_.sub_parameters()) p->trainable = part != TrainedPart::main;
    for (auto* p : model_.main_parameters()) p->trainable = part != TrainedPart::sub;
}

void RegimeRunner::run_all() {
    for (std::size_t i = completed_; i < phases_.size(); ++i) run_phase(i);
}

void RegimeRunner::run_phase(std::size_t index) {
    if (index >= phases_.size()) throw StateError("regime has no phase " + std::to_string(index));
    if (index != completed_) {
        throw StateError("phase " + std::to_string(index) + " requested but phase " + std::to_string(completed_) +
                         " has not completed");
    }
    const Phase& phase = phases_[index];
    const bool single = phases_.size() == 1;
    const bool is_pretrain = !single && index == 0;
    const std::size_t epochs = single ? spec_.pretrain_epochs + spec_.train_epochs
                                      : (is_pretrain ? spec_.pretrain_epochs : spec_.train_epochs);
    const OptimizerConfig& opt = is_pretrain ? spec_.pretrain_optimizer : spec_.train_optimizer;

    set_trainable(phase.part);
    for (auto* p : model_.parameters()) {
        p->reset_momentum();
        p->zero_grad();
    }

    const std::size_t n = data_.size();
    const std::size_t per_epoch = (n + cfg_.batch - 1) / cfg_.batch;
    const LRSchedule schedule{opt.lr, std::max<std::size_t>(1, epochs * per_epoch)};
    Rng rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + 0x51ED27 + index);
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        for (std::size_t b = 0; b < n; b += cfg_.batch) {
            const std::size_t len = std::min(cfg_.batch, n - b);
            train_step(phase, std::span<const std::size_t>(order.data() + b, len), index, step,
                       cosine_lr(step, schedule), opt);
            ++step;
        }
    }

    for (auto* p : model_.parameters()) p->trainable = true;
    ++completed_;
}

void RegimeRunner::train_step(const Phase& phase, std::span<const std::size_t> batch, std::size_t phase_index,
                              std::size_t step, double lr, const OptimizerConfig& opt) {
    const auto& cfg = model_.config();
    const std::size_t J = cfg.sub_net_count();
    const double eps = cfg_.label_smoothing;
    std::vector<const BlockSequence*> seqs;
    seqs.reserve(batch.size());
    for (auto i : batch) seqs.push_back(&data_.x1(i));
    const TokenBatch x1 = TokenBatch::from(seqs);

    auto sub_targets = [&](std::size_t j) {
        std::vector<std::size_t> t;
        for (auto i : batch) t.push_back(data_.sub_label(i, j));
        return t;
    };

    for (auto* p : model_.parameters()) p->zero_grad();
    Tape tape;
    StepRecord rec;
    rec.phase = phase_index;
    rec.step = step;
    rec.main_loss = std::numeric_limits<double>::quiet_NaN();
    rec.sub_loss = std::numeric_limits<double>::quiet_NaN();

    const bool need_sub_outputs = phase.conditioning == Conditioning::predicted;
    std::vector<Var> ys;
    if (need_sub_outputs) {
        for (std::size_t j = 0; j < J; ++j) {
            if (cfg.mode == CentrifugeMode::self) {
                ys.push_back(model_.sub_forward(tape, x1, j, TrainBinder{}));
            } else {
                std::vector<const BlockSequence*> s2;
                for (auto i : batch) s2.push_back(&data_.x2(i, j));
                ys.push_back(model_.sub_forward(tape, TokenBatch::from(s2), j, TrainBinder{}));
            }
        }
    }

    std::optional<Var> sub_loss;
    if (phase.objective != Objective::main_loss) {
        for (std::size_t j = 0; j < J; ++j) {
            const auto t = sub_targets(j);
            Var l = ops::ce_label_smoothed(ys[j], t, eps);
            sub_loss = sub_loss ? ops::add_scalar_terms(*sub_loss, l, 1.0) : l;
        }
        rec.sub_loss = tape.value(*sub_loss)[0];
    }

    Var objective;
    if (phase.objective == Objective::sub_loss) {
        objective = *sub_loss;
    } else {
        Var cond;
        if (phase.conditioning == Conditioning::ground_truth) {
            Tensor onehot = Tensor::matrix(batch.size(), cfg.cond_width());
            std::size_t col = 0;
            for (std::size_t j = 0; j < J; ++j) {
                for (std::size_t r = 0; r < batch.size(); ++r) onehot(r, col + data_.sub_label(batch[r], j)) = 1.0;
                col += cfg.sub_classes[j];
            }
            cond = tape.constant(std::move(onehot));
        } else {
            cond = ys.front();
            for (std::size_t j = 1; j < J; ++j) cond = ops::concat_cols(cond, ys[j]);
        }
        Var ym = model_.main_forward(tape, x1, cond, TrainBinder{});
        std::vector<std::size_t> tm;
        for (auto i : batch) tm.push_back(data_.main_label(i));
        Var main_loss = ops::ce_label_smoothed(ym, tm, eps);
        rec.main_loss = tape.value(main_loss)[0];
        objective = phase.objective == Objective::main_and_sub_loss
                        ? ops::add_scalar_terms(main_loss, *sub_loss, spec_.beta)
                        : main_loss;
    }
    rec.objective = tape.value(objective)[0];
    tape.backward(objective);
    for (auto* p : model_.parameters()) sgd_step(*p, lr, opt);
    history_.push_back(rec);
}

// ---------------------------------------------------------------------------

namespace {

std::size_t argmax_row(const Tensor& m, std::size_t r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < m.cols(); ++c)
        if (m(r, c) > m(r, best)) best = c;
    return best;
}

} // namespace

Metrics evaluate(const CentrifugeModel& model, const std::vector<Sample>& test, const LabelSchema& schema,
                 std::size_t batch) {
    const auto& cfg = model.config();
    const std::size_t J = cfg.sub_net_count();
    Metrics m;
    m.samples = test.size();
    m.confusion.assign(cfg.main_classes, std::vector<std::size_t>(cfg.main_classes, 0));
    m.sub_acc.assign(J, 0.0);
    m.grouped_acc.assign(J, 0.0);
    if (test.empty()) return m;
    if (batch == 0) batch = 1;
    std::size_t main_hits = 0;
    std::vector<std::size_t> sub_hits(J, 0), group_hits(J, 0);
    const bool with_subs = std::all_of(test.begin(), test.end(), [&](const Sample& s) { return s.sub_labels.size() == J; });
    for (std::size_t b = 0; b < test.size(); b += batch) {
        const std::size_t len = std::min(batch, test.size() - b);
        std::vector<BlockSequence> seqs;
        seqs.reserve(len);
        for (std::size_t i = 0; i < len; ++i) seqs.push_back(tokenize_bytes(test[b + i].bytes, cfg.block_size));
        std::vector<const BlockSequence*> ptrs;
        for (const auto& s : seqs) ptrs.push_back(&s);
        const TokenBatch x1 = TokenBatch::from(ptrs);
        BatchOutput out;
        if (cfg.mode == CentrifugeMode::source_target) {
            std::vector<BlockSequence> src;
            for (std::size_t i = 0; i < len; ++i) src.push_back(tokenize_bytes(test[b + i].source, cfg.block_size));
            std::vector<const BlockSequence*> sp;
            for (const auto& s : src) sp.push_back(&s);
            std::vector<TokenBatch> x2(J, TokenBatch::from(sp));
            out = model.infer(x1, &x2);
        } else {
            out = model.infer(x1);
        }
        for (std::size_t i = 0; i < len; ++i) {
            const Sample& s = test[b + i];
            const std::size_t pred = argmax_row(out.y_main, i);
            if (pred == s.main_label) ++main_hits;
            if (s.main_label < cfg.main_classes) ++m.confusion[s.main_label][pred];
            if (!with_subs) continue;
            for (std::size_t j = 0; j < J; ++j) {
                const std::size_t ps = argmax_row(out.y_sub[j], i);
                const std::size_t ts = s.sub_labels[j];
                if (ps == ts) ++sub_hits[j];
                if (j < schema.subs.size() && ps < schema.subs[j].group.size() && ts < schema.subs[j].group.size()) {
                    if (schema.subs[j].group[ps] == schema.subs[j].group[ts]) ++group_hits[j];
                } else if (ps == ts) {
                    ++group_hits[j];
                }
            }
        }
    }
    const double n = static_cast<double>(test.size());
    m.main_acc = static_cast<double>(main_hits) / n;
    for (std::size_t j = 0; j < J; ++j) {
        m.sub_acc[j] = static_cast<double>(sub_hits[j]) / n;
        m.grouped_acc[j] = static_cast<double>(group_hits[j]) / n;
    }
    return m;
}

Metrics train_regime(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                     const LabelSchema& schema, const RegimeSpec& spec, const TrainConfig& cfg,
                     std::vector<StepRecord>* history) {
    const TrainingData data(train, model.config());
    RegimeRunner runner(model, data, spec, cfg);
    runner.run_all();
    if (history != nullptr) *history = runner.history();
    return evaluate(model, test, schema);
}

namespace {

Metrics train_kind(RegimeKind kind, CentrifugeModel& model, const std::vector<Sample>& train,
                   const std::vector<Sample>& test, const LabelSchema& schema, RegimeSpec spec,
                   const TrainConfig& cfg) {
    spec.kind = kind;
    return train_regime(model, train, test, schema, spec, cfg);
}

} // namespace

Metrics train_baseline(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                       const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg) {
    return train_kind(RegimeKind::baseline, model, train, test, schema, std::move(spec), cfg);
}

Metrics train_utl(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg) {
    return train_kind(RegimeKind::utl, model, train, test, schema, std::move(spec), cfg);
}

Metrics train_dtl(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg) {
    return train_kind(RegimeKind::dtl, model, train, test, schema, std::move(spec), cfg);
}

Metrics train_uft(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg) {
    return train_kind(RegimeKind::uft, model, train, test, schema, std::move(spec), cfg);
}

Metrics train_dft(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg) {
    return train_kind(RegimeKind::dft, model, train, test, schema, std::move(spec), cfg);
}

Metrics train_2lf(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg, double beta) {
    spec.beta = beta;
    return train_kind(RegimeKind::two_lf, model, train, test, schema, std::move(spec), cfg);
}

// ---------------------------------------------------------------------------

std::vector<Fold> kfold_split(const std::vector<Sample>& samples, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    std::map<std::uint16_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < samples.size(); ++i) by_label[samples[i].main_label].push_back(i);
    for (const auto& [label, idx] : by_label) {
        if (idx.size() < k) {
            throw InputError("main label " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                             " samples, fewer than k=" + std::to_string(k));
        }
    }
    Rng rng(seed);
    std::vector<std::vector<bool>> in_test(k, std::vector<bool>(samples.size(), false));
    for (auto& [label, idx] : by_label) {
        rng.shuffle(idx);
        for (std::size_t i = 0; i < idx.size(); ++i) in_test[i % k][idx[i]] = true;
    }
    std::vector<Fold> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        for (std::size_t i = 0; i < samples.size(); ++i) (in_test[f][i] ? folds[f].test : folds[f].train).push_back(i);
    }
    return folds;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::pair<double, double> mean_sd(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

} // namespace

std::string format_report(const FoldReport& report, const LabelSchema& schema) {
    std::ostringstream os;
    const auto [pre, train] = regime_ledger(report.regime);
    os << "# centrifuge metrics report\n";
    os << "regime " << to_string(report.regime) << "\n";
    os << "pretrain " << pre << "\n";
    os << "train " << train << "\n";
    if (report.regime == RegimeKind::two_lf) os << "beta " << fmt(report.beta) << "\n";
    os << "folds " << report.folds.size() << "\n";
    const std::size_t J = report.folds.empty() ? 0 : report.folds.front().sub_acc.size();
    for (std::size_t f = 0; f < report.folds.size(); ++f) {
        const auto& m = report.folds[f];
        os << "fold " << f << " samples " << m.samples << " main_acc " << fmt(m.main_acc);
        for (std::size_t j = 0; j < m.sub_acc.size(); ++j) {
            os << " sub_acc." << j << " " << fmt(m.sub_acc[j]) << " grouped_acc." << j << " " << fmt(m.grouped_acc[j]);
        }
        os << "\n";
    }
    auto line = [&](const std::string& name, auto get) {
        std::vector<double> xs;
        for (const auto& m : report.folds) xs.push_back(get(m));
        const auto [mu, sd] = mean_sd(xs);
        os << "mean " << name << " " << fmt(mu) << " sd " << fmt(sd) << "\n";
    };
    line("main_acc", [](const Metrics& m) { return m.main_acc; });
    for (std::size_t j = 0; j < J; ++j) {
        line("sub_acc." + std::to_string(j), [j](const Metrics& m) { return m.sub_acc[j]; });
        line("grouped_acc." + std::to_string(j), [j](const Metrics& m) { return m.grouped_acc[j]; });
    }
    if (!report.folds.empty()) {
        const std::size_t C = report.folds.front().confusion.size();
        os << "# confusion summed over folds: true label, then counts per predicted label\n";
        for (std::size_t t = 0; t < C; ++t) {
            os << "confusion " << (t < schema.main_names.size() ? schema.main_names[t] : std::to_string(t));
            for (std::size_t p = 0; p < C; ++p) {
                std::size_t c = 0;
                for (const auto& m : report.folds) c += m.confusion[t][p];
                os << " " << c;
            }
            os << "\n";
        }
    }
    return os.str();
}

std::string format_embeddings(const CentrifugeModel& model, const std::vector<Sample>& samples) {
    const auto& cfg = model.config();
    const std::size_t d = cfg.main_net.d_model;
    const std::size_t J = cfg.sub_net_count();
    std::ostringstream os;
    for (std::size_t c = 0; c < d; ++c) os << (c ? "," : "") << "x" << c;
    os << ",main";
    for (std::size_t j = 0; j < J; ++j) os << ",sub" << j;
    os << "\n";
    char buf[40];
    constexpr std::size_t kBatch = 256;
    for (std::size_t b = 0; b < samples.size(); b += kBatch) {
        const std::size_t len = std::min(kBatch, samples.size() - b);
        std::vector<BlockSequence> seqs;
        for (std::size_t i = 0; i < len; ++i) seqs.push_back(tokenize_bytes(samples[b + i].bytes, cfg.block_size));
        std::vector<const BlockSequence*> ptrs;
        for (const auto& s : seqs) ptrs.push_back(&s);
        BatchOutput out;
        if (cfg.mode == CentrifugeMode::source_target) {
            std::vector<BlockSequence> src;
            for (std::size_t i = 0; i < len; ++i) src.push_back(tokenize_bytes(samples[b + i].source, cfg.block_size));
            std::vector<const BlockSequence*> sp;
            for (const auto& s : src) sp.push_back(&s);
            std::vector<TokenBatch> x2(J, TokenBatch::from(sp));
            out = model.infer(TokenBatch::from(ptrs), &x2);
        } else {
            out = model.infer(TokenBatch::from(ptrs));
        }
        const std::size_t n = seqs.front().positions;
        for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                double s = 0.0;
                for (std::size_t p = 0; p < n; ++p) s += out.x_prime(i * n + p, c);
                std::snprintf(buf, sizeof buf, "%.17g", s / static_cast<double>(n));
                os << (c ? "," : "") << buf;
            }
            os << "," << samples[b + i].main_label;
            for (std::size_t j = 0; j < J; ++j) {
                os << ",";
                if (j < samples[b + i].sub_labels.size()) os << samples[b + i].sub_labels[j];
            }
            os << "\n";
        }
    }
    return os.str();
}

void export_embeddings(const CentrifugeModel& model, const std::vector<Sample>& samples,
                       const std::filesystem::path& path) {
    io::write_text(path, format_embeddings(model, samples));
}

CentrifugeConfig model_config_for(const LabelSchema& schema, std::size_t window, std::size_t block_size,
                                  const NetConfig& sub_net, const NetConfig& main_net, bool positional) {
    CentrifugeConfig c;
    c.window = window;
    c.block_size = block_size;
    c.main_classes = schema.main_count();
    c.sub_classes = schema.sub_counts();
    c.sub_net = sub_net;
    c.main_net = main_net;
    c.positional = positional;
    c.validate();
    return c;
}

} // namespace centrifuge
