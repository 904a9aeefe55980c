#pragma once

#include "centrifuge/corpus.hpp"
#include "centrifuge/model.hpp"
#include "centrifuge/schema.hpp"
#include "centrifuge/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace centrifuge {

enum class RegimeKind { baseline, utl, dtl, uft, dft, two_lf };

RegimeKind parse_regime(const std::string& name);
std::string to_string(RegimeKind kind);
inline constexpr RegimeKind kAllRegimes[] = {RegimeKind::utl, RegimeKind::dtl,    RegimeKind::uft,
                                             RegimeKind::dft, RegimeKind::two_lf, RegimeKind::baseline};

enum class TrainedPart { sub, main, both };
enum class Objective { main_loss, sub_loss, main_and_sub_loss };
// What the main-net sees as conditioning: the sub-nets' predictions, or the
// one-hot ground truth t_S.
enum class Conditioning { predicted, ground_truth };

struct Phase {
    TrainedPart part;
    Objective objective;
    Conditioning conditioning;

    // Text in the "<Sub|Main|Both> w/ <loss>" form.
    std::string describe() const;
};

struct RegimeSpec {
    RegimeKind kind = RegimeKind::baseline;
    double beta = 1.0;
    std::size_t pretrain_epochs = 25;
    std::size_t train_epochs = 25;
    OptimizerConfig pretrain_optimizer;
    OptimizerConfig train_optimizer;

    void validate() const;
};

// Pretrain phase (if any) followed by the train phase.
std::vector<Phase> regime_phases(RegimeKind kind);
// The "Pretrain" and "Train" descriptions; "none" when there is no pretraining.
std::pair<std::string, std::string> regime_ledger(RegimeKind kind);

struct TrainConfig {
    std::size_t batch = 64;
    std::uint64_t seed = 0;
    double label_smoothing = 0.1;
    std::size_t folds = 4;
    std::size_t cap = 20000;
    std::size_t window = 235;

    void validate() const;
};

struct Metrics {
    double main_acc = 0.0;
    std::vector<double> sub_acc;
    std::vector<double> grouped_acc;
    std::size_t samples = 0;
    // confusion[true][predicted] for the main label.
    std::vector<std::vector<std::size_t>> confusion;
};

struct StepRecord {
    std::size_t phase = 0;
    std::size_t step = 0;
    double main_loss = 0.0;  // NaN when the phase does not evaluate L_M
    double sub_loss = 0.0;   // NaN when the phase does not evaluate L_S
    double objective = 0.0;
};

// A training set pre-tokenized for one model.
class TrainingData {
public:
    TrainingData(const std::vector<Sample>& samples, const CentrifugeConfig& config);

    std::size_t size() const noexcept { return main_.size(); }
    const BlockSequence& x1(std::size_t i) const { return x1_[i]; }
    const BlockSequence& x2(std::size_t i, std::size_t j) const;
    std::size_t main_label(std::size_t i) const { return main_[i]; }
    std::size_t sub_label(std::size_t i, std::size_t j) const { return sub_[j][i]; }
    bool has_sub_labels() const noexcept { return !sub_.empty(); }

private:
    std::vector<BlockSequence> x1_;
    std::vector<std::vector<BlockSequence>> x2_;  // [j][i], source-target only
    std::vector<std::size_t> main_;
    std::vector<std::vector<std::size_t>> sub_;  // [j][i]
};

// Runs the phases of one regime in order, with an explicit state check so a
// later phase cannot run before the earlier one finished.
class RegimeRunner {
public:
    RegimeRunner(CentrifugeModel& model, const TrainingData& data, RegimeSpec spec, TrainConfig cfg);

    std::size_t phase_count() const noexcept { return phases_.size(); }
    std::size_t completed_phases() const noexcept { return completed_; }
    const Phase& phase(std::size_t i) const { return phases_.at(i); }

    void run_phase(std::size_t index);
    void run_all();

    const std::vector<StepRecord>& history() const noexcept { return history_; }

private:
    void set_trainable(TrainedPart part);
    void train_step(const Phase& phase, std::span<const std::size_t> batch, std::size_t phase_index,
                    std::size_t step, double lr, const OptimizerConfig& opt);

    CentrifugeModel& model_;
    const TrainingData& data_;
    RegimeSpec spec_;
    TrainConfig cfg_;
    std::vector<Phase> phases_;
    std::size_t completed_ = 0;
    std::vector<StepRecord> history_;
};

Metrics evaluate(const CentrifugeModel& model, const std::vector<Sample>& test, const LabelSchema& schema,
                 std::size_t batch = 256);

// Each trains `model` on `train` and returns metrics on `test`.
Metrics train_regime(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                     const LabelSchema& schema, const RegimeSpec& spec, const TrainConfig& cfg,
                     std::vector<StepRecord>* history = nullptr);
Metrics train_baseline(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                       const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg);
Metrics train_utl(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg);
Metrics train_dtl(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg);
Metrics train_uft(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg);
Metrics train_dft(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg);
Metrics train_2lf(CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const LabelSchema& schema, RegimeSpec spec, const TrainConfig& cfg, double beta);

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Stratified by main label; deterministic under `seed`.
std::vector<Fold> kfold_split(const std::vector<Sample>& samples, std::size_t k, std::uint64_t seed);

// Fold-level report with mean and sample standard deviation.
struct FoldReport {
    RegimeKind regime = RegimeKind::baseline;
    double beta = 1.0;
    std::vector<Metrics> folds;
};
std::string format_report(const FoldReport& report, const LabelSchema& schema);

// One row per sample: mean-pooled x' then main label and sub label(s).
std::string format_embeddings(const CentrifugeModel& model, const std::vector<Sample>& samples);
void export_embeddings(const CentrifugeModel& model, const std::vector<Sample>& samples,
                       const std::filesystem::path& path);

CentrifugeConfig model_config_for(const LabelSchema& schema, std::size_t window, std::size_t block_size,
                                  const NetConfig& sub_net, const NetConfig& main_net, bool positional = false);

} // namespace centrifuge
