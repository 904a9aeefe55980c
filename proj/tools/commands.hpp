#pragma once

#include "centrifuge/corpus.hpp"
#include "centrifuge/regimes.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace centrifuge::cli {

// Settings shared by all subcommands; each command reads the fields it owns.
struct RunConfig {
    // paths
    std::filesystem::path corpus;
    std::filesystem::path schema;  // defaults to <corpus>.schema
    std::filesystem::path manifest;
    std::filesystem::path checkpoint;
    std::filesystem::path input;
    std::filesystem::path out;

    // corpus
    std::size_t window = 235;
    std::size_t stride = 0;
    std::size_t cap = 20000;
    std::string format = "raw";

    // synthetic corpus
    std::size_t generators = 4;
    std::size_t styles = 3;
    std::size_t per_label = 2000;
    std::size_t synth_window = 64;
    double style_bias = 0.6;
    bool two_sub = false;
    bool others = false;

    // model
    std::size_t block_size = 1;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t ffn = 128;
    std::size_t blocks = 2;
    bool positional = false;

    // training
    std::string regime = "baseline";
    double beta = 1.0;
    std::size_t pretrain_epochs = 25;
    std::size_t train_epochs = 25;
    std::size_t batch = 64;
    std::size_t folds = 4;
    double pretrain_lr = 0.025;
    double train_lr = 0.025;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    bool nesterov = false;
    double label_smoothing = 0.1;
    std::size_t jobs = 1;

    std::uint64_t seed = 0;

    void validate() const;
};

// Parses `args` (without the program name) and runs one subcommand.
// Returns the process exit code: 0 success, 1 runtime or data error, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_corpus_synth(const RunConfig& cfg, std::ostream& out);
int cmd_corpus_build(const RunConfig& cfg, std::ostream& out);
int cmd_corpus_stats(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_classify(const RunConfig& cfg, std::ostream& out);
int cmd_export(const RunConfig& cfg, std::ostream& out);

std::filesystem::path schema_path_for(const RunConfig& cfg);

} // namespace centrifuge::cli
