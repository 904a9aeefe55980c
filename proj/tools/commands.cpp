#include "commands.hpp"

#include "binary_io.hpp"
#include "centrifuge/error.hpp"
#include "centrifuge/model.hpp"
#include "centrifuge/schema.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace centrifuge::cli {

namespace fs = std::filesystem;

void RunConfig::validate() const {
    if (window == 0) throw UsageError("--window must be >= 1");
    if (block_size == 0) throw UsageError("--block-size must be >= 1");
    if (batch == 0) throw UsageError("--batch must be >= 1");
    if (folds < 2) throw UsageError("--folds must be >= 2");
    if (jobs == 0) throw UsageError("--jobs must be >= 1");
    if (!(beta >= 0.0)) throw UsageError("--beta must be non-negative");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw UsageError("--label-smoothing must lie in [0, 1)");
    if (!(style_bias >= 0.0 && style_bias <= 1.0)) throw UsageError("--style-bias must lie in [0, 1]");
    if (generators == 0 || styles == 0) throw UsageError("--generators and --styles must be >= 1");
    NetConfig{d_model, heads, ffn, blocks}.validate();
    OptimizerConfig{pretrain_lr, weight_decay, momentum, nesterov}.validate();
    OptimizerConfig{train_lr, weight_decay, momentum, nesterov}.validate();
}

fs::path schema_path_for(const RunConfig& cfg) {
    if (!cfg.schema.empty()) return cfg.schema;
    return fs::path(cfg.corpus.string() + ".schema");
}

namespace {

std::string fixed(double v, int digits = 6) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

LabelSchema schema_or_numbered(const std::string& text, const CentrifugeConfig& mc) {
    if (!text.empty()) return LabelSchema::parse(text);
    LabelSchema s;
    for (std::size_t i = 0; i < mc.main_classes; ++i) s.add_main(std::to_string(i));
    for (std::size_t j = 0; j < mc.sub_net_count(); ++j)
        for (std::size_t i = 0; i < mc.sub_classes[j]; ++i) s.add_sub(j, std::to_string(i));
    return s;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<Sample> select(const std::vector<Sample>& all, const std::vector<std::size_t>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(all[i]);
    return out;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (fold + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

int cmd_corpus_synth(const RunConfig& cfg, std::ostream& out) {
    if (cfg.out.empty()) throw UsageError("corpus synth needs --out");
    SyntheticSpec spec;
    spec.generators = cfg.generators;
    spec.styles = cfg.styles;
    spec.window = cfg.synth_window;
    spec.style_bias = cfg.style_bias;
    spec.sub_heads = cfg.two_sub ? SyntheticSubHeads::style_generator : SyntheticSubHeads::generator;
    spec.others = cfg.others;
    spec.seed = cfg.seed;
    const LabelSchema schema = synthetic_schema(spec);
    const auto samples = cap_and_shuffle(synth_corpus(spec, cfg.per_label), cfg.per_label, cfg.seed);
    ensure_parent(cfg.out);
    corpus_write(samples, schema, spec.window, cfg.out);
    schema.save(fs::path(cfg.out.string() + ".schema"));
    out << "wrote " << samples.size() << " samples (" << schema.main_count() << " main labels, window "
        << spec.window << ") to " << cfg.out.string() << "\n";
    return 0;
}

int cmd_corpus_build(const RunConfig& cfg, std::ostream& out) {
    if (cfg.manifest.empty() || cfg.out.empty()) throw UsageError("corpus build needs --manifest and --out");
    if (cfg.schema.empty()) throw UsageError("corpus build needs --schema");
    const LabelSchema schema = LabelSchema::load(cfg.schema);
    const auto records = load_manifest(cfg.manifest);
    BuildOptions opt;
    opt.window = cfg.window;
    opt.stride = cfg.stride;
    opt.cap = cfg.cap;
    opt.seed = cfg.seed;
    const auto samples = build_corpus(records, schema, opt);
    ensure_parent(cfg.out);
    corpus_write(samples, schema, cfg.window, cfg.out);
    schema.save(fs::path(cfg.out.string() + ".schema"));
    out << "wrote " << samples.size() << " samples from " << records.size() << " sources to " << cfg.out.string()
        << "\n";
    return 0;
}

int cmd_corpus_stats(const RunConfig& cfg, std::ostream& out) {
    const LabelSchema schema = LabelSchema::load(schema_path_for(cfg));
    const CorpusFile file = corpus_read(cfg.corpus, schema);
    out << "corpus " << cfg.corpus.filename().string() << "\n";
    out << "samples " << file.samples.size() << "\n";
    out << "window " << file.header.window << "\n";
    out << "sub_nets " << file.header.sub_count << "\n";
    std::vector<std::size_t> main_counts(schema.main_count(), 0);
    std::vector<std::vector<std::size_t>> sub_counts;
    for (const auto& s : schema.subs) sub_counts.emplace_back(s.size(), 0);
    std::array<std::uint64_t, 256> hist{};
    for (const auto& s : file.samples) {
        ++main_counts[s.main_label];
        for (std::size_t j = 0; j < s.sub_labels.size(); ++j) ++sub_counts[j][s.sub_labels[j]];
        for (auto b : s.bytes) ++hist[b];
    }
    for (std::size_t i = 0; i < main_counts.size(); ++i) out << "main " << schema.main_names[i] << " " << main_counts[i] << "\n";
    for (std::size_t j = 0; j < sub_counts.size(); ++j)
        for (std::size_t i = 0; i < sub_counts[j].size(); ++i)
            out << "sub" << j << " " << schema.subs[j].names[i] << " " << sub_counts[j][i] << "\n";
    char buf[16];
    for (std::size_t row = 0; row < 16; ++row) {
        std::snprintf(buf, sizeof buf, "bytes %02zx", row * 16);
        out << buf;
        for (std::size_t c = 0; c < 16; ++c) out << " " << hist[row * 16 + c];
        out << "\n";
    }
    return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    if (cfg.out.empty()) throw UsageError("train needs --out");
    const RegimeKind kind = parse_regime(cfg.regime);
    const LabelSchema schema = LabelSchema::load(schema_path_for(cfg));
    if (schema.sub_net_count() == 0) {
        throw SchemaError("regime " + to_string(kind) + " needs sub labels but the schema declares none");
    }
    const CorpusFile file = corpus_read(cfg.corpus, schema);
    const NetConfig net{cfg.d_model, cfg.heads, cfg.ffn, cfg.blocks};
    const CentrifugeConfig mc = model_config_for(schema, file.header.window, cfg.block_size, net, net, cfg.positional);

    RegimeSpec spec;
    spec.kind = kind;
    spec.beta = cfg.beta;
    spec.pretrain_epochs = cfg.pretrain_epochs;
    spec.train_epochs = cfg.train_epochs;
    spec.pretrain_optimizer = {cfg.pretrain_lr, cfg.weight_decay, cfg.momentum, cfg.nesterov};
    spec.train_optimizer = {cfg.train_lr, cfg.weight_decay, cfg.momentum, cfg.nesterov};
    spec.validate();

    const auto folds = kfold_split(file.samples, cfg.folds, cfg.seed);
    FoldReport report;
    report.regime = kind;
    report.beta = cfg.beta;
    report.folds.resize(folds.size());
    fs::create_directories(cfg.out);

    std::vector<std::exception_ptr> failures(folds.size());
    auto run_fold = [&](std::size_t f) {
        try {
            const std::uint64_t s = fold_seed(cfg.seed, f);
            TrainConfig tc;
            tc.batch = cfg.batch;
            tc.seed = s;
            tc.label_smoothing = cfg.label_smoothing;
            tc.folds = cfg.folds;
            tc.window = file.header.window;
            CentrifugeModel model(mc, s);
            report.folds[f] = train_regime(model, select(file.samples, folds[f].train),
                                           select(file.samples, folds[f].test), schema, spec, tc);
            save_checkpoint(model, schema.to_text(), cfg.out / ("fold" + std::to_string(f) + ".cfgm"));
        } catch (...) {
            failures[f] = std::current_exception();
        }
    };
    const std::size_t jobs = std::min(cfg.jobs, folds.size());
    if (jobs <= 1) {
        for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
    } else {
        std::size_t next = 0;
        std::mutex m;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) {
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t f;
                    {
                        std::lock_guard lock(m);
                        if (next == folds.size()) return;
                        f = next++;
                    }
                    run_fold(f);
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : failures)
        if (e) std::rethrow_exception(e);

    const std::string text = format_report(report, schema);
    io::write_text(cfg.out / "report.txt", text);
    out << text;
    return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    const LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint);
    const LabelSchema schema = cfg.schema.empty() ? schema_or_numbered(ck.schema_text, ck.model.config())
                                                  : LabelSchema::load(cfg.schema);
    const CorpusFile file = corpus_read(cfg.corpus, schema);
    if (file.header.window != ck.model.config().window) {
        throw InputError("corpus window " + std::to_string(file.header.window) + " differs from model window " +
                         std::to_string(ck.model.config().window));
    }
    const Metrics m = evaluate(ck.model, file.samples, schema);
    out << "samples " << m.samples << "\n";
    out << "main_acc " << fixed(m.main_acc) << "\n";
    for (std::size_t j = 0; j < m.sub_acc.size(); ++j) {
        out << "sub_acc." << j << " " << fixed(m.sub_acc[j]) << "\n";
        out << "grouped_acc." << j << " " << fixed(m.grouped_acc[j]) << "\n";
    }
    for (std::size_t t = 0; t < m.confusion.size(); ++t) {
        out << "confusion " << schema.main_names[t];
        for (auto c : m.confusion[t]) out << " " << c;
        out << "\n";
    }
    return 0;
}

int cmd_classify(const RunConfig& cfg, std::ostream& out) {
    const LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint);
    const CentrifugeConfig& mc = ck.model.config();
    if (mc.mode != CentrifugeMode::self) throw UsageError("classify supports self-centrifuge checkpoints only");
    const LabelSchema schema = schema_or_numbered(ck.schema_text, mc);
    const auto raw = io::read_file(cfg.input);
    const auto code = extract_code_section(raw, parse_object_format(cfg.format));
    const std::size_t L = mc.window;
    if (code.size() < L) {
        throw InputError("fragment too short: " + std::to_string(code.size()) + " bytes, window needs " +
                         std::to_string(L));
    }
    const std::size_t stride = cfg.stride == 0 ? L : cfg.stride;
    const auto windows = window_samples(code, L, stride, 0, {});
    const std::size_t J = mc.sub_net_count();
    std::vector<std::size_t> main_votes(mc.main_classes, 0);
    std::vector<std::vector<std::size_t>> sub_votes(J);
    for (std::size_t j = 0; j < J; ++j) sub_votes[j].assign(mc.sub_classes[j], 0);
    auto argmax = [](const Tensor& t) {
        const auto v = t.values();
        return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const ForwardResult r = ck.model.forward_centrifuge(tokenize_bytes(windows[w].bytes, mc.block_size));
        const std::size_t pm = argmax(r.y_main);
        ++main_votes[pm];
        out << "window " << w << " offset " << w * stride << " main " << schema.main_names[pm] << " "
            << fixed(r.y_main[pm]);
        for (std::size_t j = 0; j < J; ++j) {
            const std::size_t ps = argmax(r.y_sub[j]);
            ++sub_votes[j][ps];
            out << " sub" << j << " " << schema.subs[j].names[ps] << " " << fixed(r.y_sub[j][ps]);
        }
        out << " probs";
        for (double p : r.y_main.values()) out << " " << fixed(p, 9);
        out << "\n";
    }
    auto winner = [](const std::vector<std::size_t>& v) {
        return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    const std::size_t n = windows.size();
    const std::size_t wm = winner(main_votes);
    out << "summary windows " << n << " main " << schema.main_names[wm] << " votes " << main_votes[wm] << "/" << n;
    for (std::size_t j = 0; j < J; ++j) {
        const std::size_t ws = winner(sub_votes[j]);
        out << " sub" << j << " " << schema.subs[j].names[ws] << " votes " << sub_votes[j][ws] << "/" << n;
    }
    out << "\n";
    return 0;
}

int cmd_export(const RunConfig& cfg, std::ostream& out) {
    if (cfg.out.empty()) throw UsageError("export needs --out");
    const LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint);
    const LabelSchema schema = cfg.schema.empty() ? schema_or_numbered(ck.schema_text, ck.model.config())
                                                  : LabelSchema::load(cfg.schema);
    const CorpusFile file = corpus_read(cfg.corpus, schema);
    ensure_parent(cfg.out);
    export_embeddings(ck.model, file.samples, cfg.out);
    out << "wrote " << file.samples.size() << " embeddings to " << cfg.out.string() << "\n";
    return 0;
}

namespace {

// Reads flat key=value lines ('#' comments) into "--key=value" arguments.
std::vector<std::string> config_arguments(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path.string());
    std::vector<std::string> args;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '_', '-');
        args.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
    }
    return args;
}

// Moves the settings of any --config file in front of the explicit flags so
// that later (explicit) values win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::vector<std::string> from_file;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 == args.size()) throw UsageError("--config needs a file argument");
            auto more = config_arguments(args[++i]);
            from_file.insert(from_file.end(), more.begin(), more.end());
        } else if (args[i].rfind("--config=", 0) == 0) {
            auto more = config_arguments(args[i].substr(9));
            from_file.insert(from_file.end(), more.begin(), more.end());
        } else {
            rest.push_back(args[i]);
        }
    }
    std::size_t lead = 0;
    while (lead < rest.size() && lead < 2 && !rest[lead].empty() && rest[lead][0] != '-') ++lead;
    std::vector<std::string> out(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(lead));
    out.insert(out.end(), from_file.begin(), from_file.end());
    out.insert(out.end(), rest.begin() + static_cast<std::ptrdiff_t>(lead), rest.end());
    return out;
}

void add_seed(CLI::App* app, RunConfig& c) {
    app->add_option("--seed", c.seed, "Random seed")->envname("CENTRIFUGE_SEED");
}

void add_model_options(CLI::App* app, RunConfig& c) {
    app->add_option("--block-size", c.block_size, "Bytes per input position");
    app->add_option("--d-model", c.d_model, "Model width");
    app->add_option("--heads", c.heads, "Attention heads");
    app->add_option("--ffn", c.ffn, "Feed-forward width");
    app->add_option("--blocks", c.blocks, "Transformer blocks");
    app->add_flag("--positional", c.positional, "Add learned positional embeddings");
}

} // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    RunConfig c;
    CLI::App app{"centrifuge: compiler provenance classifier with conditioning sub-nets", "centrifuge"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_help_all_flag("--help-all");

    auto* corpus = app.add_subcommand("corpus", "Build, synthesize or inspect corpus files");
    corpus->require_subcommand(1);
    auto* build = corpus->add_subcommand("build", "Window the code sections listed in a manifest");
    build->add_option("--manifest", c.manifest, "Tab-separated manifest")->required()->check(CLI::ExistingFile);
    build->add_option("--schema", c.schema, "Label schema")->required()->check(CLI::ExistingFile);
    build->add_option("--out", c.out, "Corpus file to write")->required();
    build->add_option("--window", c.window, "Window length L");
    build->add_option("--stride", c.stride, "Window stride (default L)");
    build->add_option("--cap", c.cap, "Samples per main label S");
    add_seed(build, c);

    auto* synth = corpus->add_subcommand("synth", "Generate a synthetic toy-ISA corpus");
    synth->add_option("--out", c.out, "Corpus file to write")->required();
    synth->add_option("--generators", c.generators, "Number of toy ISAs");
    synth->add_option("--styles", c.styles, "Styles per ISA");
    synth->add_option("--per-label", c.per_label, "Samples per main label");
    synth->add_option("--window", c.synth_window, "Window length");
    synth->add_option("--style-bias", c.style_bias, "Probability of a style-preferred operand byte");
    synth->add_flag("--two-sub", c.two_sub, "Label both style and generator sub-nets");
    synth->add_flag("--others", c.others, "Add a uniform-random others class");
    add_seed(synth, c);

    auto* stats = corpus->add_subcommand("stats", "Print label counts and a byte histogram");
    stats->add_option("--corpus", c.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    stats->add_option("--schema", c.schema, "Label schema (default <corpus>.schema)");

    auto* train = app.add_subcommand("train", "k-fold training of one regime");
    train->add_option("--regime", c.regime, "baseline, utl, dtl, uft, dft or 2lf");
    train->add_option("--corpus", c.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    train->add_option("--schema", c.schema, "Label schema (default <corpus>.schema)");
    train->add_option("--out", c.out, "Output directory for checkpoints and report")->required();
    train->add_option("--beta", c.beta, "Weight of the sub-net loss in 2lf");
    train->add_option("--pretrain-epochs", c.pretrain_epochs, "Epochs of the pretrain phase");
    train->add_option("--train-epochs", c.train_epochs, "Epochs of the train phase");
    train->add_option("--batch", c.batch, "Mini-batch size b");
    train->add_option("--folds", c.folds, "Cross-validation folds k");
    train->add_option("--pretrain-lr", c.pretrain_lr, "Initial learning rate of the pretrain phase");
    train->add_option("--train-lr", c.train_lr, "Initial learning rate of the train phase");
    train->add_option("--weight-decay", c.weight_decay, "L2 weight decay");
    train->add_option("--momentum", c.momentum, "SGD momentum");
    train->add_flag("--nesterov", c.nesterov, "Nesterov momentum");
    train->add_option("--label-smoothing", c.label_smoothing, "Label smoothing epsilon");
    train->add_option("--jobs", c.jobs, "Folds trained in parallel");
    add_model_options(train, c);
    add_seed(train, c);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
    eval->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--corpus", c.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    eval->add_option("--schema", c.schema, "Label schema (default: the checkpoint's)");

    auto* classify = app.add_subcommand("classify", "Classify every window of a file fragment");
    classify->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    classify->add_option("--input", c.input, "Fragment file")->required()->check(CLI::ExistingFile);
    classify->add_option("--format", c.format, "raw, elf or coff");
    classify->add_option("--stride", c.stride, "Window stride (default L)");

    auto* exp = app.add_subcommand("export", "Write mean-pooled x' embeddings as CSV");
    exp->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    exp->add_option("--corpus", c.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    exp->add_option("--schema", c.schema, "Label schema (default: the checkpoint's)");
    exp->add_option("--out", c.out, "CSV file to write")->required();

    try {
        std::vector<std::string> args = expand_config(raw_args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
        c.validate();
        if (build->parsed()) return cmd_corpus_build(c, out);
        if (synth->parsed()) return cmd_corpus_synth(c, out);
        if (stats->parsed()) return cmd_corpus_stats(c, out);
        if (train->parsed()) return cmd_train(c, out);
        if (eval->parsed()) return cmd_eval(c, out);
        if (classify->parsed()) return cmd_classify(c, out);
        if (exp->parsed()) return cmd_export(c, out);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace centrifuge::cli
