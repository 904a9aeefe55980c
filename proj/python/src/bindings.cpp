#include "commands.hpp"

#include "centrifuge/error.hpp"
#include "centrifuge/regimes.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace centrifuge;

namespace {

std::vector<std::uint8_t> to_vec(const py::bytes& b) {
    const std::string s = b;
    return {s.begin(), s.end()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["samples"] = m.samples;
    d["main_acc"] = m.main_acc;
    d["sub_acc"] = m.sub_acc;
    d["grouped_acc"] = m.grouped_acc;
    d["confusion"] = m.confusion;
    return d;
}

py::dict classify_window(const CentrifugeModel& model, const py::bytes& data) {
    const auto bytes = to_vec(data);
    if (bytes.size() != model.config().window) {
        throw InputError("window has " + std::to_string(bytes.size()) + " bytes, model expects " +
                         std::to_string(model.config().window));
    }
    const ForwardResult r = model.forward_centrifuge(tokenize_bytes(bytes, model.config().block_size));
    py::list subs;
    for (const auto& y : r.y_sub) subs.append(y.values());
    py::dict d;
    d["main"] = r.y_main.values();
    d["sub"] = subs;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Centrifuge classifiers for byte-level compiler provenance recovery";

    py::register_exception<Error>(m, "Error");

    py::class_<LabelSchema>(m, "LabelSchema")
        .def_static("parse", &LabelSchema::parse, py::arg("text"))
        .def_static("load", &LabelSchema::load, py::arg("path"))
        .def("save", &LabelSchema::save, py::arg("path"))
        .def("to_text", &LabelSchema::to_text)
        .def_readonly("main_names", &LabelSchema::main_names)
        .def_property_readonly("sub_names",
                               [](const LabelSchema& s) {
                                   std::vector<std::vector<std::string>> out;
                                   for (const auto& set : s.subs) out.push_back(set.names);
                                   return out;
                               })
        .def("__eq__", [](const LabelSchema& a, const LabelSchema& b) { return a == b; });

    py::class_<Sample>(m, "Sample")
        .def(py::init([](const py::bytes& data, std::uint16_t main_label, std::vector<std::uint16_t> sub_labels) {
                 Sample s;
                 s.bytes = to_vec(data);
                 s.main_label = main_label;
                 s.sub_labels = std::move(sub_labels);
                 return s;
             }),
             py::arg("data"), py::arg("main_label"), py::arg("sub_labels") = std::vector<std::uint16_t>{})
        .def_property_readonly("data", [](const Sample& s) { return to_bytes(s.bytes); })
        .def_readonly("main_label", &Sample::main_label)
        .def_readonly("sub_labels", &Sample::sub_labels)
        .def("__eq__", [](const Sample& a, const Sample& b) { return a == b; });

    m.def(
        "synth_corpus",
        [](std::size_t generators, std::size_t styles, std::size_t per_label, std::size_t window, double style_bias,
           bool two_sub, bool others, std::uint64_t seed) {
            SyntheticSpec spec;
            spec.generators = generators;
            spec.styles = styles;
            spec.window = window;
            spec.style_bias = style_bias;
            spec.sub_heads = two_sub ? SyntheticSubHeads::style_generator : SyntheticSubHeads::generator;
            spec.others = others;
            spec.seed = seed;
            return py::make_tuple(synthetic_schema(spec), synth_corpus(spec, per_label));
        },
        py::arg("generators") = 4, py::arg("styles") = 3, py::arg("per_label") = 2000, py::arg("window") = 64,
        py::arg("style_bias") = 0.6, py::arg("two_sub") = false, py::arg("others") = false, py::arg("seed") = 1,
        "Returns (schema, samples) for a synthetic toy-ISA corpus.");

    m.def("write_corpus", &corpus_write, py::arg("samples"), py::arg("schema"), py::arg("window"), py::arg("path"));
    m.def(
        "read_corpus", [](const std::filesystem::path& path, const LabelSchema& schema) {
            return corpus_read(path, schema).samples;
        },
        py::arg("path"), py::arg("schema"));

    m.def(
        "extract_code_section",
        [](const py::bytes& data, const std::string& format) {
            return to_bytes(extract_code_section(to_vec(data), parse_object_format(format)));
        },
        py::arg("data"), py::arg("format"));

    m.def("kfold_split",
          [](const std::vector<Sample>& samples, std::size_t k, std::uint64_t seed) {
              std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out;
              for (auto& f : kfold_split(samples, k, seed)) out.emplace_back(std::move(f.train), std::move(f.test));
              return out;
          },
          py::arg("samples"), py::arg("k"), py::arg("seed") = 0);

    m.def("regime_ledger", [](const std::string& name) { return regime_ledger(parse_regime(name)); }, py::arg("regime"));

    py::class_<CentrifugeModel>(m, "Model")
        .def(py::init([](const LabelSchema& schema, std::size_t window, std::size_t block_size, std::size_t d_model,
                         std::size_t heads, std::size_t ffn, std::size_t blocks, bool positional, std::uint64_t seed) {
                 const NetConfig net{d_model, heads, ffn, blocks};
                 return CentrifugeModel(model_config_for(schema, window, block_size, net, net, positional), seed);
             }),
             py::arg("schema"), py::arg("window"), py::arg("block_size") = 1, py::arg("d_model") = 64,
             py::arg("heads") = 4, py::arg("ffn") = 128, py::arg("blocks") = 2, py::arg("positional") = false,
             py::arg("seed") = 0)
        .def_property_readonly("window", [](const CentrifugeModel& mdl) { return mdl.config().window; })
        .def_property_readonly("parameter_count", &CentrifugeModel::parameter_count)
        .def("classify", &classify_window, py::arg("window"),
             "Main and per-sub-net class probabilities for one window.")
        .def("save", [](const CentrifugeModel& mdl, const std::filesystem::path& path,
                        const LabelSchema& schema) { save_checkpoint(mdl, schema.to_text(), path); },
             py::arg("path"), py::arg("schema"))
        .def("checkpoint_bytes", [](const CentrifugeModel& mdl, const LabelSchema& schema) {
            return to_bytes(encode_checkpoint(mdl, schema.to_text()));
        });

    m.def(
        "load_checkpoint",
        [](const std::filesystem::path& path) {
            LoadedCheckpoint c = load_checkpoint(path);
            return py::make_tuple(std::move(c.model), LabelSchema::parse(c.schema_text));
        },
        py::arg("path"), "Returns (model, schema).");

    m.def(
        "train",
        [](CentrifugeModel& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
           const LabelSchema& schema, const std::string& regime, double beta, std::size_t pretrain_epochs,
           std::size_t train_epochs, std::size_t batch, double pretrain_lr, double train_lr, std::uint64_t seed) {
            RegimeSpec spec;
            spec.kind = parse_regime(regime);
            spec.beta = beta;
            spec.pretrain_epochs = pretrain_epochs;
            spec.train_epochs = train_epochs;
            spec.pretrain_optimizer.lr = pretrain_lr;
            spec.train_optimizer.lr = train_lr;
            TrainConfig cfg;
            cfg.batch = batch;
            cfg.seed = seed;
            cfg.window = model.config().window;
            Metrics result;
            {
                py::gil_scoped_release release;
                result = train_regime(model, train, test, schema, spec, cfg);
            }
            return metrics_dict(result);
        },
        py::arg("model"), py::arg("train"), py::arg("test"), py::arg("schema"), py::arg("regime") = "baseline",
        py::arg("beta") = 1.0, py::arg("pretrain_epochs") = 25, py::arg("train_epochs") = 25, py::arg("batch") = 64,
        py::arg("pretrain_lr") = 0.025, py::arg("train_lr") = 0.025, py::arg("seed") = 0,
        "Trains the model in place and returns metrics on `test`.");

    m.def(
        "evaluate",
        [](const CentrifugeModel& model, const std::vector<Sample>& samples, const LabelSchema& schema) {
            return metrics_dict(evaluate(model, samples, schema));
        },
        py::arg("model"), py::arg("samples"), py::arg("schema"));

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one command-line invocation; returns (exit_code, stdout, stderr).");
}
