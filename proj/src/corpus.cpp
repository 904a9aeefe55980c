#include "centrifuge/corpus.hpp"

#include "binary_io.hpp"
#include "centrifuge/error.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace centrifuge {

std::vector<Sample> window_samples(std::span<const std::uint8_t> stream, std::size_t length, std::size_t stride,
                                   std::uint16_t main_label, const std::vector<std::uint16_t>& sub_labels,
                                   const std::string& origin) {
    if (stride == 0) throw ConfigError("window stride must be >= 1");
    if (length == 0) throw ConfigError("window length must be >= 1");
    std::vector<Sample> out;
    if (stream.size() < length) return out;
    for (std::size_t off = 0; off + length <= stream.size(); off += stride) {
        Sample s;
        s.bytes.assign(stream.begin() + static_cast<std::ptrdiff_t>(off),
                       stream.begin() + static_cast<std::ptrdiff_t>(off + length));
        s.main_label = main_label;
        s.sub_labels = sub_labels;
        s.origin = origin.empty() ? std::string{} : origin + "@" + std::to_string(off);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> cap_and_shuffle(std::vector<Sample> samples, std::size_t cap, std::uint64_t seed) {
    Rng rng(seed);
    std::map<std::uint16_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < samples.size(); ++i) by_label[samples[i].main_label].push_back(i);
    std::vector<std::size_t> keep;
    for (auto& [label, idx] : by_label) {
        if (idx.size() > cap) {
            rng.shuffle(idx);
            idx.resize(cap);
            std::sort(idx.begin(), idx.end());
        }
        keep.insert(keep.end(), idx.begin(), idx.end());
    }
    rng.shuffle(keep);
    std::vector<Sample> out;
    out.reserve(keep.size());
    for (auto i : keep) out.push_back(std::move(samples[i]));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCorpusMagic[4] = {'C', 'F', 'G', 'C'};
constexpr std::uint16_t kCorpusVersion = 1;

} // namespace

std::vector<std::uint8_t> encode_corpus(const std::vector<Sample>& samples, const LabelSchema& schema,
                                        std::size_t window) {
    schema.validate();
    const std::size_t subs = schema.sub_net_count();
    io::Writer w;
    for (char c : kCorpusMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u16(kCorpusVersion);
    w.u16(static_cast<std::uint16_t>(subs));
    w.u32(static_cast<std::uint32_t>(window));
    w.u64(samples.size());
    w.u64(schema.digest());
    w.buffer().reserve(kCorpusHeaderSize + samples.size() * (window + 2 + 2 * subs));
    for (const auto& s : samples) {
        if (s.bytes.size() != window) {
            throw InputError("sample length " + std::to_string(s.bytes.size()) + " differs from window " +
                             std::to_string(window));
        }
        if (s.sub_labels.size() != subs) throw SchemaError("sample sub-label count does not match schema");
        if (s.main_label >= schema.main_count()) throw SchemaError("sample main label outside schema");
        for (std::size_t j = 0; j < subs; ++j)
            if (s.sub_labels[j] >= schema.subs[j].size()) throw SchemaError("sample sub label outside schema");
        w.bytes(s.bytes);
        w.u16(s.main_label);
        for (auto l : s.sub_labels) w.u16(l);
    }
    return std::move(w.buffer());
}

CorpusHeader decode_corpus_header(std::span<const std::uint8_t> bytes) {
    io::Reader r(bytes, "corpus header");
    auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kCorpusMagic)) {
        throw IntegrityError("corpus: bad magic (expected CFGC)");
    }
    CorpusHeader h;
    h.version = r.u16();
    if (h.version != kCorpusVersion) throw IntegrityError("corpus: unsupported version " + std::to_string(h.version));
    h.sub_count = r.u16();
    h.window = r.u32();
    h.count = r.u64();
    h.schema_digest = r.u64();
    if (h.window == 0) throw IntegrityError("corpus: zero window length");
    const std::uint64_t record = std::uint64_t{h.window} + 2 + 2 * std::uint64_t{h.sub_count};
    const std::uint64_t body = bytes.size() - kCorpusHeaderSize;
    if (h.count > body / record || body != h.count * record) {
        throw IntegrityError("corpus: file size " + std::to_string(bytes.size()) + " does not match " +
                             std::to_string(h.count) + " samples of " + std::to_string(record) + " bytes");
    }
    return h;
}

CorpusFile decode_corpus(std::span<const std::uint8_t> bytes, const LabelSchema& schema) {
    CorpusFile f;
    f.header = decode_corpus_header(bytes);
    if (f.header.schema_digest != schema.digest()) {
        throw SchemaError("corpus: label-schema digest mismatch");
    }
    if (f.header.sub_count != schema.sub_net_count()) throw SchemaError("corpus: sub-label count differs from schema");
    io::Reader r(bytes.subspan(kCorpusHeaderSize), "corpus body");
    f.samples.resize(f.header.count);
    for (auto& s : f.samples) {
        auto b = r.bytes(f.header.window);
        s.bytes.assign(b.begin(), b.end());
        s.main_label = r.u16();
        if (s.main_label >= schema.main_count()) throw IntegrityError("corpus: main label out of range");
        s.sub_labels.resize(f.header.sub_count);
        for (std::size_t j = 0; j < f.header.sub_count; ++j) {
            s.sub_labels[j] = r.u16();
            if (s.sub_labels[j] >= schema.subs[j].size()) throw IntegrityError("corpus: sub label out of range");
        }
    }
    return f;
}

void corpus_write(const std::vector<Sample>& samples, const LabelSchema& schema, std::size_t window,
                  const std::filesystem::path& path) {
    io::write_file(path, encode_corpus(samples, schema, window));
}

CorpusFile corpus_read(const std::filesystem::path& path, const LabelSchema& schema) {
    return decode_corpus(io::read_file(path), schema);
}

// ---------------------------------------------------------------------------

std::vector<SourceRecord> parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
    std::vector<SourceRecord> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            auto tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() < 3 || fields.size() > 4) {
            throw InputError("manifest line " + std::to_string(lineno) + ": expected 3 or 4 tab-separated fields");
        }
        SourceRecord r;
        r.path = std::filesystem::path(fields[0]).is_absolute() ? std::filesystem::path(fields[0])
                                                                : base_dir / fields[0];
        try {
            r.format = parse_object_format(fields[1]);
        } catch (const InputError& e) {
            throw InputError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        r.main_label = fields[2];
        if (fields.size() == 4 && !fields[3].empty()) {
            std::istringstream ss(fields[3]);
            std::string tok;
            while (std::getline(ss, tok, ',')) r.sub_labels.push_back(tok);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<SourceRecord> load_manifest(const std::filesystem::path& path) {
    auto bytes = io::read_file(path);
    return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::vector<Sample> build_corpus(const std::vector<SourceRecord>& records, const LabelSchema& schema,
                                 const BuildOptions& options) {
    const std::size_t stride = options.stride == 0 ? options.window : options.stride;
    std::vector<Sample> all;
    for (const auto& rec : records) {
        const auto main = schema.main_index(rec.main_label);
        if (!main) throw SchemaError("unknown main label '" + rec.main_label + "' (" + rec.path.string() + ")");
        if (rec.sub_labels.size() != schema.sub_net_count()) {
            throw SchemaError("record " + rec.path.string() + " has " + std::to_string(rec.sub_labels.size()) +
                              " sub labels, schema expects " + std::to_string(schema.sub_net_count()));
        }
        std::vector<std::uint16_t> subs;
        for (std::size_t j = 0; j < rec.sub_labels.size(); ++j) {
            const auto idx = schema.sub_index(j, rec.sub_labels[j]);
            if (!idx) {
                throw SchemaError("unknown sub label '" + rec.sub_labels[j] + "' for sub-net " + std::to_string(j) +
                                  " (" + rec.path.string() + ")");
            }
            subs.push_back(static_cast<std::uint16_t>(*idx));
        }
        const auto file = io::read_file(rec.path);
        std::vector<std::uint8_t> stream;
        try {
            stream = extract_code_section(file, rec.format);
        } catch (const Error& e) {
            throw InputError(rec.path.string() + ": " + e.what());
        }
        auto w = window_samples(stream, options.window, stride, static_cast<std::uint16_t>(*main), subs,
                                rec.path.filename().string());
        std::move(w.begin(), w.end(), std::back_inserter(all));
    }
    return cap_and_shuffle(std::move(all), options.cap, options.seed);
}

// ---------------------------------------------------------------------------
// Synthetic toy ISAs

void ToyIsaSet::validate() const {
    std::vector<int> owner(256, -1);
    for (std::size_t g = 0; g < opcodes.size(); ++g) {
        if (opcodes[g].empty()) throw ConfigError("toy ISA " + std::to_string(g) + " has no opcodes");
        for (auto op : opcodes[g]) {
            if (owner[op] != -1) {
                throw ConfigError("opcode " + std::to_string(op) + " shared by toy ISAs " +
                                  std::to_string(owner[op]) + " and " + std::to_string(g));
            }
            owner[op] = static_cast<int>(g);
            if (operand_length.size() != 256 || operand_length[op] > 4) {
                throw ConfigError("opcode operand length outside [0, 4]");
            }
        }
    }
}

ToyIsaSet make_toy_isas(const SyntheticSpec& spec) {
    if (spec.generators == 0 || spec.styles == 0) throw ConfigError("synthetic spec needs generators and styles");
    if (spec.opcodes_per_generator == 0 || spec.generators * spec.opcodes_per_generator > 256) {
        throw ConfigError("opcode sets cannot be disjoint: " + std::to_string(spec.generators) + " x " +
                          std::to_string(spec.opcodes_per_generator) + " > 256");
    }
    if (spec.style_set_size == 0 || spec.styles * spec.style_set_size > 256) {
        throw ConfigError("style byte sets do not fit in 256 values");
    }
    if (!(spec.style_bias >= 0.0 && spec.style_bias <= 1.0)) throw ConfigError("style_bias must lie in [0, 1]");
    Rng rng(spec.seed);
    std::vector<std::uint8_t> perm(256);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    ToyIsaSet isas;
    isas.operand_length.assign(256, 0);
    for (std::size_t g = 0; g < spec.generators; ++g) {
        std::vector<std::uint8_t> ops(perm.begin() + static_cast<std::ptrdiff_t>(g * spec.opcodes_per_generator),
                                      perm.begin() + static_cast<std::ptrdiff_t>((g + 1) * spec.opcodes_per_generator));
        // The k-th opcode of every ISA has the same operand length, so the
        // length distribution carries no information about the generator.
        for (std::size_t k = 0; k < ops.size(); ++k) isas.operand_length[ops[k]] = static_cast<std::uint8_t>(k % 5);
        isas.opcodes.push_back(std::move(ops));
    }
    rng.shuffle(perm);
    for (std::size_t s = 0; s < spec.styles; ++s) {
        isas.style_bytes.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s * spec.style_set_size),
                                      perm.begin() + static_cast<std::ptrdiff_t>((s + 1) * spec.style_set_size));
    }
    isas.validate();
    return isas;
}

void synth_stream(const ToyIsaSet& isas, std::size_t g, std::size_t s, double style_bias, std::size_t length,
                  Rng& rng, std::vector<std::uint8_t>& out) {
    const auto& ops = isas.opcodes.at(g);
    const auto& preferred = isas.style_bytes.at(s);
    const std::size_t target = out.size() + length;
    while (out.size() < target) {
        const auto op = ops[rng.below(ops.size())];
        out.push_back(op);
        for (std::size_t i = 0; i < isas.operand_length[op]; ++i) {
            const double u = rng.uniform();
            const auto pref = preferred[rng.below(preferred.size())];
            const auto any = static_cast<std::uint8_t>(rng.below(256));
            out.push_back(u < style_bias ? pref : any);
        }
    }
    out.resize(target);
}

namespace {

std::string gen_name(std::size_t g) { return "g" + std::to_string(g); }
std::string style_name(std::size_t s) { return "s" + std::to_string(s); }

// SplitMix64 finalizer, used to derive independent per-label seeds.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

LabelSchema synthetic_schema(const SyntheticSpec& spec) {
    LabelSchema schema;
    for (std::size_t g = 0; g < spec.generators; ++g)
        for (std::size_t s = 0; s < spec.styles; ++s) schema.add_main(gen_name(g) + style_name(s));
    if (spec.others) schema.add_main("others");
    std::size_t j = 0;
    if (spec.sub_heads == SyntheticSubHeads::style_generator) {
        for (std::size_t s = 0; s < spec.styles; ++s) schema.add_sub(0, style_name(s));
        if (spec.others) schema.add_sub(0, "others");
        j = 1;
    }
    for (std::size_t g = 0; g < spec.generators; ++g) schema.add_sub(j, gen_name(g));
    if (spec.others) schema.add_sub(j, "others");
    return schema;
}

std::vector<Sample> synth_corpus(const SyntheticSpec& spec, std::size_t samples_per_label) {
    const ToyIsaSet isas = make_toy_isas(spec);
    const bool two = spec.sub_heads == SyntheticSubHeads::style_generator;
    std::vector<Sample> out;
    const std::size_t labels = spec.generators * spec.styles + (spec.others ? 1 : 0);
    out.reserve(labels * samples_per_label);
    std::vector<std::uint8_t> buf;
    for (std::size_t label = 0; label < labels; ++label) {
        Rng rng(mix(spec.seed ^ mix(label + 1)));
        const bool is_other = label == spec.generators * spec.styles;
        const std::size_t g = is_other ? spec.generators : label / spec.styles;
        const std::size_t s = is_other ? spec.styles : label % spec.styles;
        for (std::size_t i = 0; i < samples_per_label; ++i) {
            Sample smp;
            if (is_other) {
                smp.bytes.resize(spec.window);
                for (auto& b : smp.bytes) b = static_cast<std::uint8_t>(rng.below(256));
            } else {
                // Start a few bytes into the stream so windows are not
                // aligned to instruction boundaries.
                const std::size_t skip = rng.below(5);
                buf.clear();
                synth_stream(isas, g, s, spec.style_bias, spec.window + skip, rng, buf);
                smp.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(skip), buf.end());
            }
            smp.main_label = static_cast<std::uint16_t>(label);
            if (two) smp.sub_labels.push_back(static_cast<std::uint16_t>(s));
            smp.sub_labels.push_back(static_cast<std::uint16_t>(g));
            out.push_back(std::move(smp));
        }
    }
    return out;
}

} // namespace centrifuge
