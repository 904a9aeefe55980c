#include "centrifuge/corpus.hpp"
#include "centrifuge/error.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

using namespace centrifuge;

namespace {

LabelSchema two_label_schema() {
    LabelSchema s;
    s.add_main("gcc-O0");
    s.add_main("clang-O2");
    s.add_sub(0, "x86", "x86");
    s.add_sub(0, "x64", "x86");
    s.add_sub(0, "arm");
    return s;
}

std::vector<Sample> some_samples(std::size_t n, std::size_t window) {
    std::vector<Sample> out;
    Rng rng(1);
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.bytes.resize(window);
        for (auto& b : s.bytes) b = static_cast<std::uint8_t>(rng.below(256));
        s.main_label = static_cast<std::uint16_t>(i % 2);
        s.sub_labels = {static_cast<std::uint16_t>(i % 3)};
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

TEST_CASE("windowing follows offsets 0, stride, 2*stride") {
    std::vector<std::uint8_t> stream(103);
    for (std::size_t i = 0; i < stream.size(); ++i) stream[i] = static_cast<std::uint8_t>(i);
    for (std::size_t L : {1u, 10u, 64u, 103u}) {
        for (std::size_t stride : {1u, 7u, 10u, 64u}) {
            auto w = window_samples(stream, L, stride, 1, {2});
            const std::size_t expect = (stream.size() - L) / stride + 1;
            REQUIRE(w.size() == expect);
            for (std::size_t i = 0; i < w.size(); ++i) {
                CHECK(w[i].bytes.size() == L);
                CHECK(w[i].bytes.front() == static_cast<std::uint8_t>(i * stride));
                CHECK(w[i].main_label == 1);
                CHECK(w[i].sub_labels == std::vector<std::uint16_t>{2});
            }
        }
    }
    CHECK(window_samples(stream, 104, 1, 0, {}).empty());
    CHECK_THROWS_AS(window_samples(stream, 10, 0, 0, {}), ConfigError);
}

TEST_CASE("cap keeps at most S per label and is seeded") {
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < 25000; ++i) samples.push_back(Sample{{static_cast<std::uint8_t>(i)}, 0, {}, {}, {}});
    for (std::size_t i = 0; i < 100; ++i) samples.push_back(Sample{{static_cast<std::uint8_t>(i)}, 1, {}, {}, {}});
    auto capped = cap_and_shuffle(samples, 20000, 9);
    std::map<std::uint16_t, std::size_t> counts;
    for (const auto& s : capped) ++counts[s.main_label];
    CHECK(counts[0] == 20000);
    CHECK(counts[1] == 100);
    auto again = cap_and_shuffle(samples, 20000, 9);
    CHECK(again == capped);
    auto other = cap_and_shuffle(samples, 20000, 10);
    CHECK_FALSE(other == capped);
}

TEST_CASE("corpus round trip") {
    const LabelSchema schema = two_label_schema();
    auto samples = some_samples(17, 12);
    auto bytes = encode_corpus(samples, schema, 12);
    CHECK(bytes.size() == kCorpusHeaderSize + 17 * (12 + 2 + 2));
    CorpusFile f = decode_corpus(bytes, schema);
    CHECK(f.header.count == 17);
    CHECK(f.header.window == 12);
    CHECK(f.header.sub_count == 1);
    CHECK(f.header.schema_digest == schema.digest());
    CHECK(f.samples == samples);

    testutil::TempDir dir("corpus");
    corpus_write(samples, schema, 12, dir / "c.cfgc");
    CHECK(corpus_read(dir / "c.cfgc", schema).samples == samples);
    CHECK(encode_corpus({}, schema, 12).size() == kCorpusHeaderSize);
}

TEST_CASE("corpus integrity errors") {
    const LabelSchema schema = two_label_schema();
    auto bytes = encode_corpus(some_samples(5, 8), schema, 8);
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, kCorpusHeaderSize - 1, kCorpusHeaderSize + 1, bytes.size() - 1}) {
        std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_AS(decode_corpus(t, schema), IntegrityError);
    }
    auto magic = bytes;
    magic[1] = 'X';
    CHECK_THROWS_AS(decode_corpus(magic, schema), IntegrityError);
    auto version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(decode_corpus(version, schema), IntegrityError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_corpus(trailing, schema), IntegrityError);
    LabelSchema other = two_label_schema();
    other.add_main("msvc");
    CHECK_THROWS_AS(decode_corpus(bytes, other), SchemaError);
    auto label = bytes;
    label[kCorpusHeaderSize + 8] = 5;  // main label of the first record
    CHECK_THROWS_AS(decode_corpus(label, schema), IntegrityError);
}

TEST_CASE("encoding rejects inconsistent samples") {
    const LabelSchema schema = two_label_schema();
    auto samples = some_samples(2, 8);
    samples[1].bytes.pop_back();
    CHECK_THROWS_AS(encode_corpus(samples, schema, 8), InputError);
    samples = some_samples(2, 8);
    samples[0].sub_labels.clear();
    CHECK_THROWS_AS(encode_corpus(samples, schema, 8), SchemaError);
}

TEST_CASE("schema text round trip and errors") {
    const LabelSchema s = two_label_schema();
    const std::string text = s.to_text();
    CHECK(LabelSchema::parse(text) == s);
    CHECK(LabelSchema::parse(text).to_text() == text);
    CHECK(s.subs[0].group[0] == s.subs[0].group[1]);
    CHECK(s.subs[0].group[2] != s.subs[0].group[0]);
    CHECK(s.sub_counts() == std::vector<std::size_t>{3});
    CHECK(s.main_index("clang-O2") == 1u);
    CHECK_FALSE(s.main_index("icc").has_value());
    try {
        LabelSchema::parse("main a\nmain b\nbogus c\n");
        FAIL("expected an error");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(LabelSchema::parse("main a\nmain a\n"), SchemaError);
    CHECK_THROWS_AS(LabelSchema::parse("main a\nsub 1 x\n"), SchemaError);
    CHECK_THROWS_AS(LabelSchema::parse("sub 0 x\n"), SchemaError);
    CHECK(LabelSchema::parse("# comment\nmain a\n\nsub 0 x\n").main_count() == 1);
}

TEST_CASE("manifest parsing resolves relative paths") {
    auto recs = parse_manifest("# header\na.o\telf\tgcc-O0\tx86\n/abs/b.obj\tcoff\tclang-O2\tx64\nc.bin\traw\tgcc-O0\n",
                               "/data");
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].path == std::filesystem::path("/data/a.o"));
    CHECK(recs[0].format == ObjectFormat::elf);
    CHECK(recs[0].sub_labels == std::vector<std::string>{"x86"});
    CHECK(recs[1].path == std::filesystem::path("/abs/b.obj"));
    CHECK(recs[2].sub_labels.empty());
    CHECK_THROWS_AS(parse_manifest("a.o\telf\n", "/"), InputError);
    CHECK_THROWS_AS(parse_manifest("a.o\tmacho\tx\ty\n", "/"), InputError);
}

TEST_CASE("corpus build names unknown labels") {
    testutil::TempDir dir("build");
    testutil::write_bytes(dir / "a.bin", std::vector<std::uint8_t>(100, 0x90));
    const LabelSchema schema = two_label_schema();
    BuildOptions opt;
    opt.window = 10;
    auto ok = build_corpus(parse_manifest("a.bin\traw\tgcc-O0\tarm\n", dir.path()), schema, opt);
    CHECK(ok.size() == 10);
    try {
        build_corpus(parse_manifest("a.bin\traw\ticc-O3\tarm\n", dir.path()), schema, opt);
        FAIL("expected an error");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("icc-O3") != std::string::npos);
    }
    CHECK_THROWS_AS(build_corpus(parse_manifest("a.bin\traw\tgcc-O0\tmips\n", dir.path()), schema, opt), SchemaError);
    CHECK_THROWS_AS(build_corpus(parse_manifest("a.bin\telf\tgcc-O0\tarm\n", dir.path()), schema, opt), InputError);
}

TEST_CASE("toy ISAs use disjoint opcode sets") {
    SyntheticSpec spec;
    const ToyIsaSet isas = make_toy_isas(spec);
    REQUIRE(isas.opcodes.size() == 4);
    std::set<std::uint8_t> all;
    for (const auto& ops : isas.opcodes) {
        CHECK(ops.size() == 16);
        all.insert(ops.begin(), ops.end());
        for (std::size_t k = 0; k < ops.size(); ++k) CHECK(isas.operand_length[ops[k]] == k % 5);
    }
    CHECK(all.size() == 64);
    spec.generators = 17;
    CHECK_THROWS_AS(make_toy_isas(spec), ConfigError);
}

TEST_CASE("synthetic corpus sizes and labels") {
    SyntheticSpec spec;
    auto samples = synth_corpus(spec, 5);
    CHECK(samples.size() == 60);
    const LabelSchema schema = synthetic_schema(spec);
    CHECK(schema.main_count() == 12);
    CHECK(schema.sub_counts() == std::vector<std::size_t>{4});
    for (const auto& s : samples) {
        CHECK(s.bytes.size() == 64);
        CHECK(s.sub_labels[0] == s.main_label / 3);
    }
    spec.sub_heads = SyntheticSubHeads::style_generator;
    spec.others = true;
    const LabelSchema two = synthetic_schema(spec);
    CHECK(two.main_count() == 13);
    CHECK(two.sub_counts() == std::vector<std::size_t>{4, 5});
    for (const auto& s : synth_corpus(spec, 2)) {
        if (s.main_label == 12) {
            CHECK(s.sub_labels == std::vector<std::uint16_t>{3, 4});
        } else {
            CHECK(s.sub_labels == std::vector<std::uint16_t>{static_cast<std::uint16_t>(s.main_label % 3),
                                                             static_cast<std::uint16_t>(s.main_label / 3)});
        }
    }
    CHECK(synth_corpus(spec, 3) == synth_corpus(spec, 3));
}

TEST_CASE("toy streams match their generating distribution") {
    SyntheticSpec spec;
    const ToyIsaSet isas = make_toy_isas(spec);
    Rng rng(77);
    std::vector<std::uint8_t> stream;
    synth_stream(isas, 2, 1, spec.style_bias, 200000, rng, stream);
    const std::set<std::uint8_t> preferred(isas.style_bytes[1].begin(), isas.style_bytes[1].end());
    std::map<std::uint8_t, std::size_t> opcode_counts;
    std::size_t in_style = 0, operands = 0;
    std::size_t i = 0;
    while (i < stream.size()) {
        const std::uint8_t op = stream[i++];
        REQUIRE(std::find(isas.opcodes[2].begin(), isas.opcodes[2].end(), op) != isas.opcodes[2].end());
        const std::size_t len = isas.operand_length[op];
        if (i + len > stream.size()) break;
        ++opcode_counts[op];
        for (std::size_t k = 0; k < len; ++k, ++i) {
            ++operands;
            in_style += preferred.count(stream[i]);
        }
    }
    // Goodness of fit, 1 degree of freedom, critical value at p = 0.001.
    const double p = spec.style_bias + (1.0 - spec.style_bias) * 32.0 / 256.0;
    const double e1 = p * static_cast<double>(operands), e0 = static_cast<double>(operands) - e1;
    const double o1 = static_cast<double>(in_style), o0 = static_cast<double>(operands - in_style);
    const double chi_style = (o1 - e1) * (o1 - e1) / e1 + (o0 - e0) * (o0 - e0) / e0;
    CHECK(chi_style < 10.828);
    // Uniform opcode choice, 15 degrees of freedom, critical value at p = 0.001.
    std::size_t total = 0;
    for (auto& [op, c] : opcode_counts) total += c;
    const double expect = static_cast<double>(total) / 16.0;
    double chi_ops = 0;
    for (auto& [op, c] : opcode_counts) chi_ops += (static_cast<double>(c) - expect) * (static_cast<double>(c) - expect) / expect;
    CHECK(opcode_counts.size() == 16);
    CHECK(chi_ops < 37.697);
}

TEST_CASE("swapping opcode sets under a shared seed changes only the opcodes") {
    SyntheticSpec spec;
    const ToyIsaSet isas = make_toy_isas(spec);
    for (std::size_t g = 1; g < 4; ++g) {
        Rng ra(123), rb(123);
        std::vector<std::uint8_t> a, b;
        synth_stream(isas, 0, 2, spec.style_bias, 5000, ra, a);
        synth_stream(isas, g, 2, spec.style_bias, 5000, rb, b);
        std::vector<std::uint8_t> mapped = b;
        std::size_t i = 0;
        while (i < mapped.size()) {
            const auto it = std::find(isas.opcodes[g].begin(), isas.opcodes[g].end(), mapped[i]);
            REQUIRE(it != isas.opcodes[g].end());
            const auto k = static_cast<std::size_t>(it - isas.opcodes[g].begin());
            mapped[i] = isas.opcodes[0][k];
            i += 1 + isas.operand_length[isas.opcodes[0][k]];
        }
        CHECK(mapped == a);
        CHECK_FALSE(b == a);
    }
}
