#pragma once

#include "centrifuge/rng.hpp"
#include "centrifuge/schema.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace centrifuge {

// One fixed-length byte window with its labels. `source` optionally holds a
// separate sub-net input (x2) for source-target centrifuges; it is not
// persisted in corpus files.
struct Sample {
    std::vector<std::uint8_t> bytes;
    std::uint16_t main_label = 0;
    std::vector<std::uint16_t> sub_labels;
    std::vector<std::uint8_t> source;
    std::string origin;

    friend bool operator==(const Sample& a, const Sample& b) {
        return a.bytes == b.bytes && a.main_label == b.main_label && a.sub_labels == b.sub_labels;
    }
};

enum class ObjectFormat { elf, coff, raw };

ObjectFormat parse_object_format(const std::string& s);
std::string to_string(ObjectFormat f);

struct SourceRecord {
    std::filesystem::path path;
    ObjectFormat format = ObjectFormat::raw;
    std::string main_label;
    std::vector<std::string> sub_labels;
    std::uint64_t length = 0;
};

// Concatenated raw bytes of every executable section of a relocatable object,
// in section-table order. ELF: SHT_PROGBITS with SHF_EXECINSTR. COFF: sections
// with IMAGE_SCN_CNT_CODE. Relocations are left unapplied.
std::vector<std::uint8_t> extract_code_section(std::span<const std::uint8_t> file, ObjectFormat format);

// Identity passthrough for non-native ("Others") inputs.
std::vector<std::uint8_t> ingest_raw(std::span<const std::uint8_t> file);

// Windows at offsets 0, stride, 2*stride, ...; the trailing fragment shorter
// than `length` is dropped.
std::vector<Sample> window_samples(std::span<const std::uint8_t> stream, std::size_t length, std::size_t stride,
                                   std::uint16_t main_label, const std::vector<std::uint16_t>& sub_labels,
                                   const std::string& origin = {});

// Keeps a seeded uniform subsample of at most `cap` per main label, then
// returns everything in seeded shuffled order.
std::vector<Sample> cap_and_shuffle(std::vector<Sample> samples, std::size_t cap, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corpus container ("CFGC")

struct CorpusHeader {
    std::uint16_t version = 1;
    std::uint16_t sub_count = 0;
    std::uint32_t window = 0;
    std::uint64_t count = 0;
    std::uint64_t schema_digest = 0;
};

inline constexpr std::size_t kCorpusHeaderSize = 28;

struct CorpusFile {
    CorpusHeader header;
    std::vector<Sample> samples;
};

std::vector<std::uint8_t> encode_corpus(const std::vector<Sample>& samples, const LabelSchema& schema,
                                        std::size_t window);
CorpusFile decode_corpus(std::span<const std::uint8_t> bytes, const LabelSchema& schema);
CorpusHeader decode_corpus_header(std::span<const std::uint8_t> bytes);

void corpus_write(const std::vector<Sample>& samples, const LabelSchema& schema, std::size_t window,
                  const std::filesystem::path& path);
CorpusFile corpus_read(const std::filesystem::path& path, const LabelSchema& schema);

// ---------------------------------------------------------------------------
// Manifest: tab-separated path, format, main label, comma-separated sub labels.

std::vector<SourceRecord> parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
std::vector<SourceRecord> load_manifest(const std::filesystem::path& path);

struct BuildOptions {
    std::size_t window = 235;
    std::size_t stride = 0;  // 0 means stride = window
    std::size_t cap = 20000;
    std::uint64_t seed = 0;
};

// Extracts, windows, caps and shuffles every record of a manifest.
std::vector<Sample> build_corpus(const std::vector<SourceRecord>& records, const LabelSchema& schema,
                                 const BuildOptions& options);

// ---------------------------------------------------------------------------
// Synthetic toy-ISA corpus

enum class SyntheticSubHeads { generator, style_generator };

struct SyntheticSpec {
    std::size_t generators = 4;
    std::size_t styles = 3;
    std::size_t opcodes_per_generator = 16;
    std::size_t window = 64;
    // Probability that an operand byte comes from the style's preferred set.
    double style_bias = 0.6;
    std::size_t style_set_size = 32;
    SyntheticSubHeads sub_heads = SyntheticSubHeads::generator;
    bool others = false;  // adds a uniform-random "others" class
    std::uint64_t seed = 1;
};

// The concrete toy ISAs derived from a SyntheticSpec.
struct ToyIsaSet {
    std::vector<std::vector<std::uint8_t>> opcodes;       // O_g, pairwise disjoint
    std::vector<std::uint8_t> operand_length;             // per byte value, meaningful for opcodes
    std::vector<std::vector<std::uint8_t>> style_bytes;   // preferred operand bytes per style

    void validate() const;
};

ToyIsaSet make_toy_isas(const SyntheticSpec& spec);

// Appends toy instructions of generator g / style s until `out` holds `length`
// bytes. Draw order per instruction: opcode choice, then one operand draw per
// operand byte; the opcode draw is independent of g.
void synth_stream(const ToyIsaSet& isas, std::size_t g, std::size_t s, double style_bias, std::size_t length,
                  Rng& rng, std::vector<std::uint8_t>& out);

LabelSchema synthetic_schema(const SyntheticSpec& spec);
std::vector<Sample> synth_corpus(const SyntheticSpec& spec, std::size_t samples_per_label);

} // namespace centrifuge
