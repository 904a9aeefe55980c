// ELF and COFF relocatable-object code extraction.

#include "centrifuge/corpus.hpp"
#include "centrifuge/error.hpp"

#include <array>
#include <limits>

namespace centrifuge {

namespace {

// Bounds-checked field access with selectable byte order.
class ByteView {
public:
    ByteView(std::span<const std::uint8_t> data, bool big_endian) : data_(data), big_(big_endian) {}

    std::uint64_t get(std::uint64_t offset, unsigned width, const char* field) const {
        if (offset > data_.size() || width > data_.size() - offset) {
            throw ParseError(std::string("truncated reading ") + field, offset);
        }
        std::uint64_t v = 0;
        for (unsigned i = 0; i < width; ++i) {
            const std::uint64_t b = data_[offset + i];
            v |= big_ ? b << (8 * (width - 1 - i)) : b << (8 * i);
        }
        return v;
    }

    void require_range(std::uint64_t offset, std::uint64_t size, const char* what, std::uint64_t report_at) const {
        if (offset > data_.size() || size > data_.size() - offset) {
            throw ParseError(std::string(what) + " extends past end of file", report_at);
        }
    }

    std::size_t size() const noexcept { return data_.size(); }

private:
    std::span<const std::uint8_t> data_;
    bool big_;
};

constexpr std::uint32_t kShtProgbits = 1;
constexpr std::uint64_t kShfExecinstr = 0x4;
constexpr std::uint16_t kEtRel = 1;

std::vector<std::uint8_t> extract_elf(std::span<const std::uint8_t> file) {
    if (file.size() < 16 || file[0] != 0x7F || file[1] != 'E' || file[2] != 'L' || file[3] != 'F') {
        throw ParseError("missing ELF magic", 0);
    }
    const std::uint8_t cls = file[4];
    const std::uint8_t enc = file[5];
    if (cls != 1 && cls != 2) throw ParseError("invalid ELF class", 4);
    if (enc != 1 && enc != 2) throw ParseError("invalid ELF data encoding", 5);
    if (file[6] != 1) throw ParseError("unsupported ELF version", 6);
    const bool is64 = cls == 2;
    const ByteView v(file, enc == 2);

    const auto type = v.get(16, 2, "e_type");
    if (type != kEtRel) throw ParseError("not a relocatable object (e_type " + std::to_string(type) + ")", 16);

    const std::uint64_t shoff = is64 ? v.get(40, 8, "e_shoff") : v.get(32, 4, "e_shoff");
    const std::uint64_t shentsize = v.get(is64 ? 58 : 46, 2, "e_shentsize");
    std::uint64_t shnum = v.get(is64 ? 60 : 48, 2, "e_shnum");
    const std::uint64_t min_entsize = is64 ? 64 : 40;

    if (shoff == 0) throw EmptyExtractionError("object has no section header table");
    if (shentsize < min_entsize) throw ParseError("section header entry size too small", is64 ? 58 : 46);
    if (shnum == 0) {
        // Extended numbering: the real count lives in section 0's sh_size.
        shnum = is64 ? v.get(shoff + 32, 8, "sh_size[0]") : v.get(shoff + 20, 4, "sh_size[0]");
    }
    if (shnum > std::numeric_limits<std::uint64_t>::max() / shentsize) {
        throw ParseError("section count overflows", is64 ? 60 : 48);
    }
    v.require_range(shoff, shnum * shentsize, "section header table", is64 ? 40 : 32);

    std::vector<std::uint8_t> out;
    bool found = false;
    for (std::uint64_t i = 0; i < shnum; ++i) {
        const std::uint64_t h = shoff + i * shentsize;
        const auto sh_type = v.get(h + 4, 4, "sh_type");
        const std::uint64_t flags = is64 ? v.get(h + 8, 8, "sh_flags") : v.get(h + 8, 4, "sh_flags");
        if (sh_type != kShtProgbits || (flags & kShfExecinstr) == 0) continue;
        const std::uint64_t off = is64 ? v.get(h + 24, 8, "sh_offset") : v.get(h + 16, 4, "sh_offset");
        const std::uint64_t size = is64 ? v.get(h + 32, 8, "sh_size") : v.get(h + 20, 4, "sh_size");
        v.require_range(off, size, "code section", h);
        found = true;
        out.insert(out.end(), file.begin() + static_cast<std::ptrdiff_t>(off),
                   file.begin() + static_cast<std::ptrdiff_t>(off + size));
    }
    if (!found) throw EmptyExtractionError("ELF object has no executable PROGBITS section");
    if (out.empty()) throw EmptyExtractionError("ELF object's executable sections are empty");
    return out;
}

constexpr std::uint32_t kScnCntCode = 0x00000020;

bool known_coff_machine(std::uint16_t m) {
    static constexpr std::array<std::uint16_t, 24> machines = {
        0x014c, 0x8664, 0x01c0, 0x01c2, 0x01c4, 0xaa64, 0xa641, 0x0200, 0x0166, 0x0169, 0x0266, 0x0366,
        0x0466, 0x01a2, 0x01a6, 0x01f0, 0x01f1, 0x5032, 0x5064, 0x0ebc, 0x9041, 0x01d3, 0x0184, 0x0284};
    for (auto k : machines)
        if (k == m) return true;
    return false;
}

std::vector<std::uint8_t> extract_coff(std::span<const std::uint8_t> file) {
    const ByteView v(file, false);
    const auto machine = static_cast<std::uint16_t>(v.get(0, 2, "Machine"));
    if (!known_coff_machine(machine)) {
        throw ParseError("unknown COFF machine type " + std::to_string(machine), 0);
    }
    const std::uint64_t nsec = v.get(2, 2, "NumberOfSections");
    const std::uint64_t opt = v.get(16, 2, "SizeOfOptionalHeader");
    if (opt != 0) throw ParseError("not a relocatable object (optional header present)", 16);
    const std::uint64_t table = 20;
    v.require_range(table, nsec * 40, "section table", 2);

    std::vector<std::uint8_t> out;
    bool found = false;
    for (std::uint64_t i = 0; i < nsec; ++i) {
        const std::uint64_t h = table + i * 40;
        const auto chars = v.get(h + 36, 4, "Characteristics");
        if ((chars & kScnCntCode) == 0) continue;
        const std::uint64_t size = v.get(h + 16, 4, "SizeOfRawData");
        const std::uint64_t ptr = v.get(h + 20, 4, "PointerToRawData");
        found = true;
        if (ptr == 0 || size == 0) continue;
        v.require_range(ptr, size, "code section", h);
        out.insert(out.end(), file.begin() + static_cast<std::ptrdiff_t>(ptr),
                   file.begin() + static_cast<std::ptrdiff_t>(ptr + size));
    }
    if (!found) throw EmptyExtractionError("COFF object has no code section");
    if (out.empty()) throw EmptyExtractionError("COFF object's code sections are empty");
    return out;
}

} // namespace

ObjectFormat parse_object_format(const std::string& s) {
    if (s == "elf") return ObjectFormat::elf;
    if (s == "coff") return ObjectFormat::coff;
    if (s == "raw") return ObjectFormat::raw;
    throw InputError("unknown object format '" + s + "' (expected elf, coff or raw)");
}

std::string to_string(ObjectFormat f) {
    switch (f) {
    case ObjectFormat::elf: return "elf";
    case ObjectFormat::coff: return "coff";
    case ObjectFormat::raw: return "raw";
    }
    return "raw";
}

std::vector<std::uint8_t> extract_code_section(std::span<const std::uint8_t> file, ObjectFormat format) {
    switch (format) {
    case ObjectFormat::elf: return extract_elf(file);
    case ObjectFormat::coff: return extract_coff(file);
    case ObjectFormat::raw: return ingest_raw(file);
    }
    throw InputError("unknown object format");
}

std::vector<std::uint8_t> ingest_raw(std::span<const std::uint8_t> file) {
    if (file.empty()) throw InputError("raw input is empty");
    return {file.begin(), file.end()};
}

} // namespace centrifuge
