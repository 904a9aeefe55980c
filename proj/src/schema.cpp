#include "centrifuge/schema.hpp"

#include "binary_io.hpp"
#include "centrifuge/error.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace centrifuge {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::size_t> LabelSchema::sub_counts() const {
    std::vector<std::size_t> out;
    for (const auto& s : subs) out.push_back(s.size());
    return out;
}

void LabelSchema::add_main(const std::string& name) {
    if (main_index(name)) throw SchemaError("duplicate main label '" + name + "'");
    main_names.push_back(name);
}

void LabelSchema::add_sub(std::size_t j, const std::string& name, const std::string& group) {
    if (j > subs.size()) {
        throw SchemaError("sub-net " + std::to_string(j) + " declared before sub-net " + std::to_string(subs.size()));
    }
    if (j == subs.size()) subs.emplace_back();
    SubLabelSet& set = subs[j];
    if (std::find(set.names.begin(), set.names.end(), name) != set.names.end()) {
        throw SchemaError("duplicate sub label '" + name + "' in sub-net " + std::to_string(j));
    }
    const std::string g = group.empty() ? name : group;
    auto it = std::find(set.group_names.begin(), set.group_names.end(), g);
    std::size_t gid = static_cast<std::size_t>(it - set.group_names.begin());
    if (it == set.group_names.end()) set.group_names.push_back(g);
    set.names.push_back(name);
    set.group.push_back(gid);
}

std::optional<std::size_t> LabelSchema::main_index(const std::string& name) const {
    auto it = std::find(main_names.begin(), main_names.end(), name);
    if (it == main_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - main_names.begin());
}

std::optional<std::size_t> LabelSchema::sub_index(std::size_t j, const std::string& name) const {
    if (j >= subs.size()) return std::nullopt;
    const auto& names = subs[j].names;
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
}

void LabelSchema::validate() const {
    if (main_names.empty()) throw SchemaError("schema declares no main labels");
    if (main_names.size() > 0xFFFF) throw SchemaError("too many main labels for a u16 label field");
    for (std::size_t j = 0; j < subs.size(); ++j) {
        if (subs[j].names.empty()) throw SchemaError("sub-net " + std::to_string(j) + " has no labels");
        if (subs[j].group.size() != subs[j].names.size()) throw SchemaError("group map is not total");
        if (subs[j].names.size() > 0xFFFF) throw SchemaError("too many sub labels for a u16 label field");
    }
}

std::string LabelSchema::to_text() const {
    std::ostringstream os;
    for (const auto& m : main_names) os << "main " << m << "\n";
    for (std::size_t j = 0; j < subs.size(); ++j) {
        for (std::size_t i = 0; i < subs[j].names.size(); ++i) {
            const auto& g = subs[j].group_names[subs[j].group[i]];
            os << "sub " << j << " " << subs[j].names[i];
            if (g != subs[j].names[i]) os << " " << g;
            os << "\n";
        }
    }
    return os.str();
}

std::uint64_t LabelSchema::digest() const {
    const std::string t = to_text();
    return fnv1a64(t.data(), t.size());
}

LabelSchema LabelSchema::parse(const std::string& text) {
    LabelSchema s;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind)) continue;
        try {
            if (kind == "main") {
                std::string name, extra;
                if (!(ls >> name) || (ls >> extra)) throw SchemaError("expected 'main <name>'");
                s.add_main(name);
            } else if (kind == "sub") {
                std::size_t j = 0;
                std::string name, group, extra;
                if (!(ls >> j >> name)) throw SchemaError("expected 'sub <j> <name> [group]'");
                ls >> group;
                if (ls >> extra) throw SchemaError("trailing tokens");
                s.add_sub(j, name, group);
            } else {
                throw SchemaError("unknown declaration '" + kind + "'");
            }
        } catch (const SchemaError& e) {
            throw SchemaError("schema line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    s.validate();
    return s;
}

LabelSchema LabelSchema::load(const std::filesystem::path& path) {
    auto bytes = io::read_file(path);
    try {
        return parse(std::string(bytes.begin(), bytes.end()));
    } catch (const SchemaError& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void LabelSchema::save(const std::filesystem::path& path) const { io::write_text(path, to_text()); }

} // namespace centrifuge
