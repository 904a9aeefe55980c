#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace centrifuge {

// Class names for one sub-net, plus the coarser grouping used for grouped
// ("Arch.") accuracy. group[i] is the group id of sub-class i.
struct SubLabelSet {
    std::vector<std::string> names;
    std::vector<std::size_t> group;
    std::vector<std::string> group_names;

    std::size_t size() const noexcept { return names.size(); }
    friend bool operator==(const SubLabelSet&, const SubLabelSet&) = default;
};

// Text form, one declaration per line ('#' starts a comment):
//   main <name>
//   sub <j> <name> [<group>]
// Sub-classes without a group form a singleton group named after themselves.
struct LabelSchema {
    std::vector<std::string> main_names;
    std::vector<SubLabelSet> subs;

    std::size_t main_count() const noexcept { return main_names.size(); }
    std::size_t sub_net_count() const noexcept { return subs.size(); }
    std::vector<std::size_t> sub_counts() const;

    void add_main(const std::string& name);
    void add_sub(std::size_t j, const std::string& name, const std::string& group = {});

    std::optional<std::size_t> main_index(const std::string& name) const;
    std::optional<std::size_t> sub_index(std::size_t j, const std::string& name) const;

    void validate() const;
    std::string to_text() const;
    // FNV-1a 64 over the canonical text form.
    std::uint64_t digest() const;

    static LabelSchema parse(const std::string& text);
    static LabelSchema load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    friend bool operator==(const LabelSchema&, const LabelSchema&) = default;
};

std::uint64_t fnv1a64(const void* data, std::size_t size);

} // namespace centrifuge
