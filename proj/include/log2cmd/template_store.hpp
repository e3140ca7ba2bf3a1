// Log-line masking and template-ID assignment: raw logs -> sequences of
// natural-number template IDs.
#pragma once

#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace log2cmd {

struct MaskRule {
    std::string name;
    std::string pattern;  // regex source, kept for config round-trips
    std::string replacement;
    std::regex re;

    MaskRule(std::string n, std::string p, std::string r);

    // compiled regex intentionally ignored: same pattern, same behavior
    bool operator==(const MaskRule& o) const {
        return name == o.name && pattern == o.pattern && replacement == o.replacement;
    }
};

struct MaskRuleSet {
    std::vector<MaskRule> rules;

    void add(std::string name, std::string pattern, std::string replacement);
    // timestamps, req-IDs, URLs, IPs, hex runs, ports, paths, long integers
    static MaskRuleSet defaults();

    bool operator==(const MaskRuleSet&) const = default;
};

// collapse whitespace runs to single spaces and trim
std::string normalize_ws(std::string_view s);

// apply rules in declared order, then normalize whitespace
std::string mask_line(std::string_view raw_line, const MaskRuleSet& rules);

class TemplateStore {
public:
    // returns the existing ID or registers the template under the next ID (from 1)
    int assign_id(const std::string& tmpl);
    std::optional<int> lookup(const std::string& tmpl) const;

    int size() const { return static_cast<int>(texts_.size()); }
    const std::string& text(int id) const;  // id in [1, size()]

    // one "ID<TAB>template" per line, IDs ascending
    void save(const std::filesystem::path& path) const;
    static TemplateStore load(const std::filesystem::path& path);

private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> texts_;  // texts_[i] has ID i+1
};

struct LogSequence {
    std::vector<int> ids;
    std::string group;  // optional metadata; empty if unknown
    int failure = -1;
};

// element i = assign_id(mask_line(raw_lines[i])); grows the store
LogSequence encode_log(TemplateStore& store, const std::vector<std::string>& raw_lines,
                       const MaskRuleSet& rules);

// frozen-store variant for inference: unknown templates map to ID 0
LogSequence encode_log_frozen(const TemplateStore& store, const std::vector<std::string>& raw_lines,
                              const MaskRuleSet& rules);

}  // namespace log2cmd
