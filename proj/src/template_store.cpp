#include "log2cmd/template_store.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace log2cmd {

MaskRule::MaskRule(std::string n, std::string p, std::string r)
    : name(std::move(n)), pattern(std::move(p)), replacement(std::move(r)),
      re(pattern, std::regex::ECMAScript) {}

void MaskRuleSet::add(std::string name, std::string pattern, std::string replacement) {
    rules.emplace_back(std::move(name), std::move(pattern), std::move(replacement));
}

MaskRuleSet MaskRuleSet::defaults() {
    MaskRuleSet s;
    s.add("timestamp",
          R"(\d{4}[-/]\d{1,2}[-/]\d{1,2}[ T]\d{1,2}:\d{2}:\d{2}(\.\d+)?|\b\d{1,2}:\d{2}:\d{2}(\.\d+)?\b)",
          "<TS>");
    s.add("request-id", R"(req-[0-9A-Za-z-]+)", "req-<ID>");
    s.add("url", R"([A-Za-z][A-Za-z0-9+.-]*://[^\s]+)", "<URL>");
    s.add("ip", R"(\b\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}(:\d+)?\b)", "<IP>");
    // >= 8 hex chars with at least one letter, so plain integers stay integers
    s.add("hex", R"(\b(?=[0-9a-fA-F]{8,}\b)\d*[a-fA-F][0-9a-fA-F]*\b)", "<HEX>");
    s.add("port", R"(:\d{2,5}\b)", ":<PORT>");
    s.add("path", R"((^|\s)/[^\s]+)", "$1<PATH>");
    s.add("number", R"(\b\d{3,}\b)", "<NUM>");
    return s;
}

std::string normalize_ws(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_blank = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_blank = true;
            continue;
        }
        if (in_blank && !out.empty()) out.push_back(' ');
        in_blank = false;
        out.push_back(c);
    }
    return out;
}

std::string mask_line(std::string_view raw_line, const MaskRuleSet& rules) {
    std::string line = normalize_ws(raw_line);
    for (const MaskRule& r : rules.rules) line = std::regex_replace(line, r.re, r.replacement);
    return normalize_ws(line);
}

int TemplateStore::assign_id(const std::string& tmpl) {
    auto it = ids_.find(tmpl);
    if (it != ids_.end()) return it->second;
    texts_.push_back(tmpl);
    const int id = static_cast<int>(texts_.size());
    ids_.emplace(tmpl, id);
    return id;
}

std::optional<int> TemplateStore::lookup(const std::string& tmpl) const {
    auto it = ids_.find(tmpl);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

const std::string& TemplateStore::text(int id) const {
    if (id < 1 || id > size()) throw std::out_of_range("TemplateStore::text: bad id");
    return texts_[static_cast<std::size_t>(id - 1)];
}

void TemplateStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write template store: " + path.string());
    for (std::size_t i = 0; i < texts_.size(); ++i) out << (i + 1) << '\t' << texts_[i] << '\n';
}

TemplateStore TemplateStore::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read template store: " + path.string());
    TemplateStore store;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("template store " + path.string() + ": missing tab at line " +
                                     std::to_string(lineno));
        int id = 0;
        try {
            id = std::stoi(line.substr(0, tab));
        } catch (const std::exception&) {
            throw std::runtime_error("template store " + path.string() + ": bad id at line " +
                                     std::to_string(lineno));
        }
        if (id != lineno)
            throw std::runtime_error("template store " + path.string() + ": ids must ascend from 1, got " +
                                     std::to_string(id) + " at line " + std::to_string(lineno));
        const std::string tmpl = line.substr(tab + 1);
        if (store.assign_id(tmpl) != id)
            throw std::runtime_error("template store " + path.string() + ": duplicate template at line " +
                                     std::to_string(lineno));
    }
    return store;
}

LogSequence encode_log(TemplateStore& store, const std::vector<std::string>& raw_lines,
                       const MaskRuleSet& rules) {
    LogSequence seq;
    seq.ids.reserve(raw_lines.size());
    for (const std::string& raw : raw_lines) seq.ids.push_back(store.assign_id(mask_line(raw, rules)));
    return seq;
}

LogSequence encode_log_frozen(const TemplateStore& store, const std::vector<std::string>& raw_lines,
                              const MaskRuleSet& rules) {
    LogSequence seq;
    seq.ids.reserve(raw_lines.size());
    for (const std::string& raw : raw_lines) seq.ids.push_back(store.lookup(mask_line(raw, rules)).value_or(0));
    return seq;
}

}  // namespace log2cmd
