// Recovery automata: finite-state machines whose transitions fire on correct
// command lines. State 0 = failed, state 1 = recovered.
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace log2cmd {

inline constexpr const char* kFailedComponent = "<FailedComponent>";
inline constexpr const char* kEnt = "<ENT>";
inline constexpr const char* kEoc = "<EOC>";

struct CommandLine {
    std::vector<std::string> words;

    std::string text() const;  // words joined by single spaces
    static CommandLine parse(const std::string& line);
    bool operator==(const CommandLine&) const = default;
};

// pattern with <FailedComponent> occurrences replaced by component
CommandLine substitute(const CommandLine& pattern, const std::string& component);

// true if line equals pattern with <FailedComponent> matching any single token
bool matches_pattern(const CommandLine& line, const CommandLine& pattern);

struct Transition {
    int from = 0;
    int to = 0;
    std::string label;                  // e.g. "a" for the paper's [a]
    std::vector<CommandLine> correct;   // variants, may contain <FailedComponent>
};

struct Automaton {
    std::string name;  // group letter "A".."E"
    std::vector<int> states;
    int accept = 1;
    std::vector<Transition> transitions;

    std::vector<const Transition*> outgoing(int state) const;
    // transition of `state` whose correct set contains `line` after substitution
    const Transition* match(int state, const CommandLine& line, const std::string& component) const;
    // correct command of any transition for any component substitution
    bool is_correct_any(const CommandLine& line) const;
    int shortest_accept_len() const;  // BFS, -1 if accept unreachable
    // all simple paths 0 -> accept as transition-index lists
    std::vector<std::vector<int>> simple_accept_paths() const;
    // enforce the structural invariants; throws on violation
    void validate() const;

    nlohmann::ordered_json to_json() const;
    static Automaton from_json(const nlohmann::json& j);
};

// the five fixed group automata (A)..(E)
std::map<std::string, Automaton> build_group_automata();

nlohmann::ordered_json automata_to_json(const std::map<std::string, Automaton>& automata);
std::map<std::string, Automaton> automata_from_json(const nlohmann::json& j);

}  // namespace log2cmd
