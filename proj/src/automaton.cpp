#include "log2cmd/automaton.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <sstream>
#include <stdexcept>

namespace log2cmd {

std::string CommandLine::text() const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

CommandLine CommandLine::parse(const std::string& line) {
    CommandLine cl;
    std::istringstream in(line);
    std::string w;
    while (in >> w) cl.words.push_back(w);
    return cl;
}

CommandLine substitute(const CommandLine& pattern, const std::string& component) {
    CommandLine out = pattern;
    for (std::string& w : out.words)
        if (w == kFailedComponent) w = component;
    return out;
}

bool matches_pattern(const CommandLine& line, const CommandLine& pattern) {
    if (line.words.size() != pattern.words.size()) return false;
    for (std::size_t i = 0; i < line.words.size(); ++i)
        if (pattern.words[i] != kFailedComponent && pattern.words[i] != line.words[i]) return false;
    return true;
}

std::vector<const Transition*> Automaton::outgoing(int state) const {
    std::vector<const Transition*> out;
    for (const Transition& t : transitions)
        if (t.from == state) out.push_back(&t);
    return out;
}

const Transition* Automaton::match(int state, const CommandLine& line,
                                   const std::string& component) const {
    for (const Transition& t : transitions) {
        if (t.from != state) continue;
        for (const CommandLine& pat : t.correct)
            if (substitute(pat, component) == line) return &t;
    }
    return nullptr;
}

bool Automaton::is_correct_any(const CommandLine& line) const {
    for (const Transition& t : transitions)
        for (const CommandLine& pat : t.correct)
            if (matches_pattern(line, pat)) return true;
    return false;
}

int Automaton::shortest_accept_len() const {
    std::map<int, int> dist;
    std::deque<int> q;
    dist[0] = 0;
    q.push_back(0);
    while (!q.empty()) {
        const int s = q.front();
        q.pop_front();
        if (s == accept) return dist[s];
        for (const Transition* t : outgoing(s)) {
            if (dist.count(t->to)) continue;
            dist[t->to] = dist[s] + 1;
            q.push_back(t->to);
        }
    }
    return -1;
}

std::vector<std::vector<int>> Automaton::simple_accept_paths() const {
    std::vector<std::vector<int>> paths;
    std::vector<int> cur;
    std::set<int> visited;
    auto dfs = [&](auto&& self, int state) -> void {
        if (state == accept) {
            paths.push_back(cur);
            return;
        }
        visited.insert(state);
        for (std::size_t ti = 0; ti < transitions.size(); ++ti) {
            const Transition& t = transitions[ti];
            if (t.from != state || visited.count(t.to)) continue;
            cur.push_back(static_cast<int>(ti));
            self(self, t.to);
            cur.pop_back();
        }
        visited.erase(state);
    };
    dfs(dfs, 0);
    return paths;
}

void Automaton::validate() const {
    auto has_state = [&](int s) { return std::find(states.begin(), states.end(), s) != states.end(); };
    if (!has_state(0) || !has_state(accept))
        throw std::runtime_error("automaton " + name + ": states 0 and accept must exist");
    if (shortest_accept_len() < 0)
        throw std::runtime_error("automaton " + name + ": accept state unreachable");
    for (const Transition& t : transitions) {
        if (!has_state(t.from) || !has_state(t.to))
            throw std::runtime_error("automaton " + name + ": transition on unknown state");
        for (const CommandLine& c : t.correct) {
            if (c.words.empty()) throw std::runtime_error("automaton " + name + ": empty command");
            for (const std::string& w : c.words)
                if (w == kEnt || w == kEoc)
                    throw std::runtime_error("automaton " + name + ": separator token in command");
        }
    }
    // no command may belong to two transitions under any substitution
    for (std::size_t i = 0; i < transitions.size(); ++i)
        for (const CommandLine& a : transitions[i].correct)
            for (std::size_t j = 0; j < transitions.size(); ++j) {
                if (i == j) continue;
                for (const CommandLine& b : transitions[j].correct)
                    if (matches_pattern(substitute(a, "cmpX"), b) || matches_pattern(substitute(b, "cmpX"), a) ||
                        a == b)
                        throw std::runtime_error("automaton " + name + ": ambiguous command '" + a.text() +
                                                 "' on transitions " + transitions[i].label + " and " +
                                                 transitions[j].label);
            }
}

nlohmann::ordered_json Automaton::to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["states"] = states;
    j["accept"] = accept;
    auto& ts = j["transitions"] = nlohmann::ordered_json::array();
    for (const Transition& t : transitions) {
        nlohmann::ordered_json tj;
        tj["from"] = t.from;
        tj["to"] = t.to;
        tj["label"] = t.label;
        auto& cs = tj["commands"] = nlohmann::ordered_json::array();
        for (const CommandLine& c : t.correct) cs.push_back(c.text());
        ts.push_back(std::move(tj));
    }
    return j;
}

Automaton Automaton::from_json(const nlohmann::json& j) {
    Automaton a;
    a.name = j.at("name").get<std::string>();
    a.states = j.at("states").get<std::vector<int>>();
    a.accept = j.at("accept").get<int>();
    for (const auto& tj : j.at("transitions")) {
        Transition t;
        t.from = tj.at("from").get<int>();
        t.to = tj.at("to").get<int>();
        t.label = tj.at("label").get<std::string>();
        for (const auto& c : tj.at("commands")) t.correct.push_back(CommandLine::parse(c.get<std::string>()));
        a.transitions.push_back(std::move(t));
    }
    a.validate();
    return a;
}

namespace {

Transition mk(int from, int to, std::string label, std::initializer_list<const char*> cmds) {
    Transition t;
    t.from = from;
    t.to = to;
    t.label = std::move(label);
    for (const char* c : cmds) t.correct.push_back(CommandLine::parse(c));
    return t;
}

}  // namespace

std::map<std::string, Automaton> build_group_automata() {
    std::map<std::string, Automaton> m;

    {  // (A) single transition
        Automaton a;
        a.name = "A";
        a.states = {0, 1};
        a.transitions = {
            mk(0, 1, "a",
               {"cmd3 restart <FailedComponent>", "cmd3 reload <FailedComponent>",
                "cmd3 -f restart <FailedComponent>"}),
        };
        m["A"] = std::move(a);
    }
    {  // (B) two-step route 0->2->1 plus direct reboot edge 0->1
        Automaton a;
        a.name = "B";
        a.states = {0, 1, 2};
        a.transitions = {
            mk(0, 2, "a",
               {"cmd1 -a xxx <FailedComponent>", "cmd1 -b xxx <FailedComponent>",
                "cmd1 xxx <FailedComponent>"}),
            mk(2, 1, "b", {"cmd2 start <FailedComponent>", "cmd2 restart <FailedComponent>"}),
            mk(0, 1, "c", {"reboot", "shutdown -r now"}),
        };
        m["B"] = std::move(a);
    }
    {  // (C) longer linear chain
        Automaton a;
        a.name = "C";
        a.states = {0, 1, 2, 3, 4};
        a.transitions = {
            mk(0, 2, "a", {"cmd4 stop <FailedComponent>", "cmd4 halt <FailedComponent>"}),
            mk(2, 3, "b",
               {"cmd5 -u config <FailedComponent>", "cmd5 -r config <FailedComponent>",
                "cmd5 config <FailedComponent>"}),
            mk(3, 4, "c", {"cmd4 start <FailedComponent>", "cmd4 -f start <FailedComponent>"}),
            mk(4, 1, "d", {"cmd6 verify <FailedComponent>", "cmd6 -v status <FailedComponent>"}),
        };
        m["C"] = std::move(a);
    }
    {  // (D) forward chain with rollback edges 3->2 and 2->0
        Automaton a;
        a.name = "D";
        a.states = {0, 1, 2, 3};
        a.transitions = {
            mk(0, 2, "a", {"cmd7 disable <FailedComponent>", "cmd7 -q disable <FailedComponent>"}),
            mk(2, 3, "b", {"cmd8 patch <FailedComponent>", "cmd8 -p apply <FailedComponent>"}),
            mk(3, 1, "c", {"cmd7 enable <FailedComponent>", "cmd7 -q enable <FailedComponent>"}),
            mk(3, 2, "r1", {"cmd8 revert <FailedComponent>"}),
            mk(2, 0, "r2", {"cmd7 reset <FailedComponent>", "cmd7 -q reset <FailedComponent>"}),
        };
        m["D"] = std::move(a);
    }
    {  // (E) branch: short route 0->2->1, long route 0->3->4->5->1
        Automaton a;
        a.name = "E";
        a.states = {0, 1, 2, 3, 4, 5};
        a.transitions = {
            mk(0, 2, "a", {"cmd9 failover <FailedComponent>", "cmd9 -f failover <FailedComponent>"}),
            mk(2, 1, "b", {"cmd9 activate <FailedComponent>", "cmd9 -y activate <FailedComponent>"}),
            mk(0, 3, "c", {"cmd10 isolate <FailedComponent>", "cmd10 -n isolate <FailedComponent>"}),
            mk(3, 4, "d",
               {"cmd11 rebuild <FailedComponent>", "cmd11 -a rebuild <FailedComponent>",
                "cmd11 sync <FailedComponent>"}),
            mk(4, 5, "e", {"cmd10 attach <FailedComponent>", "cmd10 -n attach <FailedComponent>"}),
            mk(5, 1, "f", {"cmd12 confirm <FailedComponent>", "cmd12 -y confirm <FailedComponent>"}),
        };
        m["E"] = std::move(a);
    }
    for (auto& [_, a] : m) a.validate();
    return m;
}

nlohmann::ordered_json automata_to_json(const std::map<std::string, Automaton>& automata) {
    nlohmann::ordered_json j;
    auto& arr = j["automata"] = nlohmann::ordered_json::array();
    for (const auto& [_, a] : automata) arr.push_back(a.to_json());
    return j;
}

std::map<std::string, Automaton> automata_from_json(const nlohmann::json& j) {
    std::map<std::string, Automaton> m;
    for (const auto& aj : j.at("automata")) {
        Automaton a = Automaton::from_json(aj);
        std::string name = a.name;
        m[name] = std::move(a);
    }
    return m;
}

}  // namespace log2cmd
