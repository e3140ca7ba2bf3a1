#include "log2cmd/recovery_eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace log2cmd {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<CommandLine> parse_command_lines(const std::vector<std::string>& tokens) {
    std::vector<CommandLine> lines;
    CommandLine cur;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& tok = tokens[i];
        if (tok == kEoc) {
            if (i + 1 != tokens.size())
                throw std::runtime_error("malformed command sequence: <EOC> at position " +
                                         std::to_string(i) + " of " + std::to_string(tokens.size()));
            break;
        }
        if (tok == kEnt) {
            if (!cur.words.empty()) lines.push_back(std::move(cur));
            cur = {};
        } else {
            cur.words.push_back(tok);
        }
    }
    if (!cur.words.empty()) lines.push_back(std::move(cur));
    return lines;
}

SimulationResult simulate(const Automaton& aut, const std::string& component,
                          const std::vector<CommandLine>& lines) {
    SimulationResult res;
    int state = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const Transition* tr = aut.match(state, lines[i], component);
        if (tr) {
            state = tr->to;
            res.transitions_taken.emplace_back(static_cast<int>(i), tr->label);
        } else {
            res.noop_lines.push_back(static_cast<int>(i));
        }
    }
    res.final_state = state;
    res.accepted = state == aut.accept;
    return res;
}

SuccessReport success_rate(const Seq2SeqModel& model, const std::vector<SamplePair>& test,
                           const std::map<std::string, Automaton>& automata, int beam,
                           int max_len) {
    SuccessReport rep;
    for (const SamplePair& s : test) {
        auto it = automata.find(s.group);
        if (it == automata.end())
            throw std::runtime_error("no automaton for group " + s.group);
        auto kbest = model.beam_decode(model.map_source(s.source), beam, max_len);
        const ScoredHypothesis& top = kbest.at(0);
        SimulationResult sim = simulate(it->second, s.component(), parse_command_lines(top.tokens));

        SampleResult r;
        r.group = s.group;
        r.failure = s.failure;
        r.reliability = top.reliability;
        r.accepted = sim.accepted;
        r.final_state = sim.final_state;
        r.truncated = top.truncated;
        r.tokens = top.tokens;
        r.kbest = std::move(kbest);
        rep.samples.push_back(std::move(r));

        ++rep.total;
        ++rep.group_total[s.group];
        if (sim.accepted) {
            ++rep.accepted;
            ++rep.group_accepted[s.group];
        }
    }
    for (const auto& [g, n] : rep.group_total)
        rep.group_rate[g] = static_cast<double>(rep.group_accepted[g]) / n;
    rep.overall_rate = rep.total ? static_cast<double>(rep.accepted) / rep.total : 0.0;
    return rep;
}

void ThresholdReport::validate() const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].threshold <= rows[i - 1].threshold)
            throw std::runtime_error("threshold grid not ascending");
        if (rows[i].n_success > rows[i - 1].n_success || rows[i].n_failure > rows[i - 1].n_failure)
            throw std::runtime_error("threshold counts not monotone at t=" +
                                     std::to_string(rows[i].threshold));
    }
}

ThresholdReport threshold_report(const std::vector<SampleResult>& records, double grid_step) {
    if (records.empty()) throw std::runtime_error("threshold_report: no records");
    if (!(grid_step > 0.0 && grid_step <= 1.0))
        throw std::runtime_error("threshold_report: grid_step out of (0, 1]");
    ThresholdReport rep;
    int n_points = static_cast<int>(std::llround(1.0 / grid_step));
    for (int i = 0; i <= n_points; ++i) {
        ThresholdRow row;
        row.threshold = static_cast<double>(i) / n_points;
        for (const SampleResult& r : records) {
            if (r.reliability >= row.threshold) (r.accepted ? row.n_success : row.n_failure)++;
        }
        if (row.n_success + row.n_failure > 0)
            row.precision = static_cast<double>(row.n_success) / (row.n_success + row.n_failure);
        if (!rep.minimal_safe_threshold && row.precision && *row.precision == 1.0 &&
            row.n_success >= 1)
            rep.minimal_safe_threshold = row.threshold;
        rep.rows.push_back(row);
    }
    rep.validate();
    return rep;
}

void write_sample_results(const std::vector<SampleResult>& samples,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const SampleResult& r : samples) {
        ordered_json j;
        j["group"] = r.group;
        j["failure"] = r.failure;
        j["reliability"] = r.reliability;
        j["accepted"] = r.accepted;
        j["final_state"] = r.final_state;
        j["truncated"] = r.truncated;
        j["tokens"] = r.tokens;
        ordered_json kb = ordered_json::array();
        for (const ScoredHypothesis& h : r.kbest) {
            kb.push_back(ordered_json{{"tokens", h.tokens},
                                      {"reliability", h.reliability},
                                      {"truncated", h.truncated}});
        }
        j["kbest"] = std::move(kb);
        out << j.dump() << '\n';
    }
}

std::vector<SampleResult> read_sample_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<SampleResult> samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " +
                                     e.what());
        }
        SampleResult r;
        r.group = j.at("group").get<std::string>();
        r.failure = j.at("failure").get<int>();
        r.reliability = j.at("reliability").get<double>();
        r.accepted = j.at("accepted").get<bool>();
        r.final_state = j.at("final_state").get<int>();
        r.truncated = j.at("truncated").get<bool>();
        r.tokens = j.at("tokens").get<std::vector<std::string>>();
        for (const json& h : j.at("kbest")) {
            ScoredHypothesis hyp;
            hyp.tokens = h.at("tokens").get<std::vector<std::string>>();
            hyp.reliability = h.at("reliability").get<double>();
            hyp.truncated = h.at("truncated").get<bool>();
            r.kbest.push_back(std::move(hyp));
        }
        samples.push_back(std::move(r));
    }
    return samples;
}

void write_threshold_csv(const ThresholdReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "threshold,n_success,n_failure,precision\n";
    char buf[128];
    for (const ThresholdRow& r : report.rows) {
        if (r.precision)
            std::snprintf(buf, sizeof buf, "%.2f,%d,%d,%.6f", r.threshold, r.n_success,
                          r.n_failure, *r.precision);
        else
            std::snprintf(buf, sizeof buf, "%.2f,%d,%d,", r.threshold, r.n_success, r.n_failure);
        out << buf << '\n';
    }
}

void write_threshold_json(const ThresholdReport& report, const std::filesystem::path& path) {
    ordered_json j;
    j["grid_points"] = report.rows.size();
    j["total_success"] = report.rows.empty() ? 0 : report.rows.front().n_success;
    j["total_failure"] = report.rows.empty() ? 0 : report.rows.front().n_failure;
    if (report.minimal_safe_threshold)
        j["minimal_safe_threshold"] = *report.minimal_safe_threshold;
    else
        j["minimal_safe_threshold"] = nullptr;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace log2cmd
