// Success evaluation: simulate estimated command sequences on the recovery
// automata and derive success rates and the reliability-threshold report.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "log2cmd/automaton.hpp"
#include "log2cmd/seq2seq.hpp"
#include "log2cmd/synth_corpus.hpp"

namespace log2cmd {

// tokens -> command lines: split on <ENT>, drop a trailing <EOC>, discard
// empty segments. <EOC> anywhere else throws (a decoder must not emit it).
std::vector<CommandLine> parse_command_lines(const std::vector<std::string>& tokens);

struct SimulationResult {
    int final_state = 0;
    bool accepted = false;  // final_state == accept state
    std::vector<std::pair<int, std::string>> transitions_taken;  // (line index, label)
    std::vector<int> noop_lines;
};

// start at state 0; a line matching a correct command of an outgoing
// transition fires it, anything else is a no-op
SimulationResult simulate(const Automaton& aut, const std::string& component,
                          const std::vector<CommandLine>& lines);

struct SampleResult {
    std::string group;
    int failure = 1;
    double reliability = 0.0;   // of the top hypothesis
    bool accepted = false;
    int final_state = 0;
    bool truncated = false;
    std::vector<std::string> tokens;      // top hypothesis
    std::vector<ScoredHypothesis> kbest;  // persisted for inspection, not scored
};

struct SuccessReport {
    int total = 0;
    int accepted = 0;
    double overall_rate = 0.0;
    std::map<std::string, int> group_total;
    std::map<std::string, int> group_accepted;
    std::map<std::string, double> group_rate;
    std::vector<SampleResult> samples;
};

// beam-decode every test sample, score the top hypothesis on its automaton
SuccessReport success_rate(const Seq2SeqModel& model, const std::vector<SamplePair>& test,
                           const std::map<std::string, Automaton>& automata, int beam,
                           int max_len);

struct ThresholdRow {
    double threshold = 0.0;
    int n_success = 0;  // accepted samples with reliability >= threshold
    int n_failure = 0;
    std::optional<double> precision;  // absent when no sample qualifies
};

struct ThresholdReport {
    std::vector<ThresholdRow> rows;  // ascending grid over [0, 1]
    std::optional<double> minimal_safe_threshold;  // smallest t: precision 1, n_success >= 1

    // monotonicity of the counts; throws on violation
    void validate() const;
};

ThresholdReport threshold_report(const std::vector<SampleResult>& records,
                                 double grid_step = 0.01);

// JSONL {"group","failure","reliability","accepted",...}, one record per sample
void write_sample_results(const std::vector<SampleResult>& samples,
                          const std::filesystem::path& path);
std::vector<SampleResult> read_sample_results(const std::filesystem::path& path);

// threshold,n_success,n_failure,precision (precision empty when absent)
void write_threshold_csv(const ThresholdReport& report, const std::filesystem::path& path);
// summary: grid step, totals, minimal_safe_threshold (null when absent)
void write_threshold_json(const ThresholdReport& report, const std::filesystem::path& path);

}  // namespace log2cmd
