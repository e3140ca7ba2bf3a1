// Synthetic benchmark generator: five failure groups x ten failures, perturbed
// log-ID sequences paired with noisy operator command sequences.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "log2cmd/automaton.hpp"
#include "log2cmd/rng.hpp"
#include "log2cmd/template_store.hpp"

namespace log2cmd {

struct GenParams {
    int base_len = 150;
    double noise_insert_rate = 0.30;
    double swap_prob = 0.05;
    int n_distinct = 3;
    double incorrect_mean = 1.0;     // Poisson mean, capped at 5 per sample
    int samples_per_failure = 90;    // train+dev, split 90:10
    int test_per_failure = 9;
    int log_vocab_size = 500;
    std::uint64_t seed = 1;
    double rollback_prob = 0.3;      // group (D) only
    int n_failures = 10;             // per group
    std::vector<std::string> groups = {"A", "B", "C", "D", "E"};

    void validate() const;  // throws on out-of-range values
    bool operator==(const GenParams&) const = default;
};

struct FailureSpec {
    std::string group;
    int index = 1;                   // 1..n_failures
    std::string component;           // "cmp<index>"
    std::vector<int> distinct_log_ids;
    std::vector<int> base_log_ids;   // shared group base sequence
};

struct SamplePair {
    std::vector<int> source;           // template IDs
    std::vector<std::string> target;   // command tokens with <ENT>/<EOC>
    std::string group;
    int failure = 1;

    std::string component() const { return "cmp" + std::to_string(failure); }
    bool operator==(const SamplePair&) const = default;
};

struct Corpus {
    std::vector<SamplePair> train, dev, test;
};

// group base sequences and per-failure distinct IDs, all derived from params.seed
std::map<std::string, std::vector<FailureSpec>> build_failure_specs(const GenParams& params);

std::vector<int> gen_log_sequence(const FailureSpec& spec, const GenParams& params, Rng& rng);

// deterministic assembly: walk `path` (transition indices), pick given variant
// per step, substitute the component, join with <ENT>, append <EOC>
std::vector<std::string> build_command_tokens(const Automaton& aut, const std::vector<int>& path,
                                              const std::vector<int>& variants,
                                              const std::string& component);

std::vector<std::string> gen_command_sequence(const Automaton& aut, const FailureSpec& spec,
                                              const GenParams& params, Rng& rng);

// one mutated token; never a correct command of aut for any component.
// throws std::runtime_error after 20 failed attempts
CommandLine mutate_typo(const CommandLine& line, const Automaton& aut, Rng& rng);

Corpus gen_corpus(const GenParams& params);

// JSONL: {"source":[...],"target":[...],"group":"B","failure":3}
void write_jsonl(const std::vector<SamplePair>& samples, const std::filesystem::path& path);
std::vector<SamplePair> read_jsonl(const std::filesystem::path& path);

// writes train/dev/test.jsonl plus automata.json into dir
void write_corpus(const Corpus& corpus, const std::map<std::string, Automaton>& automata,
                  const std::filesystem::path& dir);

}  // namespace log2cmd
