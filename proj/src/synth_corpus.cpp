#include "log2cmd/synth_corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace log2cmd {

namespace {

void check_range(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("GenParams: " + what);
}

// stable one-byte stream tags for rng derivation
constexpr std::uint64_t kTagBase = 'G';
constexpr std::uint64_t kTagDistinct = 'D';
constexpr std::uint64_t kTagSample = 'S';
constexpr std::uint64_t kTrainDev = 0, kTest = 1;

const std::vector<std::string> kStatusChecks = {"show status", "check log"};

}  // namespace

void GenParams::validate() const {
    check_range(base_len >= 1, "base_len must be >= 1");
    check_range(noise_insert_rate >= 0.0 && noise_insert_rate <= 1.0, "noise_insert_rate must be in [0,1]");
    check_range(swap_prob >= 0.0 && swap_prob <= 1.0, "swap_prob must be in [0,1]");
    check_range(rollback_prob >= 0.0 && rollback_prob <= 1.0, "rollback_prob must be in [0,1]");
    check_range(n_distinct >= 0, "n_distinct must be >= 0");
    check_range(incorrect_mean >= 0.0, "incorrect_mean must be >= 0");
    check_range(samples_per_failure >= 2, "samples_per_failure must be >= 2");
    check_range(test_per_failure >= 0, "test_per_failure must be >= 0");
    check_range(n_failures >= 1 && n_failures <= 10, "n_failures must be in [1,10]");
    check_range(!groups.empty(), "groups must be non-empty");
    for (const std::string& g : groups)
        check_range(g.size() == 1 && g[0] >= 'A' && g[0] <= 'E', "groups must be single letters A..E");
    check_range(log_vocab_size >= n_distinct * n_failures + 1,
                "log_vocab_size too small for the distinct-ID pool");
}

std::map<std::string, std::vector<FailureSpec>> build_failure_specs(const GenParams& params) {
    std::map<std::string, std::vector<FailureSpec>> out;
    for (const std::string& g : params.groups) {
        const std::uint64_t gtag = static_cast<std::uint64_t>(g[0]);
        Rng base_rng = make_rng(params.seed, kTagBase, gtag);
        std::uniform_int_distribution<int> any_id(1, params.log_vocab_size);
        std::vector<int> base(static_cast<std::size_t>(params.base_len));
        for (int& id : base) id = any_id(base_rng);

        // distinct IDs: unique per failure, disjoint within the group and from the base
        std::set<int> base_ids(base.begin(), base.end());
        std::set<int> used;
        Rng drng = make_rng(params.seed, kTagDistinct, gtag);
        std::vector<FailureSpec>& specs = out[g];
        for (int f = 1; f <= params.n_failures; ++f) {
            FailureSpec spec;
            spec.group = g;
            spec.index = f;
            spec.component = "cmp" + std::to_string(f);
            spec.base_log_ids = base;
            while (static_cast<int>(spec.distinct_log_ids.size()) < params.n_distinct) {
                const int id = any_id(drng);
                if (base_ids.count(id) || used.count(id)) continue;
                used.insert(id);
                spec.distinct_log_ids.push_back(id);
            }
            specs.push_back(std::move(spec));
        }
    }
    return out;
}

std::vector<int> gen_log_sequence(const FailureSpec& spec, const GenParams& params, Rng& rng) {
    std::vector<int> seq = spec.base_log_ids;
    auto insert_at_random = [&](int id) {
        std::uniform_int_distribution<int> pos(0, static_cast<int>(seq.size()));
        seq.insert(seq.begin() + pos(rng), id);
    };
    for (int id : spec.distinct_log_ids) insert_at_random(id);

    std::binomial_distribution<int> n_noise(params.base_len, params.noise_insert_rate);
    std::uniform_int_distribution<int> any_id(1, params.log_vocab_size);
    const int k = n_noise(rng);
    for (int j = 0; j < k; ++j) insert_at_random(any_id(rng));

    std::bernoulli_distribution do_swap(params.swap_prob);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i)
        if (do_swap(rng)) std::swap(seq[i], seq[i + 1]);
    return seq;
}

std::vector<std::string> build_command_tokens(const Automaton& aut, const std::vector<int>& path,
                                              const std::vector<int>& variants,
                                              const std::string& component) {
    if (path.size() != variants.size())
        throw std::invalid_argument("build_command_tokens: path/variants length mismatch");
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const Transition& t = aut.transitions.at(static_cast<std::size_t>(path[i]));
        const CommandLine line = substitute(t.correct.at(static_cast<std::size_t>(variants[i])), component);
        if (i) tokens.emplace_back(kEnt);
        tokens.insert(tokens.end(), line.words.begin(), line.words.end());
    }
    tokens.emplace_back(kEoc);
    return tokens;
}

CommandLine mutate_typo(const CommandLine& line, const Automaton& aut, Rng& rng) {
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789-";
    std::uniform_int_distribution<int> pick_word(0, static_cast<int>(line.words.size()) - 1);
    std::uniform_int_distribution<int> pick_op(0, 2);
    std::uniform_int_distribution<int> pick_char(0, static_cast<int>(alphabet.size()) - 1);
    for (int attempt = 0; attempt < 20; ++attempt) {
        CommandLine out = line;
        std::string& w = out.words[static_cast<std::size_t>(pick_word(rng))];
        int op = pick_op(rng);
        if (w.size() == 1 && op == 1) op = 0;  // never empty a token
        std::uniform_int_distribution<int> pick_pos(0, static_cast<int>(w.size()) - 1);
        const int pos = pick_pos(rng);
        switch (op) {
            case 0: w[static_cast<std::size_t>(pos)] = alphabet[static_cast<std::size_t>(pick_char(rng))]; break;
            case 1: w.erase(static_cast<std::size_t>(pos), 1); break;
            default: w.insert(w.begin() + pos, w[static_cast<std::size_t>(pos)]); break;
        }
        if (out != line && !aut.is_correct_any(out)) return out;
    }
    throw std::runtime_error("mutate_typo: automaton alphabet too degenerate");
}

std::vector<std::string> gen_command_sequence(const Automaton& aut, const FailureSpec& spec,
                                              const GenParams& params, Rng& rng) {
    const auto paths = aut.simple_accept_paths();
    if (paths.empty()) throw std::runtime_error("automaton " + aut.name + " has no accepting path");
    std::uniform_int_distribution<int> pick_path(0, static_cast<int>(paths.size()) - 1);
    const std::vector<int>& path = paths[static_cast<std::size_t>(pick_path(rng))];

    // state sequence along the path: states[i] is where we stand before edge i
    std::vector<int> states = {0};
    for (int ti : path) states.push_back(aut.transitions[static_cast<std::size_t>(ti)].to);

    auto emit = [&](const Transition& t) {
        std::uniform_int_distribution<int> pick_var(0, static_cast<int>(t.correct.size()) - 1);
        return substitute(t.correct[static_cast<std::size_t>(pick_var(rng))], spec.component);
    };

    std::vector<CommandLine> lines;
    std::bernoulli_distribution do_rollback(params.rollback_prob);
    int rollbacks = 0;
    std::size_t i = 0;
    while (i < path.size()) {
        lines.push_back(emit(aut.transitions[static_cast<std::size_t>(path[i])]));
        ++i;
        if (i >= path.size() || rollbacks >= 2) continue;
        // rollback edges: transitions from the current state back to an earlier path state
        const int here = states[i];
        std::vector<const Transition*> rb;
        for (const Transition& t : aut.transitions) {
            if (t.from != here) continue;
            const auto it = std::find(states.begin(), states.begin() + static_cast<std::ptrdiff_t>(i), t.to);
            if (it != states.begin() + static_cast<std::ptrdiff_t>(i)) rb.push_back(&t);
        }
        if (rb.empty() || !do_rollback(rng)) continue;
        std::uniform_int_distribution<int> pick_rb(0, static_cast<int>(rb.size()) - 1);
        const Transition& t = *rb[static_cast<std::size_t>(pick_rb(rng))];
        lines.push_back(emit(t));
        i = static_cast<std::size_t>(std::find(states.begin(), states.end(), t.to) - states.begin());
        ++rollbacks;
    }

    // incorrect commands: typos or status checks, no-ops for the automaton
    std::poisson_distribution<int> n_bad(params.incorrect_mean);
    const int k = params.incorrect_mean > 0.0 ? std::min(n_bad(rng), 5) : 0;
    std::bernoulli_distribution coin(0.5);
    for (int j = 0; j < k; ++j) {
        CommandLine bad;
        if (coin(rng)) {
            std::uniform_int_distribution<int> pick(0, static_cast<int>(kStatusChecks.size()) - 1);
            bad = CommandLine::parse(kStatusChecks[static_cast<std::size_t>(pick(rng))]);
        } else {
            // typo of a random correct command
            std::vector<const CommandLine*> all;
            for (const Transition& t : aut.transitions)
                for (const CommandLine& c : t.correct) all.push_back(&c);
            std::uniform_int_distribution<int> pick(0, static_cast<int>(all.size()) - 1);
            const CommandLine src = substitute(*all[static_cast<std::size_t>(pick(rng))], spec.component);
            try {
                bad = mutate_typo(src, aut, rng);
            } catch (const std::runtime_error&) {
                bad = CommandLine::parse(kStatusChecks[0]);
            }
        }
        std::uniform_int_distribution<int> pos(0, static_cast<int>(lines.size()));
        lines.insert(lines.begin() + pos(rng), bad);
    }

    std::vector<std::string> tokens;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        if (li) tokens.emplace_back(kEnt);
        tokens.insert(tokens.end(), lines[li].words.begin(), lines[li].words.end());
    }
    tokens.emplace_back(kEoc);
    return tokens;
}

Corpus gen_corpus(const GenParams& params) {
    params.validate();
    const auto automata = build_group_automata();
    for (const std::string& g : params.groups)
        if (!automata.count(g)) throw std::invalid_argument("unknown group " + g);
    const auto specs = build_failure_specs(params);

    Corpus corpus;
    const int n = params.samples_per_failure;
    const int n_dev = std::clamp(static_cast<int>(std::llround(n * 0.1)), 1, n - 1);
    for (const std::string& g : params.groups) {
        const Automaton& aut = automata.at(g);
        const std::uint64_t gtag = static_cast<std::uint64_t>(g[0]);
        for (const FailureSpec& spec : specs.at(g)) {
            auto make_sample = [&](std::uint64_t kind, int idx) {
                Rng rng = make_rng(params.seed, kTagSample, gtag, static_cast<std::uint64_t>(spec.index),
                                   kind, static_cast<std::uint64_t>(idx));
                SamplePair s;
                s.source = gen_log_sequence(spec, params, rng);
                s.target = gen_command_sequence(aut, spec, params, rng);
                s.group = g;
                s.failure = spec.index;
                return s;
            };
            for (int idx = 0; idx < n; ++idx) {
                SamplePair s = make_sample(kTrainDev, idx);
                (idx < n - n_dev ? corpus.train : corpus.dev).push_back(std::move(s));
            }
            for (int idx = 0; idx < params.test_per_failure; ++idx)
                corpus.test.push_back(make_sample(kTest, idx));
        }
    }
    return corpus;
}

void write_jsonl(const std::vector<SamplePair>& samples, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const SamplePair& s : samples) {
        nlohmann::ordered_json j;
        j["source"] = s.source;
        j["target"] = s.target;
        j["group"] = s.group;
        j["failure"] = s.failure;
        out << j.dump() << '\n';
    }
}

std::vector<SamplePair> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<SamplePair> samples;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        SamplePair s;
        s.source = j.at("source").get<std::vector<int>>();
        s.target = j.at("target").get<std::vector<std::string>>();
        s.group = j.at("group").get<std::string>();
        s.failure = j.at("failure").get<int>();
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_corpus(const Corpus& corpus, const std::map<std::string, Automaton>& automata,
                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_jsonl(corpus.train, dir / "train.jsonl");
    write_jsonl(corpus.dev, dir / "dev.jsonl");
    write_jsonl(corpus.test, dir / "test.jsonl");
    std::ofstream out(dir / "automata.json", std::ios::binary);
    out << automata_to_json(automata).dump(2) << '\n';
}

}  // namespace log2cmd
