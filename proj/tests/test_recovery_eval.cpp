#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "log2cmd/recovery_eval.hpp"

using namespace log2cmd;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    fs::path path;
    TmpDir() : path(fs::temp_directory_path() / ("l2c_eval_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TmpDir() { std::error_code ec; fs::remove_all(path, ec); }
};

std::vector<std::string> texts(const std::vector<CommandLine>& lines) {
    std::vector<std::string> out;
    for (const CommandLine& l : lines) out.push_back(l.text());
    return out;
}

SampleResult record(double rel, bool accepted) {
    SampleResult r;
    r.group = "B";
    r.reliability = rel;
    r.accepted = accepted;
    return r;
}

}  // namespace

TEST_CASE("token streams split into command lines on <ENT>") {
    std::vector<std::string> toks = {"openstack-status", "|",       "grep", "down", "<ENT>",
                                     "systemctl",        "restart", "nova-scheduler", "<ENT>",
                                     "openstack-status", "|",       "grep", "down", "<EOC>"};
    CHECK(texts(parse_command_lines(toks)) ==
          std::vector<std::string>{"openstack-status | grep down", "systemctl restart nova-scheduler",
                                   "openstack-status | grep down"});

    CHECK(parse_command_lines({"<EOC>"}).empty());
    CHECK(texts(parse_command_lines({"a", "b", "<ENT>", "<ENT>", "c", "<EOC>"})) ==
          std::vector<std::string>{"a b", "c"});
    // tolerated: stored corpora always close with <EOC>, raw token lists may not
    CHECK(texts(parse_command_lines({"a", "b"})) == std::vector<std::string>{"a b"});

    CHECK_THROWS_WITH_AS(parse_command_lines({"a", "<EOC>", "b"}),
                         doctest::Contains("position 1"), std::runtime_error);
}

TEST_CASE("simulation walks the group automaton") {
    std::map<std::string, Automaton> am = build_group_automata();
    const Automaton& b = am.at("B");

    SimulationResult ok = simulate(
        b, "cmp1",
        parse_command_lines({"cmd1", "xxx", "cmp1", "<ENT>", "show", "status", "<ENT>", "cmd2",
                             "restart", "cmp1", "<EOC>"}));
    CHECK(ok.accepted);
    CHECK(ok.final_state == 1);
    REQUIRE(ok.transitions_taken.size() == 2);
    CHECK(ok.transitions_taken[0] == std::pair<int, std::string>{0, "a"});
    CHECK(ok.transitions_taken[1] == std::pair<int, std::string>{2, "b"});
    CHECK(ok.noop_lines == std::vector<int>{1});

    SimulationResult stuck = simulate(
        b, "cmp1", parse_command_lines({"cmd1", "xxx", "cmp1", "<ENT>", "cmd1", "start", "cmp1",
                                        "<EOC>"}));
    CHECK_FALSE(stuck.accepted);
    CHECK(stuck.final_state == 2);
    CHECK(stuck.noop_lines == std::vector<int>{1});

    SimulationResult empty = simulate(b, "cmp1", {});
    CHECK_FALSE(empty.accepted);
    CHECK(empty.final_state == 0);

    // the reboot edge accepts in one step and ignores the component
    CHECK(simulate(b, "cmp7", parse_command_lines({"reboot", "<EOC>"})).accepted);
    CHECK(simulate(b, "cmp7", parse_command_lines({"shutdown", "-r", "now", "<EOC>"})).accepted);

    // wrong component is a no-op
    SimulationResult wrong = simulate(b, "cmp1", {CommandLine::parse("cmd1 xxx cmp2")});
    CHECK(wrong.final_state == 0);
    CHECK(wrong.noop_lines == std::vector<int>{0});
}

TEST_CASE("near-miss commands never fire a transition") {
    std::map<std::string, Automaton> am = build_group_automata();
    for (const auto& [name, aut] : am) {
        for (const Transition& t : aut.transitions) {
            for (const CommandLine& pat : t.correct) {
                CommandLine line = substitute(pat, "cmp3");
                line.words[0] += "x";  // corrupt the program name
                SimulationResult r = simulate(aut, "cmp3", {line});
                CHECK(r.final_state == 0);
                CHECK(r.noop_lines.size() == 1);

                CommandLine shorter = substitute(pat, "cmp3");
                shorter.words.pop_back();
                if (!shorter.words.empty() && !aut.is_correct_any(shorter))
                    CHECK(simulate(aut, "cmp3", {shorter}).final_state == 0);
            }
        }
    }
}

TEST_CASE("order matters on the linear chain") {
    std::map<std::string, Automaton> am = build_group_automata();
    const Automaton& c = am.at("C");
    std::vector<CommandLine> chain = {
        CommandLine::parse("cmd4 stop cmp2"), CommandLine::parse("cmd5 config cmp2"),
        CommandLine::parse("cmd4 start cmp2"), CommandLine::parse("cmd6 verify cmp2")};
    CHECK(simulate(c, "cmp2", chain).accepted);

    std::swap(chain[0], chain[1]);
    SimulationResult r = simulate(c, "cmp2", chain);
    CHECK_FALSE(r.accepted);
    CHECK(r.final_state == 2);  // only "cmd4 stop" fired
    CHECK(r.noop_lines.size() == 3);

    // noise between correct steps changes nothing
    std::vector<CommandLine> noisy = {
        CommandLine::parse("cmd4 stop cmp2"),   CommandLine::parse("echo hello"),
        CommandLine::parse("cmd5 config cmp2"), CommandLine::parse("cmd5 config cmp2"),
        CommandLine::parse("cmd4 start cmp2"),  CommandLine::parse("cmd6 verify cmp2")};
    SimulationResult nr = simulate(c, "cmp2", noisy);
    CHECK(nr.accepted);
    CHECK(nr.noop_lines == std::vector<int>{1, 3});
}

TEST_CASE("rollback edges walk backwards and recovery still completes") {
    std::map<std::string, Automaton> am = build_group_automata();
    const Automaton& d = am.at("D");
    std::vector<CommandLine> lines = {
        CommandLine::parse("cmd7 disable cmp1"), CommandLine::parse("cmd8 patch cmp1"),
        CommandLine::parse("cmd8 revert cmp1"),  CommandLine::parse("cmd8 patch cmp1"),
        CommandLine::parse("cmd7 enable cmp1")};
    SimulationResult r = simulate(d, "cmp1", lines);
    CHECK(r.accepted);
    CHECK(r.transitions_taken.size() == 5);
    CHECK(r.transitions_taken[2].second == "r1");
}

TEST_CASE("success_rate agrees with re-simulating each sample") {
    GenParams gp;
    gp.groups = {"A", "B"};
    gp.n_failures = 2;
    gp.samples_per_failure = 10;
    gp.test_per_failure = 4;
    gp.base_len = 12;
    gp.log_vocab_size = 40;
    gp.seed = 5;
    Corpus corpus = gen_corpus(gp);
    REQUIRE(corpus.test.size() == 2 * 2 * 4);

    Hyperparams hp;
    hp.embed_dim = 12;
    hp.hidden_dim = 12;
    hp.seed = 2;
    Seq2SeqModel model(build_source_vocab(corpus.train), build_target_vocab(corpus.train), hp);
    std::map<std::string, Automaton> am = build_group_automata();

    SuccessReport rep = success_rate(model, corpus.test, am, 3, 24);
    CHECK(rep.total == 16);
    CHECK(rep.group_total.at("A") == 8);
    CHECK(rep.group_total.at("B") == 8);
    CHECK(rep.overall_rate ==
          doctest::Approx(static_cast<double>(rep.accepted) / 16.0).epsilon(1e-15));
    REQUIRE(rep.samples.size() == 16);

    int accepted = 0;
    for (std::size_t i = 0; i < rep.samples.size(); ++i) {
        const SampleResult& s = rep.samples[i];
        CHECK(s.group == corpus.test[i].group);
        CHECK(s.failure == corpus.test[i].failure);
        REQUIRE_FALSE(s.kbest.empty());
        CHECK(static_cast<int>(s.kbest.size()) <= 3);
        CHECK(s.tokens == s.kbest[0].tokens);
        CHECK(s.reliability == s.kbest[0].reliability);

        SimulationResult sim = simulate(am.at(s.group), corpus.test[i].component(),
                                        parse_command_lines(s.tokens));
        CHECK(sim.accepted == s.accepted);
        CHECK(sim.final_state == s.final_state);
        accepted += s.accepted ? 1 : 0;
    }
    CHECK(accepted == rep.accepted);
    for (const auto& [g, n] : rep.group_total) {
        CHECK(rep.group_rate.at(g) ==
              doctest::Approx(static_cast<double>(rep.group_accepted.at(g)) / n).epsilon(1e-15));
    }
}

TEST_CASE("threshold report on the two-sample example") {
    std::vector<SampleResult> recs = {record(0.9, true), record(0.8, false)};
    ThresholdReport rep = threshold_report(recs, 0.01);
    rep.validate();
    REQUIRE(rep.rows.size() == 101);
    CHECK(rep.rows.front().threshold == 0.0);
    CHECK(rep.rows.back().threshold == 1.0);

    // at 0 both qualify; above 0.8 only the success remains
    CHECK(rep.rows[0].n_success == 1);
    CHECK(rep.rows[0].n_failure == 1);
    CHECK(*rep.rows[0].precision == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(rep.rows[80].n_failure == 1);  // t = 0.80 keeps the 0.8 failure
    CHECK(rep.rows[81].n_failure == 0);
    CHECK(rep.rows[81].n_success == 1);
    CHECK(*rep.rows[81].precision == 1.0);
    REQUIRE(rep.minimal_safe_threshold.has_value());
    CHECK(*rep.minimal_safe_threshold == doctest::Approx(0.81).epsilon(1e-12));

    // rows above the top reliability have no qualifying sample
    CHECK_FALSE(rep.rows[95].precision.has_value());
    CHECK(rep.rows[95].n_success == 0);
}

TEST_CASE("threshold report edge cases") {
    // all successes: safe from zero
    std::vector<SampleResult> all_ok = {record(0.3, true), record(0.7, true)};
    ThresholdReport rep = threshold_report(all_ok);
    REQUIRE(rep.minimal_safe_threshold.has_value());
    CHECK(*rep.minimal_safe_threshold == 0.0);

    // all failures: no safe threshold exists
    std::vector<SampleResult> all_bad = {record(0.6, false)};
    ThresholdReport bad = threshold_report(all_bad);
    CHECK_FALSE(bad.minimal_safe_threshold.has_value());
    for (const ThresholdRow& r : bad.rows) CHECK(r.n_success == 0);

    // counts never increase as the threshold rises
    std::vector<SampleResult> mixed;
    Rng rng = make_rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) mixed.push_back(record(u(rng), u(rng) < 0.6));
    ThresholdReport mr = threshold_report(mixed);
    mr.validate();
    for (std::size_t i = 1; i < mr.rows.size(); ++i) {
        CHECK(mr.rows[i].n_success <= mr.rows[i - 1].n_success);
        CHECK(mr.rows[i].n_failure <= mr.rows[i - 1].n_failure);
    }
    CHECK(mr.rows[0].n_success + mr.rows[0].n_failure == 200);

    CHECK_THROWS_AS(threshold_report({}), std::runtime_error);
    CHECK_THROWS_AS(threshold_report(all_ok, 0.0), std::runtime_error);
}

TEST_CASE("sample results survive the JSONL round trip") {
    TmpDir tmp;
    SampleResult s;
    s.group = "C";
    s.failure = 4;
    s.reliability = 0.875;
    s.accepted = true;
    s.final_state = 1;
    s.truncated = false;
    s.tokens = {"cmd4", "stop", "cmp4", "<EOC>"};
    ScoredHypothesis h;
    h.tokens = s.tokens;
    h.token_logprobs = {std::log(0.9), std::log(0.9), std::log(0.9), std::log(0.8)};
    h.reliability = reliability(h.token_logprobs);
    s.kbest = {h};

    SampleResult s2 = s;
    s2.accepted = false;
    s2.final_state = 2;
    s2.truncated = true;

    const fs::path p = tmp.path / "results.jsonl";
    write_sample_results({s, s2}, p);
    std::vector<SampleResult> back = read_sample_results(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].group == "C");
    CHECK(back[0].failure == 4);
    CHECK(back[0].reliability == 0.875);  // bitwise through JSON
    CHECK(back[0].accepted);
    CHECK(back[0].tokens == s.tokens);
    REQUIRE(back[0].kbest.size() == 1);
    CHECK(back[0].kbest[0].reliability == h.reliability);
    CHECK(back[1].truncated);
    CHECK(back[1].final_state == 2);

    // rewriting the parsed records is byte-stable
    const fs::path p2 = tmp.path / "again.jsonl";
    write_sample_results(back, p2);
    std::ifstream a(p, std::ios::binary), b(p2, std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
}

TEST_CASE("threshold tables render as CSV and JSON") {
    TmpDir tmp;
    ThresholdReport rep = threshold_report({record(0.9, true), record(0.8, false)}, .25);
    REQUIRE(rep.rows.size() == 5);

    const fs::path csv = tmp.path / "t.csv";
    write_threshold_csv(rep, csv);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "threshold,n_success,n_failure,precision");
    std::getline(in, line);
    CHECK(line == "0.00,1,1,0.500000");
    std::getline(in, line);
    CHECK(line == "0.25,1,1,0.500000");
    for (int i = 0; i < 3; ++i) std::getline(in, line);
    CHECK(line == "1.00,0,0,");  // no qualifying sample: empty precision

    const fs::path js = tmp.path / "t.json";
    write_threshold_json(threshold_report({record(0.9, true), record(0.8, false)}, 0.01), js);
    std::ifstream jin(js);
    nlohmann::json j = nlohmann::json::parse(jin);
    CHECK(j.at("grid_points") == 101);
    CHECK(j.at("total_success") == 1);
    CHECK(j.at("total_failure") == 1);
    CHECK(j.at("minimal_safe_threshold").get<double>() == doctest::Approx(0.81).epsilon(1e-12));

    // absent threshold serializes as null
    ThresholdReport none = threshold_report({record(0.6, false)}, 0.5);
    write_threshold_json(none, js);
    std::ifstream jin2(js);
    nlohmann::json j2 = nlohmann::json::parse(jin2);
    CHECK(j2.at("minimal_safe_threshold").is_null());
}
