#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "log2cmd/pipeline.hpp"
#include "log2cmd/recovery_eval.hpp"

using namespace log2cmd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TmpDir {
    fs::path path;
    TmpDir() : path(fs::temp_directory_path() / ("l2c_pipe_" + std::to_string(::getpid()))) {
        fs::create_directories(path);
    }
    ~TmpDir() { std::error_code ec; fs::remove_all(path, ec); }
};

// capture std::cout while a pipeline command runs
struct CoutCapture {
    std::stringstream buf;
    std::streambuf* old;
    CoutCapture() : old(std::cout.rdbuf(buf.rdbuf())) {}
    ~CoutCapture() { std::cout.rdbuf(old); }
    std::string text() const { return buf.str(); }
};

// training progress goes to the C stderr stream; silence it around run()
struct StderrSilencer {
    int saved;
    StderrSilencer() : saved(::dup(2)) {
        int null = ::open("/dev/null", O_WRONLY);
        ::dup2(null, 2);
        ::close(null);
    }
    ~StderrSilencer() {
        ::dup2(saved, 2);
        ::close(saved);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

json tiny_config(const fs::path& dir) {
    json j;
    j["gen"] = {{"groups", json::array({"B"})}, {"n_failures", 2},   {"samples_per_failure", 10},
                {"test_per_failure", 3},        {"base_len", 8},     {"log_vocab_size", 30},
                {"n_distinct", 2},              {"incorrect_mean", 0.5}, {"seed", 7}};
    j["model"] = {{"embed_dim", 24},     {"hidden_dim", 24}, {"dropout", 0.0},
                  {"learning_rate", 0.01}, {"batch_size", 8},  {"max_epochs", 120},
                  {"patience_epochs", 120}, {"beam", 3},        {"max_decode_len", 24},
                  {"seed", 7}};
    j["paths"] = {{"corpus_dir", (dir / "corpus").string()},
                  {"checkpoint", (dir / "model" / "model.ckpt").string()},
                  {"report_dir", (dir / "report").string()},
                  {"store", (dir / "templates.tsv").string()}};
    return j;
}

}  // namespace

TEST_CASE("an empty config yields the documented defaults") {
    PipelineConfig cfg = parse_config_json(json::object());
    CHECK(cfg.gen.base_len == 150);
    CHECK(cfg.gen.samples_per_failure == 90);
    CHECK(cfg.gen.groups == std::vector<std::string>{"A", "B", "C", "D", "E"});
    CHECK(cfg.model.embed_dim == 512);
    CHECK(cfg.model.beam == 5);
    CHECK(cfg.model.patience_epochs == 10);
    CHECK(cfg.profile.empty());
    CHECK(cfg.paths.corpus_dir == fs::path("corpus"));
    CHECK(cfg.paths.checkpoint == fs::path("model.ckpt"));
    CHECK(cfg.mask_rules == MaskRuleSet::defaults());
    CHECK(cfg == PipelineConfig{});
}

TEST_CASE("unknown or malformed keys are reported with their full path") {
    CHECK_THROWS_WITH_AS(parse_config_json({{"modle", json::object()}}),
                         doctest::Contains("\"modle\""), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"model", {{"hiden", 1}}}}),
                         doctest::Contains("model.hiden"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"gen", {{"bases", 1}}}}),
                         doctest::Contains("gen.bases"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"paths", {{"xdir", "a"}}}}),
                         doctest::Contains("paths.xdir"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"model", {{"dropout", "high"}}}}),
                         doctest::Contains("model.dropout"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"gen", json::array()}}),
                         doctest::Contains("must be an object"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json(json::array()), doctest::Contains("top level"),
                         std::runtime_error);

    // out-of-range values surface the library's validation text
    CHECK_THROWS_WITH_AS(parse_config_json({{"model", {{"dropout", 1.5}}}}),
                         doctest::Contains("dropout"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"gen", {{"samples_per_failure", 0}}}}),
                         doctest::Contains("samples_per_failure"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"profile", "laptop"}}),
                         doctest::Contains("profile"), std::runtime_error);
}

TEST_CASE("mask rules in the config replace the default set") {
    json j = {{"mask_rules",
               json::array({{{"name", "xrun"}, {"pattern", "x+"}, {"replacement", "<X>"}}})}};
    PipelineConfig cfg = parse_config_json(j);
    REQUIRE(cfg.mask_rules.rules.size() == 1);
    CHECK(mask_line("xxx a xx", cfg.mask_rules) == "<X> a <X>");

    CHECK_THROWS_WITH_AS(
        parse_config_json({{"mask_rules", json::array({{{"name", "n"}, {"pattern", "("},
                                                        {"replacement", "r"}}})}}),
        doctest::Contains("mask_rules[0].pattern"), std::runtime_error);
    CHECK_THROWS_WITH_AS(
        parse_config_json({{"mask_rules", json::array({{{"name", "n"}, {"pattern", "a"}}})}}),
        doctest::Contains("mask_rules[0].replacement"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_json({{"mask_rules", json::object()}}),
                         doctest::Contains("must be an array"), std::runtime_error);
}

TEST_CASE("a profile in the config wins over explicit dimensions") {
    json j = {{"profile", "desk"}, {"model", {{"embed_dim", 100}, {"batch_size", 5}}}};
    PipelineConfig cfg = parse_config_json(j);
    CHECK(cfg.model.embed_dim == 64);
    CHECK(cfg.model.hidden_dim == 64);
    CHECK(cfg.model.batch_size == 16);
    CHECK(cfg.profile == "desk");
}

TEST_CASE("configs survive the JSON round trip") {
    PipelineConfig cfg;
    cfg.gen.base_len = 42;
    cfg.gen.groups = {"C", "D"};
    cfg.gen.seed = 123;
    cfg.model.hidden_dim = 96;
    cfg.model.learning_rate = 5e-4;
    cfg.model.input_feeding = false;
    cfg.paths.report_dir = "out/reports";
    cfg.mask_rules = MaskRuleSet();
    cfg.mask_rules.add("num", "[0-9]+", "<NUM>");

    PipelineConfig back = parse_config_json(cfg.to_json());
    CHECK(back == cfg);
}

TEST_CASE("parse_config reads files and names them in errors") {
    TmpDir tmp;
    const fs::path good = tmp.path / "cfg.json";
    spit(good, R"({"model":{"beam":2}})");
    CHECK(parse_config(good).model.beam == 2);

    CHECK_THROWS_WITH_AS(parse_config(tmp.path / "missing.json"), doctest::Contains("cannot read"),
                         std::runtime_error);
    const fs::path bad = tmp.path / "bad.json";
    spit(bad, "{nope");
    CHECK_THROWS_WITH_AS(parse_config(bad), doctest::Contains("bad.json"), std::runtime_error);
}

TEST_CASE("checkpoint_roundtrip returns a bit-identical model") {
    TmpDir tmp;
    Vocab sv = Vocab::with_reserved();
    for (int i = 1; i <= 5; ++i) sv.add(std::to_string(i));
    Vocab tv = Vocab::with_reserved();
    for (const char* t : {"a", "b", "c"}) tv.add(t);
    Hyperparams hp;
    hp.embed_dim = 6;
    hp.hidden_dim = 5;
    hp.max_decode_len = 8;
    hp.seed = 21;
    Seq2SeqModel m(sv, tv, hp);

    const fs::path ck = tmp.path / "rt.ckpt";
    Seq2SeqModel r = checkpoint_roundtrip(m, ck);
    CHECK(fs::exists(ck));
    CHECK(r.src_vocab == m.src_vocab);
    for (std::size_t i = 0; i < m.params().size(); ++i)
        CHECK(m.params()[i]->value.data == r.params()[i]->value.data);
}

TEST_CASE("the CLI runs the whole flow on a tiny corpus") {
    TmpDir tmp;
    const fs::path cfg_path = tmp.path / "config.json";
    spit(cfg_path, tiny_config(tmp.path).dump(2));
    const std::string cfg = cfg_path.string();

    // --- gen: counts on stdout, reproducible bytes, seed sensitivity
    {
        CoutCapture cap;
        REQUIRE(run({"gen", "--config", cfg}) == 0);
        CHECK(cap.text() == "corpus: " + (tmp.path / "corpus").string() +
                                " train=18 dev=2 test=6\n");
    }
    for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "automata.json"})
        CHECK(fs::exists(tmp.path / "corpus" / f));
    {
        CoutCapture cap;
        REQUIRE(run({"gen", "--config", cfg, "--out", (tmp.path / "corpus2").string()}) == 0);
        CHECK(slurp(tmp.path / "corpus" / "train.jsonl") ==
              slurp(tmp.path / "corpus2" / "train.jsonl"));
        CHECK(slurp(tmp.path / "corpus" / "automata.json") ==
              slurp(tmp.path / "corpus2" / "automata.json"));

        REQUIRE(run({"gen", "--config", cfg, "--seed", "99",
                     "--out", (tmp.path / "corpus3").string()}) == 0);
        CHECK(slurp(tmp.path / "corpus" / "train.jsonl") !=
              slurp(tmp.path / "corpus3" / "train.jsonl"));
    }

    // --- train: checkpoint plus training log
    {
        CoutCapture cap;
        StderrSilencer quiet;
        REQUIRE(run({"train", "--config", cfg}) == 0);
        const std::string out = cap.text();
        CHECK(out.find("checkpoint: " + (tmp.path / "model" / "model.ckpt").string()) !=
              std::string::npos);
        CHECK(out.find("best_epoch: ") != std::string::npos);
    }
    REQUIRE(fs::exists(tmp.path / "model" / "model.ckpt"));
    {
        std::vector<std::string> log = lines_of(slurp(tmp.path / "model" / "training_log.csv"));
        REQUIRE(log.size() >= 2);
        CHECK(log[0] == "epoch,train_loss,dev_loss,elapsed_seconds");
        CHECK(log[1].substr(0, 2) == "1,");
        CHECK(static_cast<int>(log.size()) <= 121);  // header + max_epochs
    }

    // --- infer on the test split: ranked k-best per sample
    {
        CoutCapture cap;
        REQUIRE(run({"infer", "--config", cfg, "--input",
                     (tmp.path / "corpus" / "test.jsonl").string()}) == 0);
        std::vector<std::string> out = lines_of(cap.text());
        REQUIRE_FALSE(out.empty());
        int seen[6] = {0};
        double prev_rel = 2.0;
        int prev_idx = -1;
        for (const std::string& line : out) {
            std::stringstream ss(line);
            int idx, rank;
            double rel;
            std::string tok, last;
            ss >> idx >> rank >> rel;
            REQUIRE(idx >= 0);
            REQUIRE(idx < 6);
            CHECK(rank >= 1);
            CHECK(rank <= 3);
            CHECK(rel > 0.0);
            CHECK(rel <= 1.0);
            if (idx != prev_idx) {
                CHECK(rank == 1);
                prev_rel = 2.0;
            }
            CHECK(rel <= prev_rel);  // k-best sorted per sample
            prev_rel = rel;
            prev_idx = idx;
            ++seen[idx];
            while (ss >> tok) last = tok;
            CHECK(last == "<EOC>");
        }
        for (int i = 0; i < 6; ++i) CHECK(seen[i] >= 1);
    }

    // --- eval: stdout tallies must match the persisted results
    std::string eval_stdout;
    {
        CoutCapture cap;
        REQUIRE(run({"eval", "--config", cfg}) == 0);
        eval_stdout = cap.text();
    }
    std::vector<SampleResult> results = read_sample_results(tmp.path / "report" / "results.jsonl");
    REQUIRE(results.size() == 6);
    int accepted = 0;
    for (const SampleResult& r : results) {
        CHECK(r.group == "B");
        accepted += r.accepted ? 1 : 0;
    }
    {
        char want[64];
        std::snprintf(want, sizeof want, "group B: %d/6", accepted);
        CHECK(eval_stdout.find(want) != std::string::npos);
        std::snprintf(want, sizeof want, "overall: %d/6", accepted);
        CHECK(eval_stdout.find(want) != std::string::npos);
    }

    // eval is deterministic: a second run rewrites identical bytes
    const std::string results_bytes = slurp(tmp.path / "report" / "results.jsonl");
    {
        CoutCapture cap;
        REQUIRE(run({"eval", "--config", cfg}) == 0);
        CHECK(slurp(tmp.path / "report" / "results.jsonl") == results_bytes);
    }

    // --- report: threshold table over the eval results
    {
        CoutCapture cap;
        REQUIRE(run({"report", "--config", cfg}) == 0);
        char want[64];
        std::snprintf(want, sizeof want, "t=0: n_success=%d n_failure=%d", accepted, 6 - accepted);
        CHECK(cap.text().find(want) != std::string::npos);
        CHECK(cap.text().find("minimal_safe_threshold: ") != std::string::npos);
    }
    CHECK(lines_of(slurp(tmp.path / "report" / "threshold.csv")).size() == 102);
    {
        json tj = json::parse(slurp(tmp.path / "report" / "threshold.json"));
        CHECK(tj.at("grid_points") == 101);
        CHECK(tj.at("total_success") == accepted);
        CHECK(tj.at("total_failure") == 6 - accepted);
    }

    // --- ingest raw logs, then infer over the frozen store
    const fs::path raw = tmp.path / "raw.log";
    spit(raw,
         "2026-01-07 09:14:02.113 proc01 INFO [req-13579] Accepted HTTP GET /v2/servers\n"
         "2026-01-07 09:14:02.514 proc02 ERROR [req-13579] Connection to 10.0.0.7:5672 failed\n"
         "2026-01-07 09:14:03.118 proc01 INFO [req-24680] Accepted HTTP GET /v2/servers\n");
    {
        CoutCapture cap;
        std::stringstream errbuf;
        std::streambuf* old = std::cerr.rdbuf(errbuf.rdbuf());
        const int rc = run({"ingest", "--config", cfg, "--input", raw.string()});
        std::cerr.rdbuf(old);
        REQUIRE(rc == 0);
        std::vector<std::string> out = lines_of(cap.text());
        REQUIRE(out.size() == 3);
        CHECK(out[0].substr(0, 2) == "1\t");
        CHECK(out[1].substr(0, 2) == "2\t");
        CHECK(out[2].substr(0, 2) == "1\t");  // same template as line one
        CHECK(errbuf.str().find("2 templates") != std::string::npos);
    }
    CHECK(fs::exists(tmp.path / "templates.tsv"));

    {
        CoutCapture cap;
        REQUIRE(run({"infer", "--config", cfg, "--input", raw.string()}) == 0);
        std::vector<std::string> out = lines_of(cap.text());
        REQUIRE_FALSE(out.empty());
        CHECK(out[0].substr(0, 4) == "0\t1\t");
        CHECK(static_cast<int>(out.size()) <= 3);
    }

    // --- failure modes exit nonzero through the CLI wrapper
    {
        CoutCapture cap;  // CLI11 prints usage on parse errors
        std::stringstream errbuf;
        std::streambuf* old = std::cerr.rdbuf(errbuf.rdbuf());
        CHECK(run({"gen", "--config", (tmp.path / "nope.json").string()}) == 1);
        CHECK(run({"train", "--config", cfg, "--profile", "laptop"}) == 1);
        CHECK(run({"gen"}) != 0);
        CHECK(run({"frobnicate", "--config", cfg}) != 0);
        std::cerr.rdbuf(old);
        CHECK(errbuf.str().find("log2cmd: error:") != std::string::npos);
    }
}
