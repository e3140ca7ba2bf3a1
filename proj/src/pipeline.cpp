#include "log2cmd/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <stdexcept>

#include <CLI11.hpp>

namespace log2cmd {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void expect_keys(const json& j, const std::string& prefix,
                 std::initializer_list<const char*> allowed) {
    for (const auto& item : j.items()) {
        bool known = std::any_of(allowed.begin(), allowed.end(),
                                 [&](const char* k) { return item.key() == k; });
        if (!known)
            throw std::runtime_error("config: unknown key \"" + prefix + item.key() + "\"");
    }
}

const json* object_field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) return nullptr;
    if (!it->is_object())
        throw std::runtime_error("config: \"" + std::string(key) + "\" must be an object");
    return &*it;
}

template <class T>
void load_field(const json& j, const std::string& prefix, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        it->get_to(out);
    } catch (const json::exception& e) {
        throw std::runtime_error("config: bad value for \"" + prefix + key + "\": " + e.what());
    }
}

void load_path(const json& j, const std::string& prefix, const char* key, fs::path& out) {
    std::string s = out.string();
    load_field(j, prefix, key, s);
    out = s;
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (const std::string& t : toks) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

}  // namespace

void PipelineConfig::validate() const {
    gen.validate();
    model.validate();
    if (!profile.empty() && profile != "desk" && profile != "paper")
        throw std::runtime_error("config: unknown profile \"" + profile + "\"");
}

ordered_json PipelineConfig::to_json() const {
    ordered_json g;
    g["base_len"] = gen.base_len;
    g["noise_insert_rate"] = gen.noise_insert_rate;
    g["swap_prob"] = gen.swap_prob;
    g["n_distinct"] = gen.n_distinct;
    g["incorrect_mean"] = gen.incorrect_mean;
    g["samples_per_failure"] = gen.samples_per_failure;
    g["test_per_failure"] = gen.test_per_failure;
    g["log_vocab_size"] = gen.log_vocab_size;
    g["seed"] = gen.seed;
    g["rollback_prob"] = gen.rollback_prob;
    g["n_failures"] = gen.n_failures;
    g["groups"] = gen.groups;

    ordered_json m;
    m["embed_dim"] = model.embed_dim;
    m["hidden_dim"] = model.hidden_dim;
    m["dropout"] = model.dropout;
    m["beam"] = model.beam;
    m["patience_epochs"] = model.patience_epochs;
    m["max_decode_len"] = model.max_decode_len;
    m["learning_rate"] = model.learning_rate;
    m["batch_size"] = model.batch_size;
    m["seed"] = model.seed;
    m["max_epochs"] = model.max_epochs;
    m["input_feeding"] = model.input_feeding;

    ordered_json p;
    p["corpus_dir"] = paths.corpus_dir.string();
    p["checkpoint"] = paths.checkpoint.string();
    p["report_dir"] = paths.report_dir.string();
    p["store"] = paths.store.string();

    ordered_json rules = ordered_json::array();
    for (const MaskRule& r : mask_rules.rules)
        rules.push_back(ordered_json{
            {"name", r.name}, {"pattern", r.pattern}, {"replacement", r.replacement}});

    return ordered_json{{"gen", std::move(g)},
                        {"model", std::move(m)},
                        {"profile", profile},
                        {"paths", std::move(p)},
                        {"mask_rules", std::move(rules)}};
}

PipelineConfig parse_config_json(const json& j) {
    if (!j.is_object()) throw std::runtime_error("config: top level must be a JSON object");
    expect_keys(j, "", {"gen", "model", "profile", "paths", "mask_rules"});
    PipelineConfig cfg;

    if (const json* g = object_field(j, "gen")) {
        expect_keys(*g, "gen.",
                    {"base_len", "noise_insert_rate", "swap_prob", "n_distinct", "incorrect_mean",
                     "samples_per_failure", "test_per_failure", "log_vocab_size", "seed",
                     "rollback_prob", "n_failures", "groups"});
        load_field(*g, "gen.", "base_len", cfg.gen.base_len);
        load_field(*g, "gen.", "noise_insert_rate", cfg.gen.noise_insert_rate);
        load_field(*g, "gen.", "swap_prob", cfg.gen.swap_prob);
        load_field(*g, "gen.", "n_distinct", cfg.gen.n_distinct);
        load_field(*g, "gen.", "incorrect_mean", cfg.gen.incorrect_mean);
        load_field(*g, "gen.", "samples_per_failure", cfg.gen.samples_per_failure);
        load_field(*g, "gen.", "test_per_failure", cfg.gen.test_per_failure);
        load_field(*g, "gen.", "log_vocab_size", cfg.gen.log_vocab_size);
        load_field(*g, "gen.", "seed", cfg.gen.seed);
        load_field(*g, "gen.", "rollback_prob", cfg.gen.rollback_prob);
        load_field(*g, "gen.", "n_failures", cfg.gen.n_failures);
        load_field(*g, "gen.", "groups", cfg.gen.groups);
    }

    if (const json* m = object_field(j, "model")) {
        expect_keys(*m, "model.",
                    {"embed_dim", "hidden_dim", "dropout", "beam", "patience_epochs",
                     "max_decode_len", "learning_rate", "batch_size", "seed", "max_epochs",
                     "input_feeding"});
        load_field(*m, "model.", "embed_dim", cfg.model.embed_dim);
        load_field(*m, "model.", "hidden_dim", cfg.model.hidden_dim);
        load_field(*m, "model.", "dropout", cfg.model.dropout);
        load_field(*m, "model.", "beam", cfg.model.beam);
        load_field(*m, "model.", "patience_epochs", cfg.model.patience_epochs);
        load_field(*m, "model.", "max_decode_len", cfg.model.max_decode_len);
        load_field(*m, "model.", "learning_rate", cfg.model.learning_rate);
        load_field(*m, "model.", "batch_size", cfg.model.batch_size);
        load_field(*m, "model.", "seed", cfg.model.seed);
        load_field(*m, "model.", "max_epochs", cfg.model.max_epochs);
        load_field(*m, "model.", "input_feeding", cfg.model.input_feeding);
    }

    load_field(j, "", "profile", cfg.profile);

    if (const json* p = object_field(j, "paths")) {
        expect_keys(*p, "paths.", {"corpus_dir", "checkpoint", "report_dir", "store"});
        load_path(*p, "paths.", "corpus_dir", cfg.paths.corpus_dir);
        load_path(*p, "paths.", "checkpoint", cfg.paths.checkpoint);
        load_path(*p, "paths.", "report_dir", cfg.paths.report_dir);
        load_path(*p, "paths.", "store", cfg.paths.store);
    }

    if (auto it = j.find("mask_rules"); it != j.end()) {
        if (!it->is_array()) throw std::runtime_error("config: \"mask_rules\" must be an array");
        MaskRuleSet rs;
        int idx = 0;
        for (const json& r : *it) {
            std::string prefix = "mask_rules[" + std::to_string(idx) + "].";
            if (!r.is_object())
                throw std::runtime_error("config: mask_rules[" + std::to_string(idx) +
                                         "] must be an object");
            expect_keys(r, prefix, {"name", "pattern", "replacement"});
            std::string name, pattern, replacement;
            for (const char* key : {"name", "pattern", "replacement"})
                if (!r.contains(key))
                    throw std::runtime_error("config: missing \"" + prefix + key + "\"");
            load_field(r, prefix, "name", name);
            load_field(r, prefix, "pattern", pattern);
            load_field(r, prefix, "replacement", replacement);
            try {
                rs.add(std::move(name), std::move(pattern), std::move(replacement));
            } catch (const std::regex_error& e) {
                throw std::runtime_error("config: invalid regex in \"" + prefix + "pattern\": " +
                                         e.what());
            }
            ++idx;
        }
        cfg.mask_rules = std::move(rs);
    }

    if (!cfg.profile.empty()) {
        if (cfg.profile != "desk" && cfg.profile != "paper")
            throw std::runtime_error("config: unknown profile \"" + cfg.profile + "\"");
        apply_profile(cfg.model, cfg.profile);
    }
    try {
        cfg.gen.validate();
        cfg.model.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("config: ") + e.what());
    }
    return cfg;
}

PipelineConfig parse_config(const fs::path& path) {
    return parse_config_json(read_json_file(path));
}

Seq2SeqModel checkpoint_roundtrip(const Seq2SeqModel& model, const fs::path& path) {
    model.save(path);
    Seq2SeqModel reloaded = Seq2SeqModel::load(path);
    const int v = model.src_vocab.size();
    const int first_real = Vocab::kUnk + 1;
    for (int i = 0; i < 10; ++i) {
        std::vector<int> src;
        int len = 1 + i % 5;
        for (int t = 0; t < len; ++t)
            src.push_back(v > first_real ? first_real + (i + t) % (v - first_real) : Vocab::kUnk);
        ScoredHypothesis a = model.greedy_decode(src, model.hp.max_decode_len);
        ScoredHypothesis b = reloaded.greedy_decode(src, model.hp.max_decode_len);
        if (a.tokens != b.tokens || a.token_logprobs != b.token_logprobs ||
            a.reliability != b.reliability || a.truncated != b.truncated)
            throw std::runtime_error("checkpoint round-trip: decode mismatch on probe " +
                                     std::to_string(i));
    }
    return reloaded;
}

namespace {

struct CmdCtx {
    std::string config_path;
    std::string profile;
    std::string out_dir;
    std::string input;
    std::string store;
    long long seed = 0;
    bool has_seed = false;
};

PipelineConfig load_config(const CmdCtx& c) {
    PipelineConfig cfg = parse_config(c.config_path);
    if (c.has_seed) {
        cfg.gen.seed = static_cast<std::uint64_t>(c.seed);
        cfg.model.seed = static_cast<std::uint64_t>(c.seed);
    }
    if (!c.profile.empty()) {
        cfg.profile = c.profile;
        if (cfg.profile != "desk" && cfg.profile != "paper")
            throw std::runtime_error("unknown profile \"" + cfg.profile + "\"");
        apply_profile(cfg.model, cfg.profile);
        cfg.model.validate();
    }
    return cfg;
}

int cmd_gen(const CmdCtx& c) {
    PipelineConfig cfg = load_config(c);
    fs::path dir = c.out_dir.empty() ? cfg.paths.corpus_dir : fs::path(c.out_dir);
    Corpus corpus = gen_corpus(cfg.gen);
    write_corpus(corpus, build_group_automata(), dir);
    std::cout << "corpus: " << dir.string() << " train=" << corpus.train.size()
              << " dev=" << corpus.dev.size() << " test=" << corpus.test.size() << "\n";
    return 0;
}

int cmd_train(const CmdCtx& c) {
    PipelineConfig cfg = load_config(c);
    fs::path ckpt = cfg.paths.checkpoint;
    if (!c.out_dir.empty()) ckpt = fs::path(c.out_dir) / "model.ckpt";
    if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
    fs::path log_path = ckpt.parent_path() / "training_log.csv";

    auto train_set = read_jsonl(cfg.paths.corpus_dir / "train.jsonl");
    auto dev_set = read_jsonl(cfg.paths.corpus_dir / "dev.jsonl");
    if (train_set.empty()) throw std::runtime_error("empty training set");

    std::vector<SamplePair> vocab_pairs = train_set;
    vocab_pairs.insert(vocab_pairs.end(), dev_set.begin(), dev_set.end());
    Seq2SeqModel model(build_source_vocab(vocab_pairs), build_target_vocab(vocab_pairs),
                       cfg.model);
    TrainResult res = train(model, train_set, dev_set, [](const EpochLog& e) {
        std::fprintf(stderr, "epoch %d train %.4f dev %.4f (%.1fs)\n", e.epoch, e.train_loss,
                     e.dev_loss, e.elapsed_seconds);
    });
    model.save(ckpt);
    write_training_log(res.log, log_path);

    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", res.best_dev_loss);
    std::cout << "checkpoint: " << ckpt.string() << "\n"
              << "training_log: " << log_path.string() << "\n"
              << "best_epoch: " << res.best_epoch << " best_dev_loss: " << buf << "\n";
    return 0;
}

int cmd_infer(const CmdCtx& c) {
    PipelineConfig cfg = load_config(c);
    Seq2SeqModel model = Seq2SeqModel::load(cfg.paths.checkpoint);

    std::vector<std::vector<int>> sources;
    if (fs::path(c.input).extension() == ".jsonl") {
        for (const SamplePair& s : read_jsonl(c.input)) sources.push_back(s.source);
    } else {
        fs::path store_path = c.store.empty() ? cfg.paths.store : fs::path(c.store);
        TemplateStore store = TemplateStore::load(store_path);
        LogSequence seq = encode_log_frozen(store, read_lines(c.input), cfg.mask_rules);
        sources.push_back(seq.ids);
    }

    char buf[64];
    for (std::size_t i = 0; i < sources.size(); ++i) {
        auto kbest = model.beam_decode(model.map_source(sources[i]), cfg.model.beam,
                                       cfg.model.max_decode_len);
        for (std::size_t r = 0; r < kbest.size(); ++r) {
            std::snprintf(buf, sizeof buf, "%.6f", kbest[r].reliability);
            std::cout << i << '\t' << r + 1 << '\t' << buf << '\t'
                      << join_tokens(kbest[r].tokens) << '\n';
        }
    }
    return 0;
}

int cmd_eval(const CmdCtx& c) {
    PipelineConfig cfg = load_config(c);
    Seq2SeqModel model = Seq2SeqModel::load(cfg.paths.checkpoint);
    auto test_set = read_jsonl(cfg.paths.corpus_dir / "test.jsonl");
    auto automata = automata_from_json(read_json_file(cfg.paths.corpus_dir / "automata.json"));

    SuccessReport rep =
        success_rate(model, test_set, automata, cfg.model.beam, cfg.model.max_decode_len);

    fs::path dir = c.out_dir.empty() ? cfg.paths.report_dir : fs::path(c.out_dir);
    fs::create_directories(dir);
    write_sample_results(rep.samples, dir / "results.jsonl");

    char buf[128];
    for (const auto& [g, n] : rep.group_total) {
        std::snprintf(buf, sizeof buf, "group %s: %d/%d (%.1f%%)", g.c_str(),
                      rep.group_accepted[g], n, 100.0 * rep.group_rate[g]);
        std::cout << buf << "\n";
    }
    std::snprintf(buf, sizeof buf, "overall: %d/%d (%.1f%%)", rep.accepted, rep.total,
                  100.0 * rep.overall_rate);
    std::cout << buf << "\n" << "results: " << (dir / "results.jsonl").string() << "\n";
    return 0;
}

int cmd_report(const CmdCtx& c) {
    PipelineConfig cfg = load_config(c);
    fs::path dir = c.out_dir.empty() ? cfg.paths.report_dir : fs::path(c.out_dir);
    auto records = read_sample_results(dir / "results.jsonl");
    ThresholdReport rep = threshold_report(records);
    write_threshold_csv(rep, dir / "threshold.csv");
    write_threshold_json(rep, dir / "threshold.json");

    std::cout << "t=0: n_success=" << rep.rows.front().n_success
              << " n_failure=" << rep.rows.front().n_failure << "\n";
    if (rep.minimal_safe_threshold) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", *rep.minimal_safe_threshold);
        std::cout << "minimal_safe_threshold: " << buf << "\n";
    } else {
        std::cout << "minimal_safe_threshold: absent\n";
    }
    return 0;
}

int cmd_ingest(const CmdCtx& c) {
    PipelineConfig cfg = load_config(c);
    fs::path store_path = c.store.empty() ? cfg.paths.store : fs::path(c.store);
    TemplateStore store;
    if (fs::exists(store_path)) store = TemplateStore::load(store_path);
    LogSequence seq = encode_log(store, read_lines(c.input), cfg.mask_rules);
    if (!store_path.parent_path().empty()) fs::create_directories(store_path.parent_path());
    store.save(store_path);
    for (int id : seq.ids) std::cout << id << '\t' << store.text(id) << '\n';
    std::cerr << "store: " << store_path.string() << " (" << store.size() << " templates)\n";
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"log2cmd: estimate failure-recovery command sequences from log template IDs"};
    app.require_subcommand(1);
    CmdCtx ctx;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", ctx.config_path, "JSON config file")->required();
        sub->add_option("--seed", ctx.seed, "override gen and model seeds");
        sub->add_option("--profile", ctx.profile, "hyperparameter profile: desk or paper");
        sub->add_option("--out", ctx.out_dir, "output directory override");
        return sub;
    };
    add_common(app.add_subcommand("gen", "generate the synthetic corpus and automata"));
    add_common(app.add_subcommand("train", "train a model; writes checkpoint + training log"));
    CLI::App* infer =
        add_common(app.add_subcommand("infer", "print k-best command hypotheses per source"));
    infer->add_option("--input", ctx.input, "JSONL samples or raw log file")->required();
    infer->add_option("--store", ctx.store, "template store for raw log input");
    add_common(app.add_subcommand("eval", "decode the test set and score via the automata"));
    add_common(app.add_subcommand("report", "reliability-threshold report from eval results"));
    CLI::App* ingest =
        add_common(app.add_subcommand("ingest", "mask raw logs and assign template IDs"));
    ingest->add_option("--input", ctx.input, "raw log file")->required();
    ingest->add_option("--store", ctx.store, "template store to create or extend");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    CLI::App* sub = app.get_subcommands().front();
    ctx.has_seed = sub->count("--seed") > 0;
    try {
        const std::string& name = sub->get_name();
        if (name == "gen") return cmd_gen(ctx);
        if (name == "train") return cmd_train(ctx);
        if (name == "infer") return cmd_infer(ctx);
        if (name == "eval") return cmd_eval(ctx);
        if (name == "report") return cmd_report(ctx);
        if (name == "ingest") return cmd_ingest(ctx);
        throw std::runtime_error("unknown subcommand " + name);
    } catch (const std::exception& e) {
        std::cerr << "log2cmd: error: " << e.what() << "\n";
        return 1;
    }
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("log2cmd");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace log2cmd
