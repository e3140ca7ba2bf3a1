// CLI orchestration: gen | train | infer | eval | report | ingest driven by a
// single JSON config with flag overrides and reproducible seeds.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "log2cmd/recovery_eval.hpp"
#include "log2cmd/seq2seq.hpp"
#include "log2cmd/synth_corpus.hpp"
#include "log2cmd/template_store.hpp"

namespace log2cmd {

struct PipelinePaths {
    std::filesystem::path corpus_dir = "corpus";
    std::filesystem::path checkpoint = "model.ckpt";
    std::filesystem::path report_dir = "report";
    std::filesystem::path store = "templates.tsv";

    bool operator==(const PipelinePaths&) const = default;
};

struct PipelineConfig {
    GenParams gen;
    Hyperparams model;
    std::string profile;  // "", "desk" or "paper"; overrides model dims when set
    PipelinePaths paths;
    MaskRuleSet mask_rules = MaskRuleSet::defaults();

    void validate() const;
    nlohmann::ordered_json to_json() const;

    bool operator==(const PipelineConfig&) const = default;
};

// strict parse: unknown keys are rejected by name, missing keys keep the
// documented defaults, out-of-range values raise a diagnostic naming the field
PipelineConfig parse_config_json(const nlohmann::json& j);
PipelineConfig parse_config(const std::filesystem::path& path);

// save + load + decode probes; throws if the reloaded model is not
// bit-identical on the probe batch
Seq2SeqModel checkpoint_roundtrip(const Seq2SeqModel& model, const std::filesystem::path& path);

// full CLI: log2cmd <gen|train|infer|eval|report|ingest> --config <path>
// [--seed N] [--profile desk|paper] [--out DIR] [--input FILE]
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args without argv[0]

}  // namespace log2cmd
