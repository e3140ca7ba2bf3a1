// pybind11 surface: masking/template IDs, corpus generation, training,
// decoding, automaton simulation, threshold reports, and the full CLI.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "log2cmd/pipeline.hpp"

namespace py = pybind11;
using namespace log2cmd;

PYBIND11_MODULE(_core, m) {
    m.doc() = "failure-recovery command estimation from log template ID sequences";

    py::class_<MaskRuleSet>(m, "MaskRuleSet")
        .def(py::init<>())
        .def_static("defaults", &MaskRuleSet::defaults)
        .def("add", &MaskRuleSet::add, py::arg("name"), py::arg("pattern"), py::arg("replacement"))
        .def("__len__", [](const MaskRuleSet& r) { return r.rules.size(); });

    m.def(
        "mask_line",
        [](const std::string& line, const std::optional<MaskRuleSet>& rules) {
            return mask_line(line, rules ? *rules : MaskRuleSet::defaults());
        },
        py::arg("line"), py::arg("rules") = std::nullopt);

    py::class_<TemplateStore>(m, "TemplateStore")
        .def(py::init<>())
        .def("assign_id", &TemplateStore::assign_id, py::arg("template"))
        .def("lookup", &TemplateStore::lookup, py::arg("template"))
        .def("size", &TemplateStore::size)
        .def("text", &TemplateStore::text, py::arg("id"))
        .def("save", &TemplateStore::save, py::arg("path"))
        .def_static("load", &TemplateStore::load, py::arg("path"));

    m.def(
        "encode_log",
        [](TemplateStore& store, const std::vector<std::string>& raw_lines,
           const std::optional<MaskRuleSet>& rules) {
            return encode_log(store, raw_lines, rules ? *rules : MaskRuleSet::defaults()).ids;
        },
        py::arg("store"), py::arg("raw_lines"), py::arg("rules") = std::nullopt);

    py::class_<GenParams>(m, "GenParams")
        .def(py::init<>())
        .def_readwrite("base_len", &GenParams::base_len)
        .def_readwrite("noise_insert_rate", &GenParams::noise_insert_rate)
        .def_readwrite("swap_prob", &GenParams::swap_prob)
        .def_readwrite("n_distinct", &GenParams::n_distinct)
        .def_readwrite("incorrect_mean", &GenParams::incorrect_mean)
        .def_readwrite("samples_per_failure", &GenParams::samples_per_failure)
        .def_readwrite("test_per_failure", &GenParams::test_per_failure)
        .def_readwrite("log_vocab_size", &GenParams::log_vocab_size)
        .def_readwrite("seed", &GenParams::seed)
        .def_readwrite("rollback_prob", &GenParams::rollback_prob)
        .def_readwrite("n_failures", &GenParams::n_failures)
        .def_readwrite("groups", &GenParams::groups);

    py::class_<SamplePair>(m, "SamplePair")
        .def(py::init<>())
        .def_readwrite("source", &SamplePair::source)
        .def_readwrite("target", &SamplePair::target)
        .def_readwrite("group", &SamplePair::group)
        .def_readwrite("failure", &SamplePair::failure)
        .def_property_readonly("component", &SamplePair::component);

    py::class_<Corpus>(m, "Corpus")
        .def_readwrite("train", &Corpus::train)
        .def_readwrite("dev", &Corpus::dev)
        .def_readwrite("test", &Corpus::test);

    m.def("gen_corpus", &gen_corpus, py::arg("params"));
    m.def(
        "write_corpus",
        [](const Corpus& c, const std::filesystem::path& dir) {
            write_corpus(c, build_group_automata(), dir);
        },
        py::arg("corpus"), py::arg("dir"));

    py::class_<Hyperparams>(m, "Hyperparams")
        .def(py::init<>())
        .def_readwrite("embed_dim", &Hyperparams::embed_dim)
        .def_readwrite("hidden_dim", &Hyperparams::hidden_dim)
        .def_readwrite("dropout", &Hyperparams::dropout)
        .def_readwrite("beam", &Hyperparams::beam)
        .def_readwrite("patience_epochs", &Hyperparams::patience_epochs)
        .def_readwrite("max_decode_len", &Hyperparams::max_decode_len)
        .def_readwrite("input_feeding", &Hyperparams::input_feeding)
        .def_readwrite("learning_rate", &Hyperparams::learning_rate)
        .def_readwrite("batch_size", &Hyperparams::batch_size)
        .def_readwrite("seed", &Hyperparams::seed)
        .def_readwrite("max_epochs", &Hyperparams::max_epochs);

    m.def(
        "apply_profile",
        [](Hyperparams hp, const std::string& profile) {
            apply_profile(hp, profile);
            return hp;
        },
        py::arg("hp"), py::arg("profile"));

    py::class_<ScoredHypothesis>(m, "ScoredHypothesis")
        .def_readonly("tokens", &ScoredHypothesis::tokens)
        .def_readonly("token_logprobs", &ScoredHypothesis::token_logprobs)
        .def_readonly("reliability", &ScoredHypothesis::reliability)
        .def_readonly("truncated", &ScoredHypothesis::truncated);

    py::class_<Seq2SeqModel>(m, "Seq2SeqModel")
        .def(
            "greedy",
            [](const Seq2SeqModel& mod, const std::vector<int>& template_ids, int max_len) {
                return mod.greedy_decode(mod.map_source(template_ids),
                                         max_len > 0 ? max_len : mod.hp.max_decode_len);
            },
            py::arg("template_ids"), py::arg("max_len") = 0)
        .def(
            "beam",
            [](const Seq2SeqModel& mod, const std::vector<int>& template_ids, int beam,
               int max_len) {
                return mod.beam_decode(mod.map_source(template_ids),
                                       beam > 0 ? beam : mod.hp.beam,
                                       max_len > 0 ? max_len : mod.hp.max_decode_len);
            },
            py::arg("template_ids"), py::arg("beam") = 0, py::arg("max_len") = 0)
        .def("save", &Seq2SeqModel::save, py::arg("path"))
        .def_static("load", &Seq2SeqModel::load, py::arg("path"));

    m.def(
        "train_model",
        [](const std::vector<SamplePair>& train_set, const std::vector<SamplePair>& dev_set,
           const Hyperparams& hp) {
            std::vector<SamplePair> vocab_pairs = train_set;
            vocab_pairs.insert(vocab_pairs.end(), dev_set.begin(), dev_set.end());
            Seq2SeqModel model(build_source_vocab(vocab_pairs), build_target_vocab(vocab_pairs),
                               hp);
            TrainResult res = train(model, train_set, dev_set);
            return py::make_tuple(std::move(model), res.best_dev_loss, res.best_epoch);
        },
        py::arg("train_set"), py::arg("dev_set"), py::arg("hp"),
        "returns (model, best_dev_loss, best_epoch)");

    m.def("reliability", &reliability, py::arg("token_logprobs"));

    m.def(
        "parse_command_lines",
        [](const std::vector<std::string>& tokens) {
            std::vector<std::string> out;
            for (const CommandLine& l : parse_command_lines(tokens)) out.push_back(l.text());
            return out;
        },
        py::arg("tokens"));

    m.def(
        "simulate_commands",
        [](const std::string& group, const std::string& component,
           const std::vector<std::string>& tokens) {
            auto automata = build_group_automata();
            auto it = automata.find(group);
            if (it == automata.end()) throw std::invalid_argument("unknown group " + group);
            SimulationResult sim =
                simulate(it->second, component, parse_command_lines(tokens));
            py::dict d;
            d["final_state"] = sim.final_state;
            d["accepted"] = sim.accepted;
            d["n_transitions"] = sim.transitions_taken.size();
            d["noop_lines"] = sim.noop_lines;
            return d;
        },
        py::arg("group"), py::arg("component"), py::arg("tokens"));

    m.def(
        "threshold_report",
        [](const std::vector<std::pair<double, bool>>& records, double grid_step) {
            std::vector<SampleResult> rs;
            for (const auto& [rel, acc] : records) {
                SampleResult r;
                r.reliability = rel;
                r.accepted = acc;
                rs.push_back(std::move(r));
            }
            ThresholdReport rep = threshold_report(rs, grid_step);
            py::list rows;
            for (const ThresholdRow& row : rep.rows)
                rows.append(py::make_tuple(row.threshold, row.n_success, row.n_failure,
                                           row.precision ? py::cast(*row.precision)
                                                         : py::none()));
            py::dict d;
            d["rows"] = rows;
            d["minimal_safe_threshold"] = rep.minimal_safe_threshold
                                              ? py::cast(*rep.minimal_safe_threshold)
                                              : py::none();
            return d;
        },
        py::arg("records"), py::arg("grid_step") = 0.01);

    m.def(
        "run", [](const std::vector<std::string>& args) { return run(args); }, py::arg("args"),
        "invoke the CLI: run([\"gen\", \"--config\", \"c.json\"])");
}
