// Attentional LSTM encoder-decoder: training with teacher forcing and early
// stopping, greedy/beam decoding with reliability scores, checkpoint I/O.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "log2cmd/rng.hpp"
#include "log2cmd/synth_corpus.hpp"
#include "log2cmd/tensor.hpp"

namespace log2cmd {

struct Vocab {
    static constexpr int kPad = 0, kBos = 1, kEoc = 2, kUnk = 3;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    static Vocab with_reserved();  // <pad>, <s>, <EOC>, <unk>
    int add(const std::string& tok);
    int get(const std::string& tok) const;  // kUnk if absent
    const std::string& token(int idx) const;
    int size() const { return static_cast<int>(tokens.size()); }
    bool operator==(const Vocab& o) const { return tokens == o.tokens; }
};

Vocab build_source_vocab(const std::vector<SamplePair>& train);
Vocab build_target_vocab(const std::vector<SamplePair>& train);

struct Hyperparams {
    int embed_dim = 512;
    int hidden_dim = 512;
    double dropout = 0.2;
    int beam = 5;
    int patience_epochs = 10;
    int max_decode_len = 64;
    double learning_rate = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 1;
    int max_epochs = 500;
    // feed the previous attentional vector to the next decoder step
    // (concatenated with the token embedding); widens dec_wx to [E+H, 4H]
    bool input_feeding = false;

    void validate() const;
    bool operator==(const Hyperparams&) const = default;
};

// "desk" -> 64/64 batch 16, "paper" -> 512/512 batch 32, "" -> unchanged
void apply_profile(Hyperparams& hp, const std::string& profile);

// geometric mean of token probabilities: exp(mean(logprobs))
double reliability(const std::vector<double>& token_logprobs);

struct ScoredHypothesis {
    std::vector<std::string> tokens;  // always ends with <EOC>
    std::vector<double> token_logprobs;
    double reliability = 0.0;
    bool truncated = false;  // <EOC> forced at max_len
};

struct EncoderOut {
    Tensor states;  // [S, H]
    Tensor h, c;    // [H] final state = decoder initial state
};

struct DecState {
    Tensor h, c;  // [H]
    Tensor att;   // previous attentional vector [H]; used when input_feeding
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0, dev_loss = 0.0, elapsed_seconds = 0.0;
};

struct EarlyStopper {
    int patience;
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int bad_epochs = 0;

    explicit EarlyStopper(int patience_epochs) : patience(patience_epochs) {}
    // record one epoch's dev loss; true when patience is exhausted
    bool update(int epoch, double dev_loss);
};

class Seq2SeqModel {
public:
    Vocab src_vocab, tgt_vocab;
    Hyperparams hp;

    Parameter src_emb, tgt_emb;            // [V, E]
    Parameter enc_wx, enc_wh, enc_b;       // [E,4H], [H,4H], [4H]
    Parameter dec_wx, dec_wh, dec_b;
    Parameter attn_w;                      // [H, H]
    Parameter out_w1, out_b1;              // [2H, H], [H]   tanh layer on [ctx; h]
    Parameter out_w2, out_b2;              // [H, Vt], [Vt]  target-vocab logits

    Seq2SeqModel(Vocab src, Vocab tgt, Hyperparams hyper);

    std::vector<Parameter*> params();
    std::vector<const Parameter*> params() const;

    // template IDs / token strings -> vocab indices (<unk> for unseen)
    std::vector<int> map_source(const std::vector<int>& template_ids) const;
    std::vector<int> map_target(const std::vector<std::string>& toks) const;

    EncoderOut encode(const std::vector<int>& src_idx) const;

    // next-token distribution; state advances in place. Reserved tokens
    // (<pad>, <s>, <unk>) are removed from the support unless mask_reserved=false
    Tensor decode_step(int prev_tok, DecState& state, const EncoderOut& enc,
                       bool mask_reserved = true) const;

    ScoredHypothesis greedy_decode(const std::vector<int>& src_idx, int max_len) const;
    std::vector<ScoredHypothesis> beam_decode(const std::vector<int>& src_idx, int beam,
                                              int max_len) const;

    void save(const std::filesystem::path& path) const;
    static Seq2SeqModel load(const std::filesystem::path& path);

private:
    // shared decode core: masked log-probs for the next token; advances state
    std::vector<double> decode_logprobs(int prev_tok, DecState& state, const EncoderOut& enc,
                                        bool mask_reserved) const;
    friend struct ModelStepper;
};

// teacher-forced batch loss graph (shared by train, dev eval, and grad checks).
// src/tgt hold vocab indices; tgt rows end with <EOC>. Returns the mean
// per-token loss node; sum_out/tokens_out receive the batch totals.
Tape::Var build_batch_loss(Tape& tape, Seq2SeqModel& model,
                           const std::vector<std::vector<int>>& src,
                           const std::vector<std::vector<int>>& tgt, bool training,
                           Rng& dropout_rng, double* sum_out = nullptr, long* tokens_out = nullptr);

struct TrainResult {
    std::vector<EpochLog> log;
    double best_dev_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
};

TrainResult train(Seq2SeqModel& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& dev_set,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// CSV: epoch,train_loss,dev_loss,elapsed_seconds
void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// generic beam search over any stepper (the model, or a probability table in
// tests). Stepper contract:
//   struct State;  State initial() const;  int bos() const;  int eoc() const;
//   std::vector<double> advance(const State&, int prev_tok, State& next) const;
// advance returns log-probs; -inf entries are excluded from expansion.

struct BeamHyp {
    std::vector<int> tokens;
    std::vector<double> logprobs;
    double cum = 0.0;
    bool truncated = false;
};

template <class Stepper>
std::vector<BeamHyp> beam_search(const Stepper& st, int beam_width, int max_len) {
    using State = typename Stepper::State;
    struct Active {
        BeamHyp hyp;
        State state;
    };
    const int eoc = st.eoc();
    std::vector<Active> active;
    active.push_back({BeamHyp{}, st.initial()});
    std::vector<BeamHyp> finished;

    for (int step = 0; step < max_len; ++step) {
        if (active.empty() || static_cast<int>(finished.size()) >= beam_width) break;
        struct Cand {
            int ai, tok;
            double cum, lp;
        };
        std::vector<Cand> cands;
        std::vector<State> next_states;
        next_states.reserve(active.size());
        for (std::size_t ai = 0; ai < active.size(); ++ai) {
            const int prev = active[ai].hyp.tokens.empty() ? st.bos() : active[ai].hyp.tokens.back();
            State ns;
            const std::vector<double> lp = st.advance(active[ai].state, prev, ns);
            next_states.push_back(std::move(ns));
            for (int tok = 0; tok < static_cast<int>(lp.size()); ++tok) {
                if (lp[static_cast<std::size_t>(tok)] == -std::numeric_limits<double>::infinity()) continue;
                cands.push_back({static_cast<int>(ai), tok,
                                 active[ai].hyp.cum + lp[static_cast<std::size_t>(tok)],
                                 lp[static_cast<std::size_t>(tok)]});
            }
        }
        // ties resolve to the earlier parent / lower token index
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.cum > b.cum; });
        if (static_cast<int>(cands.size()) > beam_width) cands.resize(static_cast<std::size_t>(beam_width));
        std::vector<Active> next_active;
        for (const Cand& c : cands) {
            Active na;
            na.hyp = active[static_cast<std::size_t>(c.ai)].hyp;
            na.hyp.tokens.push_back(c.tok);
            na.hyp.logprobs.push_back(c.lp);
            na.hyp.cum = c.cum;
            na.state = next_states[static_cast<std::size_t>(c.ai)];
            if (c.tok == eoc)
                finished.push_back(std::move(na.hyp));
            else
                next_active.push_back(std::move(na));
        }
        active = std::move(next_active);
    }

    // hypotheses still running at max_len are closed with a forced <EOC>
    if (static_cast<int>(finished.size()) < beam_width) {
        for (Active& a : active) {
            const int prev = a.hyp.tokens.empty() ? st.bos() : a.hyp.tokens.back();
            State ns;
            const std::vector<double> lp = st.advance(a.state, prev, ns);
            a.hyp.tokens.push_back(eoc);
            a.hyp.logprobs.push_back(lp[static_cast<std::size_t>(eoc)]);
            a.hyp.cum += lp[static_cast<std::size_t>(eoc)];
            a.hyp.truncated = true;
            finished.push_back(std::move(a.hyp));
        }
    }

    std::stable_sort(finished.begin(), finished.end(), [](const BeamHyp& a, const BeamHyp& b) {
        return reliability(a.logprobs) > reliability(b.logprobs);
    });
    if (static_cast<int>(finished.size()) > beam_width) finished.resize(static_cast<std::size_t>(beam_width));
    return finished;
}

}  // namespace log2cmd
