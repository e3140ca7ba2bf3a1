#include "log2cmd/seq2seq.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace log2cmd {

namespace {

constexpr std::uint64_t kTagInit = 'I';
constexpr std::uint64_t kTagEpoch = 'E';
constexpr std::uint64_t kTagDropout = 'R';

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------------------
// vocab

Vocab Vocab::with_reserved() {
    Vocab v;
    v.add("<pad>");
    v.add("<s>");
    v.add("<EOC>");
    v.add("<unk>");
    return v;
}

int Vocab::add(const std::string& tok) {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    tokens.push_back(tok);
    const int idx = static_cast<int>(tokens.size()) - 1;
    index.emplace(tok, idx);
    return idx;
}

int Vocab::get(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int idx) const {
    if (idx < 0 || idx >= size()) throw std::out_of_range("Vocab::token: bad index");
    return tokens[static_cast<std::size_t>(idx)];
}

Vocab build_source_vocab(const std::vector<SamplePair>& train) {
    Vocab v = Vocab::with_reserved();
    for (const SamplePair& s : train)
        for (int id : s.source) v.add(std::to_string(id));
    return v;
}

Vocab build_target_vocab(const std::vector<SamplePair>& train) {
    Vocab v = Vocab::with_reserved();
    for (const SamplePair& s : train)
        for (const std::string& tok : s.target) v.add(tok);
    return v;
}

// ---------------------------------------------------------------------------

void Hyperparams::validate() const {
    auto bad = [](const std::string& what) { return std::invalid_argument("Hyperparams: " + what); };
    if (embed_dim < 1) throw bad("embed_dim must be >= 1");
    if (hidden_dim < 1) throw bad("hidden_dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw bad("dropout must be in [0,1)");
    if (beam < 1) throw bad("beam must be >= 1");
    if (patience_epochs < 1) throw bad("patience_epochs must be >= 1");
    if (max_decode_len < 1) throw bad("max_decode_len must be >= 1");
    if (learning_rate <= 0.0) throw bad("learning_rate must be > 0");
    if (batch_size < 1) throw bad("batch_size must be >= 1");
    if (max_epochs < 1) throw bad("max_epochs must be >= 1");
}

void apply_profile(Hyperparams& hp, const std::string& profile) {
    if (profile.empty()) return;
    if (profile == "desk") {
        hp.embed_dim = 64;
        hp.hidden_dim = 64;
        hp.batch_size = 16;
    } else if (profile == "paper") {
        hp.embed_dim = 512;
        hp.hidden_dim = 512;
        hp.batch_size = 32;
    } else {
        throw std::invalid_argument("unknown profile '" + profile + "' (expected desk or paper)");
    }
}

double reliability(const std::vector<double>& token_logprobs) {
    if (token_logprobs.empty()) throw std::invalid_argument("reliability: empty logprob list");
    const double mean =
        std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0) /
        static_cast<double>(token_logprobs.size());
    return std::exp(mean);
}

bool EarlyStopper::update(int epoch, double dev_loss) {
    if (dev_loss < best) {
        best = dev_loss;
        best_epoch = epoch;
        bad_epochs = 0;
    } else {
        ++bad_epochs;
    }
    return bad_epochs >= patience;
}

// ---------------------------------------------------------------------------
// model

Seq2SeqModel::Seq2SeqModel(Vocab src, Vocab tgt, Hyperparams hyper)
    : src_vocab(std::move(src)), tgt_vocab(std::move(tgt)), hp(hyper),
      src_emb("src_emb", Tensor({src_vocab.size(), hp.embed_dim})),
      tgt_emb("tgt_emb", Tensor({tgt_vocab.size(), hp.embed_dim})),
      enc_wx("enc_wx", Tensor({hp.embed_dim, 4 * hp.hidden_dim})),
      enc_wh("enc_wh", Tensor({hp.hidden_dim, 4 * hp.hidden_dim})),
      enc_b("enc_b", Tensor({4 * hp.hidden_dim})),
      dec_wx("dec_wx", Tensor({hp.embed_dim + (hyper.input_feeding ? hp.hidden_dim : 0),
                               4 * hp.hidden_dim})),
      dec_wh("dec_wh", Tensor({hp.hidden_dim, 4 * hp.hidden_dim})),
      dec_b("dec_b", Tensor({4 * hp.hidden_dim})),
      attn_w("attn_w", Tensor({hp.hidden_dim, hp.hidden_dim})),
      out_w1("out_w1", Tensor({2 * hp.hidden_dim, hp.hidden_dim})),
      out_b1("out_b1", Tensor({hp.hidden_dim})),
      out_w2("out_w2", Tensor({hp.hidden_dim, tgt_vocab.size()})),
      out_b2("out_b2", Tensor({tgt_vocab.size()})) {
    hp.validate();
    Rng rng = make_rng(hp.seed, kTagInit);
    for (Parameter* p : {&src_emb, &tgt_emb, &enc_wx, &enc_wh, &dec_wx, &dec_wh, &attn_w, &out_w1, &out_w2})
        init_uniform(*p, -0.08, 0.08, rng);
    // biases stay zero except the forget-gate block (gate order i f g o)
    for (Parameter* b : {&enc_b, &dec_b}) {
        for (int j = hp.hidden_dim; j < 2 * hp.hidden_dim; ++j) b->value.data[static_cast<std::size_t>(j)] = 1.0;
        ++b->version;
    }
}

std::vector<Parameter*> Seq2SeqModel::params() {
    return {&src_emb, &tgt_emb, &enc_wx, &enc_wh, &enc_b, &dec_wx, &dec_wh,
            &dec_b,   &attn_w,  &out_w1, &out_b1, &out_w2, &out_b2};
}

std::vector<const Parameter*> Seq2SeqModel::params() const {
    return {&src_emb, &tgt_emb, &enc_wx, &enc_wh, &enc_b, &dec_wx, &dec_wh,
            &dec_b,   &attn_w,  &out_w1, &out_b1, &out_w2, &out_b2};
}

std::vector<int> Seq2SeqModel::map_source(const std::vector<int>& template_ids) const {
    std::vector<int> out;
    out.reserve(template_ids.size());
    for (int id : template_ids) out.push_back(src_vocab.get(std::to_string(id)));
    return out;
}

std::vector<int> Seq2SeqModel::map_target(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const std::string& t : toks) out.push_back(tgt_vocab.get(t));
    return out;
}

EncoderOut Seq2SeqModel::encode(const std::vector<int>& src_idx) const {
    if (src_idx.empty()) throw std::invalid_argument("encode: empty source sequence");
    const int S = static_cast<int>(src_idx.size());
    const int H = hp.hidden_dim;
    EncoderOut out;
    out.states = Tensor({S, H});
    out.h = Tensor({H});
    out.c = Tensor({H});
    std::vector<double> h(static_cast<std::size_t>(H), 0.0), c(static_cast<std::size_t>(H), 0.0);
    std::vector<double> hn(static_cast<std::size_t>(H)), cn(static_cast<std::size_t>(H));
    for (int s = 0; s < S; ++s) {
        const int idx = src_idx[static_cast<std::size_t>(s)];
        if (idx < 0 || idx >= src_vocab.size()) throw std::out_of_range("encode: bad vocab index");
        const double* x = src_emb.value.data.data() + static_cast<std::size_t>(idx) * hp.embed_dim;
        lstm_cell(x, h.data(), c.data(), enc_wx.value, enc_wh.value, enc_b.value, hp.embed_dim, H,
                  hn.data(), cn.data());
        h.swap(hn);
        c.swap(cn);
        std::memcpy(out.states.data.data() + static_cast<std::size_t>(s) * H, h.data(),
                    sizeof(double) * static_cast<std::size_t>(H));
    }
    std::copy(h.begin(), h.end(), out.h.data.begin());
    std::copy(c.begin(), c.end(), out.c.data.begin());
    return out;
}

std::vector<double> Seq2SeqModel::decode_logprobs(int prev_tok, DecState& state,
                                                  const EncoderOut& enc, bool mask_reserved) const {
    const int H = hp.hidden_dim;
    const int V = tgt_vocab.size();
    if (prev_tok < 0 || prev_tok >= V) throw std::out_of_range("decode: bad previous token index");

    const double* emb = tgt_emb.value.data.data() + static_cast<std::size_t>(prev_tok) * hp.embed_dim;
    const int in_dim = hp.embed_dim + (hp.input_feeding ? H : 0);
    std::vector<double> x(static_cast<std::size_t>(in_dim), 0.0);
    std::copy(emb, emb + hp.embed_dim, x.begin());
    if (hp.input_feeding && state.att.size() == H)
        std::copy(state.att.data.begin(), state.att.data.end(), x.begin() + hp.embed_dim);

    Tensor hn({H}), cn({H});
    lstm_cell(x.data(), state.h.data.data(), state.c.data.data(), dec_wx.value, dec_wh.value,
              dec_b.value, in_dim, H, hn.data.data(), cn.data.data());

    std::vector<double> ctx(static_cast<std::size_t>(H));
    std::vector<double> weights(static_cast<std::size_t>(enc.states.rows()));
    attention_context(hn.data.data(), enc.states, attn_w.value, ctx.data(), weights.data());

    std::vector<double> cat(static_cast<std::size_t>(2 * H));
    std::copy(ctx.begin(), ctx.end(), cat.begin());
    std::copy(hn.data.begin(), hn.data.end(), cat.begin() + H);

    std::vector<double> htil(out_b1.value.data.begin(), out_b1.value.data.end());
    mm_nn_acc(htil.data(), cat.data(), out_w1.value.data.data(), 1, 2 * H, H);
    for (double& v : htil) v = std::tanh(v);

    std::vector<double> logits(out_b2.value.data.begin(), out_b2.value.data.end());
    mm_nn_acc(logits.data(), htil.data(), out_w2.value.data.data(), 1, H, V);
    if (mask_reserved)
        logits[Vocab::kPad] = logits[Vocab::kBos] = logits[Vocab::kUnk] = kNegInf;

    // stable log-softmax over the unmasked support
    double mx = kNegInf;
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits)
        if (v != kNegInf) z += std::exp(v - mx);
    const double lz = std::log(z);
    for (double& v : logits)
        if (v != kNegInf) v = v - mx - lz;

    state.h = std::move(hn);
    state.c = std::move(cn);
    if (hp.input_feeding) state.att = Tensor::from({H}, std::move(htil));
    return logits;
}

Tensor Seq2SeqModel::decode_step(int prev_tok, DecState& state, const EncoderOut& enc,
                                 bool mask_reserved) const {
    const std::vector<double> lp = decode_logprobs(prev_tok, state, enc, mask_reserved);
    Tensor probs({tgt_vocab.size()});
    for (std::size_t i = 0; i < lp.size(); ++i)
        probs.data[i] = lp[i] == kNegInf ? 0.0 : std::exp(lp[i]);
    return probs;
}

struct ModelStepper {
    const Seq2SeqModel* model;
    const EncoderOut* enc;

    using State = DecState;
    State initial() const { return {enc->h, enc->c, {}}; }
    int bos() const { return Vocab::kBos; }
    int eoc() const { return Vocab::kEoc; }
    std::vector<double> advance(const State& s, int prev_tok, State& next) const {
        next = s;
        return model->decode_logprobs(prev_tok, next, *enc, true);
    }
};

ScoredHypothesis Seq2SeqModel::greedy_decode(const std::vector<int>& src_idx, int max_len) const {
    const EncoderOut enc = encode(src_idx);
    DecState st{enc.h, enc.c, {}};
    ScoredHypothesis hyp;
    std::vector<int> toks;
    int prev = Vocab::kBos;
    bool done = false;
    for (int t = 0; t < max_len && !done; ++t) {
        const std::vector<double> lp = decode_logprobs(prev, st, enc, true);
        int best = -1;
        double best_lp = kNegInf;
        for (int i = 0; i < static_cast<int>(lp.size()); ++i)
            if (lp[static_cast<std::size_t>(i)] > best_lp) {
                best_lp = lp[static_cast<std::size_t>(i)];
                best = i;
            }
        toks.push_back(best);
        hyp.token_logprobs.push_back(best_lp);
        prev = best;
        done = best == Vocab::kEoc;
    }
    if (!done) {
        const std::vector<double> lp = decode_logprobs(prev, st, enc, true);
        toks.push_back(Vocab::kEoc);
        hyp.token_logprobs.push_back(lp[Vocab::kEoc]);
        hyp.truncated = true;
    }
    for (int t : toks) hyp.tokens.push_back(tgt_vocab.token(t));
    hyp.reliability = reliability(hyp.token_logprobs);
    return hyp;
}

std::vector<ScoredHypothesis> Seq2SeqModel::beam_decode(const std::vector<int>& src_idx, int beam,
                                                        int max_len) const {
    if (beam < 1) throw std::invalid_argument("beam_decode: beam must be >= 1");
    const EncoderOut enc = encode(src_idx);
    ModelStepper stepper{this, &enc};
    std::vector<ScoredHypothesis> out;
    for (BeamHyp& bh : beam_search(stepper, beam, max_len)) {
        ScoredHypothesis h;
        for (int t : bh.tokens) h.tokens.push_back(tgt_vocab.token(t));
        h.token_logprobs = std::move(bh.logprobs);
        h.reliability = reliability(h.token_logprobs);
        h.truncated = bh.truncated;
        out.push_back(std::move(h));
    }
    return out;
}

// ---------------------------------------------------------------------------
// training

Tape::Var build_batch_loss(Tape& tape, Seq2SeqModel& model,
                           const std::vector<std::vector<int>>& src,
                           const std::vector<std::vector<int>>& tgt, bool training,
                           Rng& dropout_rng, double* sum_out, long* tokens_out) {
    const int B = static_cast<int>(src.size());
    if (B == 0 || tgt.size() != src.size())
        throw std::invalid_argument("build_batch_loss: empty batch or source/target size mismatch");
    int S = 0, T = 0;
    for (const auto& row : src) {
        if (row.empty()) throw std::invalid_argument("build_batch_loss: empty source sequence");
        S = std::max(S, static_cast<int>(row.size()));
    }
    for (const auto& row : tgt) {
        if (row.empty() || row.back() != Vocab::kEoc)
            throw std::invalid_argument("build_batch_loss: target must end with <EOC>");
        T = std::max(T, static_cast<int>(row.size()));
    }
    const double rate = model.hp.dropout;

    const Tape::Var v_semb = tape.leaf(model.src_emb);
    const Tape::Var v_temb = tape.leaf(model.tgt_emb);
    const Tape::Var v_ewx = tape.leaf(model.enc_wx), v_ewh = tape.leaf(model.enc_wh), v_eb = tape.leaf(model.enc_b);
    const Tape::Var v_dwx = tape.leaf(model.dec_wx), v_dwh = tape.leaf(model.dec_wh), v_db = tape.leaf(model.dec_b);
    const Tape::Var v_wa = tape.leaf(model.attn_w);
    const Tape::Var v_w1 = tape.leaf(model.out_w1), v_b1 = tape.leaf(model.out_b1);
    const Tape::Var v_w2 = tape.leaf(model.out_w2), v_b2 = tape.leaf(model.out_b2);

    const int H = model.hp.hidden_dim;
    Tape::Var h = tape.constant(Tensor({B, H}));
    Tape::Var c = tape.constant(Tensor({B, H}));
    std::vector<Tape::Var> enc_steps;
    enc_steps.reserve(static_cast<std::size_t>(S));
    std::vector<int> ids(static_cast<std::size_t>(B));
    std::vector<double> rmask(static_cast<std::size_t>(B));
    for (int t = 0; t < S; ++t) {
        for (int b = 0; b < B; ++b) {
            const bool live = t < static_cast<int>(src[static_cast<std::size_t>(b)].size());
            ids[static_cast<std::size_t>(b)] = live ? src[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] : Vocab::kPad;
            rmask[static_cast<std::size_t>(b)] = live ? 1.0 : 0.0;
        }
        Tape::Var x = tape.rows_lookup(v_semb, ids);
        x = tape.dropout(x, rate, dropout_rng, training);
        const auto hc = tape.lstm_step(x, h, c, v_ewx, v_ewh, v_eb, &rmask);
        h = hc.h;
        c = hc.c;
        enc_steps.push_back(h);
    }
    const Tape::Var enc_states = tape.stack_steps(enc_steps);
    std::vector<double> amask(static_cast<std::size_t>(B) * S, 0.0);
    for (int b = 0; b < B; ++b)
        for (int s = 0; s < static_cast<int>(src[static_cast<std::size_t>(b)].size()); ++s)
            amask[static_cast<std::size_t>(b) * S + s] = 1.0;

    // decoder starts from each row's own final encoder state (mask copy-through)
    std::vector<Tape::Var> parts;
    double total_sum = 0.0;
    long total_tokens = 0;
    std::vector<int> labels(static_cast<std::size_t>(B));
    std::vector<double> lmask(static_cast<std::size_t>(B));
    Tape::Var feed = tape.constant(Tensor({B, H}));  // h~_0 = 0 when input feeding
    for (int t = 0; t < T; ++t) {
        for (int b = 0; b < B; ++b) {
            const auto& row = tgt[static_cast<std::size_t>(b)];
            const int L = static_cast<int>(row.size());
            ids[static_cast<std::size_t>(b)] =
                t == 0 ? Vocab::kBos : (t - 1 < L ? row[static_cast<std::size_t>(t - 1)] : Vocab::kPad);
            labels[static_cast<std::size_t>(b)] = t < L ? row[static_cast<std::size_t>(t)] : Vocab::kPad;
            lmask[static_cast<std::size_t>(b)] = t < L ? 1.0 : 0.0;
        }
        Tape::Var x = tape.rows_lookup(v_temb, ids);
        x = tape.dropout(x, rate, dropout_rng, training);
        if (model.hp.input_feeding) x = tape.concat_cols(x, feed);
        const auto hc = tape.lstm_step(x, h, c, v_dwx, v_dwh, v_db, &lmask);
        h = hc.h;
        c = hc.c;
        const auto att = tape.attention(h, enc_states, v_wa, amask);
        const Tape::Var cat = tape.concat_cols(att.context, h);
        const Tape::Var htil = tape.tanh_op(tape.add_row_bias(tape.matmul(cat, v_w1), v_b1));
        const Tape::Var hd = tape.dropout(htil, rate, dropout_rng, training);
        if (model.hp.input_feeding) feed = hd;
        const Tape::Var logits = tape.add_row_bias(tape.matmul(hd, v_w2), v_b2);
        double step_sum = 0.0;
        int step_tokens = 0;
        const Tape::Var lt = tape.softmax_xent(logits, labels, lmask, &step_sum, &step_tokens);
        parts.push_back(tape.scale(lt, static_cast<double>(step_tokens)));
        total_sum += step_sum;
        total_tokens += step_tokens;
    }
    if (sum_out) *sum_out = total_sum;
    if (tokens_out) *tokens_out = total_tokens;
    return tape.scale(tape.add_scalars(parts), 1.0 / static_cast<double>(total_tokens));
}

namespace {

struct MappedBatch {
    std::vector<std::vector<int>> src, tgt;
};

struct MappedSet {
    std::vector<std::vector<int>> src, tgt;
};

MappedSet map_set(const Seq2SeqModel& model, const std::vector<SamplePair>& set) {
    MappedSet ms;
    ms.src.reserve(set.size());
    ms.tgt.reserve(set.size());
    for (const SamplePair& s : set) {
        ms.src.push_back(model.map_source(s.source));
        ms.tgt.push_back(model.map_target(s.target));
    }
    return ms;
}

// Length-bucketed batches. A pre-sort shuffle (when an rng is given) varies
// which same-length samples share a batch from epoch to epoch; the stable
// sort keeps padding waste low either way.
std::vector<MappedBatch> make_batches(const MappedSet& ms, int batch_size, Rng* shuffle_rng) {
    std::vector<int> order(ms.src.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_rng) std::shuffle(order.begin(), order.end(), *shuffle_rng);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return ms.src[static_cast<std::size_t>(a)].size() < ms.src[static_cast<std::size_t>(b)].size();
    });
    std::vector<MappedBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        MappedBatch b;
        for (std::size_t i = start;
             i < std::min(order.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
            b.src.push_back(ms.src[static_cast<std::size_t>(order[i])]);
            b.tgt.push_back(ms.tgt[static_cast<std::size_t>(order[i])]);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

double mean_loss(Seq2SeqModel& model, std::vector<MappedBatch>& batches) {
    double sum = 0.0;
    long tokens = 0;
    Rng unused = make_rng(0);
    for (MappedBatch& b : batches) {
        Tape tape;
        double bs = 0.0;
        long bt = 0;
        build_batch_loss(tape, model, b.src, b.tgt, false, unused, &bs, &bt);
        sum += bs;
        tokens += bt;
    }
    return sum / static_cast<double>(tokens);
}

}  // namespace

TrainResult train(Seq2SeqModel& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& dev_set,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    if (train_set.empty() || dev_set.empty())
        throw std::invalid_argument("train: need at least one train and one dev pair");
    model.hp.validate();

    const MappedSet train_mapped = map_set(model, train_set);
    std::vector<MappedBatch> dev_batches =
        make_batches(map_set(model, dev_set), model.hp.batch_size, nullptr);

    const std::vector<Parameter*> ps = model.params();
    AdamConfig acfg;
    acfg.lr = model.hp.learning_rate;
    Adam adam(acfg);
    EarlyStopper stopper(model.hp.patience_epochs);

    std::vector<Tensor> best_values;
    auto snapshot = [&] {
        best_values.clear();
        for (const Parameter* p : ps) best_values.push_back(p->value);
    };
    snapshot();

    TrainResult res;
    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = 1; epoch <= model.hp.max_epochs; ++epoch) {
        Rng erng = make_rng(model.hp.seed, kTagEpoch, static_cast<std::uint64_t>(epoch));
        std::vector<MappedBatch> batches = make_batches(train_mapped, model.hp.batch_size, &erng);
        std::vector<int> order(batches.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), erng);

        double sum = 0.0;
        long tokens = 0;
        for (int bi : order) {
            MappedBatch& b = batches[static_cast<std::size_t>(bi)];
            Rng drng = make_rng(model.hp.seed, kTagDropout, static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(bi));
            Tape tape;
            double bsum = 0.0;
            long btok = 0;
            const Tape::Var loss = build_batch_loss(tape, model, b.src, b.tgt, true, drng, &bsum, &btok);
            if (!std::isfinite(tape.scalar(loss)))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(bi));
            tape.backward(loss);
            adam.step(ps);
            sum += bsum;
            tokens += btok;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = sum / static_cast<double>(tokens);
        log.dev_loss = mean_loss(model, dev_batches);
        log.elapsed_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.push_back(log);
        if (on_epoch) on_epoch(log);

        if (log.dev_loss < stopper.best) {
            // snapshot before the stopper folds this epoch into its state
            const bool stop = stopper.update(epoch, log.dev_loss);
            snapshot();
            if (stop) break;
        } else if (stopper.update(epoch, log.dev_loss)) {
            break;
        }
    }

    for (std::size_t i = 0; i < ps.size(); ++i) {
        ps[i]->value = best_values[i];
        ++ps[i]->version;
    }
    res.best_dev_loss = stopper.best;
    res.best_epoch = stopper.best_epoch;
    return res;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write training log: " + path.string());
    out << "epoch,train_loss,dev_loss,elapsed_seconds\n";
    char buf[160];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.3f\n", e.epoch, e.train_loss, e.dev_loss,
                      e.elapsed_seconds);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// checkpoint: magic, version, payload length, payload (JSON header + raw
// little-endian doubles per parameter), FNV-1a checksum of the payload

namespace {

constexpr char kMagic[4] = {'L', '2', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}
std::uint64_t get_u64(const std::string& s, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    return v;
}

nlohmann::ordered_json hp_to_json(const Hyperparams& hp) {
    nlohmann::ordered_json j;
    j["embed_dim"] = hp.embed_dim;
    j["hidden_dim"] = hp.hidden_dim;
    j["dropout"] = hp.dropout;
    j["beam"] = hp.beam;
    j["patience_epochs"] = hp.patience_epochs;
    j["max_decode_len"] = hp.max_decode_len;
    j["learning_rate"] = hp.learning_rate;
    j["batch_size"] = hp.batch_size;
    j["seed"] = hp.seed;
    j["max_epochs"] = hp.max_epochs;
    j["input_feeding"] = hp.input_feeding;
    return j;
}

Hyperparams hp_from_json(const nlohmann::json& j) {
    Hyperparams hp;
    hp.embed_dim = j.at("embed_dim").get<int>();
    hp.hidden_dim = j.at("hidden_dim").get<int>();
    hp.dropout = j.at("dropout").get<double>();
    hp.beam = j.at("beam").get<int>();
    hp.patience_epochs = j.at("patience_epochs").get<int>();
    hp.max_decode_len = j.at("max_decode_len").get<int>();
    hp.learning_rate = j.at("learning_rate").get<double>();
    hp.batch_size = j.at("batch_size").get<int>();
    hp.seed = j.at("seed").get<std::uint64_t>();
    hp.max_epochs = j.at("max_epochs").get<int>();
    hp.input_feeding = j.at("input_feeding").get<bool>();
    return hp;
}

}  // namespace

void Seq2SeqModel::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json header;
    header["hp"] = hp_to_json(hp);
    header["src_vocab"] = src_vocab.tokens;
    header["tgt_vocab"] = tgt_vocab.tokens;
    auto& pj = header["params"] = nlohmann::ordered_json::array();
    for (const Parameter* p : params()) {
        nlohmann::ordered_json e;
        e["name"] = p->name;
        e["shape"] = p->value.shape;
        pj.push_back(std::move(e));
    }
    const std::string hbytes = header.dump();

    std::string payload;
    put_u64(payload, hbytes.size());
    payload += hbytes;
    for (const Parameter* p : params()) {
        const std::size_t off = payload.size();
        payload.resize(off + p->value.data.size() * sizeof(double));
        std::memcpy(payload.data() + off, p->value.data.data(), p->value.data.size() * sizeof(double));
    }

    std::string file;
    file.append(kMagic, 4);
    put_u32(file, kCheckpointVersion);
    put_u64(file, payload.size());
    file += payload;
    put_u64(file, fnv1a(payload));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
}

Seq2SeqModel Seq2SeqModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string file = ss.str();

    if (file.size() < 16 || std::memcmp(file.data(), kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());
    const std::uint32_t version = get_u32(file, 4);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                 " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
    const std::uint64_t plen = get_u64(file, 8);
    if (file.size() != 16 + plen + 8)
        throw std::runtime_error("truncated checkpoint file: " + path.string());
    const std::string payload = file.substr(16, plen);
    if (fnv1a(payload) != get_u64(file, 16 + plen))
        throw std::runtime_error("checkpoint checksum mismatch: " + path.string());

    const std::uint64_t hlen = get_u64(payload, 0);
    if (payload.size() < 8 + hlen) throw std::runtime_error("corrupt checkpoint header: " + path.string());
    const nlohmann::json header = nlohmann::json::parse(payload.substr(8, hlen));

    Vocab src, tgt;
    for (const auto& t : header.at("src_vocab")) src.add(t.get<std::string>());
    for (const auto& t : header.at("tgt_vocab")) tgt.add(t.get<std::string>());
    Seq2SeqModel model(std::move(src), std::move(tgt), hp_from_json(header.at("hp")));

    std::size_t off = 8 + hlen;
    const auto& pj = header.at("params");
    const std::vector<Parameter*> ps = model.params();
    if (pj.size() != ps.size()) throw std::runtime_error("checkpoint parameter list mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (pj[i].at("name").get<std::string>() != ps[i]->name ||
            pj[i].at("shape").get<std::vector<int>>() != ps[i]->value.shape)
            throw std::runtime_error("checkpoint parameter mismatch for " + ps[i]->name);
        const std::size_t nbytes = ps[i]->value.data.size() * sizeof(double);
        if (off + nbytes > payload.size()) throw std::runtime_error("checkpoint blob out of range");
        std::memcpy(ps[i]->value.data.data(), payload.data() + off, nbytes);
        ++ps[i]->version;
        off += nbytes;
    }
    if (off != payload.size()) throw std::runtime_error("checkpoint has trailing bytes");
    return model;
}

}  // namespace log2cmd
