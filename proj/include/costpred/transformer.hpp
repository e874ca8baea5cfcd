#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "costpred/encode.hpp"
#include "costpred/losses.hpp"
#include "costpred/optim.hpp"
#include "costpred/tape.hpp"

namespace costpred::model {

enum class Mode { M1, M2 };

struct TransformerConfig {
    int enc_layers = 2;
    int dec_layers = 2;
    int n_heads = 4;
    int model_dim = 64;
    int ffn_dim = 128;
    double dropout = 0.1;
    int max_input_len = 96;
    int max_target_len = 64;  // forced to 2 in M1 mode
    Mode mode = Mode::M2;
    int day_vocab = data::kDayBuckets + data::kEncSpecials;
    int age_vocab = data::kAgeBuckets + data::kEncSpecials;
    int gender_vocab = 0;
    int specialist_vocab = 0;
    int cost_vocab = 0;
    int target_vocab = 0;

    void validate() const {
        if (model_dim % n_heads != 0) throw std::invalid_argument("transformer: model_dim must divide by n_heads");
        if (mode == Mode::M1 && max_target_len != 2)
            throw std::invalid_argument("transformer: M1 uses a fixed two-visit horizon");
        if (gender_vocab <= 0 || specialist_vocab <= 0 || cost_vocab <= 0 || target_vocab <= 0)
            throw std::invalid_argument("transformer: vocab sizes not set");
        if (enc_layers < 1 || dec_layers < 1 || ffn_dim < 1) throw std::invalid_argument("transformer: bad layer config");
        if (dropout < 0 || dropout >= 1) throw std::invalid_argument("transformer: dropout must be in [0,1)");
    }
};

// Additive attention masks, -1e9 on blocked keys.
namespace detail {

template <typename T>
ag::Tensor<T> key_padding_mask(const ag::IntTensor& key_mask, int heads, int lq) {
    const int B = key_mask.shape[0], Lk = key_mask.shape[1];
    ag::Tensor<T> m({B * heads, lq, Lk});
    for (int b = 0; b < B; b++)
        for (int h = 0; h < heads; h++)
            for (int i = 0; i < lq; i++)
                for (int j = 0; j < Lk; j++)
                    m.v[static_cast<size_t>((((b * heads + h) * lq) + i) * Lk + j)] =
                        key_mask.at2(b, j) ? T(0) : T(-1e9);
    return m;
}

template <typename T>
ag::Tensor<T> causal_mask(const ag::IntTensor& step_valid, int heads) {
    const int B = step_valid.shape[0], P = step_valid.shape[1];
    ag::Tensor<T> m({B * heads, P, P});
    for (int b = 0; b < B; b++)
        for (int h = 0; h < heads; h++)
            for (int i = 0; i < P; i++)
                for (int j = 0; j < P; j++)
                    m.v[static_cast<size_t>((((b * heads + h) * P) + i) * P + j)] =
                        (j <= i && step_valid.at2(b, j)) ? T(0) : T(-1e9);
    return m;
}

}  // namespace detail

// Encoder-decoder transformer over summed per-variable embeddings.
// M1 decodes a fixed two-visit horizon; M2 decodes until [SEP].
template <typename T>
class Transformer {
  public:
    Transformer(TransformerConfig cfg, std::mt19937_64& rng) : cfg_(cfg) {
        cfg_.validate();
        const int D = cfg_.model_dim;
        emb_day_ = add_table("enc.emb.day", cfg_.day_vocab, D, rng);
        emb_age_ = add_table("enc.emb.age", cfg_.age_vocab, D, rng);
        emb_gender_ = add_table("enc.emb.gender", cfg_.gender_vocab, D, rng);
        emb_spec_ = add_table("enc.emb.specialist", cfg_.specialist_vocab, D, rng);
        emb_cost_ = add_table("enc.emb.cost", cfg_.cost_vocab, D, rng);
        emb_pos_enc_ = add_table("enc.emb.position", cfg_.max_input_len, D, rng);
        for (int l = 0; l < cfg_.enc_layers; l++) {
            const std::string p = "enc.layer" + std::to_string(l) + ".";
            EncLayer e;
            e.ln1 = add_ln(p + "ln1");
            e.attn = add_attn(p + "self.", rng);
            e.ln2 = add_ln(p + "ln2");
            e.ffn = add_ffn(p + "ffn.", rng);
            enc_layers_.push_back(e);
        }
        enc_lnf_ = add_ln("enc.lnf");

        emb_tgt_ = add_table("dec.emb.target", cfg_.target_vocab, D, rng);
        emb_pos_dec_ = add_table("dec.emb.position", cfg_.max_target_len + 1, D, rng);
        for (int l = 0; l < cfg_.dec_layers; l++) {
            const std::string p = "dec.layer" + std::to_string(l) + ".";
            DecLayer d;
            d.ln1 = add_ln(p + "ln1");
            d.self_attn = add_attn(p + "self.", rng);
            d.ln2 = add_ln(p + "ln2");
            d.cross_attn = add_attn(p + "cross.", rng);
            d.ln3 = add_ln(p + "ln3");
            d.ffn = add_ffn(p + "ffn.", rng);
            dec_layers_.push_back(d);
        }
        dec_lnf_ = add_ln("dec.lnf");
        out_w_ = add_weight("dec.out.w", {D, cfg_.target_vocab}, rng);
        out_b_ = add_zeros("dec.out.b", {cfg_.target_vocab});
    }

    const TransformerConfig& config() const { return cfg_; }
    ag::ParamStore<T>& params() { return store_; }
    const ag::ParamStore<T>& params() const { return store_; }

    std::vector<std::pair<std::string, ag::Shape>> encoder_param_shapes() const {
        std::vector<std::pair<std::string, ag::Shape>> out;
        for (const auto& p : store_.items)
            if (p.name.rfind("enc.", 0) == 0) out.emplace_back(p.name, p.value.shape);
        return out;
    }

    // Binds every parameter onto the tape; ids align with params().items.
    std::vector<ag::NodeId> bind(ag::Tape<T>& tape, bool trainable) const {
        std::vector<ag::NodeId> ids;
        ids.reserve(store_.items.size());
        for (const auto& p : store_.items) ids.push_back(trainable ? tape.param(p.value) : tape.input(p.value));
        return ids;
    }

    // Summed variable embeddings + positions through the encoder stack.
    ag::NodeId encode(ag::Tape<T>& tape, const std::vector<ag::NodeId>& P, const data::EncodedBatch& batch,
                      bool training, std::mt19937_64& rng) const {
        const int B = batch.rows(), L = batch.input_len();
        if (L > cfg_.max_input_len)
            throw std::invalid_argument("encode: batch length " + std::to_string(L) + " exceeds max input len");
        check_ids(batch.day, cfg_.day_vocab);
        check_ids(batch.age, cfg_.age_vocab);
        check_ids(batch.gender, cfg_.gender_vocab);
        check_ids(batch.specialist, cfg_.specialist_vocab);
        check_ids(batch.cost, cfg_.cost_vocab);

        ag::NodeId x = tape.embedding(P[static_cast<size_t>(emb_day_)], batch.day);
        x = tape.add(x, tape.embedding(P[static_cast<size_t>(emb_age_)], batch.age));
        x = tape.add(x, tape.embedding(P[static_cast<size_t>(emb_gender_)], batch.gender));
        x = tape.add(x, tape.embedding(P[static_cast<size_t>(emb_spec_)], batch.specialist));
        x = tape.add(x, tape.embedding(P[static_cast<size_t>(emb_cost_)], batch.cost));
        x = tape.add(x, tape.embedding(P[static_cast<size_t>(emb_pos_enc_)], position_ids(B, L)));
        x = tape.dropout(x, static_cast<T>(cfg_.dropout), rng, training);

        const ag::Tensor<T> self_mask = detail::key_padding_mask<T>(batch.input_mask, cfg_.n_heads, L);
        for (const auto& layer : enc_layers_) {
            ag::NodeId n1 = ln(tape, P, layer.ln1, x);
            x = tape.add(x, attn(tape, P, layer.attn, n1, n1, self_mask, training, rng));
            ag::NodeId n2 = ln(tape, P, layer.ln2, x);
            x = tape.add(x, ffn(tape, P, layer.ffn, n2, training, rng));
        }
        return ln(tape, P, enc_lnf_, x);
    }

    // Teacher-forced decoder logits [B, P, V] for the batch's target rows.
    ag::NodeId decode_teacher_forced(ag::Tape<T>& tape, const std::vector<ag::NodeId>& P, ag::NodeId memory,
                                     const data::EncodedBatch& batch, bool training, std::mt19937_64& rng) const {
        const int B = batch.rows(), Pt = batch.target_len();
        ag::IntTensor din({B, Pt}, data::kTgtPad);
        ag::IntTensor valid({B, Pt}, 0);
        for (int b = 0; b < B; b++) {
            din.at2(b, 0) = data::kTgtStart;
            valid.at2(b, 0) = 1;
            for (int p = 1; p < Pt; p++) {
                din.at2(b, p) = batch.target.at2(b, p - 1);
                valid.at2(b, p) = batch.target_mask.at2(b, p - 1);
            }
        }
        return decode_ids(tape, P, memory, batch.input_mask, din, valid, training, rng);
    }

    // Free-running helpers -------------------------------------------------

    struct StepPrediction {
        int token = data::kTgtPad;          // greedy pick (cost token or SEP)
        std::vector<T> probabilities;       // softmax over the full target vocab
    };

    struct TwoStepPrediction {
        StepPrediction first, second;
    };

    // Greedy two-visit decode with per-step probability vectors.
    std::vector<TwoStepPrediction> m1_predict(const data::EncodedBatch& batch) const {
        if (cfg_.mode != Mode::M1) throw std::logic_error("m1_predict: model is not in M1 mode");
        if (batch.input_len() < 3) throw std::invalid_argument("m1_predict: empty input");
        ag::Tape<T> tape;
        std::mt19937_64 rng(0);  // inference builds no dropout nodes
        const std::vector<ag::NodeId> P = bind(tape, false);
        const ag::NodeId memory = encode(tape, P, batch, false, rng);
        const int B = batch.rows();
        std::vector<TwoStepPrediction> out(static_cast<size_t>(B));
        std::vector<std::vector<int>> prefixes(static_cast<size_t>(B), {data::kTgtStart});
        for (int step = 0; step < 2; step++) {
            auto preds = greedy_step(tape, P, memory, batch.input_mask, prefixes, rng);
            for (int b = 0; b < B; b++) {
                (step == 0 ? out[static_cast<size_t>(b)].first : out[static_cast<size_t>(b)].second) =
                    preds[static_cast<size_t>(b)];
                prefixes[static_cast<size_t>(b)].push_back(preds[static_cast<size_t>(b)].token);
            }
        }
        return out;
    }

    struct YearPrediction {
        std::vector<int> tokens;             // decoded cost tokens, SEP excluded
        std::vector<double> expected_costs;  // per emitted step
        double annual_total = 0;
    };

    // Autoregressive decode until [SEP] or the horizon; each step contributes
    // its probability-weighted cost.
    std::vector<YearPrediction> m2_predict_year(const data::EncodedBatch& batch,
                                                const std::vector<double>& cost_values) const {
        if (cfg_.mode != Mode::M2) throw std::logic_error("m2_predict_year: model is not in M2 mode");
        if (static_cast<int>(cost_values.size()) != cfg_.target_vocab)
            throw std::invalid_argument("m2_predict_year: cost vector size mismatch");
        ag::Tape<T> tape;
        std::mt19937_64 rng(0);
        const std::vector<ag::NodeId> P = bind(tape, false);
        const ag::NodeId memory = encode(tape, P, batch, false, rng);
        const int B = batch.rows();
        std::vector<YearPrediction> out(static_cast<size_t>(B));
        std::vector<std::vector<int>> prefixes(static_cast<size_t>(B), {data::kTgtStart});
        std::vector<bool> stopped(static_cast<size_t>(B), false);
        for (int step = 0; step < cfg_.max_target_len; step++) {
            bool all_stopped = true;
            for (bool s : stopped) all_stopped = all_stopped && s;
            if (all_stopped) break;
            auto preds = greedy_step(tape, P, memory, batch.input_mask, prefixes, rng);
            for (int b = 0; b < B; b++) {
                if (stopped[static_cast<size_t>(b)]) {
                    prefixes[static_cast<size_t>(b)].push_back(data::kTgtSep);
                    continue;
                }
                const auto& pr = preds[static_cast<size_t>(b)];
                if (pr.token == data::kTgtSep) {
                    stopped[static_cast<size_t>(b)] = true;
                    prefixes[static_cast<size_t>(b)].push_back(data::kTgtSep);
                    continue;
                }
                double expected = 0;
                for (size_t c = 0; c < pr.probabilities.size(); c++)
                    expected += static_cast<double>(pr.probabilities[c]) * cost_values[c];
                auto& y = out[static_cast<size_t>(b)];
                y.tokens.push_back(pr.token);
                y.expected_costs.push_back(expected);
                y.annual_total += expected;
                prefixes[static_cast<size_t>(b)].push_back(pr.token);
            }
        }
        return out;
    }

    // Teacher-forced probabilities [B,P,V] for evaluation.
    ag::Tensor<T> teacher_forced_probs(const data::EncodedBatch& batch) const {
        ag::Tape<T> tape;
        std::mt19937_64 rng(0);
        const std::vector<ag::NodeId> P = bind(tape, false);
        const ag::NodeId memory = encode(tape, P, batch, false, rng);
        const ag::NodeId logits = decode_teacher_forced(tape, P, memory, batch, false, rng);
        return tape.val(tape.softmax(logits, -1));
    }

    // Loss graph for one batch; the entry point the training loop drives.
    struct Built {
        ag::NodeId loss;
        ag::NodeId l1 = -1, l2 = -1;
        std::vector<ag::NodeId> param_ids;
    };

    Built build_loss(ag::Tape<T>& tape, const data::EncodedBatch& batch, const std::vector<double>& cost_values,
                     bool training, std::mt19937_64& rng) const {
        Built built;
        built.param_ids = bind(tape, true);
        const ag::NodeId memory = encode(tape, built.param_ids, batch, training, rng);
        const ag::NodeId logits = decode_teacher_forced(tape, built.param_ids, memory, batch, training, rng);
        built.l2 = losses::multilabel_loss_l2(tape, logits, batch.target, batch.target_mask);
        if (cfg_.mode == Mode::M1) {
            built.loss = built.l2;
        } else {
            const ag::NodeId probs = tape.softmax(logits, -1);
            built.l1 = losses::regression_loss_l1(tape, probs, cost_values, batch.true_annual, batch.cost_mask);
            built.loss = losses::combined_loss(tape, built.l1, built.l2);
        }
        return built;
    }

  private:
    struct LnRef {
        int g = -1, b = -1;
    };
    struct AttnRef {
        int wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct FfnRef {
        int w1, b1, w2, b2;
    };
    struct EncLayer {
        LnRef ln1, ln2;
        AttnRef attn;
        FfnRef ffn;
    };
    struct DecLayer {
        LnRef ln1, ln2, ln3;
        AttnRef self_attn, cross_attn;
        FfnRef ffn;
    };

    TransformerConfig cfg_;
    ag::ParamStore<T> store_;
    int emb_day_, emb_age_, emb_gender_, emb_spec_, emb_cost_, emb_pos_enc_;
    int emb_tgt_, emb_pos_dec_;
    std::vector<EncLayer> enc_layers_;
    std::vector<DecLayer> dec_layers_;
    LnRef enc_lnf_, dec_lnf_;
    int out_w_, out_b_;

    int add_weight(const std::string& name, ag::Shape shape, std::mt19937_64& rng) {
        store_.add(name, ag::randn<T>(std::move(shape), rng, 0.02));
        return static_cast<int>(store_.items.size()) - 1;
    }
    int add_table(const std::string& name, int vocab, int dim, std::mt19937_64& rng) {
        return add_weight(name, {vocab, dim}, rng);
    }
    int add_zeros(const std::string& name, ag::Shape shape) {
        store_.add(name, ag::Tensor<T>(std::move(shape)));
        return static_cast<int>(store_.items.size()) - 1;
    }
    LnRef add_ln(const std::string& name) {
        LnRef r;
        store_.add(name + ".g", ag::Tensor<T>({cfg_.model_dim}, T(1)));
        r.g = static_cast<int>(store_.items.size()) - 1;
        store_.add(name + ".b", ag::Tensor<T>({cfg_.model_dim}));
        r.b = static_cast<int>(store_.items.size()) - 1;
        return r;
    }
    AttnRef add_attn(const std::string& prefix, std::mt19937_64& rng) {
        AttnRef r;
        const int D = cfg_.model_dim;
        r.wq = add_weight(prefix + "wq", {D, D}, rng);
        r.bq = add_zeros(prefix + "bq", {D});
        r.wk = add_weight(prefix + "wk", {D, D}, rng);
        r.bk = add_zeros(prefix + "bk", {D});
        r.wv = add_weight(prefix + "wv", {D, D}, rng);
        r.bv = add_zeros(prefix + "bv", {D});
        r.wo = add_weight(prefix + "wo", {D, D}, rng);
        r.bo = add_zeros(prefix + "bo", {D});
        return r;
    }
    FfnRef add_ffn(const std::string& prefix, std::mt19937_64& rng) {
        FfnRef r;
        r.w1 = add_weight(prefix + "w1", {cfg_.model_dim, cfg_.ffn_dim}, rng);
        r.b1 = add_zeros(prefix + "b1", {cfg_.ffn_dim});
        r.w2 = add_weight(prefix + "w2", {cfg_.ffn_dim, cfg_.model_dim}, rng);
        r.b2 = add_zeros(prefix + "b2", {cfg_.model_dim});
        return r;
    }

    static void check_ids(const ag::IntTensor& ids, int vocab) {
        for (int v : ids.v)
            if (v < 0 || v >= vocab)
                throw std::out_of_range("encode: token id " + std::to_string(v) + " out of vocab " + std::to_string(vocab));
    }

    static ag::IntTensor position_ids(int b, int len) {
        ag::IntTensor ids({b, len});
        for (int r = 0; r < b; r++)
            for (int c = 0; c < len; c++) ids.at2(r, c) = c;
        return ids;
    }

    ag::NodeId ln(ag::Tape<T>& tape, const std::vector<ag::NodeId>& P, const LnRef& r, ag::NodeId x) const {
        return tape.layer_norm(x, P[static_cast<size_t>(r.g)], P[static_cast<size_t>(r.b)]);
    }

    // [B,Lq,D] x [B,Lk,D] -> [B,Lq,D] multi-head attention.
    ag::NodeId attn(ag::Tape<T>& tape, const std::vector<ag::NodeId>& P, const AttnRef& r, ag::NodeId q_in,
                    ag::NodeId kv_in, const ag::Tensor<T>& add_mask, bool training, std::mt19937_64& rng) const {
        const int B = tape.shape(q_in)[0], Lq = tape.shape(q_in)[1], Lk = tape.shape(kv_in)[1];
        const int H = cfg_.n_heads, D = cfg_.model_dim, Dh = D / H;
        auto heads = [&](ag::NodeId x, int Lx) {
            x = tape.reshape(x, {B, Lx, H, Dh});
            x = tape.permute(x, {0, 2, 1, 3});
            return tape.reshape(x, {B * H, Lx, Dh});
        };
        ag::NodeId q = heads(tape.linear(q_in, P[static_cast<size_t>(r.wq)], P[static_cast<size_t>(r.bq)]), Lq);
        ag::NodeId k = heads(tape.linear(kv_in, P[static_cast<size_t>(r.wk)], P[static_cast<size_t>(r.bk)]), Lk);
        ag::NodeId v = heads(tape.linear(kv_in, P[static_cast<size_t>(r.wv)], P[static_cast<size_t>(r.bv)]), Lk);
        ag::NodeId scores = tape.scale(tape.matmul(q, tape.transpose_last2(k)), T(1) / std::sqrt(static_cast<T>(Dh)));
        scores = tape.add_const(scores, add_mask);
        ag::NodeId weights = tape.dropout(tape.softmax(scores, -1), static_cast<T>(cfg_.dropout), rng, training);
        ag::NodeId ctx = tape.matmul(weights, v);  // [B*H, Lq, Dh]
        ctx = tape.reshape(ctx, {B, H, Lq, Dh});
        ctx = tape.permute(ctx, {0, 2, 1, 3});
        ctx = tape.reshape(ctx, {B, Lq, D});
        ag::NodeId out = tape.linear(ctx, P[static_cast<size_t>(r.wo)], P[static_cast<size_t>(r.bo)]);
        return tape.dropout(out, static_cast<T>(cfg_.dropout), rng, training);
    }

    ag::NodeId ffn(ag::Tape<T>& tape, const std::vector<ag::NodeId>& P, const FfnRef& r, ag::NodeId x, bool training,
                   std::mt19937_64& rng) const {
        ag::NodeId h = tape.relu(tape.linear(x, P[static_cast<size_t>(r.w1)], P[static_cast<size_t>(r.b1)]));
        h = tape.dropout(h, static_cast<T>(cfg_.dropout), rng, training);
        ag::NodeId out = tape.linear(h, P[static_cast<size_t>(r.w2)], P[static_cast<size_t>(r.b2)]);
        return tape.dropout(out, static_cast<T>(cfg_.dropout), rng, training);
    }

    // Decoder over explicit input token ids; returns logits [B, P, V].
    ag::NodeId decode_ids(ag::Tape<T>& tape, const std::vector<ag::NodeId>& P, ag::NodeId memory,
                          const ag::IntTensor& memory_mask, const ag::IntTensor& din, const ag::IntTensor& valid,
                          bool training, std::mt19937_64& rng) const {
        const int B = din.shape[0], Pt = din.shape[1];
        if (Pt > cfg_.max_target_len + 1)
            throw std::invalid_argument("decode: length " + std::to_string(Pt) + " exceeds max target len");
        check_ids(din, cfg_.target_vocab);

        ag::NodeId x = tape.embedding(P[static_cast<size_t>(emb_tgt_)], din);
        x = tape.add(x, tape.embedding(P[static_cast<size_t>(emb_pos_dec_)], position_ids(B, Pt)));
        x = tape.dropout(x, static_cast<T>(cfg_.dropout), rng, training);

        const ag::Tensor<T> self_mask = detail::causal_mask<T>(valid, cfg_.n_heads);
        const ag::Tensor<T> cross_mask = detail::key_padding_mask<T>(memory_mask, cfg_.n_heads, Pt);
        for (const auto& layer : dec_layers_) {
            ag::NodeId n1 = ln(tape, P, layer.ln1, x);
            x = tape.add(x, attn(tape, P, layer.self_attn, n1, n1, self_mask, training, rng));
            ag::NodeId n2 = ln(tape, P, layer.ln2, x);
            x = tape.add(x, attn(tape, P, layer.cross_attn, n2, memory, cross_mask, training, rng));
            ag::NodeId n3 = ln(tape, P, layer.ln3, x);
            x = tape.add(x, ffn(tape, P, layer.ffn, n3, training, rng));
        }
        x = ln(tape, P, dec_lnf_, x);
        return tape.linear(x, P[static_cast<size_t>(out_w_)], P[static_cast<size_t>(out_b_)]);
    }

    // One greedy step for every row given the current prefixes. PAD and the
    // start token never win; ties go to the lowest token id.
    std::vector<StepPrediction> greedy_step(ag::Tape<T>& tape, const std::vector<ag::NodeId>& P, ag::NodeId memory,
                                            const ag::IntTensor& memory_mask, const std::vector<std::vector<int>>& prefixes,
                                            std::mt19937_64& rng) const {
        const int B = static_cast<int>(prefixes.size());
        const int Pt = static_cast<int>(prefixes[0].size());
        ag::IntTensor din({B, Pt});
        ag::IntTensor valid({B, Pt}, 1);
        for (int b = 0; b < B; b++)
            for (int p = 0; p < Pt; p++) din.at2(b, p) = prefixes[static_cast<size_t>(b)][static_cast<size_t>(p)];
        const ag::NodeId logits = decode_ids(tape, P, memory, memory_mask, din, valid, false, rng);
        const ag::NodeId probs_node = tape.softmax(logits, -1);
        const ag::Tensor<T>& probs = tape.val(probs_node);
        const int V = cfg_.target_vocab;
        std::vector<StepPrediction> out(static_cast<size_t>(B));
        for (int b = 0; b < B; b++) {
            StepPrediction sp;
            sp.probabilities.resize(static_cast<size_t>(V));
            const T* row = probs.v.data() + (static_cast<std::int64_t>(b) * Pt + (Pt - 1)) * V;
            for (int c = 0; c < V; c++) sp.probabilities[static_cast<size_t>(c)] = row[c];
            int best = data::kTgtSep;
            T best_p = row[data::kTgtSep];
            for (int c = data::kTgtSpecials; c < V; c++)
                if (row[c] > best_p) {
                    best = c;
                    best_p = row[c];
                }
            sp.token = best;
            out[static_cast<size_t>(b)] = std::move(sp);
        }
        return out;
    }
};

}  // namespace costpred::model
