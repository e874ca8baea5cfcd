#include <doctest.h>

#include <cmath>
#include <random>

#include "costpred/train.hpp"
#include "costpred/transformer.hpp"
#include "model_fixtures.hpp"
#include "oracles.hpp"

using namespace costpred;
using namespace costpred::model;
using fixtures::tiny_config;
using fixtures::toy_cohort;
using fixtures::toy_patient;
using fixtures::toy_table;

namespace {

struct M2Fixture {
    data::Vocabs vocabs;
    metrics::CostTable table;
    std::vector<data::EncodedBatch> batches;
    std::vector<double> cost_vec;

    static M2Fixture build(int n_patients, std::uint64_t seed, int batch_size = 8) {
        M2Fixture f;
        auto patients = toy_cohort(n_patients, seed);
        auto cohort = data::split_cohort(patients);
        f.table = synth::cost_table_of([&] {
            synth::CohortConfig c;
            c.n_cost_types = 5;
            return c;
        }());
        f.vocabs = data::build_vocabs(patients, cohort.v2);
        std::vector<data::SkipEntry> skips;
        auto pairs = data::make_m2_pairs(cohort.d2, skips);
        std::vector<data::SeqExample> examples;
        for (const auto& p : pairs) examples.push_back(data::to_example(p));
        data::BatchOptions opts;
        opts.batch_size = batch_size;
        opts.max_input_len = 32;
        opts.max_target_len = 16;
        f.batches = data::make_batches(examples, f.vocabs, opts);
        f.cost_vec = losses::cost_vector(f.vocabs.target_cost, f.table);
        return f;
    }
};

}  // namespace

TEST_SUITE("transformer") {

TEST_CASE("padded content never leaks into unpadded outputs or decoder logits") {
    auto f = M2Fixture::build(10, 21);
    std::mt19937_64 init(1);
    Transformer<double> m(tiny_config(f.vocabs, Mode::M2), init);

    // find a batch with real padding
    const data::EncodedBatch* padded = nullptr;
    for (const auto& b : f.batches) {
        for (int r = 0; r < b.rows(); r++)
            if (b.input_mask.at2(r, b.input_len() - 1) == 0) padded = &b;
    }
    REQUIRE(padded != nullptr);

    std::mt19937_64 rng(0);
    auto run = [&](const data::EncodedBatch& b) {
        ag::Tape<double> tape;
        auto ids = m.bind(tape, false);
        ag::NodeId mem = m.encode(tape, ids, b, false, rng);
        ag::NodeId logits = m.decode_teacher_forced(tape, ids, mem, b, false, rng);
        return std::make_pair(tape.val(mem), tape.val(logits));
    };
    auto [mem0, logit0] = run(*padded);

    data::EncodedBatch mutated = *padded;
    int changed = 0;
    for (int r = 0; r < mutated.rows(); r++)
        for (int c = 0; c < mutated.input_len(); c++)
            if (!mutated.input_mask.at2(r, c)) {
                mutated.cost.at2(r, c) = data::kUnk;  // valid but different token
                mutated.age.at2(r, c) = data::kSep;
                changed++;
            }
    REQUIRE(changed > 0);
    auto [mem1, logit1] = run(mutated);

    for (int r = 0; r < padded->rows(); r++)
        for (int c = 0; c < padded->input_len(); c++) {
            if (!padded->input_mask.at2(r, c)) continue;
            for (int d = 0; d < m.config().model_dim; d++) {
                const size_t ix = static_cast<size_t>((r * padded->input_len() + c) * m.config().model_dim + d);
                CHECK(std::fabs(mem0.v[ix] - mem1.v[ix]) <= 1e-5);
            }
        }
    for (size_t i = 0; i < logit0.v.size(); i++) CHECK(std::fabs(logit0.v[i] - logit1.v[i]) <= 1e-5);
}

TEST_CASE("permuting batch rows permutes encoder memory identically") {
    auto f = M2Fixture::build(6, 22, 6);
    std::mt19937_64 init(2);
    Transformer<double> m(tiny_config(f.vocabs, Mode::M2), init);
    const auto& b = f.batches[0];
    REQUIRE(b.rows() >= 2);

    data::EncodedBatch swapped = b;
    auto swap_rows = [&](ag::IntTensor& t) {
        for (int c = 0; c < t.shape[1]; c++) std::swap(t.at2(0, c), t.at2(1, c));
    };
    swap_rows(swapped.day);
    swap_rows(swapped.age);
    swap_rows(swapped.gender);
    swap_rows(swapped.specialist);
    swap_rows(swapped.cost);
    swap_rows(swapped.input_mask);
    swap_rows(swapped.target);
    swap_rows(swapped.target_mask);
    swap_rows(swapped.cost_mask);

    std::mt19937_64 rng(0);
    ag::Tape<double> t1, t2;
    auto mem1 = t1.val(m.encode(t1, m.bind(t1, false), b, false, rng));
    auto mem2 = t2.val(m.encode(t2, m.bind(t2, false), swapped, false, rng));
    const int L = b.input_len(), D = m.config().model_dim;
    for (int c = 0; c < L * D; c++) {
        CHECK(mem1.v[static_cast<size_t>(c)] == doctest::Approx(mem2.v[static_cast<size_t>(L * D + c)]).epsilon(1e-12));
        CHECK(mem1.v[static_cast<size_t>(L * D + c)] == doctest::Approx(mem2.v[static_cast<size_t>(c)]).epsilon(1e-12));
    }
}

TEST_CASE("causal mask: logits at position k ignore later target tokens") {
    auto f = M2Fixture::build(8, 23);
    std::mt19937_64 init(3);
    Transformer<double> m(tiny_config(f.vocabs, Mode::M2), init);
    const data::EncodedBatch* b = nullptr;
    for (const auto& cand : f.batches)
        if (cand.target_len() >= 4) b = &cand;
    REQUIRE(b != nullptr);

    std::mt19937_64 rng(0);
    auto logits_of = [&](const data::EncodedBatch& batch) {
        ag::Tape<double> tape;
        auto ids = m.bind(tape, false);
        return tape.val(m.decode_teacher_forced(tape, ids, m.encode(tape, ids, batch, false, rng), batch, false, rng));
    };
    auto base = logits_of(*b);

    const int k = 1;  // perturb targets strictly after position k
    data::EncodedBatch mutated = *b;
    for (int r = 0; r < mutated.rows(); r++)
        for (int p = k + 1; p < mutated.target_len(); p++)
            mutated.target.at2(r, p) = data::kTgtSpecials;  // first real cost token
    auto pert = logits_of(mutated);

    const int V = m.config().target_vocab;
    for (int r = 0; r < b->rows(); r++)
        for (int p = 0; p <= k; p++)
            for (int c = 0; c < V; c++) {
                const size_t ix = static_cast<size_t>((r * b->target_len() + p) * V + c);
                CHECK(std::fabs(base.v[ix] - pert.v[ix]) <= 1e-5);
            }
}

TEST_CASE("m1 mode: fixed horizon, deterministic, probabilities sum to 1") {
    auto table = toy_table(4);
    auto p1 = toy_patient("a", {0, 20, 40, 80}, {1, 2, 3, 2}, table);
    auto p2 = toy_patient("b", {0, 30, 90}, {2, 2, 4}, table);
    data::Vocabs v = data::build_vocabs({p1, p2}, {1, 2, 3, 4});
    std::mt19937_64 init(4);
    Transformer<double> m(tiny_config(v, Mode::M1), init);

    std::vector<data::SkipEntry> skips;
    auto pairs = data::make_m1_pairs({p1, p2}, skips);
    std::vector<data::SeqExample> ex;
    for (const auto& pr : pairs) ex.push_back(data::to_example(pr));
    auto b = data::encode_batch(ex, v, 16, 2);

    auto preds = m.m1_predict(b);
    auto preds2 = m.m1_predict(b);
    REQUIRE(preds.size() == 2);
    for (size_t i = 0; i < preds.size(); i++) {
        CHECK(preds[i].first.token == preds2[i].first.token);
        CHECK(preds[i].second.token == preds2[i].second.token);
        double s1 = 0, s2 = 0;
        for (double x : preds[i].first.probabilities) s1 += x;
        for (double x : preds[i].second.probabilities) s2 += x;
        CHECK(std::fabs(s1 - 1.0) <= 1e-6);
        CHECK(std::fabs(s2 - 1.0) <= 1e-6);
    }
}

TEST_CASE("m2_predict_year: rigged SEP emits nothing; expected step cost is bounded") {
    auto f = M2Fixture::build(6, 24, 6);
    std::mt19937_64 init(5);
    Transformer<float> m(tiny_config(f.vocabs, Mode::M2), init);

    auto normal = m.m2_predict_year(f.batches[0], f.cost_vec);
    const double max_cost = f.table.max_cost();
    for (const auto& y : normal)
        for (double c : y.expected_costs) CHECK(c <= max_cost + 1e-6);

    m.params().find("dec.out.b")->v[data::kTgtSep] = 1000.0f;  // force SEP first
    auto rigged = m.m2_predict_year(f.batches[0], f.cost_vec);
    for (const auto& y : rigged) {
        CHECK(y.tokens.empty());
        CHECK(y.annual_total == doctest::Approx(0.0));
    }
}

TEST_CASE("overfit oracle: single patient m2 reproduces its annual cost within 5%") {
    auto table = toy_table(5);
    auto p = toy_patient("solo", {0, 40, 90, 200, 380, 500, 620, 700}, {1, 2, 3, 2, 4, 1, 5, 2}, table);
    data::Vocabs v = data::build_vocabs({p}, {1, 2, 3, 4, 5});
    auto pair = data::make_m2_pair(p);
    REQUIRE(pair.has_value());
    auto batch = data::encode_batch({data::to_example(*pair)}, v, 16, 8);
    auto cost_vec = losses::cost_vector(v.target_cost, table);

    std::mt19937_64 init(6);
    Transformer<float> m(tiny_config(v, Mode::M2, 16, 8), init);
    TrainOptions<float> opt;
    opt.max_epochs = 300;
    opt.patience = 300;
    opt.lr = 3e-3f;
    opt.seed = 7;
    train_model<float>(m, {batch}, {}, cost_vec, opt);

    auto y = m.m2_predict_year(batch, cost_vec);
    REQUIRE(y.size() == 1);
    const double truth = pair->true_annual_cost;
    CHECK(std::fabs(y[0].annual_total - truth) / truth <= 0.05);

    // the free decode should also reproduce the true cost-type sequence
    std::vector<int> want;
    for (const auto& visit : pair->targets) want.push_back(visit.cost_type);
    std::vector<int> got;
    for (int tok : y[0].tokens) got.push_back(*v.target_cost.type_of(tok));
    CHECK(got == want);
}

TEST_CASE("overfit oracle: m1 greedy two-step decode reproduces its targets") {
    auto table = toy_table(4);
    auto p = toy_patient("solo", {0, 15, 60, 120, 200}, {1, 2, 3, 4, 2}, table);
    data::Vocabs v = data::build_vocabs({p}, {1, 2, 3, 4});
    auto pair = data::make_m1_pair(p);
    REQUIRE(pair.has_value());
    auto batch = data::encode_batch({data::to_example(*pair)}, v, 16, 2);

    std::mt19937_64 init(8);
    Transformer<float> m(tiny_config(v, Mode::M1), init);
    TrainOptions<float> opt;
    opt.max_epochs = 200;
    opt.patience = 200;
    opt.lr = 3e-3f;
    train_model<float>(m, {batch}, {}, {}, opt);

    auto preds = m.m1_predict(batch);
    REQUIRE(preds.size() == 1);
    CHECK(*v.target_cost.type_of(preds[0].first.token) == 4);
    CHECK(*v.target_cost.type_of(preds[0].second.token) == 2);
    CHECK(preds[0].first.probabilities[static_cast<size_t>(preds[0].first.token)] > 0.5);
}

TEST_CASE("training bookkeeping: zero epochs, decreasing loss, seeded determinism") {
    auto f = M2Fixture::build(10, 25);
    std::mt19937_64 init(9);
    Transformer<float> m(tiny_config(f.vocabs, Mode::M2), init);

    auto before = m.params().items[0].value.v;
    TrainOptions<float> none;
    none.max_epochs = 0;
    auto h0 = train_model<float>(m, f.batches, {}, f.cost_vec, none);
    CHECK(h0.epochs.empty());
    CHECK(m.params().items[0].value.v == before);

    auto run = [&](std::uint64_t seed) {
        std::mt19937_64 i2(10);
        Transformer<float> m2(tiny_config(f.vocabs, Mode::M2), i2);
        TrainOptions<float> opt;
        opt.max_epochs = 5;
        opt.lr = 1e-3f;
        opt.seed = seed;
        return train_model<float>(m2, f.batches, {}, f.cost_vec, opt);
    };
    auto h1 = run(3);
    auto h2 = run(3);
    REQUIRE(h1.epochs.size() == 5);
    CHECK(h1.epochs.back().train_loss < h1.epochs.front().train_loss);
    for (size_t e = 0; e < h1.epochs.size(); e++) CHECK(h1.epochs[e].train_loss == h2.epochs[e].train_loss);
}

TEST_CASE("eq.1 consistency: stepwise probabilities equal the teacher-forced sequence probability") {
    auto f = M2Fixture::build(6, 26, 4);
    std::mt19937_64 init(11);
    Transformer<double> m(tiny_config(f.vocabs, Mode::M2), init);

    const auto& batch = f.batches[0];
    auto years = m.m2_predict_year(batch, f.cost_vec);

    for (int r = 0; r < batch.rows(); r++) {
        const auto& y = years[static_cast<size_t>(r)];
        // stepwise log-prob of the greedily decoded sequence (incl. final SEP)
        std::vector<int> seq = y.tokens;
        seq.push_back(data::kTgtSep);

        // replay stepwise via m2's own incremental machinery: rebuild probs
        // from teacher forcing on a single-row batch whose target is seq
        data::EncodedBatch row;
        auto copy_row = [&](const ag::IntTensor& src, ag::IntTensor& dst) {
            dst = ag::IntTensor({1, src.shape[1]});
            for (int c = 0; c < src.shape[1]; c++) dst.at2(0, c) = src.at2(r, c);
        };
        copy_row(batch.day, row.day);
        copy_row(batch.age, row.age);
        copy_row(batch.gender, row.gender);
        copy_row(batch.specialist, row.specialist);
        copy_row(batch.cost, row.cost);
        copy_row(batch.input_mask, row.input_mask);
        const int P = static_cast<int>(seq.size());
        row.target = ag::IntTensor({1, P});
        row.target_mask = ag::IntTensor({1, P}, 1);
        row.cost_mask = ag::IntTensor({1, P}, 0);
        for (int p = 0; p < P; p++) row.target.at2(0, p) = seq[static_cast<size_t>(p)];
        row.true_annual = {0.0};
        row.patient_ids = {batch.patient_ids[static_cast<size_t>(r)]};

        auto probs = m.teacher_forced_probs(row);  // [1, P, V]
        const int V = m.config().target_vocab;
        double teacher_logp = 0;
        for (int p = 0; p < P; p++)
            teacher_logp += std::log(probs.v[static_cast<size_t>(p * V + seq[static_cast<size_t>(p)])]);

        // stepwise replay with explicit prefix decodes
        ag::Tape<double> tape;
        std::mt19937_64 rng(0);
        auto ids = m.bind(tape, false);
        ag::NodeId mem = m.encode(tape, ids, row, false, rng);
        (void)mem;
        double step_logp = 0;
        {
            // grow the prefix one token at a time
            std::vector<std::vector<int>> prefix{{data::kTgtStart}};
            for (int p = 0; p < P; p++) {
                data::EncodedBatch probe = row;
                probe.target = ag::IntTensor({1, p + 1});
                probe.target_mask = ag::IntTensor({1, p + 1}, 1);
                probe.cost_mask = ag::IntTensor({1, p + 1}, 0);
                for (int q = 0; q <= p; q++) probe.target.at2(0, q) = seq[static_cast<size_t>(q)];
                auto pp = m.teacher_forced_probs(probe);
                step_logp += std::log(pp.v[static_cast<size_t>(p * V + seq[static_cast<size_t>(p)])]);
            }
        }
        CHECK(std::fabs(step_logp - teacher_logp) / std::max(1.0, std::fabs(teacher_logp)) <= 1e-6);
    }
}

TEST_CASE("m1 and m2 share encoder parameter shapes for equal configs") {
    auto f = M2Fixture::build(6, 27);
    std::mt19937_64 i1(12), i2(13);
    auto cfg1 = tiny_config(f.vocabs, Mode::M1);
    auto cfg2 = tiny_config(f.vocabs, Mode::M2);
    Transformer<float> m1(cfg1, i1), m2(cfg2, i2);
    auto s1 = m1.encoder_param_shapes();
    auto s2 = m2.encoder_param_shapes();
    REQUIRE(s1.size() == s2.size());
    for (size_t i = 0; i < s1.size(); i++) {
        CHECK(s1[i].first == s2[i].first);
        CHECK(s1[i].second == s2[i].second);
    }
}

TEST_CASE("full m2 loss gradient survives a finite-difference spot check") {
    auto f = M2Fixture::build(4, 28, 4);
    std::mt19937_64 init(14);
    auto cfg = tiny_config(f.vocabs, Mode::M2, 24, 12);
    Transformer<double> m(cfg, init);
    const auto& batch = f.batches[0];

    ag::Tape<double> tape;
    std::mt19937_64 rng(0);
    auto built = m.build_loss(tape, batch, f.cost_vec, false, rng);
    tape.backward(built.loss);

    std::mt19937_64 pick(77);
    for (int probe = 0; probe < 6; probe++) {
        const size_t pi = static_cast<size_t>(ag::uniform_index(pick, static_cast<std::int64_t>(m.params().items.size())));
        auto& tensor = m.params().items[pi].value;
        const size_t vi = static_cast<size_t>(ag::uniform_index(pick, tensor.size()));
        const double autodiff = tape.grad(built.param_ids[pi]).v[vi];

        const double h = 1e-5;
        const double keep = tensor.v[vi];
        auto eval = [&] {
            ag::Tape<double> t2;
            std::mt19937_64 r2(0);
            return t2.val(m.build_loss(t2, batch, f.cost_vec, false, r2).loss).v[0];
        };
        tensor.v[vi] = keep + h;
        const double up = eval();
        tensor.v[vi] = keep - h;
        const double down = eval();
        tensor.v[vi] = keep;
        const double fd = (up - down) / (2 * h);
        CHECK(std::fabs(autodiff - fd) / (std::fabs(autodiff) + 1.0) <= 1e-3);
    }
}

}  // TEST_SUITE
