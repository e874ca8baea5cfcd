#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "costpred/encode.hpp"
#include "costpred/ehr.hpp"

using namespace costpred;
using namespace costpred::data;

namespace {

PatientHistory patient_at_days(const std::string& id, const std::vector<int>& days, int cost_type = 1) {
    PatientHistory p;
    p.patient_id = id;
    for (int d : days) {
        VisitRecord r;
        r.patient_id = id;
        r.diff_dgn = d;
        r.age = 50 + d / 365;
        r.gender = "M";
        r.specialist_type = "spec0";
        r.cost_type = cost_type;
        r.cost_value = 100.0;
        p.visits.push_back(r);
    }
    return p;
}

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << content;
    return path;
}

const char* kHeader = "patient_id,diff_dgn,age,gender,specialist_type,cost_type,cost_value\n";

}  // namespace

TEST_SUITE("ehr") {

TEST_CASE("load_visits accepts a well-formed file") {
    auto path = write_temp("ok.csv", std::string(kHeader) +
                                         "a,0,50,M,spec0,1,100.00\n"
                                         "a,30,50,M,spec0,2,50.00\n"
                                         "b,0,61,F,spec1,1,100.00\n");
    auto res = load_visits(path);
    CHECK(res.records.size() == 3);
    CHECK(res.cost_table.at(1) == 100.0);
    CHECK(res.cost_table.at(2) == 50.0);
}

TEST_CASE("load_visits rejects negative diff_dgn naming the row") {
    auto path = write_temp("neg.csv", std::string(kHeader) + "a,0,50,M,spec0,1,100.00\na,-1,50,M,spec0,1,100.00\n");
    try {
        load_visits(path);
        FAIL("expected error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
        CHECK(std::string(e.what()).find("diff_dgn") != std::string::npos);
    }
}

TEST_CASE("out-of-vocab cost type: strict errors, open extends") {
    auto path = write_temp("vocab.csv", std::string(kHeader) + "a,0,50,M,spec0,7,123.00\n");
    metrics::CostTable declared;
    declared.set(1, 100.0);

    LoadOptions strict;
    strict.mode = VocabMode::Strict;
    strict.cost_table = declared;
    CHECK_THROWS_WITH_AS(load_visits(path, strict), doctest::Contains("outside declared vocabulary"), std::runtime_error);

    LoadOptions open;
    open.mode = VocabMode::Open;
    open.cost_table = declared;
    auto res = load_visits(path, open);
    CHECK(res.cost_table.contains(7));
    CHECK(res.cost_table.at(7) == 123.0);
}

TEST_CASE("cost_value must match the cost table entry") {
    auto path = write_temp("costclash.csv", std::string(kHeader) +
                                                "a,0,50,M,spec0,1,100.00\n"
                                                "b,0,50,M,spec0,1,101.00\n");
    CHECK_THROWS_WITH_AS(load_visits(path), doctest::Contains("disagrees"), std::runtime_error);
}

TEST_CASE("jsonl round trip") {
    std::vector<VisitRecord> recs;
    recs.push_back(patient_at_days("a", {0, 5}).visits[0]);
    recs.push_back(patient_at_days("a", {0, 5}).visits[1]);
    auto path = (std::filesystem::temp_directory_path() / "rt.jsonl").string();
    save_visits_jsonl(path, recs);
    auto res = load_visits(path);
    REQUIRE(res.records.size() == 2);
    CHECK(res.records[1].diff_dgn == 5);
    CHECK(res.records[1].gender == "M");
}

TEST_CASE("group_patients demands a day-0 first visit") {
    VisitRecord r = patient_at_days("a", {10}).visits[0];
    CHECK_THROWS_WITH_AS(group_patients({r}), doctest::Contains("expected 0"), std::runtime_error);
}

TEST_CASE("group_patients keeps same-day input order") {
    auto a = patient_at_days("a", {0}).visits[0];
    auto b = patient_at_days("a", {0}).visits[0];
    a.cost_type = 1;
    b.cost_type = 2;
    b.cost_value = 55;
    auto g = group_patients({a, b});
    REQUIRE(g.size() == 1);
    CHECK(g[0].visits[0].cost_type == 1);
    CHECK(g[0].visits[1].cost_type == 2);
}

TEST_CASE("split_cohort partitions on the 365-day boundary") {
    auto s = split_cohort({patient_at_days("short", {0, 30}),
                           patient_at_days("fig4", {0, 30, 70, 248, 690, 810, 1100, 1140}),
                           patient_at_days("boundary", {0, 365})});
    REQUIRE(s.d1.size() == 1);
    REQUIRE(s.d2.size() == 2);
    CHECK(s.d1[0].patient_id == "short");
    CHECK(s.d2[0].patient_id == "fig4");
    CHECK(s.d2[1].patient_id == "boundary");
}

TEST_CASE("split_cohort vocabularies are the observed sets") {
    auto p1 = patient_at_days("a", {0, 10}, 3);
    auto p2 = patient_at_days("b", {0, 400}, 5);
    auto s = split_cohort({p1, p2});
    CHECK(s.v1 == std::set<int>{3});
    CHECK(s.v2 == std::set<int>{5});
}

TEST_CASE("m1 pairs take the last two visits as targets") {
    auto p = patient_at_days("a", {0, 10, 20, 30, 40});
    p.visits[3].cost_type = 7;
    p.visits[4].cost_type = 9;
    auto pair = make_m1_pair(p);
    REQUIRE(pair.has_value());
    CHECK(pair->inputs.size() == 3);
    CHECK(pair->target_types == std::array<int, 2>{7, 9});

    auto p3 = patient_at_days("b", {0, 10, 20});
    auto pair3 = make_m1_pair(p3);
    REQUIRE(pair3.has_value());
    CHECK(pair3->inputs.size() == 1);
}

TEST_CASE("m1 pair skip is recorded for 2-visit patients") {
    std::vector<SkipEntry> skips;
    auto pairs = make_m1_pairs({patient_at_days("a", {0, 10}), patient_at_days("b", {0, 10, 20})}, skips);
    CHECK(pairs.size() == 1);
    REQUIRE(skips.size() == 1);
    CHECK(skips[0].patient_id == "a");
}

TEST_CASE("m2 pair reproduces the fig-4 worked example") {
    auto p = patient_at_days("fig4", {0, 30, 70, 248, 690, 810, 1100, 1140});
    auto pair = make_m2_pair(p);
    REQUIRE(pair.has_value());
    CHECK(pair->t_in_last == 690);
    CHECK(pair->t_out_first == 810);
    REQUIRE(pair->targets.size() == 3);
    CHECK(pair->targets[0].diff_dgn == 810);
    CHECK(pair->targets[1].diff_dgn == 1100);
    CHECK(pair->targets[2].diff_dgn == 1140);
    CHECK(pair->inputs.size() == 5);
    CHECK(pair->true_annual_cost == doctest::Approx(300.0));
}

TEST_CASE("m2 pair two-visit and three-visit hand cases") {
    auto p = make_m2_pair(patient_at_days("a", {0, 400}));
    REQUIRE(p.has_value());
    CHECK(p->t_in_last == 0);
    CHECK(p->t_out_first == 400);

    auto q = make_m2_pair(patient_at_days("b", {0, 200, 365}));
    REQUIRE(q.has_value());
    CHECK(q->t_in_last == 0);
    CHECK(q->t_out_first == 200);
    CHECK(q->targets.size() == 2);
}

TEST_CASE("m2 pair region invariants on random histories") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 200; rep++) {
        std::vector<int> days{0};
        int d = 0;
        const int n = 2 + static_cast<int>(ag::uniform_index(rng, 12));
        for (int i = 0; i < n; i++) {
            d += 1 + static_cast<int>(ag::uniform_index(rng, 200));
            days.push_back(d);
        }
        auto p = patient_at_days("r", days);
        if (p.t_last() < 365) continue;
        auto pair = make_m2_pair(p);
        REQUIRE(pair.has_value());
        const int cutoff = p.t_last() - 364;
        for (const auto& v : pair->inputs) CHECK(v.diff_dgn < cutoff);
        for (const auto& v : pair->targets) CHECK(v.diff_dgn >= cutoff);
        CHECK(pair->inputs.size() + pair->targets.size() == p.visits.size());
        CHECK(pair->t_in_last < pair->t_out_first);
        double annual = 0;
        for (const auto& v : pair->targets) annual += v.cost_value;
        CHECK(pair->true_annual_cost == doctest::Approx(annual));
    }
}

TEST_CASE("train_val_test_split sizes and determinism") {
    std::vector<PatientHistory> ten;
    for (int i = 0; i < 10; i++) ten.push_back(patient_at_days("p" + std::to_string(i), {0, 10}));
    auto s = train_val_test_split(ten, {0.8, 0.1, 0.1}, 42);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 1);

    auto s2 = train_val_test_split(ten, {0.8, 0.1, 0.1}, 42);
    for (size_t i = 0; i < 8; i++) CHECK(s.train[i].patient_id == s2.train[i].patient_id);

    std::vector<PatientHistory> many;
    for (int i = 0; i < 4885; i++) many.push_back(patient_at_days("q" + std::to_string(i), {0}));
    auto big = train_val_test_split(many, {0.8, 0.1, 0.1}, 7);
    CHECK(big.train.size() >= 3908);
    CHECK(big.train.size() <= 3910);

    CHECK_THROWS_AS(train_val_test_split(ten, {0.5, 0.5, 0.0}, 1), std::runtime_error);
}

}  // TEST_SUITE

TEST_SUITE("encode") {

TEST_CASE("single two-visit input encodes as CLS v1 v2 SEP") {
    auto p = patient_at_days("a", {0, 10});
    p.visits[1].cost_type = 2;
    p.visits[1].cost_value = 50;
    Vocabs v = build_vocabs({p}, {1, 2});
    SeqExample e;
    e.patient_id = "a";
    e.inputs = p.visits;
    e.target_types = {1, 2};
    auto b = encode_batch({e}, v, 16, 8);
    CHECK(b.input_len() == 4);
    CHECK(b.cost.at2(0, 0) == kCls);
    CHECK(b.cost.at2(0, 1) == v.input_cost.id_of(1));
    CHECK(b.cost.at2(0, 2) == v.input_cost.id_of(2));
    CHECK(b.cost.at2(0, 3) == kSep);
    for (int c = 0; c < 4; c++) CHECK(b.input_mask.at2(0, c) == 1);
}

TEST_CASE("batch of lengths 2 and 5 pads to the longer row") {
    auto p2 = patient_at_days("a", {0, 10});
    auto p5 = patient_at_days("b", {0, 1, 2, 3, 4});
    Vocabs v = build_vocabs({p2, p5}, {1});
    SeqExample e1{"a", p2.visits, {1}, false, 0};
    SeqExample e2{"b", p5.visits, {1}, false, 0};
    auto b = encode_batch({e1, e2}, v, 16, 8);
    CHECK(b.input_len() == 7);
    CHECK(b.input_mask.at2(0, 3) == 1);   // SEP of the short row
    CHECK(b.input_mask.at2(0, 4) == 0);   // padding differs between rows
    CHECK(b.input_mask.at2(1, 6) == 1);
    CHECK(b.cost.at2(0, 4) == kPad);
}

TEST_CASE("oldest input visits are truncated, never targets") {
    auto p = patient_at_days("a", {0, 1, 2, 3, 4, 5, 6, 7});
    for (size_t i = 0; i < p.visits.size(); i++) p.visits[i].cost_type = static_cast<int>(i + 1);
    std::set<int> all_types;
    for (int i = 1; i <= 8; i++) all_types.insert(i);
    Vocabs v = build_vocabs({p}, all_types);
    SeqExample e{"a", p.visits, {1}, false, 0};
    int truncated = 0;
    auto b = encode_batch({e}, v, 6, 8, &truncated);
    CHECK(truncated == 4);
    auto kept = decode_input_cost_types(b, 0, v);
    CHECK(kept == std::vector<int>{5, 6, 7, 8});  // most recent survive

    SeqExample too_many{"a", p.visits, {1, 2, 3, 4}, true, 0};
    CHECK_THROWS_WITH_AS(encode_batch({too_many}, v, 16, 3), doctest::Contains("never truncated"), std::runtime_error);
}

TEST_CASE("encode/decode round trip over random fixtures") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 50; rep++) {
        const int n = 1 + static_cast<int>(ag::uniform_index(rng, 10));
        std::vector<int> days{0};
        for (int i = 1; i < n; i++) days.push_back(days.back() + 1 + static_cast<int>(ag::uniform_index(rng, 40)));
        auto p = patient_at_days("r", days);
        std::set<int> types;
        for (auto& visit : p.visits) {
            visit.cost_type = 1 + static_cast<int>(ag::uniform_index(rng, 9));
            types.insert(visit.cost_type);
        }
        std::vector<int> tgt;
        for (int i = 0; i < 3; i++) {
            tgt.push_back(1 + static_cast<int>(ag::uniform_index(rng, 9)));
            types.insert(tgt.back());
        }
        Vocabs v = build_vocabs({p}, types);
        SeqExample e{"r", p.visits, tgt, rep % 2 == 0, 0};
        auto b = encode_batch({e}, v, 32, 8);
        std::vector<int> in_types;
        for (const auto& visit : p.visits) in_types.push_back(visit.cost_type);
        CHECK(decode_input_cost_types(b, 0, v) == in_types);
        CHECK(decode_target_cost_types(b, 0, v) == tgt);
    }
}

TEST_CASE("m2 example supervises SEP but keeps it out of the cost mask") {
    auto p = patient_at_days("a", {0, 400});
    Vocabs v = build_vocabs({p}, {1});
    auto pair = make_m2_pair(p);
    REQUIRE(pair.has_value());
    auto b = encode_batch({to_example(*pair)}, v, 8, 4);
    CHECK(b.target_len() == 2);
    CHECK(b.target.at2(0, 0) == v.target_cost.id_of(1));
    CHECK(b.target.at2(0, 1) == kTgtSep);
    CHECK(b.target_mask.at2(0, 1) == 1);
    CHECK(b.cost_mask.at2(0, 1) == 0);
    CHECK(b.true_annual[0] == doctest::Approx(100.0));
}

}  // TEST_SUITE
