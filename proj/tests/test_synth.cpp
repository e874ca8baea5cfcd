#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "costpred/ehr.hpp"
#include "costpred/synth.hpp"

using namespace costpred;
using namespace costpred::synth;

TEST_SUITE("synth") {

TEST_CASE("dropout 1.0 puts every patient in d1") {
    CohortConfig cfg;
    cfg.n_patients = 100;
    cfg.first_year_dropout = 1.0;
    cfg.seed = 3;
    auto split = data::split_cohort(data::group_patients(generate(cfg)));
    CHECK(split.d1.size() == 100);
    CHECK(split.d2.empty());
}

TEST_CASE("dropout 0 with 60-day gaps and 20 visits lands nearly all in d2") {
    CohortConfig cfg;
    cfg.n_patients = 200;
    cfg.first_year_dropout = 0.0;
    cfg.gap_log_mean = std::log(60.0);
    cfg.visits_per_patient = 20;
    cfg.seed = 4;
    auto split = data::split_cohort(data::group_patients(generate(cfg)));
    CHECK(static_cast<double>(split.d2.size()) / 200.0 >= 0.95);
}

TEST_CASE("default config hits the configured dropout fraction over 2000 patients") {
    CohortConfig cfg;
    cfg.n_patients = 2000;
    cfg.seed = 5;
    auto split = data::split_cohort(data::group_patients(generate(cfg)));
    const double d1_frac = static_cast<double>(split.d1.size()) / 2000.0;
    CHECK(d1_frac >= 0.25);
    CHECK(d1_frac <= 0.35);
}

TEST_CASE("default config calibration: d1 mean visits near 10") {
    CohortConfig cfg;
    cfg.n_patients = 2000;
    cfg.seed = 6;
    auto summary = describe(generate(cfg));
    CHECK(summary.mean_visits_d1 >= 8.0);
    CHECK(summary.mean_visits_d1 <= 12.0);
}

TEST_CASE("describe on empty and tiny cohorts") {
    CHECK(describe({}).n_patients == 0);
    CHECK(describe({}).n_visits == 0);

    CohortConfig cfg;
    cfg.n_patients = 1;
    cfg.visits_per_patient = 3;
    cfg.first_year_dropout = 0.0;
    auto summary = describe(generate(cfg));
    CHECK(summary.n_patients == 1);
    CHECK(summary.n_visits == 3);
}

TEST_CASE("same seed gives a byte-identical cohort file") {
    CohortConfig cfg;
    cfg.n_patients = 50;
    cfg.seed = 9;
    auto a = (std::filesystem::temp_directory_path() / "synth_a.csv").string();
    auto b = (std::filesystem::temp_directory_path() / "synth_b.csv").string();
    data::save_visits_csv(a, generate(cfg));
    data::save_visits_csv(b, generate(cfg));
    std::ifstream fa(a), fb(b);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().size() > 100);
}

TEST_CASE("every generated record passes loader validation") {
    CohortConfig cfg;
    cfg.n_patients = 300;
    cfg.seed = 10;
    auto records = generate(cfg);
    auto path = (std::filesystem::temp_directory_path() / "synth_valid.csv").string();
    data::save_visits_csv(path, records);

    data::LoadOptions strict;
    strict.mode = data::VocabMode::Strict;
    strict.cost_table = cost_table_of(cfg);
    auto res = data::load_visits(path, strict);
    CHECK(res.records.size() == records.size());
    // grouping re-checks the day-0 invariant
    auto patients = data::group_patients(res.records);
    CHECK(patients.size() == 300);
    for (const auto& p : patients) CHECK(p.visits.front().diff_dgn == 0);
}

}  // TEST_SUITE
