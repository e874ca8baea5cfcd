#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "costpred/ehr.hpp"

namespace costpred::synth {

// Stand-in for the hospital registry: visit times follow a log-normal gap
// process, cost types a per-patient Markov chain with an annual control
// visit, and roughly the configured share of patients discontinue treatment
// within the first year.
struct CohortConfig {
    int n_patients = 2000;
    double gap_log_mean = std::log(28.0);  // log-normal of inter-visit gap, days
    double gap_log_sigma = 0.55;
    double first_year_dropout = 0.30;
    int visits_per_patient = 20;  // before any dropout truncation
    int n_cost_types = 12;
    std::uint64_t markov_seed = 17;  // shapes transitions and the cost table
    double cost_min = 20.0;
    double cost_max = 400.0;
    double male_fraction = 0.6;
    int age_min = 30;
    int age_max = 75;
    std::uint64_t seed = 1;

    void validate() const;
};

struct CohortSummary {
    int n_patients = 0;
    long n_visits = 0;
    int n_d1 = 0, n_d2 = 0;
    double mean_visits_d1 = 0, mean_visits_d2 = 0;
    int followup_min = 0, followup_median = 0, followup_max = 0;
    std::map<int, long> cost_type_histogram;
};

std::vector<data::VisitRecord> generate(const CohortConfig& config);

metrics::CostTable cost_table_of(const CohortConfig& config);

CohortSummary describe(const std::vector<data::VisitRecord>& records);

}  // namespace costpred::synth
