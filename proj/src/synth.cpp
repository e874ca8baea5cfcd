#include "costpred/synth.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "costpred/tensor.hpp"

namespace costpred::synth {

using ag::normal01;
using ag::uniform01;
using ag::uniform_index;
using ag::uniform_range;

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 round over seed ^ golden-ratio-spread stream index
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct Dynamics {
    std::vector<double> cost_table;             // [C], euros
    std::vector<std::vector<double>> trans;     // [C][C]
    std::vector<int> home_specialist;           // [C]
    int n_specialists = 4;
};

// Transitions are peaked on one or two successor types so that next-visit
// prediction is genuinely learnable, as the augmentation premise needs.
Dynamics build_dynamics(const CohortConfig& cfg) {
    const int C = cfg.n_cost_types;
    std::mt19937_64 rng(mix(cfg.markov_seed, 0));
    Dynamics d;
    d.cost_table.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; c++)
        d.cost_table[static_cast<size_t>(c)] = std::round(uniform_range(rng, cfg.cost_min, cfg.cost_max) * 100.0) / 100.0;
    d.trans.assign(static_cast<size_t>(C), std::vector<double>(static_cast<size_t>(C), 0.0));
    for (int c = 0; c < C; c++) {
        auto& row = d.trans[static_cast<size_t>(c)];
        const int first = (c + 1) % C;
        const int second = (c + 1 + static_cast<int>(uniform_index(rng, C - 1))) % C;
        for (int j = 0; j < C; j++) row[static_cast<size_t>(j)] = 0.25 / C;
        row[static_cast<size_t>(first)] += 0.55;
        row[static_cast<size_t>(second)] += 0.20;
        double s = 0;
        for (double x : row) s += x;
        for (auto& x : row) x /= s;
    }
    d.home_specialist.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; c++) d.home_specialist[static_cast<size_t>(c)] = static_cast<int>(uniform_index(rng, d.n_specialists));
    return d;
}

int sample_categorical(const std::vector<double>& p, std::mt19937_64& rng) {
    double u = uniform01(rng);
    for (size_t i = 0; i < p.size(); i++) {
        u -= p[i];
        if (u <= 0) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

}  // namespace

void CohortConfig::validate() const {
    if (n_patients < 1) throw std::invalid_argument("synth: n_patients must be >= 1");
    if (first_year_dropout < 0 || first_year_dropout > 1) throw std::invalid_argument("synth: dropout must be in [0,1]");
    if (n_cost_types < 2) throw std::invalid_argument("synth: need at least 2 cost types");
    if (gap_log_sigma <= 0 || cost_min < 0 || cost_max < cost_min) throw std::invalid_argument("synth: bad distribution params");
    if (visits_per_patient < 1 || age_min < 0 || age_max < age_min) throw std::invalid_argument("synth: bad config");
    if (male_fraction < 0 || male_fraction > 1) throw std::invalid_argument("synth: male_fraction must be in [0,1]");
}

metrics::CostTable cost_table_of(const CohortConfig& config) {
    config.validate();
    const Dynamics d = build_dynamics(config);
    metrics::CostTable t;
    for (int c = 0; c < config.n_cost_types; c++) t.set(c + 1, d.cost_table[static_cast<size_t>(c)]);
    return t;
}

std::vector<data::VisitRecord> generate(const CohortConfig& config) {
    config.validate();
    const Dynamics dyn = build_dynamics(config);
    const int C = config.n_cost_types;

    std::vector<data::VisitRecord> out;
    out.reserve(static_cast<size_t>(config.n_patients) * static_cast<size_t>(config.visits_per_patient));
    for (int pi = 0; pi < config.n_patients; pi++) {
        std::mt19937_64 rng(mix(config.seed, static_cast<std::uint64_t>(pi) + 1));
        const bool male = uniform01(rng) < config.male_fraction;
        const int age0 = config.age_min + static_cast<int>(uniform_index(rng, config.age_max - config.age_min + 1));
        const bool drops_out = uniform01(rng) < config.first_year_dropout;
        const int truncation_day = drops_out ? 180 + static_cast<int>(uniform_index(rng, 365 - 180)) : -1;

        int day = 0;
        int cost_type = 1;  // every history opens with the diagnostic visit type
        char pid[32];
        std::snprintf(pid, sizeof pid, "p%06d", pi);
        for (int k = 0; k < config.visits_per_patient; k++) {
            if (k > 0) {
                const int prev_day = day;
                const double gap = std::exp(normal01(rng) * config.gap_log_sigma + config.gap_log_mean);
                day += std::max(1, static_cast<int>(std::llround(gap)));
                if (truncation_day >= 0 && day > truncation_day) break;
                // annual control visit when a new follow-up year starts
                if (day / 365 > prev_day / 365 && uniform01(rng) < 0.9) {
                    cost_type = 2 > C ? 1 : 2;
                } else {
                    const int shift = male ? 0 : 1;
                    const int base = sample_categorical(dyn.trans[static_cast<size_t>(cost_type - 1)], rng);
                    cost_type = 1 + (base + shift) % C;
                }
            }
            data::VisitRecord r;
            r.patient_id = pid;
            r.diff_dgn = day;
            r.age = age0 + day / 365;
            r.gender = male ? "M" : "F";
            r.specialist_type = "spec" + std::to_string(dyn.home_specialist[static_cast<size_t>(cost_type - 1)]);
            r.cost_type = cost_type;
            r.cost_value = dyn.cost_table[static_cast<size_t>(cost_type - 1)];
            out.push_back(std::move(r));
        }
    }
    return out;
}

CohortSummary describe(const std::vector<data::VisitRecord>& records) {
    CohortSummary s;
    if (records.empty()) return s;
    auto patients = data::group_patients(records);
    s.n_patients = static_cast<int>(patients.size());
    s.n_visits = static_cast<long>(records.size());
    std::vector<int> followups;
    long d1_visits = 0, d2_visits = 0;
    for (const auto& p : patients) {
        followups.push_back(p.t_last());
        if (p.t_last() < 365) {
            s.n_d1++;
            d1_visits += p.visit_count();
        } else {
            s.n_d2++;
            d2_visits += p.visit_count();
        }
    }
    if (s.n_d1) s.mean_visits_d1 = static_cast<double>(d1_visits) / s.n_d1;
    if (s.n_d2) s.mean_visits_d2 = static_cast<double>(d2_visits) / s.n_d2;
    std::sort(followups.begin(), followups.end());
    s.followup_min = followups.front();
    s.followup_median = followups[followups.size() / 2];
    s.followup_max = followups.back();
    for (const auto& r : records) s.cost_type_histogram[r.cost_type]++;
    return s;
}

}  // namespace costpred::synth
