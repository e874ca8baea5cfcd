#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "costpred/metrics.hpp"

namespace costpred::data {

// One visit event. cost_value is always the cost-table entry for cost_type.
struct VisitRecord {
    std::string patient_id;
    int diff_dgn = 0;  // days since first OSA diagnosis; first visit is day 0
    int age = 0;
    std::string gender;
    std::string specialist_type;
    int cost_type = 0;
    double cost_value = 0;
    std::string provenance = "original";  // original | injected | replaced
};

struct PatientHistory {
    std::string patient_id;
    std::vector<VisitRecord> visits;  // sorted by diff_dgn, input order preserved on ties

    int t_last() const { return visits.empty() ? 0 : visits.back().diff_dgn; }
    int visit_count() const { return static_cast<int>(visits.size()); }
};

// Follow-up under a year trains the augmenter; at least a year feeds the
// cost predictor. Day 365 exactly goes to d2 so the final-year window is
// always well defined.
struct CohortSplit {
    std::vector<PatientHistory> d1;
    std::vector<PatientHistory> d2;
    std::set<int> v1;  // cost types observed anywhere in d1
    std::set<int> v2;  // cost types observed anywhere in d2
};

// Inputs end at the last realized day before t_i - 364; targets start at the
// first realized day inside the final-year window.
struct M2Pair {
    std::string patient_id;
    std::vector<VisitRecord> inputs;
    std::vector<VisitRecord> targets;
    int t_in_last = 0;    // t'
    int t_out_first = 0;  // t''
    double true_annual_cost = 0;
};

// Inputs are visits 1..s-2; targets are the cost types of the last two.
struct M1Pair {
    std::string patient_id;
    std::vector<VisitRecord> inputs;
    std::array<int, 2> target_types{};
};

struct SkipEntry {
    std::string patient_id;
    std::string reason;
};

enum class FileFormat { Auto, Csv, Jsonl };
enum class VocabMode { Open, Strict };

struct LoadOptions {
    FileFormat format = FileFormat::Auto;
    VocabMode mode = VocabMode::Open;
    // Declared vocabularies for strict mode. Unset means derive from data.
    std::optional<metrics::CostTable> cost_table;
    std::optional<std::set<std::string>> genders;
    std::optional<std::set<std::string>> specialists;
};

struct LoadResult {
    std::vector<VisitRecord> records;
    metrics::CostTable cost_table;  // declared table extended per mode
};

LoadResult load_visits(const std::string& path, const LoadOptions& opts = {});
void save_visits_csv(const std::string& path, const std::vector<VisitRecord>& records, bool with_provenance = false);
void save_visits_jsonl(const std::string& path, const std::vector<VisitRecord>& records, bool with_provenance = false);
void save_skips_jsonl(const std::string& path, const std::vector<SkipEntry>& skips);

// Stable grouping by patient id (order of first appearance), visits sorted
// by diff_dgn with input order kept on same-day ties. Validates that each
// patient starts at day 0.
std::vector<PatientHistory> group_patients(const std::vector<VisitRecord>& records);

std::vector<VisitRecord> flatten(const std::vector<PatientHistory>& patients);

CohortSplit split_cohort(std::vector<PatientHistory> patients);

std::optional<M1Pair> make_m1_pair(const PatientHistory& p, std::vector<SkipEntry>* skips = nullptr);
std::vector<M1Pair> make_m1_pairs(const std::vector<PatientHistory>& patients, std::vector<SkipEntry>& skips);

std::optional<M2Pair> make_m2_pair(const PatientHistory& p, std::vector<SkipEntry>* skips = nullptr);
std::vector<M2Pair> make_m2_pairs(const std::vector<PatientHistory>& patients, std::vector<SkipEntry>& skips);

struct TrainValTest {
    std::vector<PatientHistory> train, val, test;
};

// Seed-deterministic patient-level split; ratios must sum to 1.
TrainValTest train_val_test_split(const std::vector<PatientHistory>& patients,
                                  const std::array<double, 3>& ratios, std::uint64_t seed);

}  // namespace costpred::data
