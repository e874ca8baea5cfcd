#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace costpred::metrics {

// cost_type -> euro cost of one visit of that type.
struct CostTable {
    std::map<int, double> entries;

    void set(int cost_type, double value);
    double at(int cost_type) const;
    bool contains(int cost_type) const { return entries.count(cost_type) > 0; }
    double max_cost() const;

    static CostTable load_csv(const std::string& path);
    void save_csv(const std::string& path) const;
};

// One evaluated target visit: a score per class id (higher = more likely)
// and the true class id.
struct RankedVisit {
    std::vector<double> scores;
    int true_label = 0;
};

// Fraction of target visits whose true label is among the H best-scored
// classes. Ties rank the lower class id first. Normalized by the number of
// evaluated visits.
double top_k_accuracy(const std::vector<RankedVisit>& visits, int h);

// Mean over patients of squared (predicted - true) annual cost. This is the
// regression loss evaluated on a whole split.
double annual_l1(const std::vector<double>& predicted_annual, const std::vector<double>& true_annual);

double rmse(double l1);

// 1 - SSR/SST over per-patient annual costs, with the mean baseline taken on
// the evaluated split itself. Undefined when the true costs are all equal.
std::optional<double> r_squared(const std::vector<double>& predicted_annual, const std::vector<double>& true_annual);

// "146815" -> "146,815"
std::string euro_group(long long cents_or_units);

}  // namespace costpred::metrics
