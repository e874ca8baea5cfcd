#include "costpred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace costpred::metrics {

void CostTable::set(int cost_type, double value) {
    if (value < 0) throw std::invalid_argument("cost table: negative cost for type " + std::to_string(cost_type));
    entries[cost_type] = value;
}

double CostTable::at(int cost_type) const {
    auto it = entries.find(cost_type);
    if (it == entries.end()) throw std::out_of_range("cost table: unknown cost type " + std::to_string(cost_type));
    return it->second;
}

double CostTable::max_cost() const {
    double m = 0;
    for (const auto& [k, v] : entries) m = std::max(m, v);
    return m;
}

CostTable CostTable::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cost table: cannot open " + path);
    CostTable t;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty()) continue;
        if (line_no == 1 && line.find("cost_type") != std::string::npos) continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b))
            throw std::runtime_error("cost table: bad row at line " + std::to_string(line_no));
        t.set(std::stoi(a), std::stod(b));
    }
    return t;
}

void CostTable::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cost table: cannot write " + path);
    out << "cost_type,cost_value\n";
    char buf[64];
    for (const auto& [k, v] : entries) {
        std::snprintf(buf, sizeof buf, "%d,%.2f\n", k, v);
        out << buf;
    }
}

double top_k_accuracy(const std::vector<RankedVisit>& visits, int h) {
    if (visits.empty()) throw std::invalid_argument("top_k_accuracy: empty target set");
    if (h < 1) throw std::invalid_argument("top_k_accuracy: H must be >= 1");
    long hits = 0;
    for (const auto& visit : visits) {
        const auto& s = visit.scores;
        const int t = visit.true_label;
        if (t < 0 || t >= static_cast<int>(s.size())) throw std::out_of_range("top_k_accuracy: true label out of range");
        // rank of the true label = number of classes strictly better, where
        // "better" is higher score or equal score with lower id
        int better = 0;
        for (int c = 0; c < static_cast<int>(s.size()); c++) {
            if (c == t) continue;
            if (s[static_cast<size_t>(c)] > s[static_cast<size_t>(t)] ||
                (s[static_cast<size_t>(c)] == s[static_cast<size_t>(t)] && c < t))
                better++;
        }
        if (better < h) hits++;
    }
    return static_cast<double>(hits) / static_cast<double>(visits.size());
}

double annual_l1(const std::vector<double>& predicted_annual, const std::vector<double>& true_annual) {
    if (predicted_annual.size() != true_annual.size() || predicted_annual.empty())
        throw std::invalid_argument("annual_l1: size mismatch or empty");
    double s = 0;
    for (size_t i = 0; i < predicted_annual.size(); i++) {
        const double d = predicted_annual[i] - true_annual[i];
        s += d * d;
    }
    return s / static_cast<double>(predicted_annual.size());
}

double rmse(double l1) {
    if (l1 < 0) throw std::invalid_argument("rmse: negative L1");
    return std::sqrt(l1);
}

std::optional<double> r_squared(const std::vector<double>& predicted_annual, const std::vector<double>& true_annual) {
    if (predicted_annual.size() != true_annual.size() || true_annual.size() < 2)
        throw std::invalid_argument("r_squared: need >= 2 patients");
    double mean = 0;
    for (double c : true_annual) mean += c;
    mean /= static_cast<double>(true_annual.size());
    double ssr = 0, sst = 0;
    for (size_t i = 0; i < true_annual.size(); i++) {
        const double r = predicted_annual[i] - true_annual[i];
        const double b = mean - true_annual[i];
        ssr += r * r;
        sst += b * b;
    }
    if (sst == 0) return std::nullopt;
    return 1.0 - ssr / sst;
}

std::string euro_group(long long units) {
    const bool neg = units < 0;
    std::string digits = std::to_string(neg ? -units : units);
    std::string out;
    int count = 0;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (count && count % 3 == 0) out.push_back(',');
        out.push_back(*it);
        count++;
    }
    if (neg) out.push_back('-');
    std::reverse(out.begin(), out.end());
    return out;
}

}  // namespace costpred::metrics
