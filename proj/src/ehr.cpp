#include "costpred/ehr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "costpred/tensor.hpp"

namespace costpred::data {

namespace {

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

FileFormat detect_format(const std::string& path, FileFormat requested) {
    if (requested != FileFormat::Auto) return requested;
    if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") return FileFormat::Jsonl;
    return FileFormat::Csv;
}

[[noreturn]] void row_error(const std::string& path, int line_no, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

void validate_record(const VisitRecord& r, const std::string& path, int line_no, const LoadOptions& opts,
                     metrics::CostTable& table, std::set<std::string>& genders, std::set<std::string>& specialists) {
    if (r.diff_dgn < 0) row_error(path, line_no, "negative diff_dgn " + std::to_string(r.diff_dgn));
    if (r.age < 0) row_error(path, line_no, "negative age");
    if (r.cost_type < 1) row_error(path, line_no, "cost_type must be >= 1");
    if (r.cost_value < 0) row_error(path, line_no, "negative cost_value");
    if (r.patient_id.empty()) row_error(path, line_no, "empty patient_id");

    const bool strict = opts.mode == VocabMode::Strict;
    if (!table.contains(r.cost_type)) {
        if (strict) row_error(path, line_no, "cost_type " + std::to_string(r.cost_type) + " outside declared vocabulary");
        table.set(r.cost_type, r.cost_value);
    }
    if (std::fabs(table.at(r.cost_type) - r.cost_value) > 1e-9)
        row_error(path, line_no, "cost_value " + std::to_string(r.cost_value) + " disagrees with cost table entry for type " +
                                     std::to_string(r.cost_type));
    if (genders.find(r.gender) == genders.end()) {
        if (strict && opts.genders) row_error(path, line_no, "gender '" + r.gender + "' outside declared vocabulary");
        genders.insert(r.gender);
    }
    if (specialists.find(r.specialist_type) == specialists.end()) {
        if (strict && opts.specialists) row_error(path, line_no, "specialist_type '" + r.specialist_type + "' outside declared vocabulary");
        specialists.insert(r.specialist_type);
    }
}

}  // namespace

LoadResult load_visits(const std::string& path, const LoadOptions& opts) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    const FileFormat fmt = detect_format(path, opts.format);

    LoadResult result;
    if (opts.cost_table) result.cost_table = *opts.cost_table;
    std::set<std::string> genders = opts.genders.value_or(std::set<std::string>{});
    std::set<std::string> specialists = opts.specialists.value_or(std::set<std::string>{});

    std::string line;
    int line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        line_no++;
        if (line.empty()) continue;
        VisitRecord r;
        if (fmt == FileFormat::Csv) {
            auto fields = split_csv_line(line);
            if (header.empty()) {
                header = fields;
                static const std::vector<std::string> required = {"patient_id", "diff_dgn", "age", "gender",
                                                                  "specialist_type", "cost_type", "cost_value"};
                for (size_t i = 0; i < required.size(); i++)
                    if (i >= header.size() || header[i] != required[i])
                        row_error(path, line_no, "bad header, expected column " + std::to_string(i + 1) + " to be " + required[i]);
                continue;
            }
            if (fields.size() < 7) row_error(path, line_no, "expected 7+ columns, got " + std::to_string(fields.size()));
            try {
                r.patient_id = fields[0];
                r.diff_dgn = std::stoi(fields[1]);
                r.age = std::stoi(fields[2]);
                r.gender = fields[3];
                r.specialist_type = fields[4];
                r.cost_type = std::stoi(fields[5]);
                r.cost_value = std::stod(fields[6]);
                if (fields.size() > 7 && header.size() > 7 && header[7] == "provenance") r.provenance = fields[7];
            } catch (const std::exception&) {
                row_error(path, line_no, "parse error");
            }
        } else {
            json j;
            try {
                j = json::parse(line);
                r.patient_id = j.at("patient_id").get<std::string>();
                r.diff_dgn = j.at("diff_dgn").get<int>();
                r.age = j.at("age").get<int>();
                r.gender = j.at("gender").get<std::string>();
                r.specialist_type = j.at("specialist_type").get<std::string>();
                r.cost_type = j.at("cost_type").get<int>();
                r.cost_value = j.at("cost_value").get<double>();
                if (j.contains("provenance")) r.provenance = j["provenance"].get<std::string>();
            } catch (const json::exception& e) {
                row_error(path, line_no, std::string("parse error: ") + e.what());
            }
        }
        validate_record(r, path, line_no, opts, result.cost_table, genders, specialists);
        result.records.push_back(std::move(r));
    }
    if (fmt == FileFormat::Csv && header.empty()) throw std::runtime_error(path + ": missing header row");
    return result;
}

namespace {

void write_rows(std::ofstream& out, const std::vector<VisitRecord>& records, bool csv, bool with_provenance) {
    char buf[512];
    for (const auto& r : records) {
        if (csv) {
            std::snprintf(buf, sizeof buf, "%s,%d,%d,%s,%s,%d,%.2f", r.patient_id.c_str(), r.diff_dgn, r.age,
                          r.gender.c_str(), r.specialist_type.c_str(), r.cost_type, r.cost_value);
            out << buf;
            if (with_provenance) out << ',' << r.provenance;
            out << '\n';
        } else {
            json j{{"patient_id", r.patient_id}, {"diff_dgn", r.diff_dgn},         {"age", r.age},
                   {"gender", r.gender},         {"specialist_type", r.specialist_type}, {"cost_type", r.cost_type},
                   {"cost_value", r.cost_value}};
            if (with_provenance) j["provenance"] = r.provenance;
            out << j.dump() << '\n';
        }
    }
}

}  // namespace

void save_visits_csv(const std::string& path, const std::vector<VisitRecord>& records, bool with_provenance) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "patient_id,diff_dgn,age,gender,specialist_type,cost_type,cost_value";
    if (with_provenance) out << ",provenance";
    out << '\n';
    write_rows(out, records, true, with_provenance);
}

void save_visits_jsonl(const std::string& path, const std::vector<VisitRecord>& records, bool with_provenance) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_rows(out, records, false, with_provenance);
}

void save_skips_jsonl(const std::string& path, const std::vector<SkipEntry>& skips) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& s : skips) out << nlohmann::json{{"patient_id", s.patient_id}, {"reason", s.reason}}.dump() << '\n';
}

std::vector<PatientHistory> group_patients(const std::vector<VisitRecord>& records) {
    std::vector<PatientHistory> out;
    std::map<std::string, size_t> index;
    for (const auto& r : records) {
        auto [it, inserted] = index.try_emplace(r.patient_id, out.size());
        if (inserted) out.push_back(PatientHistory{r.patient_id, {}});
        out[it->second].visits.push_back(r);
    }
    for (auto& p : out) {
        std::stable_sort(p.visits.begin(), p.visits.end(),
                         [](const VisitRecord& a, const VisitRecord& b) { return a.diff_dgn < b.diff_dgn; });
        if (p.visits.front().diff_dgn != 0)
            throw std::runtime_error("patient " + p.patient_id + ": first visit has diff_dgn " +
                                     std::to_string(p.visits.front().diff_dgn) + ", expected 0");
    }
    return out;
}

std::vector<VisitRecord> flatten(const std::vector<PatientHistory>& patients) {
    std::vector<VisitRecord> out;
    for (const auto& p : patients) out.insert(out.end(), p.visits.begin(), p.visits.end());
    return out;
}

CohortSplit split_cohort(std::vector<PatientHistory> patients) {
    CohortSplit s;
    for (auto& p : patients) {
        auto& dst = p.t_last() < 365 ? s.d1 : s.d2;
        auto& vocab = p.t_last() < 365 ? s.v1 : s.v2;
        for (const auto& v : p.visits) vocab.insert(v.cost_type);
        dst.push_back(std::move(p));
    }
    return s;
}

std::optional<M1Pair> make_m1_pair(const PatientHistory& p, std::vector<SkipEntry>* skips) {
    const int s = p.visit_count();
    if (s < 3) {
        if (skips) skips->push_back({p.patient_id, "fewer than 3 visits, cannot form inputs plus two targets"});
        return std::nullopt;
    }
    M1Pair pair;
    pair.patient_id = p.patient_id;
    pair.inputs.assign(p.visits.begin(), p.visits.end() - 2);
    pair.target_types = {p.visits[static_cast<size_t>(s - 2)].cost_type, p.visits[static_cast<size_t>(s - 1)].cost_type};
    return pair;
}

std::vector<M1Pair> make_m1_pairs(const std::vector<PatientHistory>& patients, std::vector<SkipEntry>& skips) {
    std::vector<M1Pair> out;
    for (const auto& p : patients)
        if (auto pair = make_m1_pair(p, &skips)) out.push_back(std::move(*pair));
    return out;
}

std::optional<M2Pair> make_m2_pair(const PatientHistory& p, std::vector<SkipEntry>* skips) {
    const int t_i = p.t_last();
    const int cutoff = t_i - 364;  // a year is exactly 365 days here
    bool has_input = false;
    for (const auto& v : p.visits)
        if (v.diff_dgn < cutoff) has_input = true;
    if (!has_input) {
        if (skips) skips->push_back({p.patient_id, "no visit before the final-year cutoff"});
        return std::nullopt;
    }
    M2Pair pair;
    pair.patient_id = p.patient_id;
    for (const auto& v : p.visits) {
        if (v.diff_dgn < cutoff) {
            pair.inputs.push_back(v);
            pair.t_in_last = std::max(pair.t_in_last, v.diff_dgn);
        } else {
            if (pair.targets.empty()) pair.t_out_first = v.diff_dgn;
            pair.targets.push_back(v);
            pair.true_annual_cost += v.cost_value;
        }
    }
    return pair;
}

std::vector<M2Pair> make_m2_pairs(const std::vector<PatientHistory>& patients, std::vector<SkipEntry>& skips) {
    std::vector<M2Pair> out;
    for (const auto& p : patients)
        if (auto pair = make_m2_pair(p, &skips)) out.push_back(std::move(*pair));
    return out;
}

TrainValTest train_val_test_split(const std::vector<PatientHistory>& patients,
                                  const std::array<double, 3>& ratios, std::uint64_t seed) {
    if (std::fabs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
        throw std::invalid_argument("train_val_test_split: ratios must sum to 1");
    const auto n = static_cast<std::int64_t>(patients.size());
    std::vector<std::int64_t> order(patients.size());
    for (std::int64_t i = 0; i < n; i++) order[static_cast<size_t>(i)] = i;
    std::mt19937_64 rng(seed);
    for (std::int64_t i = n - 1; i > 0; i--)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(ag::uniform_index(rng, i + 1))]);

    const auto n_train = static_cast<std::int64_t>(std::llround(ratios[0] * static_cast<double>(n)));
    const auto n_val = static_cast<std::int64_t>(std::llround(ratios[1] * static_cast<double>(n)));
    const auto n_test = n - n_train - n_val;
    if (n_train <= 0 || n_val <= 0 || n_test <= 0)
        throw std::runtime_error("train_val_test_split: a split is empty (" + std::to_string(n_train) + "/" +
                                 std::to_string(n_val) + "/" + std::to_string(n_test) + " of " + std::to_string(n) + ")");

    TrainValTest out;
    for (std::int64_t i = 0; i < n; i++) {
        const auto& p = patients[static_cast<size_t>(order[static_cast<size_t>(i)])];
        if (i < n_train)
            out.train.push_back(p);
        else if (i < n_train + n_val)
            out.val.push_back(p);
        else
            out.test.push_back(p);
    }
    return out;
}

}  // namespace costpred::data
