#include "costpred/encode.hpp"

#include <algorithm>
#include <stdexcept>

namespace costpred::data {

int day_bucket(int diff_dgn) {
    if (diff_dgn <= 0) return 0;
    if (diff_dgn <= 7) return 1;
    if (diff_dgn <= 30) return 2;
    if (diff_dgn <= 90) return 3;
    if (diff_dgn <= 180) return 4;
    if (diff_dgn <= 365) return 5;
    if (diff_dgn <= 730) return 6;
    return 7;
}

int age_bucket(int age) { return std::min(age / 5, kAgeBuckets - 1); }

CategoricalVocab CategoricalVocab::build(const std::set<std::string>& seen) {
    CategoricalVocab v;
    v.values.assign(seen.begin(), seen.end());
    for (size_t i = 0; i < v.values.size(); i++) v.to_id[v.values[i]] = static_cast<int>(i) + kEncSpecials;
    return v;
}

int CategoricalVocab::id_of(const std::string& value) const {
    auto it = to_id.find(value);
    return it == to_id.end() ? kUnk : it->second;
}

CostVocab CostVocab::build(const std::set<int>& seen) {
    CostVocab v;
    v.types.assign(seen.begin(), seen.end());
    for (size_t i = 0; i < v.types.size(); i++) v.to_id[v.types[i]] = static_cast<int>(i) + kEncSpecials;
    return v;
}

int CostVocab::id_of(int cost_type) const {
    auto it = to_id.find(cost_type);
    return it == to_id.end() ? kUnk : it->second;
}

TargetVocab TargetVocab::build(const std::set<int>& seen) {
    TargetVocab v;
    v.types.assign(seen.begin(), seen.end());
    for (size_t i = 0; i < v.types.size(); i++) v.to_id[v.types[i]] = static_cast<int>(i) + kTgtSpecials;
    return v;
}

int TargetVocab::id_of(int cost_type) const {
    auto it = to_id.find(cost_type);
    if (it == to_id.end()) throw std::out_of_range("target vocabulary has no cost type " + std::to_string(cost_type));
    return it->second;
}

std::optional<int> TargetVocab::type_of(int token) const {
    if (token < kTgtSpecials) return std::nullopt;
    const size_t i = static_cast<size_t>(token - kTgtSpecials);
    if (i >= types.size()) throw std::out_of_range("target token " + std::to_string(token) + " out of vocabulary");
    return types[i];
}

Vocabs build_vocabs(const std::vector<PatientHistory>& input_side, const std::set<int>& target_types) {
    std::set<std::string> genders, specialists;
    std::set<int> costs;
    for (const auto& p : input_side)
        for (const auto& v : p.visits) {
            genders.insert(v.gender);
            specialists.insert(v.specialist_type);
            costs.insert(v.cost_type);
        }
    Vocabs v;
    v.gender = CategoricalVocab::build(genders);
    v.specialist = CategoricalVocab::build(specialists);
    v.input_cost = CostVocab::build(costs);
    v.target_cost = TargetVocab::build(target_types);
    return v;
}

SeqExample to_example(const M1Pair& p) {
    SeqExample e;
    e.patient_id = p.patient_id;
    e.inputs = p.inputs;
    e.target_types = {p.target_types[0], p.target_types[1]};
    e.append_sep = false;
    return e;
}

SeqExample to_example(const M2Pair& p) {
    SeqExample e;
    e.patient_id = p.patient_id;
    e.inputs = p.inputs;
    for (const auto& v : p.targets) e.target_types.push_back(v.cost_type);
    e.append_sep = true;
    e.true_annual = p.true_annual_cost;
    return e;
}

EncodedBatch encode_batch(const std::vector<SeqExample>& examples, const Vocabs& vocabs,
                          int max_input_len, int max_target_len, int* truncated) {
    if (examples.empty()) throw std::invalid_argument("encode_batch: empty batch");
    if (max_input_len < 3) throw std::invalid_argument("encode_batch: max_input_len too small");
    const int B = static_cast<int>(examples.size());

    int L = 0, P = 0;
    for (const auto& e : examples) {
        const int kept = std::min(static_cast<int>(e.inputs.size()), max_input_len - 2);
        L = std::max(L, kept + 2);
        const int tgt = static_cast<int>(e.target_types.size()) + (e.append_sep ? 1 : 0);
        if (tgt > max_target_len)
            throw std::runtime_error("encode_batch: patient " + e.patient_id + " has " + std::to_string(tgt) +
                                     " target slots, limit " + std::to_string(max_target_len) +
                                     " (targets are never truncated)");
        P = std::max(P, tgt);
    }

    EncodedBatch b;
    b.day = ag::IntTensor({B, L}, kPad);
    b.age = ag::IntTensor({B, L}, kPad);
    b.gender = ag::IntTensor({B, L}, kPad);
    b.specialist = ag::IntTensor({B, L}, kPad);
    b.cost = ag::IntTensor({B, L}, kPad);
    b.input_mask = ag::IntTensor({B, L}, 0);
    b.target = ag::IntTensor({B, P}, kTgtPad);
    b.target_mask = ag::IntTensor({B, P}, 0);
    b.cost_mask = ag::IntTensor({B, P}, 0);
    b.true_annual.resize(static_cast<size_t>(B), 0.0);

    auto set_all = [&](int row, int col, int day_id, int age_id, int gender_id, int specialist_id, int cost_id) {
        b.day.at2(row, col) = day_id;
        b.age.at2(row, col) = age_id;
        b.gender.at2(row, col) = gender_id;
        b.specialist.at2(row, col) = specialist_id;
        b.cost.at2(row, col) = cost_id;
    };

    for (int r = 0; r < B; r++) {
        const auto& e = examples[static_cast<size_t>(r)];
        b.patient_ids.push_back(e.patient_id);
        b.true_annual[static_cast<size_t>(r)] = e.true_annual;

        const int n = static_cast<int>(e.inputs.size());
        const int kept = std::min(n, max_input_len - 2);
        if (truncated && kept < n) *truncated += n - kept;

        set_all(r, 0, kCls, kCls, kCls, kCls, kCls);
        b.input_mask.at2(r, 0) = 1;
        for (int i = 0; i < kept; i++) {
            const VisitRecord& v = e.inputs[static_cast<size_t>(n - kept + i)];
            set_all(r, i + 1, day_bucket(v.diff_dgn) + kEncSpecials, age_bucket(v.age) + kEncSpecials,
                    vocabs.gender.id_of(v.gender), vocabs.specialist.id_of(v.specialist_type),
                    vocabs.input_cost.id_of(v.cost_type));
            b.input_mask.at2(r, i + 1) = 1;
        }
        set_all(r, kept + 1, kSep, kSep, kSep, kSep, kSep);
        b.input_mask.at2(r, kept + 1) = 1;

        int p = 0;
        for (int t : e.target_types) {
            b.target.at2(r, p) = vocabs.target_cost.id_of(t);
            b.target_mask.at2(r, p) = 1;
            b.cost_mask.at2(r, p) = 1;
            p++;
        }
        if (e.append_sep) {
            b.target.at2(r, p) = kTgtSep;
            b.target_mask.at2(r, p) = 1;
        }
    }
    return b;
}

std::vector<EncodedBatch> make_batches(std::vector<SeqExample> examples, const Vocabs& vocabs,
                                       const BatchOptions& opts, int* truncated) {
    if (opts.length_sorted) {
        std::stable_sort(examples.begin(), examples.end(),
                         [](const SeqExample& a, const SeqExample& b) { return a.inputs.size() < b.inputs.size(); });
    }
    std::vector<EncodedBatch> out;
    for (size_t i = 0; i < examples.size(); i += static_cast<size_t>(opts.batch_size)) {
        const size_t j = std::min(examples.size(), i + static_cast<size_t>(opts.batch_size));
        std::vector<SeqExample> chunk(examples.begin() + static_cast<std::ptrdiff_t>(i),
                                      examples.begin() + static_cast<std::ptrdiff_t>(j));
        out.push_back(encode_batch(chunk, vocabs, opts.max_input_len, opts.max_target_len, truncated));
    }
    return out;
}

std::vector<int> decode_input_cost_types(const EncodedBatch& batch, int row, const Vocabs& vocabs) {
    std::vector<int> out;
    for (int c = 0; c < batch.input_len(); c++) {
        const int tok = batch.cost.at2(row, c);
        if (tok < kEncSpecials) continue;
        out.push_back(vocabs.input_cost.types.at(static_cast<size_t>(tok - kEncSpecials)));
    }
    return out;
}

std::vector<int> decode_target_cost_types(const EncodedBatch& batch, int row, const Vocabs& vocabs) {
    std::vector<int> out;
    for (int c = 0; c < batch.target_len(); c++) {
        if (!batch.cost_mask.at2(row, c)) continue;
        if (auto t = vocabs.target_cost.type_of(batch.target.at2(row, c))) out.push_back(*t);
    }
    return out;
}

}  // namespace costpred::data
