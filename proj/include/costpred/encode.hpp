#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "costpred/ehr.hpp"
#include "costpred/tensor.hpp"

namespace costpred::data {

// Shared special token ids. Every encoder-side stream reserves the same
// four; target vocabularies reserve the first three.
constexpr int kPad = 0;
constexpr int kCls = 1;
constexpr int kSep = 2;
constexpr int kUnk = 3;
constexpr int kEncSpecials = 4;

constexpr int kTgtPad = 0;
constexpr int kTgtStart = 1;
constexpr int kTgtSep = 2;
constexpr int kTgtSpecials = 3;

// diff_dgn bins: 0, 1-7, 8-30, 31-90, 91-180, 181-365, 366-730, 731+
int day_bucket(int diff_dgn);
constexpr int kDayBuckets = 8;

// 5-year age bins, capped at 100+
int age_bucket(int age);
constexpr int kAgeBuckets = 21;

struct CategoricalVocab {
    std::vector<std::string> values;  // sorted
    std::map<std::string, int> to_id;

    static CategoricalVocab build(const std::set<std::string>& seen);
    int id_of(const std::string& v) const;  // kUnk when absent
    int size() const { return static_cast<int>(values.size()) + kEncSpecials; }
};

struct CostVocab {
    std::vector<int> types;  // sorted
    std::map<int, int> to_id;

    static CostVocab build(const std::set<int>& seen);
    int id_of(int cost_type) const;  // kUnk when absent
    int size() const { return static_cast<int>(types.size()) + kEncSpecials; }
};

struct TargetVocab {
    std::vector<int> types;  // sorted
    std::map<int, int> to_id;

    static TargetVocab build(const std::set<int>& seen);
    int id_of(int cost_type) const;                // throws when absent
    std::optional<int> type_of(int token) const;   // nullopt for specials
    int size() const { return static_cast<int>(types.size()) + kTgtSpecials; }
};

struct Vocabs {
    CategoricalVocab gender, specialist;
    CostVocab input_cost;
    TargetVocab target_cost;
};

// Encoder-side vocabularies come from the whole loaded cohort; the target
// vocabulary is the cost-type set of the cohort the decoder predicts for.
Vocabs build_vocabs(const std::vector<PatientHistory>& input_side, const std::set<int>& target_types);

// One padded minibatch. Input rows are [CLS] v1..vk [SEP] [PAD]...;
// masks are 1 exactly on non-PAD positions.
struct EncodedBatch {
    ag::IntTensor day, age, gender, specialist, cost;  // [B, L]
    ag::IntTensor input_mask;                          // [B, L]
    ag::IntTensor target;                              // [B, P]
    ag::IntTensor target_mask;                         // [B, P] supervised positions
    ag::IntTensor cost_mask;                           // [B, P] positions holding a real cost type
    std::vector<double> true_annual;                   // [B]
    std::vector<std::string> patient_ids;              // [B]

    int rows() const { return day.shape.empty() ? 0 : day.shape[0]; }
    int input_len() const { return day.shape.empty() ? 0 : day.shape[1]; }
    int target_len() const { return target.shape.empty() ? 0 : target.shape[1]; }
};

// Common shape for M1 and M2 examples before tokenization.
struct SeqExample {
    std::string patient_id;
    std::vector<VisitRecord> inputs;
    std::vector<int> target_types;
    bool append_sep = false;  // supervise the stop token (M2)
    double true_annual = 0;
};

SeqExample to_example(const M1Pair& p);
SeqExample to_example(const M2Pair& p);

struct BatchOptions {
    int batch_size = 64;
    int max_input_len = 96;   // includes [CLS]/[SEP]
    int max_target_len = 64;  // includes the [SEP] supervision slot
    bool length_sorted = true;
};

// Oldest input visits beyond max_input_len are dropped and counted in
// *truncated; overlong targets are an error.
EncodedBatch encode_batch(const std::vector<SeqExample>& examples, const Vocabs& vocabs,
                          int max_input_len, int max_target_len, int* truncated = nullptr);

std::vector<EncodedBatch> make_batches(std::vector<SeqExample> examples, const Vocabs& vocabs,
                                       const BatchOptions& opts, int* truncated = nullptr);

// Round-trip helpers: the unpadded cost-type sequences of one row.
std::vector<int> decode_input_cost_types(const EncodedBatch& batch, int row, const Vocabs& vocabs);
std::vector<int> decode_target_cost_types(const EncodedBatch& batch, int row, const Vocabs& vocabs);

}  // namespace costpred::data
