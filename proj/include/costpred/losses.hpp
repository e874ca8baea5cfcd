#pragma once

#include <vector>

#include "costpred/encode.hpp"
#include "costpred/metrics.hpp"
#include "costpred/tape.hpp"

namespace costpred::losses {

// Euro cost per target-vocab token id; special tokens cost nothing.
inline std::vector<double> cost_vector(const data::TargetVocab& vocab, const metrics::CostTable& table) {
    std::vector<double> e(static_cast<size_t>(vocab.size()), 0.0);
    for (size_t i = 0; i < vocab.types.size(); i++)
        e[i + data::kTgtSpecials] = table.at(vocab.types[i]);
    return e;
}

// Mean over the batch of the squared difference between the expected annual
// cost (sum over unmasked positions of sum_c p_c * e_c) and the true annual
// cost. probs is [B,P,V] and must already be row-normalized.
template <typename T>
ag::NodeId regression_loss_l1(ag::Tape<T>& tape, ag::NodeId probs, const std::vector<double>& cost_values,
                              const std::vector<double>& true_annual, const ag::IntTensor& cost_mask) {
    const ag::Shape& s = tape.shape(probs);
    if (s.size() != 3) throw std::invalid_argument("regression_loss_l1: probs must be [B,P,V]");
    const int B = s[0], P = s[1], V = s[2];
    if (static_cast<int>(cost_values.size()) != V) throw std::invalid_argument("regression_loss_l1: cost vector size mismatch");
    if (cost_mask.shape != ag::Shape{B, P} || static_cast<int>(true_annual.size()) != B)
        throw std::invalid_argument("regression_loss_l1: mask/true-cost shape mismatch");

    ag::Tensor<T> e({V, 1});
    for (int i = 0; i < V; i++) e.v[static_cast<size_t>(i)] = static_cast<T>(cost_values[static_cast<size_t>(i)]);
    ag::Tensor<T> mask_t({B, P});
    for (std::int64_t i = 0; i < cost_mask.size(); i++) mask_t.v[static_cast<size_t>(i)] = static_cast<T>(cost_mask.v[static_cast<size_t>(i)]);
    ag::Tensor<T> truth({B});
    for (int i = 0; i < B; i++) truth.v[static_cast<size_t>(i)] = static_cast<T>(true_annual[static_cast<size_t>(i)]);

    ag::NodeId per_visit = tape.reshape(tape.matmul(probs, tape.input(e)), {B, P});
    ag::NodeId masked = tape.mul(per_visit, tape.input(mask_t));
    ag::NodeId annual = tape.sum_axis(masked, 1);                    // [B]
    ag::NodeId err = tape.sub(annual, tape.input(truth));
    return tape.mean_all(tape.square(err));
}

// Eq. 3 normalization delegated to the tape op: mean over patients of the
// mean over each patient's visits.
template <typename T>
ag::NodeId multilabel_loss_l2(ag::Tape<T>& tape, ag::NodeId logits_bpv, const ag::IntTensor& targets,
                              const ag::IntTensor& mask) {
    ag::NodeId bvp = tape.permute(logits_bpv, {0, 2, 1});  // [B,V,P] class axis in the middle
    return tape.cross_entropy_logits(bvp, targets, mask);
}

template <typename T>
ag::NodeId combined_loss(ag::Tape<T>& tape, ag::NodeId l1, ag::NodeId l2, T eps = T(1e-12)) {
    return tape.add(tape.log10_clamped(l1, eps), l2);
}

}  // namespace costpred::losses
