#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "costpred/encode.hpp"
#include "costpred/optim.hpp"
#include "costpred/tape.hpp"

namespace costpred::model {

template <typename T>
struct TrainOptions {
    int max_epochs = 60;
    T lr = T(1e-4);
    ag::OptimizerKind optimizer = ag::OptimizerKind::Adam;
    int patience = 10;  // epochs without val improvement before stopping
    std::uint64_t seed = 1;
};

struct EpochStats {
    double train_loss = 0;
    double val_loss = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
};

// Row-weighted mean loss over batches, dropout off.
template <typename T, typename Model>
double eval_loss(const Model& model, const std::vector<data::EncodedBatch>& batches,
                 const std::vector<double>& cost_values) {
    double sum = 0;
    long rows = 0;
    std::mt19937_64 rng(0);
    for (const auto& b : batches) {
        ag::Tape<T> tape;
        auto built = model.build_loss(tape, b, cost_values, false, rng);
        sum += static_cast<double>(tape.val(built.loss).v[0]) * b.rows();
        rows += b.rows();
    }
    return rows ? sum / static_cast<double>(rows) : 0.0;
}

// Teacher-forced training with early stopping on validation loss; the
// best-validation parameters are restored before returning.
template <typename T, typename Model>
TrainHistory train_model(Model& model, const std::vector<data::EncodedBatch>& train,
                         const std::vector<data::EncodedBatch>& val, const std::vector<double>& cost_values,
                         const TrainOptions<T>& opt) {
    TrainHistory hist;
    if (opt.max_epochs <= 0 || train.empty()) return hist;

    ag::Optimizer<T> optim(opt.optimizer, opt.lr);
    std::mt19937_64 rng(opt.seed);
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<ag::Tensor<T>> best_snapshot;

    for (int epoch = 0; epoch < opt.max_epochs; epoch++) {
        for (size_t i = order.size() - 1; i > 0; i--)
            std::swap(order[i], order[static_cast<size_t>(ag::uniform_index(rng, static_cast<std::int64_t>(i) + 1))]);

        double train_sum = 0;
        long train_rows = 0;
        for (size_t bi = 0; bi < order.size(); bi++) {
            const auto& batch = train[order[bi]];
            ag::Tape<T> tape;
            auto built = model.build_loss(tape, batch, cost_values, true, rng);
            const double loss = static_cast<double>(tape.val(built.loss).v[0]);
            if (!std::isfinite(loss))
                throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(bi) + " (lr " + std::to_string(static_cast<double>(opt.lr)) + ")");
            train_sum += loss * batch.rows();
            train_rows += batch.rows();
            tape.backward(built.loss);
            std::vector<ag::Tensor<T>> grads;
            grads.reserve(built.param_ids.size());
            for (ag::NodeId id : built.param_ids) grads.push_back(tape.grad(id));
            optim.step(model.params(), grads);
        }

        EpochStats stats;
        stats.train_loss = train_sum / static_cast<double>(train_rows);
        stats.val_loss = val.empty() ? stats.train_loss : eval_loss<T>(model, val, cost_values);
        hist.epochs.push_back(stats);

        if (stats.val_loss < hist.best_val - 1e-12) {
            hist.best_val = stats.val_loss;
            hist.best_epoch = epoch;
            best_snapshot.clear();
            for (const auto& p : model.params().items) best_snapshot.push_back(p.value);
        } else if (epoch - hist.best_epoch >= opt.patience) {
            break;
        }
    }

    if (!best_snapshot.empty())
        for (size_t i = 0; i < best_snapshot.size(); i++) model.params().items[i].value = best_snapshot[i];
    return hist;
}

}  // namespace costpred::model
