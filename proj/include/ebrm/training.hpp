#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "ebrm/encoder.hpp"
#include "ebrm/metrics.hpp"
#include "ebrm/optim.hpp"

namespace ebrm {

struct TrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    OptimizerOptions optimizer;
    std::uint64_t seed = 1;
    /// > 0 replaces the hard max with tau * logsumexp(s / tau) in the loss.
    double smoothing_tau = 0.0;
    /// Loss charged to an empty-bag pair whose label contradicts the policy.
    double empty_bag_loss_cap = 20.0;
    /// Optional JSONL sink: one object per epoch.
    std::ostream* log = nullptr;
};

nlohmann::json to_json(const TrainOptions& o);
/// Reads the keys of to_json(); missing keys keep their defaults.
TrainOptions train_options_from_json(const nlohmann::json& j);

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    std::optional<MetricsReport> dev;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 0 means the initial parameters were kept
    double best_dev_macro_f1 = -1.0;
    std::size_t capped_pairs = 0;  // empty-bag pairs charged the capped loss, per epoch
};

/// Per-example loss: accumulates d(loss)/d(params) into `grad` when non-null
/// and sets `*capped` when the example hit the empty-bag cap.
using ExampleLoss = std::function<double(std::size_t index, const ScorerParams&, Gradients* grad,
                                         bool* capped)>;
using DevEvaluator = std::function<MetricsReport(const ScorerParams&)>;

/// Seeded mini-batch descent on the mean loss. With a dev evaluator, the
/// epoch with the best dev macro-F1 wins (later epochs win ties); without
/// one the final parameters are returned. Throws NonFiniteError on
/// divergence.
ScorerParams fit(ScorerParams params, const EncoderConfig& cfg, std::size_t num_examples,
                 const ExampleLoss& loss, const DevEvaluator& dev, const TrainOptions& options,
                 TrainReport* report = nullptr);

/// log(1 + exp(x)) without overflow.
double softplus(double x);
double sigmoid(double x);

}  // namespace ebrm
