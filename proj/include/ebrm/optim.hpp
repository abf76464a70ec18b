#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ebrm/encoder.hpp"

namespace ebrm {

struct OptimizerOptions {
    enum class Kind { sgd_momentum, adam };
    Kind kind = Kind::sgd_momentum;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

nlohmann::json to_json(const OptimizerOptions& o);
OptimizerOptions optimizer_options_from_json(const nlohmann::json& j);

/// Applies gradients to ScorerParams. Embedding rows keep optimizer state
/// lazily: a row's state only advances on steps where the row has a
/// gradient, so a step costs time proportional to the rows touched.
class Optimizer {
public:
    Optimizer(const OptimizerOptions& options, const EncoderConfig& cfg);

    void step(ScorerParams& params, const Gradients& grad);

private:
    struct State {
        std::vector<double> m;
        std::vector<double> v;
    };

    void update(std::span<double> param, std::span<const double> grad, State& state);
    void update_rows(Matrix& table, const std::unordered_map<std::uint32_t, std::vector<double>>& rows,
                     std::unordered_map<std::uint32_t, State>& state);

    OptimizerOptions options_;
    std::uint64_t steps_ = 0;
    std::unordered_map<std::uint32_t, State> embedding_state_;
    std::unordered_map<std::uint32_t, State> cross_state_;
    State segment_, w1_, b1_, w2_, b2_, biaffine_w_, biaffine_b_;
};

}  // namespace ebrm
