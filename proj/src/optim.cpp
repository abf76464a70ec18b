#include "ebrm/optim.hpp"

#include <cmath>

#include "ebrm/core.hpp"

namespace ebrm {

using nlohmann::json;

json to_json(const OptimizerOptions& o) {
    return json{{"kind", o.kind == OptimizerOptions::Kind::adam ? "adam" : "sgd_momentum"},
                {"learning_rate", o.learning_rate},
                {"momentum", o.momentum},
                {"beta1", o.beta1},
                {"beta2", o.beta2},
                {"epsilon", o.epsilon}};
}

OptimizerOptions optimizer_options_from_json(const json& j) {
    OptimizerOptions o;
    const std::string kind = j.value("kind", std::string("sgd_momentum"));
    if (kind == "adam") o.kind = OptimizerOptions::Kind::adam;
    else if (kind == "sgd_momentum" || kind == "sgd") o.kind = OptimizerOptions::Kind::sgd_momentum;
    else throw ValidationError("unknown optimizer '" + kind + "'");
    o.learning_rate = j.value("learning_rate", o.learning_rate);
    o.momentum = j.value("momentum", o.momentum);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.epsilon = j.value("epsilon", o.epsilon);
    return o;
}

Optimizer::Optimizer(const OptimizerOptions& options, const EncoderConfig& cfg) : options_(options) {
    cfg.validate();
    if (!(options.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
}

void Optimizer::update(std::span<double> param, std::span<const double> grad, State& s) {
    const double lr = options_.learning_rate;
    if (s.m.empty()) s.m.assign(param.size(), 0.0);
    if (options_.kind == OptimizerOptions::Kind::sgd_momentum) {
        for (std::size_t i = 0; i < param.size(); ++i) {
            s.m[i] = options_.momentum * s.m[i] + grad[i];
            param[i] -= lr * s.m[i];
        }
        return;
    }
    if (s.v.empty()) s.v.assign(param.size(), 0.0);
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        s.m[i] = options_.beta1 * s.m[i] + (1.0 - options_.beta1) * grad[i];
        s.v[i] = options_.beta2 * s.v[i] + (1.0 - options_.beta2) * grad[i] * grad[i];
        param[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + options_.epsilon);
    }
}

void Optimizer::update_rows(Matrix& table,
                            const std::unordered_map<std::uint32_t, std::vector<double>>& rows,
                            std::unordered_map<std::uint32_t, State>& state) {
    for (const auto& [bucket, g] : rows) update(table.row(bucket), g, state[bucket]);
}

void Optimizer::step(ScorerParams& p, const Gradients& g) {
    ++steps_;
    update_rows(p.embedding, g.embedding, embedding_state_);
    update_rows(p.cross_embedding, g.cross_embedding, cross_state_);
    update(p.segment.data, g.segment.data, segment_);
    update(p.mlp_w1.data, g.mlp_w1.data, w1_);
    update(p.mlp_b1, g.mlp_b1, b1_);
    update(p.mlp_w2, g.mlp_w2, w2_);
    update(std::span<double>(&p.mlp_b2, 1), std::span<const double>(&g.mlp_b2, 1), b2_);
    update(p.biaffine_w.data, g.biaffine_w.data, biaffine_w_);
    update(std::span<double>(&p.biaffine_b, 1), std::span<const double>(&g.biaffine_b, 1),
           biaffine_b_);
}

}  // namespace ebrm
