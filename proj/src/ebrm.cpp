#include "ebrm/ebrm.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ebrm {

using nlohmann::json;

EbrmModel EbrmModel::create(const EncoderConfig& cfg) {
    return EbrmModel{ScorerParams::initialize(cfg), cfg, EmptyBagPolicy::irrelevant};
}

EbrmModel EbrmModel::zeros(const EncoderConfig& cfg) {
    return EbrmModel{ScorerParams::zeros(cfg), cfg, EmptyBagPolicy::irrelevant};
}

void save_model(const EbrmModel& m, const std::filesystem::path& path) {
    json header{{"kind", "ebrm"},
                {"empty_bag_policy",
                 m.empty_bag_policy == EmptyBagPolicy::irrelevant ? "irrelevant" : "relevant"}};
    save_checkpoint(path, std::move(header), m.config, m.params);
}

EbrmModel load_model(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    const std::string kind = ck.header.value("kind", std::string());
    if (kind != "ebrm") {
        throw CheckpointError("checkpoint '" + path.string() + "' holds model kind '" + kind +
                              "', expected 'ebrm'");
    }
    EbrmModel m{std::move(ck.params), ck.config, EmptyBagPolicy::irrelevant};
    if (ck.header.value("empty_bag_policy", std::string("irrelevant")) == "relevant") {
        m.empty_bag_policy = EmptyBagPolicy::relevant;
    }
    return m;
}

namespace {

double raw_qe_score(const ScorerParams& p, const EncoderConfig& cfg, std::string_view query,
                    std::string_view entity) {
    return score_mlp(encode_joint(query, entity, p, cfg), p);
}

QIPrediction aggregate(std::vector<QEScore> scores) {
    QIPrediction out;
    std::stable_sort(scores.begin(), scores.end(),
                     [](const QEScore& a, const QEScore& b) { return a.score > b.score; });
    out.rationale = std::move(scores);
    if (!out.rationale.empty()) {
        out.score = out.rationale.front().score;
        out.argmax_entity = out.rationale.front().entity;
    }
    out.probability = sigmoid(out.score);
    out.label = out.score >= 0.0 ? 1 : 0;
    return out;
}

QIPrediction empty_prediction(EmptyBagPolicy policy) {
    QIPrediction out;
    out.score = policy == EmptyBagPolicy::irrelevant ? kNegativeSentinel : kPositiveSentinel;
    out.probability = sigmoid(out.score);
    out.label = out.score >= 0.0 ? 1 : 0;
    return out;
}

}  // namespace

QEScore score_qe(const EbrmModel& m, const Query& q, const Entity& e) {
    if (e.etype != EntityType::ProductType) {
        throw ValidationError("score_qe expects a ProductType entity, got '" + e.text + "' (" +
                              std::string(to_string(e.etype)) + ")");
    }
    const double s = raw_qe_score(m.params, m.config, q.text, e.text);
    return QEScore{e, s, sigmoid(s)};
}

QIPrediction predict_qi(const EbrmModel& m, const Query& q, const EntityBag& bag) {
    if (bag.empty()) return empty_prediction(m.empty_bag_policy);
    std::vector<QEScore> scores;
    scores.reserve(bag.size());
    for (const auto& e : bag) scores.push_back(score_qe(m, q, e));
    return aggregate(std::move(scores));
}

QIPrediction predict_general(const EbrmModel& m, const Query& q, const EntityBag& query_bag,
                             const EntityBag& typed_item_bag) {
    std::map<EntityType, bool> query_types;
    for (const auto& e : query_bag) query_types[e.etype] = true;
    if (query_types.empty()) return predict_qi(m, q, product_entities(typed_item_bag));

    QIPrediction out;
    std::vector<QEScore> all_scores;
    double conjunction = kPositiveSentinel;
    std::optional<Entity> bottleneck;
    bool first_conjunct = true;
    for (const auto& [type, present] : query_types) {
        double disjunction = kNegativeSentinel;
        std::optional<Entity> best;
        for (const auto& e : typed_item_bag) {
            if (e.etype != type) continue;
            const double s = raw_qe_score(m.params, m.config, q.text, e.text);
            all_scores.push_back(QEScore{e, s, sigmoid(s)});
            if (!best || s > disjunction) {
                best = e;
                disjunction = s;
            }
        }
        if (first_conjunct || disjunction < conjunction) {
            conjunction = disjunction;
            bottleneck = best;
            first_conjunct = false;
        }
    }
    std::stable_sort(all_scores.begin(), all_scores.end(),
                     [](const QEScore& a, const QEScore& b) { return a.score > b.score; });
    out.rationale = std::move(all_scores);
    out.score = conjunction;
    out.probability = sigmoid(conjunction);
    out.label = conjunction >= 0.0 ? 1 : 0;
    out.argmax_entity = std::isfinite(conjunction) ? bottleneck : std::nullopt;
    return out;
}

double accumulate_qi_loss(const ScorerParams& p, const EncoderConfig& cfg, EmptyBagPolicy policy,
                          const QIPair& pair, const EntityBag& bag, const TrainOptions& options,
                          Gradients* grad, bool* capped) {
    if (!pair.label) throw ValidationError("qi_loss requires a labeled pair");
    const int y = *pair.label;
    if (capped) *capped = false;
    if (bag.empty()) {
        const int implied = policy == EmptyBagPolicy::irrelevant ? 0 : 1;
        if (y == implied) return 0.0;
        if (capped) *capped = true;
        return options.empty_bag_loss_cap;
    }

    std::vector<JointTrace> joints;
    std::vector<MlpTrace> heads;
    joints.reserve(bag.size());
    heads.reserve(bag.size());
    std::size_t argmax = 0;
    for (std::size_t i = 0; i < bag.size(); ++i) {
        joints.push_back(trace_joint(pair.query.text, bag[i].text, p, cfg));
        heads.push_back(trace_mlp(joints.back().output, p));
        if (heads[i].score > heads[argmax].score) argmax = i;
    }

    std::vector<double> weights(bag.size(), 0.0);
    double aggregate_score = heads[argmax].score;
    if (options.smoothing_tau > 0.0) {
        const double tau = options.smoothing_tau;
        double sum = 0.0;
        for (std::size_t i = 0; i < bag.size(); ++i) {
            weights[i] = std::exp((heads[i].score - aggregate_score) / tau);
            sum += weights[i];
        }
        for (double& w : weights) w /= sum;
        aggregate_score += tau * std::log(sum);
    } else {
        weights[argmax] = 1.0;
    }

    // -log P(y | S) with P(y=1) = sigmoid(S).
    const double loss = y == 1 ? softplus(-aggregate_score) : softplus(aggregate_score);
    if (!grad) return loss;
    const double d_score = sigmoid(aggregate_score) - (y == 1 ? 1.0 : 0.0);
    std::vector<double> d_h(cfg.embed_dim);
    for (std::size_t i = 0; i < bag.size(); ++i) {
        if (weights[i] == 0.0) continue;
        std::fill(d_h.begin(), d_h.end(), 0.0);
        backprop_mlp(joints[i].output, heads[i], d_score * weights[i], p, *grad, d_h);
        backprop_joint(joints[i], d_h, p, *grad);
    }
    return loss;
}

QILoss qi_loss(const EbrmModel& m, const QIPair& pair, const EntityBag& bag,
               const TrainOptions& options) {
    QILoss out{0.0, Gradients(m.config), false};
    out.loss = accumulate_qi_loss(m.params, m.config, m.empty_bag_policy, pair, bag, options,
                                  &out.gradients, &out.capped);
    return out;
}

TaggedQIDataset tag_dataset(const QIDataset& data, const Gazetteer& gazetteer) {
    TaggedQIDataset out{data, {}};
    out.bags.reserve(data.pairs.size());
    for (const auto& pair : data.pairs) {
        out.bags.push_back(product_entities(tag(pair.item.title, gazetteer)));
    }
    return out;
}

MetricsReport evaluate_model(const EbrmModel& m, const TaggedQIDataset& data) {
    std::vector<int> preds, golds;
    preds.reserve(data.size());
    golds.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& pair = data.data.pairs[i];
        if (!pair.label) throw ValidationError("evaluation requires labeled pairs");
        preds.push_back(predict_qi(m, pair.query, data.bags[i]).label);
        golds.push_back(*pair.label);
    }
    return evaluate(preds, golds);
}

TrainOutcome train(const EbrmModel& init, const TaggedQIDataset& train_set,
                   const TaggedQIDataset& dev_set, const TrainOptions& options) {
    if (train_set.bags.size() != train_set.data.pairs.size()) {
        throw ValidationError("training pairs must be tagged before training");
    }
    for (const auto& pair : train_set.data.pairs) {
        if (!pair.label) throw ValidationError("training pairs must be labeled");
    }
    const ExampleLoss loss = [&](std::size_t i, const ScorerParams& p, Gradients* g, bool* capped) {
        return accumulate_qi_loss(p, init.config, init.empty_bag_policy, train_set.data.pairs[i],
                                  train_set.bags[i], options, g, capped);
    };
    DevEvaluator dev;
    if (!dev_set.data.empty()) {
        dev = [&](const ScorerParams& p) {
            return evaluate_model(EbrmModel{p, init.config, init.empty_bag_policy}, dev_set);
        };
    }
    TrainOutcome out{init, {}};
    out.model.params =
        fit(init.params, init.config, train_set.size(), loss, dev, options, &out.report);
    return out;
}

TrainOutcome pretrain_qe(const EbrmModel& init, const QEDataset& qe, const TrainOptions& options) {
    for (const auto& pair : qe.pairs) {
        if (!pair.label) throw ValidationError("QE pretraining requires labeled pairs");
    }
    const auto& cfg = init.config;
    const ExampleLoss loss = [&](std::size_t i, const ScorerParams& p, Gradients* g, bool*) {
        const auto& pair = qe.pairs[i];
        const JointTrace joint = trace_joint(pair.query.text, pair.entity.text, p, cfg);
        const MlpTrace head = trace_mlp(joint.output, p);
        const int y = *pair.label;
        const double l = y == 1 ? softplus(-head.score) : softplus(head.score);
        if (g) {
            std::vector<double> d_h(cfg.embed_dim, 0.0);
            backprop_mlp(joint.output, head, sigmoid(head.score) - y, p, *g, d_h);
            backprop_joint(joint, d_h, p, *g);
        }
        return l;
    };
    TrainOutcome out{init, {}};
    out.model.params = fit(init.params, cfg, qe.pairs.size(), loss, {}, options, &out.report);
    return out;
}

EbrmModel init_from_cross(const EbrmModel& m, const ScorerParams& cross_params,
                          const EncoderConfig& cross_config) {
    if (!(cross_config == m.config)) {
        throw ValidationError("cross-encoder config does not match the model config");
    }
    if (!cross_params.shape_matches(m.config)) {
        throw ValidationError("cross-encoder parameters do not match the model config");
    }
    EbrmModel out = m;
    out.params = cross_params;
    return out;
}

}  // namespace ebrm
