#include "ebrm/baselines.hpp"

namespace ebrm {

using nlohmann::json;

std::string_view to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::qirm_bi: return "qirm_bi";
        case BaselineKind::qirm_cross: return "qirm_cross";
        case BaselineKind::qesrm_bi: return "qesrm_bi";
        case BaselineKind::qesrm_cross: return "qesrm_cross";
        case BaselineKind::ner_pure: return "ner_pure";
        case BaselineKind::ner_kb: return "ner_kb";
    }
    return "qirm_bi";
}

BaselineKind parse_baseline_kind(std::string_view name) {
    for (auto k : {BaselineKind::qirm_bi, BaselineKind::qirm_cross, BaselineKind::qesrm_bi,
                   BaselineKind::qesrm_cross, BaselineKind::ner_pure, BaselineKind::ner_kb}) {
        if (to_string(k) == name) return k;
    }
    throw ValidationError("unknown baseline kind '" + std::string(name) + "'");
}

bool is_neural(BaselineKind kind) {
    return kind != BaselineKind::ner_pure && kind != BaselineKind::ner_kb;
}

bool is_bi(BaselineKind kind) {
    return kind == BaselineKind::qirm_bi || kind == BaselineKind::qesrm_bi;
}

BaselineModel BaselineModel::create(BaselineKind kind, const EncoderConfig& cfg) {
    if (!is_neural(kind)) throw ValidationError("use BaselineModel::ner for NER baselines");
    return BaselineModel{kind, ScorerParams::initialize(cfg), cfg, std::nullopt, {}};
}

BaselineModel BaselineModel::ner(BaselineKind kind, std::optional<KnowledgeBase> kb,
                                 std::set<Relation> relations) {
    if (is_neural(kind)) throw ValidationError("BaselineModel::ner needs an NER kind");
    return BaselineModel{kind, std::nullopt, EncoderConfig{}, std::move(kb), std::move(relations)};
}

void save_baseline(const BaselineModel& m, const std::filesystem::path& path) {
    if (!m.params) throw ValidationError("only neural baselines have checkpoints");
    save_checkpoint(path, json{{"kind", std::string(to_string(m.kind))}}, m.config, *m.params);
}

BaselineModel load_baseline(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    const BaselineKind kind = parse_baseline_kind(ck.header.value("kind", std::string()));
    if (!is_neural(kind)) throw CheckpointError("checkpoint kind is not a neural baseline");
    return BaselineModel{kind, std::move(ck.params), ck.config, std::nullopt, {}};
}

std::string item_side_text(BaselineKind kind, const Item& item, const EntityBag& product_bag) {
    if (kind == BaselineKind::qirm_bi || kind == BaselineKind::qirm_cross) return item.title;
    std::string text;
    for (const auto& e : product_bag) {
        if (!text.empty()) text += ' ';
        text += e.text;
    }
    return text;
}

namespace {

const ScorerParams& neural_params(const BaselineModel& m) {
    if (!m.params) throw ValidationError("baseline has no parameters");
    return *m.params;
}

}  // namespace

BaselinePrediction predict_bi(const BaselineModel& m, const Query& q, const Item& item,
                              const EntityBag& product_bag) {
    if (!is_bi(m.kind)) throw ValidationError("predict_bi called on " + std::string(to_string(m.kind)));
    const auto& p = neural_params(m);
    const auto hq = encode_single(q.text, 0, p, m.config);
    const auto hi = encode_single(item_side_text(m.kind, item, product_bag), 1, p, m.config);
    return predict_bi_cached(m, hq, hi);
}

BaselinePrediction predict_bi_cached(const BaselineModel& m, std::span<const double> query_vec,
                                     std::span<const double> item_vec) {
    const double s = score_biaffine(query_vec, item_vec, neural_params(m));
    return {s, s >= 0.0 ? 1 : 0};
}

BaselinePrediction predict_cross(const BaselineModel& m, const Query& q, const Item& item,
                                 const EntityBag& product_bag) {
    if (m.kind != BaselineKind::qirm_cross && m.kind != BaselineKind::qesrm_cross) {
        throw ValidationError("predict_cross called on " + std::string(to_string(m.kind)));
    }
    const auto& p = neural_params(m);
    const double s =
        score_mlp(encode_joint(q.text, item_side_text(m.kind, item, product_bag), p, m.config), p);
    return {s, s >= 0.0 ? 1 : 0};
}

int predict_ner(const BaselineModel& m, const Query& q, const Item& item, const Gazetteer& g) {
    if (is_neural(m.kind)) throw ValidationError("predict_ner called on a neural baseline");
    EntityBag query_bag = product_entities(tag(q.text, g));
    if (query_bag.empty()) return 1;
    if (m.kind == BaselineKind::ner_kb && m.kb && !m.relations.empty()) {
        query_bag = expand(query_bag, *m.kb, m.relations);
    }
    const EntityBag item_bag = product_entities(tag(item.title, g));
    for (const auto& e : item_bag) {
        if (query_bag.contains_text(e.text)) return 1;
    }
    return 0;
}

BaselinePrediction predict_baseline(const BaselineModel& m, const Query& q, const Item& item,
                                    const EntityBag& product_bag, const Gazetteer& g) {
    if (!is_neural(m.kind)) {
        const int label = predict_ner(m, q, item, g);
        return {label ? 1.0 : -1.0, label};
    }
    return is_bi(m.kind) ? predict_bi(m, q, item, product_bag) : predict_cross(m, q, item, product_bag);
}

MetricsReport evaluate_baseline(const BaselineModel& m, const TaggedQIDataset& data,
                                const Gazetteer& g) {
    std::vector<int> preds, golds;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& pair = data.data.pairs[i];
        if (!pair.label) throw ValidationError("evaluation requires labeled pairs");
        preds.push_back(predict_baseline(m, pair.query, pair.item, data.bags[i], g).label);
        golds.push_back(*pair.label);
    }
    return evaluate(preds, golds);
}

double accumulate_baseline_loss(const BaselineModel& m, const ScorerParams& p, const QIPair& pair,
                                const EntityBag& product_bag, Gradients* grad) {
    if (!pair.label) throw ValidationError("baseline loss requires a labeled pair");
    const int y = *pair.label;
    const std::string side = item_side_text(m.kind, pair.item, product_bag);
    const auto& cfg = m.config;
    if (is_bi(m.kind)) {
        const SingleTrace tq = trace_single(pair.query.text, 0, p, cfg);
        const SingleTrace ti = trace_single(side, 1, p, cfg);
        const double s = score_biaffine(tq.output, ti.output, p);
        const double l = y == 1 ? softplus(-s) : softplus(s);
        if (grad) {
            std::vector<double> d_hq(cfg.embed_dim, 0.0), d_hi(cfg.embed_dim, 0.0);
            backprop_biaffine(tq.output, ti.output, sigmoid(s) - y, p, *grad, d_hq, d_hi);
            backprop_single(tq, d_hq, p, *grad);
            backprop_single(ti, d_hi, p, *grad);
        }
        return l;
    }
    const JointTrace joint = trace_joint(pair.query.text, side, p, cfg);
    const MlpTrace head = trace_mlp(joint.output, p);
    const double l = y == 1 ? softplus(-head.score) : softplus(head.score);
    if (grad) {
        std::vector<double> d_h(cfg.embed_dim, 0.0);
        backprop_mlp(joint.output, head, sigmoid(head.score) - y, p, *grad, d_h);
        backprop_joint(joint, d_h, p, *grad);
    }
    return l;
}

BaselineTrainOutcome train_baseline(const BaselineModel& init, const TaggedQIDataset& train_set,
                                    const TaggedQIDataset& dev_set, const Gazetteer& g,
                                    const TrainOptions& options, const TaggedQIDataset* pretrain,
                                    const TrainOptions* pretrain_options) {
    if (!is_neural(init.kind)) throw ValidationError("NER baselines are not trainable");
    BaselineTrainOutcome out{init, {}, {}};
    const auto run = [&](const TaggedQIDataset& data, const TaggedQIDataset* dev,
                         const TrainOptions& opts, TrainReport& report) {
        const ExampleLoss loss = [&](std::size_t i, const ScorerParams& p, Gradients* grad, bool*) {
            return accumulate_baseline_loss(out.model, p, data.data.pairs[i], data.bags[i], grad);
        };
        DevEvaluator dev_eval;
        if (dev && !dev->data.empty()) {
            dev_eval = [&](const ScorerParams& p) {
                BaselineModel probe = out.model;
                probe.params = p;
                return evaluate_baseline(probe, *dev, g);
            };
        }
        out.model.params = fit(*out.model.params, out.model.config, data.size(), loss, dev_eval,
                               opts, &report);
    };
    if (pretrain) run(*pretrain, nullptr, pretrain_options ? *pretrain_options : options, out.pretrain_report);
    run(train_set, &dev_set, options, out.report);
    return out;
}

}  // namespace ebrm
