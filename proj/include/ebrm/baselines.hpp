#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "ebrm/core.hpp"
#include "ebrm/ebrm.hpp"
#include "ebrm/encoder.hpp"
#include "ebrm/ner.hpp"
#include "ebrm/training.hpp"

namespace ebrm {

enum class BaselineKind { qirm_bi, qirm_cross, qesrm_bi, qesrm_cross, ner_pure, ner_kb };

std::string_view to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(std::string_view name);
bool is_neural(BaselineKind kind);
bool is_bi(BaselineKind kind);

struct BaselineModel {
    BaselineKind kind = BaselineKind::qirm_bi;
    std::optional<ScorerParams> params;  // present iff the kind is neural
    EncoderConfig config;
    std::optional<KnowledgeBase> kb;
    std::set<Relation> relations;

    static BaselineModel create(BaselineKind kind, const EncoderConfig& cfg);
    static BaselineModel ner(BaselineKind kind, std::optional<KnowledgeBase> kb = std::nullopt,
                             std::set<Relation> relations = {});
};

void save_baseline(const BaselineModel& m, const std::filesystem::path& path);
BaselineModel load_baseline(const std::filesystem::path& path);

struct BaselinePrediction {
    double score = 0.0;
    int label = 0;
};

/// Item-side text: the title for QIRM, the item's product-type entity texts
/// joined by single spaces (bag order) for QEsRM.
std::string item_side_text(BaselineKind kind, const Item& item, const EntityBag& product_bag);

/// Independent encodings, biaffine score, label [score >= 0].
BaselinePrediction predict_bi(const BaselineModel& m, const Query& q, const Item& item,
                              const EntityBag& product_bag = {});
/// Same scoring from precomputed query/item vectors.
BaselinePrediction predict_bi_cached(const BaselineModel& m, std::span<const double> query_vec,
                                     std::span<const double> item_vec);
/// Joint encoding of query and item side, MLP score, label [score >= 0].
BaselinePrediction predict_cross(const BaselineModel& m, const Query& q, const Item& item,
                                 const EntityBag& product_bag = {});
/// 1 iff the query's (optionally KB-expanded) product-type entities share a
/// surface text with the item's; 1 when the query has no product type.
int predict_ner(const BaselineModel& m, const Query& q, const Item& item, const Gazetteer& g);

/// Dispatches on kind.
BaselinePrediction predict_baseline(const BaselineModel& m, const Query& q, const Item& item,
                                    const EntityBag& product_bag, const Gazetteer& g);

MetricsReport evaluate_baseline(const BaselineModel& m, const TaggedQIDataset& data,
                                const Gazetteer& g);

struct BaselineTrainOutcome {
    BaselineModel model;
    TrainReport pretrain_report;
    TrainReport report;
};

/// NLL training on the baseline's own scoring path. When `pretrain` is
/// given (mined QI pseudo-labels, already tagged), a first stage fits it
/// with `pretrain_options` before fine-tuning on `train_set`.
BaselineTrainOutcome train_baseline(const BaselineModel& init, const TaggedQIDataset& train_set,
                                    const TaggedQIDataset& dev_set, const Gazetteer& g,
                                    const TrainOptions& options,
                                    const TaggedQIDataset* pretrain = nullptr,
                                    const TrainOptions* pretrain_options = nullptr);

/// Loss of one labeled pair on the baseline's path, accumulating into `grad`.
double accumulate_baseline_loss(const BaselineModel& m, const ScorerParams& p, const QIPair& pair,
                                const EntityBag& product_bag, Gradients* grad);

}  // namespace ebrm
