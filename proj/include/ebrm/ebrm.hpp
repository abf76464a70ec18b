#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "ebrm/core.hpp"
#include "ebrm/encoder.hpp"
#include "ebrm/ner.hpp"
#include "ebrm/training.hpp"

namespace ebrm {

enum class EmptyBagPolicy { irrelevant, relevant };

/// Entity-based relevance model: a cross-encoder scores every
/// (query, product-type entity) pair and the item score is the max of
/// those, i.e. a Zadeh disjunction over the item's entities.
struct EbrmModel {
    ScorerParams params;
    EncoderConfig config;
    EmptyBagPolicy empty_bag_policy = EmptyBagPolicy::irrelevant;

    static EbrmModel create(const EncoderConfig& cfg);
    static EbrmModel zeros(const EncoderConfig& cfg);
};

void save_model(const EbrmModel& m, const std::filesystem::path& path);
/// Throws CheckpointError when the checkpoint holds a different model kind.
EbrmModel load_model(const std::filesystem::path& path);

inline constexpr double kNegativeSentinel = -std::numeric_limits<double>::infinity();
inline constexpr double kPositiveSentinel = std::numeric_limits<double>::infinity();

struct QEScore {
    Entity entity;
    double score = 0.0;
    double probability = 0.5;
};

struct QIPrediction {
    double score = kNegativeSentinel;
    double probability = 0.0;
    int label = 0;
    std::vector<QEScore> rationale;  // score descending, ties by bag order
    std::optional<Entity> argmax_entity;
};

/// Rejects non-ProductType entities with ValidationError.
QEScore score_qe(const EbrmModel& m, const Query& q, const Entity& e);

/// `bag` is expected to be product_entities() of the item's tags.
QIPrediction predict_qi(const EbrmModel& m, const Query& q, const EntityBag& bag);

/// Conjunction over the query's entity types of the disjunction over the
/// item's entities of that type. A query type absent from the item forces
/// the sentinel score. Without typed query entities this is predict_qi on
/// the item's product-type entities.
QIPrediction predict_general(const EbrmModel& m, const Query& q, const EntityBag& query_bag,
                             const EntityBag& typed_item_bag);

struct QILoss {
    double loss = 0.0;
    Gradients gradients;
    bool capped = false;  // empty bag whose label contradicts the policy
};

/// Negative log-likelihood of the pair's label under P(y=1) = sigmoid(max S).
/// The gradient flows through the lowest-index argmax entity only, unless
/// options.smoothing_tau > 0.
QILoss qi_loss(const EbrmModel& m, const QIPair& pair, const EntityBag& bag,
               const TrainOptions& options = {});

/// Same as qi_loss but accumulates into `grad` (may be null).
double accumulate_qi_loss(const ScorerParams& p, const EncoderConfig& cfg, EmptyBagPolicy policy,
                          const QIPair& pair, const EntityBag& bag, const TrainOptions& options,
                          Gradients* grad, bool* capped);

/// QI pairs with their items tagged and filtered to product-type entities.
struct TaggedQIDataset {
    QIDataset data;
    std::vector<EntityBag> bags;

    std::size_t size() const { return data.pairs.size(); }
};

TaggedQIDataset tag_dataset(const QIDataset& data, const Gazetteer& gazetteer);

MetricsReport evaluate_model(const EbrmModel& m, const TaggedQIDataset& data);

struct TrainOutcome {
    EbrmModel model;
    TrainReport report;
};

/// Trains on labeled QI pairs; the dev split picks the returned epoch.
TrainOutcome train(const EbrmModel& init, const TaggedQIDataset& train_set,
                   const TaggedQIDataset& dev_set, const TrainOptions& options);

/// Binary cross-entropy on labeled QE pairs; the result initializes train().
TrainOutcome pretrain_qe(const EbrmModel& init, const QEDataset& qe, const TrainOptions& options);

/// Copies every parameter of a trained QI cross-encoder. Throws
/// ValidationError when the configs differ.
EbrmModel init_from_cross(const EbrmModel& m, const ScorerParams& cross_params,
                          const EncoderConfig& cross_config);

}  // namespace ebrm
