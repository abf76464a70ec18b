#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ebrm/core.hpp"
#include "ebrm/ner.hpp"

namespace ebrm {

struct MinerConfig {
    std::size_t top_n = 3;
    std::size_t neg_m = 10;
    std::uint64_t min_exposure_k = 10;
    // Log window applied at ingestion; the miner only records it.
    std::string window_note = "past two months";

    void validate() const;
};

/// Per query: positives are the top_n items by clicks (ties by item id) with
/// at least one click; negatives are a seeded uniform sample of neg_m items
/// never clicked with more than min_exposure_k exposures.
QIDataset mine_qi(const ClickLog& log, const MinerConfig& cfg, std::uint64_t seed);

struct EntityClicks {
    Entity entity;
    std::uint64_t clicks = 0;
    std::uint64_t exposures = 0;
};

/// Product-type entities of the exposed items of one query, each with the
/// clicks and exposures summed over the items containing it. Sorted by
/// clicks descending, ties by entity text.
std::vector<EntityClicks> entity_click_table(std::span<const ClickRecord> query_records,
                                             const Gazetteer& g);

/// Groups an aggregated log's records by query id, in id order.
std::vector<std::span<const ClickRecord>> records_by_query(const ClickLog& log);

/// Per query: positives are the top_n entities by summed clicks (ties by
/// text) with clicks > 0; negatives are the bottom neg_m exposed entities,
/// excluding positives.
QEDataset mine_qe(const ClickLog& log, const Gazetteer& g, const MinerConfig& cfg);

std::string provenance_header(const MinerConfig& cfg, std::string_view miner, std::uint64_t seed);

// Synthetic worlds -----------------------------------------------------------

/// Shape of a desk-scale synthetic catalogue where relevance is decided by
/// a per-query whitelist of product-type entities.
struct WorldSpec {
    std::size_t queries = 200;
    std::size_t items_per_query = 50;
    std::size_t categories = 40;
    std::size_t entities_per_category = 4;
    std::size_t items_per_category = 60;
    double relevant_fraction = 0.5;
    std::size_t filler_words = 3;  // noise words per title
    std::uint64_t seed = 1;
};

struct World {
    Gazetteer gazetteer;
    KnowledgeBase kb;  // SimilarTo triples among entities of one category
    std::vector<Query> queries;
    std::vector<Item> items;
    std::map<std::string, std::set<std::string>> whitelist;  // query id -> relevant entity texts
    std::map<std::string, EntityBag> item_entities;          // item id -> product-type entities
    std::vector<std::pair<std::size_t, std::size_t>> exposures;  // (query index, item index)

    /// Ground truth: some item product-type entity is whitelisted for the query.
    int relevance(const Query& q, const Item& item) const;
};

World make_world(const WorldSpec& spec);

struct SyntheticLog {
    ClickLog log;
    QIDataset truth;  // every exposure with its ground-truth label
};

/// Relevant items get clicks ~ Binomial(exposures, p) with p in [0.1, 0.4];
/// with probability noise_rate a relevant item is never clicked and an
/// irrelevant one receives stray clicks. Throws ValidationError unless
/// 0 <= noise_rate < 0.5.
SyntheticLog gen_synthetic_log(const World& world, double noise_rate, std::uint64_t seed);

}  // namespace ebrm
