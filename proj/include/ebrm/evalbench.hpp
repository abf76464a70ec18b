#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ebrm/baselines.hpp"
#include "ebrm/core.hpp"
#include "ebrm/encoder.hpp"
#include "ebrm/metrics.hpp"
#include "ebrm/servecache.hpp"

namespace ebrm {

// Speed ----------------------------------------------------------------------

enum class ServingSystem { ebrm_cached, qirm_bi_cached, qirm_cross_direct };

std::string_view to_string(ServingSystem s);
ServingSystem parse_serving_system(std::string_view name);

/// Precomputed Bi-encoder vectors keyed by normalized query text / item id.
struct BiVectorCache {
    std::unordered_map<std::string, EmbeddingVector> queries;
    std::unordered_map<std::string, EmbeddingVector> items;
};

BiVectorCache build_bi_cache(const BaselineModel& bi, std::span<const Query> queries,
                             std::span<const Item> items);

/// Binary: per entry u32 key length, key bytes, embed_dim little-endian f64.
std::string serialize_bi_cache(const BiVectorCache& c);

struct BenchPair {
    std::string query;  // normalized text
    std::string item_id;
    std::string item_title;
};

struct BenchSystems {
    const RuleCache* rule_cache = nullptr;
    const BaselineModel* bi = nullptr;
    const BiVectorCache* bi_cache = nullptr;
    const BaselineModel* cross = nullptr;
};

struct SystemSpeed {
    double instances_per_second = 0.0;
    std::vector<double> repeat_throughputs;
    std::size_t cache_bytes = 0;  // serialized extra cache; 0 when none
    std::size_t positives = 0;    // checksum so the work is not optimized away
};

struct SpeedReport {
    std::map<ServingSystem, SystemSpeed> systems;
    std::size_t pairs = 0;
    std::size_t warmup = 0;
    std::size_t repeats = 0;
};

/// Median throughput over `repeats` timed passes after `warmup` untimed
/// passes; each system runs alone on the calling thread. Throws
/// ValidationError on an empty pair stream or a missing system.
SpeedReport bench_speed(std::span<const ServingSystem> systems, const BenchSystems& loaded,
                        std::span<const BenchPair> pairs, std::size_t warmup, std::size_t repeats);

nlohmann::json to_json(const SpeedReport& r);

// Intervention ---------------------------------------------------------------

struct CollateralFlip {
    std::size_t pair_index = 0;
    int before = 0;
    int after = 0;
};

struct InterventionReport {
    double accuracy_before = 0.0;
    double accuracy_after = 0.0;
    std::size_t actions = 0;
    std::size_t fixed_pairs = 0;
    double actions_per_qi = 0.0;  // actions / fixed_pairs, 0 when nothing was fixed
    std::vector<CollateralFlip> collateral;  // correct before, wrong after
};

nlohmann::json to_json(const InterventionReport& r);

struct InterventionRun {
    InterventionReport report;
    RuleCache cache;
};

/// Walks the labeled pairs in order against the evolving cache: a false
/// negative adds the item's first product-type entity (1 action); a false
/// positive deletes every rule entity matched in the item (1 action each).
/// Cache misses predict 0. Throws ValidationError on an empty dataset.
InterventionRun simulate_intervention(RuleCache cache, const QIDataset& labeled);

}  // namespace ebrm
