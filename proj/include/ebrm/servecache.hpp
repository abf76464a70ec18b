#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ebrm/core.hpp"
#include "ebrm/ebrm.hpp"
#include "ebrm/ner.hpp"

namespace ebrm {

enum class Provenance { model, human_add };

std::string_view to_string(Provenance p);

/// Entities judged relevant to one normalized query text.
struct QueryRuleSet {
    std::string query;
    std::map<std::string, Provenance> entities;
    /// Model rules a human deleted; rebuilds do not bring them back. A
    /// human addition of the same text still wins.
    std::set<std::string> suppressed;
    std::uint64_t version = 0;

    friend bool operator==(const QueryRuleSet&, const QueryRuleSet&) = default;
};

/// item id -> product-type entity texts (deduplicated, tag order).
struct ItemEntityIndex {
    std::unordered_map<std::string, std::vector<std::string>> items;

    friend bool operator==(const ItemEntityIndex&, const ItemEntityIndex&) = default;
};

struct RuleCache {
    std::unordered_map<std::string, QueryRuleSet> rules;  // keyed by normalized query text
    ItemEntityIndex items;
    std::string model_checkpoint_ref;
    std::uint64_t version = 0;  // snapshot version, bumped on every mutation

    const QueryRuleSet* find(std::string_view normalized_query) const;

    friend bool operator==(const RuleCache&, const RuleCache&) = default;
};

class UnknownItemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CacheFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Candidate entities of a query: top candidate_k by summed clicks over its
/// exposed items, ties by text.
std::vector<Entity> candidate_entities(std::span<const ClickRecord> query_records,
                                       const Gazetteer& g, std::size_t candidate_k);

/// Scores every candidate with the model and keeps those with S(Q,e) >= 0.
/// When `previous` is given its human edits (additions and suppressions)
/// carry over and rule-set versions continue from it.
RuleCache build_cache(const EbrmModel& m, const ClickLog& log, const Gazetteer& g,
                      std::size_t candidate_k = 100, const RuleCache* previous = nullptr,
                      std::string model_checkpoint_ref = {});

struct ServeResult {
    enum class Outcome { hit, miss };
    Outcome outcome = Outcome::miss;
    int label = 0;
    std::vector<std::string> rationale;  // matched entities, item order
    std::uint64_t version = 0;
};

/// Entity-set intersection. MISS when the query has no rule set. Throws
/// UnknownItemError for items outside the index.
ServeResult serve_predict(const RuleCache& c, std::string_view query_text, std::string_view item_id);

/// Same matching against an explicit entity list (items tagged on the fly).
ServeResult serve_predict_entities(const RuleCache& c, std::string_view query_text,
                                   std::span<const std::string> item_entities);

enum class InterventionAction { add, remove };

struct InterventionOutcome {
    bool changed = false;
    std::string message;
};

/// Mutates `c` in place. Additions are pinned as human_add; deleting an
/// absent entity is a reported no-op that leaves versions unchanged.
InterventionOutcome apply_intervention(RuleCache& c, std::string_view query_text,
                                       InterventionAction action, std::string_view entity_text);

/// Functional form: returns the next snapshot.
RuleCache intervene(const RuleCache& c, std::string_view query_text, InterventionAction action,
                    std::string_view entity_text, InterventionOutcome* outcome = nullptr);

/// Drops human additions and suppressions of a query so the next rebuild
/// reflects the model alone.
InterventionOutcome clear_human_edits(RuleCache& c, std::string_view query_text);

/// JSON Lines, header line first, then one rule set per line (sorted by query).
std::string serialize_rules(const RuleCache& c);
/// JSON Lines, header line first, then one item per line (sorted by id).
std::string serialize_items(const RuleCache& c);

/// Writes the rules to `path` and the item index to items_path_for(path).
void save_cache(const RuleCache& c, const std::filesystem::path& path);
RuleCache load_cache(const std::filesystem::path& path);
std::filesystem::path items_path_for(const std::filesystem::path& rules_path);

}  // namespace ebrm
