#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ebrm/core.hpp"

namespace ebrm {

/// Dictionary tagger: normalized surface string -> entity type.
class Gazetteer {
public:
    Gazetteer() = default;

    /// Surface is normalized; re-adding a surface overwrites its type.
    void add(std::string_view surface, EntityType type);

    const std::unordered_map<std::string, EntityType>& entries() const { return entries_; }
    std::size_t max_entry_tokens() const { return max_entry_tokens_; }
    std::size_t size() const { return entries_.size(); }
    const EntityType* find(std::string_view surface) const;

    /// TSV: surface, type. '#' comments allowed.
    static Gazetteer load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    std::unordered_map<std::string, EntityType> entries_;
    std::size_t max_entry_tokens_ = 0;
};

/// Greedy longest match, left to right, over whitespace tokens of the
/// normalized text. Spans never overlap.
EntityBag tag(std::string_view text, const Gazetteer& gazetteer);

struct TaggedSpan {
    std::size_t begin_token = 0;
    std::size_t end_token = 0;  // exclusive
    bool matched = false;
};

/// The segmentation behind tag(): matched and unmatched spans covering the
/// token sequence in order.
std::vector<TaggedSpan> segment(std::string_view normalized, const Gazetteer& gazetteer);

/// Keeps only ProductType entities, order preserved.
EntityBag product_entities(const EntityBag& bag);

enum class Relation { Synonym, SimilarTo, RelatedTo };

std::string_view to_string(Relation r);
Relation parse_relation(std::string_view name);

struct Triple {
    std::string head;
    Relation relation = Relation::Synonym;
    std::string tail;
};

class KnowledgeBase {
public:
    void add(std::string_view head, Relation relation, std::string_view tail);
    const std::vector<Triple>& triples() const { return triples_; }
    bool empty() const { return triples_.empty(); }

    /// TSV: head, relation, tail.
    static KnowledgeBase load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    std::vector<Triple> triples_;
};

/// One-hop expansion: adds the tail of every triple whose head matches an
/// entity text and whose relation is selected, keeping the entity's type.
/// Throws ValidationError when `relations` is empty.
EntityBag expand(const EntityBag& bag, const KnowledgeBase& kb, const std::set<Relation>& relations);

}  // namespace ebrm
