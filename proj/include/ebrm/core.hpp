#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ebrm/rng.hpp"

namespace ebrm {

// Errors ---------------------------------------------------------------------

class ParseError : public std::runtime_error {
public:
    ParseError(std::string source, std::size_t line, const std::string& reason);

    const std::string& source() const { return source_; }
    std::size_t line() const { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Text -----------------------------------------------------------------------

/// Trim, collapse internal whitespace runs to one space, ASCII-lowercase.
std::string normalize_text(std::string_view text);

/// Splits already-normalized text on single spaces.
std::vector<std::string_view> tokenize(std::string_view normalized);

std::string trim(std::string_view text);

// Domain types ---------------------------------------------------------------

enum class EntityType { ProductType, Brand, Color, Other };

std::string_view to_string(EntityType type);
/// Accepts the canonical names (case-insensitive). Throws ValidationError.
EntityType parse_entity_type(std::string_view name);

struct Query {
    std::string id;
    std::string text;

    /// Normalizes text; throws ValidationError when it is empty.
    static Query make(std::string id, std::string_view text);

    friend bool operator==(const Query&, const Query&) = default;
};

struct Item {
    std::string id;
    std::string title;

    static Item make(std::string id, std::string_view title);

    friend bool operator==(const Item&, const Item&) = default;
};

struct Entity {
    std::string text;
    EntityType etype = EntityType::Other;

    static Entity make(std::string_view text, EntityType etype);

    friend bool operator==(const Entity&, const Entity&) = default;
};

/// Entities deduplicated by (text, etype), kept in first-insertion order.
class EntityBag {
public:
    EntityBag() = default;
    EntityBag(std::initializer_list<Entity> entities);

    /// Returns false when the entity was already present.
    bool add(Entity entity);
    bool contains(const Entity& entity) const;
    bool contains_text(std::string_view text) const;

    const std::vector<Entity>& entities() const { return entities_; }
    std::size_t size() const { return entities_.size(); }
    bool empty() const { return entities_.empty(); }
    const Entity& operator[](std::size_t i) const { return entities_[i]; }
    auto begin() const { return entities_.begin(); }
    auto end() const { return entities_.end(); }

    friend bool operator==(const EntityBag&, const EntityBag&) = default;

private:
    std::vector<Entity> entities_;
};

struct QIPair {
    Query query;
    Item item;
    std::optional<int> label;

    friend bool operator==(const QIPair&, const QIPair&) = default;
};

struct QEPair {
    Query query;
    Entity entity;
    std::optional<int> label;

    friend bool operator==(const QEPair&, const QEPair&) = default;
};

enum class Split { train, dev, test };

template <class Pair>
struct Dataset {
    std::vector<Pair> pairs;
    Split split = Split::train;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

using QIDataset = Dataset<QIPair>;
using QEDataset = Dataset<QEPair>;

struct ClickRecord {
    Query query;
    Item item;
    std::uint64_t exposures = 0;
    std::uint64_t clicks = 0;

    friend bool operator==(const ClickRecord&, const ClickRecord&) = default;
};

/// Aggregated search log: one record per (query id, item id), sorted by that
/// key. Build through aggregate_clicks() to keep the invariants.
struct ClickLog {
    std::vector<ClickRecord> records;

    friend bool operator==(const ClickLog&, const ClickLog&) = default;
};

/// Sums exposures/clicks of duplicate (query, item) records. Throws
/// ValidationError when clicks exceed exposures or one id carries two texts.
ClickLog aggregate_clicks(std::vector<ClickRecord> records);

// File I/O -------------------------------------------------------------------

enum class DatasetFormat { tsv, jsonl };

DatasetFormat format_from_path(const std::filesystem::path& path);

/// TSV columns: query_id, query_text, item_id, item_title, label.
/// Blank lines and lines starting with '#' are skipped. An empty label
/// field loads as an unlabeled pair.
QIDataset load_qi_dataset(const std::filesystem::path& path, DatasetFormat format);
void save_qi_dataset(const QIDataset& data, const std::filesystem::path& path,
                     DatasetFormat format, std::string_view header_comment = {});

/// TSV columns: query_id, query_text, entity_text, entity_type, label.
QEDataset load_qe_dataset(const std::filesystem::path& path, DatasetFormat format);
void save_qe_dataset(const QEDataset& data, const std::filesystem::path& path,
                     DatasetFormat format, std::string_view header_comment = {});

/// TSV columns: query_id, query_text, item_id, item_title, exposures, clicks.
ClickLog load_click_log(const std::filesystem::path& path);
void save_click_log(const ClickLog& log, const std::filesystem::path& path);

// Splitting ------------------------------------------------------------------

template <class Pair>
struct SplitResult {
    Dataset<Pair> train;
    Dataset<Pair> dev;
    Dataset<Pair> test;
};

namespace detail {
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);
}

/// Seeded shuffle, then dev and test take floor(n * r / sum) each and train
/// takes the remainder.
template <class Pair>
SplitResult<Pair> split_dataset(const Dataset<Pair>& data, const std::array<double, 3>& ratios,
                                std::uint64_t seed) {
    const auto sizes = detail::split_sizes(data.pairs.size(), ratios);
    std::vector<std::size_t> order(data.pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));

    SplitResult<Pair> out;
    out.train.split = Split::train;
    out.dev.split = Split::dev;
    out.test.split = Split::test;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < sizes[0]; ++k) out.train.pairs.push_back(data.pairs[order[pos++]]);
    for (std::size_t k = 0; k < sizes[1]; ++k) out.dev.pairs.push_back(data.pairs[order[pos++]]);
    for (std::size_t k = 0; k < sizes[2]; ++k) out.test.pairs.push_back(data.pairs[order[pos++]]);
    return out;
}

}  // namespace ebrm
