#include "ebrm/logminer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "ebrm/encoder.hpp"
#include "ebrm/rng.hpp"

namespace ebrm {

void MinerConfig::validate() const {
    if (top_n == 0) throw ValidationError("top_n must be positive");
    if (neg_m == 0) throw ValidationError("neg_m must be positive");
    if (min_exposure_k == 0) throw ValidationError("min_exposure_k must be positive");
}

std::vector<std::span<const ClickRecord>> records_by_query(const ClickLog& log) {
    std::vector<std::span<const ClickRecord>> groups;
    const auto& r = log.records;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= r.size(); ++i) {
        if (i == r.size() || r[i].query.id != r[start].query.id) {
            groups.emplace_back(r.data() + start, i - start);
            start = i;
        }
    }
    return groups;
}

QIDataset mine_qi(const ClickLog& log, const MinerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    // Re-aggregating makes the result independent of record order.
    const ClickLog canonical = aggregate_clicks(log.records);
    QIDataset out;
    for (auto group : records_by_query(canonical)) {
        std::vector<const ClickRecord*> clicked, unclicked;
        for (const auto& rec : group) {
            if (rec.clicks > 0) clicked.push_back(&rec);
            else if (rec.exposures > cfg.min_exposure_k) unclicked.push_back(&rec);
        }
        // Records inside a group are already in item id order.
        std::stable_sort(clicked.begin(), clicked.end(),
                         [](const ClickRecord* a, const ClickRecord* b) { return a->clicks > b->clicks; });
        const std::size_t n_pos = std::min(cfg.top_n, clicked.size());
        for (std::size_t i = 0; i < n_pos; ++i) {
            out.pairs.push_back({clicked[i]->query, clicked[i]->item, 1});
        }
        // Per-query stream so one query's sample does not depend on the others.
        Rng rng(seed ^ feature_hash(group.front().query.id, 0));
        rng.shuffle(std::span<const ClickRecord*>(unclicked));
        const std::size_t n_neg = std::min(cfg.neg_m, unclicked.size());
        std::vector<const ClickRecord*> negatives(unclicked.begin(), unclicked.begin() + n_neg);
        std::sort(negatives.begin(), negatives.end(),
                  [](const ClickRecord* a, const ClickRecord* b) { return a->item.id < b->item.id; });
        for (const auto* rec : negatives) out.pairs.push_back({rec->query, rec->item, 0});
    }
    return out;
}

std::vector<EntityClicks> entity_click_table(std::span<const ClickRecord> records, const Gazetteer& g) {
    std::unordered_map<std::string, std::size_t> index;
    std::vector<EntityClicks> table;
    for (const auto& rec : records) {
        for (const auto& e : product_entities(tag(rec.item.title, g))) {
            auto [it, inserted] = index.emplace(e.text, table.size());
            if (inserted) table.push_back({e, 0, 0});
            table[it->second].clicks += rec.clicks;
            table[it->second].exposures += rec.exposures;
        }
    }
    std::sort(table.begin(), table.end(), [](const EntityClicks& a, const EntityClicks& b) {
        if (a.clicks != b.clicks) return a.clicks > b.clicks;
        return a.entity.text < b.entity.text;
    });
    return table;
}

QEDataset mine_qe(const ClickLog& log, const Gazetteer& g, const MinerConfig& cfg) {
    cfg.validate();
    const ClickLog canonical = aggregate_clicks(log.records);
    QEDataset out;
    for (auto group : records_by_query(canonical)) {
        const Query& q = group.front().query;
        const auto table = entity_click_table(group, g);
        std::size_t n_pos = 0;
        while (n_pos < std::min(cfg.top_n, table.size()) && table[n_pos].clicks > 0) {
            out.pairs.push_back({q, table[n_pos].entity, 1});
            ++n_pos;
        }
        // Bottom of the ranking: fewest clicks first, ties by text ascending.
        std::vector<const EntityClicks*> pool;
        for (std::size_t i = n_pos; i < table.size(); ++i) {
            if (table[i].exposures > 0) pool.push_back(&table[i]);
        }
        std::sort(pool.begin(), pool.end(), [](const EntityClicks* a, const EntityClicks* b) {
            if (a->clicks != b->clicks) return a->clicks < b->clicks;
            return a->entity.text < b->entity.text;
        });
        const std::size_t n_neg = std::min(cfg.neg_m, pool.size());
        for (std::size_t i = 0; i < n_neg; ++i) out.pairs.push_back({q, pool[i]->entity, 0});
    }
    return out;
}

std::string provenance_header(const MinerConfig& cfg, std::string_view miner, std::uint64_t seed) {
    std::ostringstream os;
    os << "mined-by: " << miner << " top_n=" << cfg.top_n << " neg_m=" << cfg.neg_m
       << " min_exposure_k=" << cfg.min_exposure_k << " seed=" << seed
       << " window=" << cfg.window_note;
    return os.str();
}

// Synthetic worlds -----------------------------------------------------------

int World::relevance(const Query& q, const Item& item) const {
    auto wl = whitelist.find(q.id);
    auto ents = item_entities.find(item.id);
    if (wl == whitelist.end() || ents == item_entities.end()) return 0;
    for (const auto& e : ents->second) {
        if (wl->second.count(e.text)) return 1;
    }
    return 0;
}

namespace {

class WordFactory {
public:
    explicit WordFactory(Rng& rng) : rng_(rng) {}

    std::string fresh() {
        static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p",
                                                  "r", "s", "t", "v", "z", "br", "st", "tr", "pl"};
        static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
        while (true) {
            std::string w;
            const std::size_t syllables = 2 + rng_.below(2);
            for (std::size_t s = 0; s < syllables; ++s) {
                w += kOnsets[rng_.below(std::size(kOnsets))];
                w += kVowels[rng_.below(std::size(kVowels))];
            }
            if (used_.insert(w).second) return w;
        }
    }

private:
    Rng& rng_;
    std::set<std::string> used_;
};

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[rng.below(v.size())];
}

}  // namespace

World make_world(const WorldSpec& spec) {
    if (spec.categories == 0 || spec.entities_per_category == 0) {
        throw ValidationError("world needs at least one category and entity");
    }
    if (!(spec.relevant_fraction >= 0.0 && spec.relevant_fraction <= 1.0)) {
        throw ValidationError("relevant_fraction must lie in [0, 1]");
    }
    Rng rng(spec.seed);
    WordFactory words(rng);
    World w;

    std::vector<std::vector<std::string>> category_entities(spec.categories);
    std::vector<std::vector<std::string>> category_intents(spec.categories);
    for (std::size_t c = 0; c < spec.categories; ++c) {
        for (std::size_t k = 0; k < spec.entities_per_category; ++k) {
            std::string name = words.fresh();
            if (rng.bernoulli(0.3)) name += " " + words.fresh();
            w.gazetteer.add(name, EntityType::ProductType);
            category_entities[c].push_back(name);
        }
        for (std::size_t k = 0; k < 3; ++k) category_intents[c].push_back(words.fresh());
        for (std::size_t a = 0; a < category_entities[c].size(); ++a) {
            for (std::size_t b = 0; b < category_entities[c].size(); ++b) {
                if (a != b) w.kb.add(category_entities[c][a], Relation::SimilarTo, category_entities[c][b]);
            }
        }
    }
    std::vector<std::string> brands, colors, fillers, modifiers;
    for (int i = 0; i < 30; ++i) brands.push_back(words.fresh());
    for (int i = 0; i < 12; ++i) colors.push_back(words.fresh());
    for (int i = 0; i < 60; ++i) fillers.push_back(words.fresh());
    for (int i = 0; i < 8; ++i) modifiers.push_back(words.fresh());
    for (const auto& b : brands) w.gazetteer.add(b, EntityType::Brand);
    for (const auto& c : colors) w.gazetteer.add(c, EntityType::Color);

    // Queries: mostly intent phrasings, some naming an entity directly.
    std::vector<std::size_t> query_category;
    std::set<std::string> seen_queries;
    for (std::size_t i = 0; i < spec.queries; ++i) {
        const std::size_t c = i % spec.categories;
        std::string text;
        do {
            const std::uint64_t style = rng.below(4);
            if (style == 0) text = pick(rng, category_entities[c]);
            else text = pick(rng, category_intents[c]);
            if (style == 2) text += " " + pick(rng, category_intents[c]);
            if (style == 3 || rng.bernoulli(0.3)) text = pick(rng, modifiers) + " " + text;
        } while (!seen_queries.insert(text).second);
        char id[16];
        std::snprintf(id, sizeof(id), "q%04zu", i);
        w.queries.push_back(Query::make(id, text));
        query_category.push_back(c);
        w.whitelist[id] = std::set<std::string>(category_entities[c].begin(), category_entities[c].end());
    }

    // Items: brand, optional color, one or two product types of one category, filler.
    std::vector<std::vector<std::size_t>> items_of_category(spec.categories);
    for (std::size_t c = 0; c < spec.categories; ++c) {
        for (std::size_t k = 0; k < spec.items_per_category; ++k) {
            std::vector<std::string> parts{pick(rng, brands)};
            if (rng.bernoulli(0.6)) parts.push_back(pick(rng, colors));
            const std::size_t fill = spec.filler_words;
            const std::size_t before = fill == 0 ? 0 : rng.below(fill + 1);
            for (std::size_t f = 0; f < before; ++f) parts.push_back(pick(rng, fillers));
            parts.push_back(pick(rng, category_entities[c]));
            for (std::size_t f = before; f < fill; ++f) parts.push_back(pick(rng, fillers));
            if (rng.bernoulli(0.2)) parts.push_back(pick(rng, category_entities[c]));
            std::string title;
            for (const auto& p : parts) title += (title.empty() ? "" : " ") + p;
            char id[16];
            std::snprintf(id, sizeof(id), "i%05zu", w.items.size());
            Item item = Item::make(id, title);
            w.item_entities[item.id] = product_entities(tag(item.title, w.gazetteer));
            items_of_category[c].push_back(w.items.size());
            w.items.push_back(std::move(item));
        }
    }

    for (std::size_t qi = 0; qi < w.queries.size(); ++qi) {
        const std::size_t c = query_category[qi];
        std::vector<std::size_t> relevant = items_of_category[c];
        rng.shuffle(std::span<std::size_t>(relevant));
        const auto want_rel = static_cast<std::size_t>(
            std::llround(static_cast<double>(spec.items_per_query) * spec.relevant_fraction));
        const std::size_t n_rel = std::min(want_rel, relevant.size());
        for (std::size_t k = 0; k < n_rel; ++k) w.exposures.emplace_back(qi, relevant[k]);
        std::set<std::size_t> chosen;
        const std::size_t others = w.items.size() - items_of_category[c].size();
        const std::size_t n_irr = std::min(spec.items_per_query - n_rel, others);
        while (chosen.size() < n_irr) {
            const std::size_t cand = rng.below(w.items.size());
            if (cand / spec.items_per_category == c) continue;
            chosen.insert(cand);
        }
        for (auto idx : chosen) w.exposures.emplace_back(qi, idx);
    }
    return w;
}

SyntheticLog gen_synthetic_log(const World& world, double noise_rate, std::uint64_t seed) {
    if (!(noise_rate >= 0.0 && noise_rate < 0.5)) {
        throw ValidationError("noise_rate must lie in [0, 0.5)");
    }
    Rng rng(seed);
    const auto binomial = [&](std::uint64_t n, double p) {
        std::uint64_t k = 0;
        for (std::uint64_t t = 0; t < n; ++t) k += rng.bernoulli(p) ? 1 : 0;
        return k;
    };
    std::vector<ClickRecord> records;
    SyntheticLog out;
    for (const auto& [qi, ii] : world.exposures) {
        const Query& q = world.queries[qi];
        const Item& item = world.items[ii];
        const int label = world.relevance(q, item);
        const std::uint64_t exposures = 1 + rng.below(40);
        std::uint64_t clicks = 0;
        const bool flip = rng.bernoulli(noise_rate);
        const double p_rel = rng.uniform(0.1, 0.4);
        const double p_stray = rng.uniform(0.02, 0.15);
        if (label == 1 && !flip) clicks = binomial(exposures, p_rel);
        if (label == 0 && flip) clicks = binomial(exposures, p_stray);
        records.push_back({q, item, exposures, clicks});
        out.truth.pairs.push_back({q, item, label});
    }
    out.log = aggregate_clicks(std::move(records));
    return out;
}

}  // namespace ebrm
