#include <gtest/gtest.h>

#include <map>
#include <set>

#include "ebrm/logminer.hpp"
#include "ebrm/rng.hpp"

using namespace ebrm;

namespace {

ClickRecord rec(const char* qid, const char* qtext, const char* iid, const char* title, std::uint64_t exp,
                std::uint64_t clk) {
    return {Query::make(qid, qtext), Item::make(iid, title), exp, clk};
}

MinerConfig cfg(std::size_t n, std::size_t m, std::uint64_t k = 10) {
    MinerConfig c;
    c.top_n = n;
    c.neg_m = m;
    c.min_exposure_k = k;
    return c;
}

Gazetteer gym() {
    Gazetteer g;
    for (const char* e : {"dumbbell", "rack", "yoga mat"}) g.add(e, EntityType::ProductType);
    return g;
}

// Random multi-query log over titles built from a small entity vocabulary.
ClickLog random_log(Rng& rng, std::size_t queries) {
    const std::vector<std::string> words{"dumbbell", "rack", "yoga mat", "blue", "pro"};
    std::vector<ClickRecord> recs;
    for (std::size_t q = 0; q < queries; ++q) {
        for (int i = 0; i < 8; ++i) {
            const std::string title = words[rng.below(words.size())] + " " + words[rng.below(words.size())];
            const std::uint64_t exp = rng.below(30);
            recs.push_back({Query::make("q" + std::to_string(q), "query " + std::to_string(q)),
                            Item::make("i" + std::to_string(q) + "_" + std::to_string(i), title), exp,
                            exp ? rng.below(exp + 1) : 0});
        }
    }
    return aggregate_clicks(recs);
}

}  // namespace

TEST(MinerConfig, DefaultsAndValidation) {
    const MinerConfig c;
    EXPECT_EQ(c.top_n, 3u);
    EXPECT_EQ(c.neg_m, 10u);
    EXPECT_EQ(c.min_exposure_k, 10u);
    EXPECT_THROW(cfg(0, 1).validate(), ValidationError);
    EXPECT_NE(provenance_header(c, "mine-qi", 4).find("top_n=3"), std::string::npos);
}

TEST(MineQi, TopClickedAndNeverClickedExposed) {
    const ClickLog log = aggregate_clicks({rec("q", "gym weight", "i1", "a", 30, 9), rec("q", "gym weight", "i2", "b", 30, 5),
                                           rec("q", "gym weight", "i3", "c", 20, 0), rec("q", "gym weight", "i4", "d", 2, 0)});
    const QIDataset d = mine_qi(log, cfg(1, 1), 1);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.pairs[0].item.id, "i1");
    EXPECT_EQ(d.pairs[0].label, 1);
    EXPECT_EQ(d.pairs[1].item.id, "i3");
    EXPECT_EQ(d.pairs[1].label, 0);
}

TEST(MineQi, AllZeroClicksGiveNoPositives) {
    const ClickLog log = aggregate_clicks({rec("q", "gym weight", "i1", "a", 30, 0), rec("q", "gym weight", "i2", "b", 30, 0)});
    for (const auto& p : mine_qi(log, MinerConfig{}, 1).pairs) EXPECT_EQ(p.label, 0);
    EXPECT_TRUE(mine_qi(ClickLog{}, MinerConfig{}, 1).empty());
}

TEST(MineQi, ClickTiesBreakByItemId) {
    const ClickLog log = aggregate_clicks({rec("q", "gym weight", "i9", "a", 30, 4), rec("q", "gym weight", "i2", "b", 30, 4)});
    const QIDataset d = mine_qi(log, cfg(1, 1), 1);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d.pairs[0].item.id, "i2");
}

TEST(MineQe, SumsClicksPerEntity) {
    const ClickLog log = aggregate_clicks({rec("q", "gym weight", "i1", "dumbbell set", 20, 7),
                                           rec("q", "gym weight", "i2", "dumbbell rack", 20, 2),
                                           rec("q", "gym weight", "i3", "yoga mat", 20, 0)});
    const Gazetteer g = gym();
    const auto table = entity_click_table(log.records, g);
    ASSERT_EQ(table.size(), 3u);
    EXPECT_EQ(table[0].entity.text, "dumbbell");
    EXPECT_EQ(table[0].clicks, 9u);
    EXPECT_EQ(table[0].exposures, 40u);
    const QEDataset d = mine_qe(log, g, cfg(1, 1));
    ASSERT_EQ(d.pairs.size(), 2u);
    EXPECT_EQ(d.pairs[0].entity.text, "dumbbell");
    EXPECT_EQ(d.pairs[0].label, 1);
    EXPECT_EQ(d.pairs[1].entity.text, "yoga mat");
    EXPECT_EQ(d.pairs[1].label, 0);
}

TEST(MineQe, PositiveWinsOverlapAndUntaggableIsEmpty) {
    const ClickLog one = aggregate_clicks({rec("q", "gym weight", "i1", "dumbbell", 20, 3)});
    const QEDataset d = mine_qe(one, gym(), cfg(3, 10));
    ASSERT_EQ(d.pairs.size(), 1u);
    EXPECT_EQ(d.pairs[0].label, 1);
    const ClickLog none = aggregate_clicks({rec("q", "gym weight", "i1", "blue thing", 20, 3)});
    EXPECT_TRUE(mine_qe(none, gym(), MinerConfig{}).pairs.empty());
}

TEST(Miners, DeterministicAndOrderInvariant) {
    Rng rng(31);
    const Gazetteer g = gym();
    for (int trial = 0; trial < 10; ++trial) {
        const ClickLog log = random_log(rng, 4);
        const QIDataset qi = mine_qi(log, cfg(2, 3, 5), trial);
        const QEDataset qe = mine_qe(log, g, cfg(1, 1));
        EXPECT_EQ(mine_qi(log, cfg(2, 3, 5), trial).pairs, qi.pairs);
        ClickLog shuffled = log;
        rng.shuffle(std::span<ClickRecord>(shuffled.records));
        EXPECT_EQ(mine_qi(aggregate_clicks(shuffled.records), cfg(2, 3, 5), trial).pairs, qi.pairs);
        EXPECT_EQ(mine_qi(shuffled, cfg(2, 3, 5), trial).pairs, qi.pairs);
        EXPECT_EQ(mine_qe(shuffled, g, cfg(1, 1)).pairs, qe.pairs);
    }
}

TEST(Miners, NoPairCarriesBothLabels) {
    Rng rng(32);
    const Gazetteer g = gym();
    for (int trial = 0; trial < 20; ++trial) {
        const ClickLog log = random_log(rng, 3);
        std::map<std::pair<std::string, std::string>, std::set<int>> qi_labels, qe_labels;
        for (const auto& p : mine_qi(log, cfg(3, 10, 3), trial).pairs) qi_labels[{p.query.id, p.item.id}].insert(*p.label);
        for (const auto& p : mine_qe(log, g, cfg(2, 2)).pairs) qe_labels[{p.query.id, p.entity.text}].insert(*p.label);
        for (const auto& [k, v] : qi_labels) EXPECT_EQ(v.size(), 1u);
        for (const auto& [k, v] : qe_labels) EXPECT_EQ(v.size(), 1u);
    }
}

TEST(MineQe, PositivesOutclickNegativesWithoutTies) {
    // Four entities, one item each, distinct click totals.
    Gazetteer g;
    for (const char* e : {"alpha", "beta", "gamma", "delta"}) g.add(e, EntityType::ProductType);
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::uint64_t> clicks{1, 4, 9, 16};
        rng.shuffle(std::span<std::uint64_t>(clicks));
        const std::vector<const char*> names{"alpha", "beta", "gamma", "delta"};
        std::vector<ClickRecord> recs;
        std::map<std::string, std::uint64_t> by_entity;
        for (std::size_t k = 0; k < 4; ++k) {
            recs.push_back(rec("q", "query", names[k], names[k], 50, clicks[k]));
            by_entity[names[k]] = clicks[k];
        }
        const QEDataset d = mine_qe(aggregate_clicks(recs), g, cfg(2, 2));
        std::uint64_t min_pos = UINT64_MAX, max_neg = 0;
        for (const auto& p : d.pairs) {
            const auto c = by_entity.at(p.entity.text);
            if (*p.label) min_pos = std::min(min_pos, c);
            else max_neg = std::max(max_neg, c);
        }
        EXPECT_GT(min_pos, max_neg);
    }
}

TEST(SyntheticLog, NoiselessPositivesAreWhitelisted) {
    WorldSpec spec;
    spec.queries = 30;
    spec.categories = 8;
    spec.items_per_query = 20;
    spec.items_per_category = 20;
    spec.seed = 5;
    const World w = make_world(spec);
    const SyntheticLog s = gen_synthetic_log(w, 0.0, 9);
    std::size_t positives = 0;
    for (const auto& p : mine_qe(s.log, w.gazetteer, MinerConfig{}).pairs) {
        if (*p.label != 1) continue;
        ++positives;
        EXPECT_TRUE(w.whitelist.at(p.query.id).count(p.entity.text)) << p.query.id << " " << p.entity.text;
    }
    EXPECT_GT(positives, 0u);
}

TEST(SyntheticLog, SeededAndValidated) {
    WorldSpec spec;
    spec.queries = 10;
    spec.seed = 2;
    const World w = make_world(spec);
    EXPECT_EQ(gen_synthetic_log(w, 0.1, 3).log, gen_synthetic_log(w, 0.1, 3).log);
    EXPECT_THROW(gen_synthetic_log(w, 0.5, 3), ValidationError);
    for (const auto& r : gen_synthetic_log(w, 0.2, 3).log.records) EXPECT_LE(r.clicks, r.exposures);

    spec.queries = 0;
    const World empty = make_world(spec);
    EXPECT_TRUE(gen_synthetic_log(empty, 0.1, 3).log.records.empty());
}

TEST(World, RelevanceFollowsWhitelist) {
    WorldSpec spec;
    spec.queries = 12;
    spec.seed = 4;
    const World w = make_world(spec);
    for (const auto& [qi, ii] : w.exposures) {
        const Query& q = w.queries[qi];
        const Item& item = w.items[ii];
        int expected = 0;
        for (const auto& e : w.item_entities.at(item.id)) expected |= w.whitelist.at(q.id).count(e.text) ? 1 : 0;
        EXPECT_EQ(w.relevance(q, item), expected);
    }
}
