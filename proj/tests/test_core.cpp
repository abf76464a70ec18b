#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ebrm/core.hpp"
#include "ebrm/rng.hpp"

using namespace ebrm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ebrm_core_test";
    fs::create_directories(dir);
    return dir / name;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

QIDataset sample_dataset() {
    QIDataset d;
    d.pairs.push_back({Query::make("q1", "gym weight"), Item::make("i1", "Dumbbell 20kg"), 1});
    d.pairs.push_back({Query::make("q1", "gym weight"), Item::make("i2", "Yoga  Mat\tblue"), 0});
    d.pairs.push_back({Query::make("q2", "phone case"), Item::make("i3", "Phone Case Cover"), std::nullopt});
    return d;
}

}  // namespace

TEST(Normalize, TrimsCollapsesAndLowercases) {
    EXPECT_EQ(normalize_text("  Gym   WEIGHT \t"), "gym weight");
    EXPECT_EQ(normalize_text(""), "");
    EXPECT_EQ(normalize_text(" \n "), "");
    const auto toks = tokenize("adjustable dumbbell 20kg");
    ASSERT_EQ(toks.size(), 3u);
    EXPECT_EQ(toks[1], "dumbbell");
}

TEST(Types, MakeRejectsEmptyText) {
    EXPECT_THROW(Query::make("q", "   "), ValidationError);
    EXPECT_THROW(Item::make("i", ""), ValidationError);
    EXPECT_THROW(Entity::make("", EntityType::Brand), ValidationError);
    EXPECT_EQ(Entity::make("Dumbbell", EntityType::ProductType).text, "dumbbell");
}

TEST(EntityBag, DeduplicatesByTextAndType) {
    EntityBag bag;
    EXPECT_TRUE(bag.add(Entity::make("dumbbell", EntityType::ProductType)));
    EXPECT_FALSE(bag.add(Entity::make("Dumbbell", EntityType::ProductType)));
    EXPECT_TRUE(bag.add(Entity::make("dumbbell", EntityType::Brand)));
    EXPECT_EQ(bag.size(), 2u);
    EXPECT_TRUE(bag.contains_text("dumbbell"));
}

TEST(EntityType, RoundTripsNames) {
    for (auto t : {EntityType::ProductType, EntityType::Brand, EntityType::Color, EntityType::Other}) {
        EXPECT_EQ(parse_entity_type(to_string(t)), t);
    }
    EXPECT_THROW(parse_entity_type("Size"), ValidationError);
}

TEST(LoadQi, MapsTsvFields) {
    const auto p = temp_file("one.tsv");
    write(p, "q1\tgym weight\ti1\tDumbbell 20kg\t1\n");
    const QIDataset d = load_qi_dataset(p, DatasetFormat::tsv);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d.pairs[0].query.text, "gym weight");
    EXPECT_EQ(d.pairs[0].item.title, "dumbbell 20kg");
    EXPECT_EQ(d.pairs[0].label, 1);
}

TEST(LoadQi, EmptyFileGivesEmptyDataset) {
    const auto p = temp_file("empty.tsv");
    write(p, "");
    EXPECT_TRUE(load_qi_dataset(p, DatasetFormat::tsv).empty());
}

TEST(LoadQi, BadLabelReportsLine) {
    const auto p = temp_file("bad.tsv");
    write(p, "# header\nq1\tgym weight\ti1\tDumbbell\t1\nq1\tgym weight\ti2\tMat\t2\n");
    try {
        load_qi_dataset(p, DatasetFormat::tsv);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(LoadQi, WrongColumnCountIsParseError) {
    const auto p = temp_file("cols.tsv");
    write(p, "q1\tgym weight\ti1\n");
    EXPECT_THROW(load_qi_dataset(p, DatasetFormat::tsv), ParseError);
}

TEST(LoadQi, MissingFileIsIoError) {
    EXPECT_THROW(load_qi_dataset(temp_file("absent.tsv"), DatasetFormat::tsv), IoError);
}

TEST(Datasets, RoundTripBothFormats) {
    const QIDataset d = sample_dataset();
    for (auto fmt : {DatasetFormat::tsv, DatasetFormat::jsonl}) {
        const auto p = temp_file(fmt == DatasetFormat::tsv ? "rt.tsv" : "rt.jsonl");
        save_qi_dataset(d, p, fmt, "round trip");
        const QIDataset back = load_qi_dataset(p, fmt);
        EXPECT_EQ(back.pairs, d.pairs);
    }
    QEDataset qe;
    qe.pairs.push_back({Query::make("q1", "gym weight"), Entity::make("dumbbell", EntityType::ProductType), 1});
    qe.pairs.push_back({Query::make("q1", "gym weight"), Entity::make("nike", EntityType::Brand), 0});
    for (auto fmt : {DatasetFormat::tsv, DatasetFormat::jsonl}) {
        const auto p = temp_file(fmt == DatasetFormat::tsv ? "qe.tsv" : "qe.jsonl");
        save_qe_dataset(qe, p, fmt);
        EXPECT_EQ(load_qe_dataset(p, fmt).pairs, qe.pairs);
    }
}

TEST(Datasets, FormatFromExtension) {
    EXPECT_EQ(format_from_path("a/b.jsonl"), DatasetFormat::jsonl);
    EXPECT_EQ(format_from_path("a/b.tsv"), DatasetFormat::tsv);
}

TEST(ClickLog, SumsDuplicates) {
    const Query q = Query::make("q", "gym weight");
    const Item i = Item::make("i", "dumbbell");
    const ClickLog log = aggregate_clicks({{q, i, 5, 1}, {q, i, 5, 2}});
    ASSERT_EQ(log.records.size(), 1u);
    EXPECT_EQ(log.records[0].exposures, 10u);
    EXPECT_EQ(log.records[0].clicks, 3u);
}

TEST(ClickLog, KeepsZeroCountsAndRejectsExcessClicks) {
    const Query q = Query::make("q", "gym weight");
    const Item i = Item::make("i", "dumbbell");
    EXPECT_EQ(aggregate_clicks({{q, i, 0, 0}}).records.size(), 1u);
    EXPECT_THROW(aggregate_clicks({{q, i, 1, 3}}), ValidationError);
    EXPECT_THROW(aggregate_clicks({{q, i, 1, 0}, {Query::make("q", "other"), i, 1, 0}}), ValidationError);
}

TEST(ClickLog, AggregationIgnoresRecordOrder) {
    Rng rng(3);
    std::vector<ClickRecord> recs;
    for (int k = 0; k < 60; ++k) {
        const auto qi = rng.below(4), ii = rng.below(6);
        const std::uint64_t exp = rng.below(20);
        recs.push_back({Query::make("q" + std::to_string(qi), "query " + std::to_string(qi)),
                        Item::make("i" + std::to_string(ii), "item " + std::to_string(ii)), exp,
                        exp == 0 ? 0 : rng.below(exp + 1)});
    }
    const ClickLog base = aggregate_clicks(recs);
    for (int t = 0; t < 10; ++t) {
        rng.shuffle(std::span<ClickRecord>(recs));
        EXPECT_EQ(aggregate_clicks(recs), base);
    }
}

TEST(ClickLog, RoundTrip) {
    const ClickLog log = aggregate_clicks({{Query::make("q1", "gym weight"), Item::make("i1", "dumbbell 20kg"), 30, 9},
                                           {Query::make("q1", "gym weight"), Item::make("i2", "yoga mat"), 20, 0}});
    const auto p = temp_file("log.tsv");
    save_click_log(log, p);
    EXPECT_EQ(load_click_log(p), log);
}

TEST(Split, SizesFollowRatiosWithRemainderToTrain) {
    QIDataset d;
    for (int k = 0; k < 10; ++k) {
        d.pairs.push_back({Query::make("q", "q"), Item::make("i" + std::to_string(k), "t"), k % 2});
    }
    const auto s = split_dataset(d, {3, 1, 1}, 7);
    EXPECT_EQ(s.train.size(), 6u);
    EXPECT_EQ(s.dev.size(), 2u);
    EXPECT_EQ(s.test.size(), 2u);
    const auto again = split_dataset(d, {3, 1, 1}, 7);
    EXPECT_EQ(again.train, s.train);
    EXPECT_EQ(again.test, s.test);
    EXPECT_THROW(split_dataset(d, {0, 0, 0}, 7), ValidationError);
}

TEST(Split, IsAPartition) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        QIDataset d;
        const std::size_t n = rng.below(50);
        for (std::size_t k = 0; k < n; ++k) {
            d.pairs.push_back({Query::make("q", "q"), Item::make("i" + std::to_string(k), "t"), 1});
        }
        const auto s = split_dataset(d, {rng.uniform(0.1, 3), rng.uniform(0, 1), rng.uniform(0, 1)}, trial);
        std::vector<std::string> ids;
        for (const auto* part : {&s.train, &s.dev, &s.test}) {
            for (const auto& p : part->pairs) ids.push_back(p.item.id);
        }
        std::sort(ids.begin(), ids.end());
        std::vector<std::string> expected;
        for (const auto& p : d.pairs) expected.push_back(p.item.id);
        std::sort(expected.begin(), expected.end());
        EXPECT_EQ(ids, expected);
    }
}

TEST(Rng, IsReproducibleAndInRange) {
    Rng a(42), b(42);
    for (int k = 0; k < 1000; ++k) {
        const auto x = a.below(7);
        EXPECT_EQ(x, b.below(7));
        EXPECT_LT(x, 7u);
        const double u = a.uniform();
        EXPECT_EQ(u, b.uniform());
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}
