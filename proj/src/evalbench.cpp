#include "ebrm/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>

namespace ebrm {

using nlohmann::json;

std::string_view to_string(ServingSystem s) {
    switch (s) {
        case ServingSystem::ebrm_cached: return "ebrm_cached";
        case ServingSystem::qirm_bi_cached: return "qirm_bi_cached";
        case ServingSystem::qirm_cross_direct: return "qirm_cross_direct";
    }
    return "ebrm_cached";
}

ServingSystem parse_serving_system(std::string_view name) {
    for (auto s : {ServingSystem::ebrm_cached, ServingSystem::qirm_bi_cached,
                   ServingSystem::qirm_cross_direct}) {
        if (to_string(s) == name) return s;
    }
    throw ValidationError("unknown serving system '" + std::string(name) + "'");
}

BiVectorCache build_bi_cache(const BaselineModel& bi, std::span<const Query> queries,
                             std::span<const Item> items) {
    if (!is_bi(bi.kind) || !bi.params) throw ValidationError("build_bi_cache needs a Bi-encoder");
    BiVectorCache c;
    for (const auto& q : queries) {
        if (!c.queries.count(q.text)) c.queries.emplace(q.text, encode_single(q.text, 0, *bi.params, bi.config));
    }
    for (const auto& i : items) {
        if (!c.items.count(i.id)) {
            c.items.emplace(i.id, encode_single(item_side_text(bi.kind, i, {}), 1, *bi.params, bi.config));
        }
    }
    return c;
}

std::string serialize_bi_cache(const BiVectorCache& c) {
    std::string out;
    const auto put = [&](const std::string& key, const EmbeddingVector& v) {
        const auto len = static_cast<std::uint32_t>(key.size());
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>(len >> (8 * b)));
        out += key;
        for (double x : v) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, sizeof(bits));
            for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>(bits >> (8 * b)));
        }
    };
    for (const auto& [k, v] : c.queries) put(k, v);
    for (const auto& [k, v] : c.items) put(k, v);
    return out;
}

namespace {

template <class Fn>
double time_pass(std::span<const BenchPair> pairs, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& p : pairs) fn(p);
    const auto stop = std::chrono::steady_clock::now();
    const double seconds = std::chrono::duration<double>(stop - start).count();
    return static_cast<double>(pairs.size()) / std::max(seconds, 1e-9);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

SpeedReport bench_speed(std::span<const ServingSystem> systems, const BenchSystems& loaded,
                        std::span<const BenchPair> pairs, std::size_t warmup, std::size_t repeats) {
    if (pairs.empty()) throw ValidationError("bench_speed needs a non-empty pair stream");
    if (repeats == 0) throw ValidationError("bench_speed needs at least one repeat");
    SpeedReport report;
    report.pairs = pairs.size();
    report.warmup = warmup;
    report.repeats = repeats;

    for (auto system : systems) {
        SystemSpeed speed;
        std::size_t positives = 0;
        std::function<void(const BenchPair&)> run;
        switch (system) {
            case ServingSystem::ebrm_cached:
                if (!loaded.rule_cache) throw ValidationError("ebrm_cached needs a rule cache");
                speed.cache_bytes = serialize_rules(*loaded.rule_cache).size();
                run = [&](const BenchPair& p) {
                    positives += serve_predict(*loaded.rule_cache, p.query, p.item_id).label;
                };
                break;
            case ServingSystem::qirm_bi_cached:
                if (!loaded.bi || !loaded.bi_cache) throw ValidationError("qirm_bi_cached needs a Bi cache");
                speed.cache_bytes = serialize_bi_cache(*loaded.bi_cache).size();
                run = [&](const BenchPair& p) {
                    const auto& hq = loaded.bi_cache->queries.at(p.query);
                    const auto& hi = loaded.bi_cache->items.at(p.item_id);
                    positives += predict_bi_cached(*loaded.bi, hq, hi).label;
                };
                break;
            case ServingSystem::qirm_cross_direct:
                if (!loaded.cross) throw ValidationError("qirm_cross_direct needs a cross model");
                run = [&](const BenchPair& p) {
                    const auto& m = *loaded.cross;
                    const double s = score_mlp(encode_joint(p.query, p.item_title, *m.params, m.config), *m.params);
                    positives += s >= 0.0 ? 1 : 0;
                };
                break;
        }
        for (std::size_t w = 0; w < warmup; ++w) time_pass(pairs, run);
        for (std::size_t r = 0; r < repeats; ++r) speed.repeat_throughputs.push_back(time_pass(pairs, run));
        speed.instances_per_second = median(speed.repeat_throughputs);
        speed.positives = positives;
        report.systems[system] = std::move(speed);
    }
    return report;
}

json to_json(const SpeedReport& r) {
    json systems = json::object();
    for (const auto& [s, speed] : r.systems) {
        systems[std::string(to_string(s))] = {{"instances_per_second", speed.instances_per_second},
                                              {"repeat_throughputs", speed.repeat_throughputs},
                                              {"cache_bytes", speed.cache_bytes}};
    }
    return {{"pairs", r.pairs}, {"warmup", r.warmup}, {"repeats", r.repeats}, {"systems", systems}};
}

json to_json(const InterventionReport& r) {
    json collateral = json::array();
    for (const auto& c : r.collateral) {
        collateral.push_back({{"pair_index", c.pair_index}, {"before", c.before}, {"after", c.after}});
    }
    return {{"accuracy_before", r.accuracy_before},
            {"accuracy_after", r.accuracy_after},
            {"actions", r.actions},
            {"fixed_pairs", r.fixed_pairs},
            {"actions_per_qi", r.actions_per_qi},
            {"collateral", collateral}};
}

namespace {

int cached_label(const RuleCache& c, const QIPair& p) {
    return serve_predict(c, p.query.text, p.item.id).label;
}

std::vector<int> cached_labels(const RuleCache& c, const QIDataset& data) {
    std::vector<int> out;
    out.reserve(data.pairs.size());
    for (const auto& p : data.pairs) out.push_back(cached_label(c, p));
    return out;
}

double accuracy(const std::vector<int>& preds, const QIDataset& data) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == *data.pairs[i].label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

}  // namespace

InterventionRun simulate_intervention(RuleCache cache, const QIDataset& labeled) {
    if (labeled.pairs.empty()) throw ValidationError("simulate_intervention needs labeled pairs");
    for (const auto& p : labeled.pairs) {
        if (!p.label) throw ValidationError("simulate_intervention needs labeled pairs");
    }
    InterventionRun run{{}, std::move(cache)};
    auto& rep = run.report;
    const auto before = cached_labels(run.cache, labeled);
    rep.accuracy_before = accuracy(before, labeled);

    for (const auto& p : labeled.pairs) {
        const ServeResult now = serve_predict(run.cache, p.query.text, p.item.id);
        if (now.label == *p.label) continue;
        if (*p.label == 1) {
            const auto& ents = run.cache.items.items.at(p.item.id);
            if (ents.empty()) continue;  // nothing to point a rule at
            if (apply_intervention(run.cache, p.query.text, InterventionAction::add, ents.front()).changed) {
                ++rep.actions;
            }
        } else {
            for (const auto& e : now.rationale) {
                if (apply_intervention(run.cache, p.query.text, InterventionAction::remove, e).changed) {
                    ++rep.actions;
                }
            }
        }
    }

    const auto after = cached_labels(run.cache, labeled);
    rep.accuracy_after = accuracy(after, labeled);
    for (std::size_t i = 0; i < labeled.pairs.size(); ++i) {
        const int gold = *labeled.pairs[i].label;
        if (before[i] != gold && after[i] == gold) ++rep.fixed_pairs;
        if (before[i] == gold && after[i] != gold) rep.collateral.push_back({i, before[i], after[i]});
    }
    rep.actions_per_qi = rep.fixed_pairs > 0
                             ? static_cast<double>(rep.actions) / static_cast<double>(rep.fixed_pairs)
                             : 0.0;
    return run;
}

}  // namespace ebrm
