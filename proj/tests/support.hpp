#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>

#include "ebrm/ebrm.hpp"
#include "ebrm/logminer.hpp"
#include "ebrm/servecache.hpp"

namespace ebrm::testing {

struct GradCheck {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "tensor[index]"
};

/// Central differences over every parameter entry, compared with the
/// analytic gradient. Relative error uses max(|a|, |n|, floor) as the
/// denominator so entries that are zero on both sides count as exact.
inline GradCheck finite_difference_check(const DifferentiableLoss& loss, ScorerParams p,
                                         const EncoderConfig& cfg, double step = 1e-5,
                                         double floor = 1e-6) {
    const LossAndGradients analytic = gradients(loss, p, cfg);
    GradCheck out;
    std::vector<std::pair<std::string, std::span<double>>> tensors;
    p.for_each_tensor([&](std::string_view name, std::span<double> t) { tensors.emplace_back(name, t); });
    for (auto& [name, t] : tensors) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + step;
            const double up = loss(p, nullptr);
            t[i] = saved - step;
            const double down = loss(p, nullptr);
            t[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic.gradients.at(name, i);
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            const double rel = std::abs(a - numeric) / denom;
            ++out.checked;
            if (rel > out.max_relative_error) {
                out.max_relative_error = rel;
                out.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

/// Every exposure of the world labeled by the whitelist rule.
inline QIDataset truth_dataset(const World& w) {
    QIDataset d;
    for (const auto& [qi, ii] : w.exposures) {
        d.pairs.push_back({w.queries[qi], w.items[ii], w.relevance(w.queries[qi], w.items[ii])});
    }
    return d;
}

inline std::pair<std::string, std::string> pair_key(const QIPair& p) { return {p.query.id, p.item.id}; }

/// Keeps the pairs whose (query id, item id) is in `keys`.
inline QIDataset restrict_to(const QIDataset& d, const std::set<std::pair<std::string, std::string>>& keys) {
    QIDataset out;
    out.split = d.split;
    for (const auto& p : d.pairs) {
        if (keys.count(pair_key(p))) out.pairs.push_back(p);
    }
    return out;
}

inline std::set<std::pair<std::string, std::string>> keys_of(const QIDataset& d) {
    std::set<std::pair<std::string, std::string>> keys;
    for (const auto& p : d.pairs) keys.insert(pair_key(p));
    return keys;
}

inline ClickLog restrict_log(const ClickLog& log, const std::set<std::pair<std::string, std::string>>& keys) {
    ClickLog out;
    for (const auto& r : log.records) {
        if (keys.count({r.query.id, r.item.id})) out.records.push_back(r);
    }
    return out;
}

/// A cache whose rules are exactly the world's whitelists.
inline RuleCache truth_cache_rules(const World& w) {
    RuleCache c;
    c.version = 1;
    for (const auto& q : w.queries) {
        QueryRuleSet& rs = c.rules[q.text];
        rs.query = q.text;
        rs.version = 1;
        for (const auto& e : w.whitelist.at(q.id)) rs.entities.emplace(e, Provenance::model);
    }
    for (const auto& item : w.items) {
        std::vector<std::string> ents;
        for (const auto& e : w.item_entities.at(item.id)) ents.push_back(e.text);
        c.items.items.emplace(item.id, std::move(ents));
    }
    return c;
}

}  // namespace ebrm::testing
