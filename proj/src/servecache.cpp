#include "ebrm/servecache.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ebrm/logminer.hpp"

namespace ebrm {

using nlohmann::json;

namespace {

constexpr int kCacheFormatVersion = 1;

Provenance parse_provenance(const std::string& s) {
    if (s == "model") return Provenance::model;
    if (s == "human_add") return Provenance::human_add;
    throw CacheFormatError("unknown provenance '" + s + "'");
}

}  // namespace

std::string_view to_string(Provenance p) {
    return p == Provenance::model ? "model" : "human_add";
}

const QueryRuleSet* RuleCache::find(std::string_view normalized_query) const {
    auto it = rules.find(std::string(normalized_query));
    return it == rules.end() ? nullptr : &it->second;
}

std::vector<Entity> candidate_entities(std::span<const ClickRecord> records, const Gazetteer& g,
                                       std::size_t candidate_k) {
    std::vector<Entity> out;
    for (const auto& row : entity_click_table(records, g)) {
        if (out.size() >= candidate_k) break;
        out.push_back(row.entity);
    }
    return out;
}

RuleCache build_cache(const EbrmModel& m, const ClickLog& log, const Gazetteer& g,
                      std::size_t candidate_k, const RuleCache* previous,
                      std::string model_checkpoint_ref) {
    RuleCache c;
    c.model_checkpoint_ref = std::move(model_checkpoint_ref);
    for (auto group : records_by_query(log)) {
        const Query& q = group.front().query;
        QueryRuleSet& rs = c.rules[q.text];
        rs.query = q.text;
        for (const auto& e : candidate_entities(group, g, candidate_k)) {
            if (score_qe(m, q, e).score >= 0.0) rs.entities.emplace(e.text, Provenance::model);
        }
    }
    for (const auto& rec : log.records) {
        if (c.items.items.count(rec.item.id)) continue;
        std::vector<std::string> ents;
        for (const auto& e : product_entities(tag(rec.item.title, g))) ents.push_back(e.text);
        c.items.items.emplace(rec.item.id, std::move(ents));
    }

    if (!previous) {
        c.version = 1;
        for (auto& [key, rs] : c.rules) rs.version = 1;
        return c;
    }

    for (const auto& [key, old] : previous->rules) {
        const bool has_human = !old.suppressed.empty() ||
                               std::any_of(old.entities.begin(), old.entities.end(), [](const auto& kv) {
                                   return kv.second == Provenance::human_add;
                               });
        if (!has_human && !c.rules.count(key)) continue;
        QueryRuleSet& rs = c.rules[key];
        rs.query = key;
        for (const auto& s : old.suppressed) rs.entities.erase(s);
        rs.suppressed = old.suppressed;
        for (const auto& [text, prov] : old.entities) {
            if (prov == Provenance::human_add) rs.entities[text] = Provenance::human_add;
        }
    }
    for (auto& [key, rs] : c.rules) {
        const QueryRuleSet* old = previous->find(key);
        if (!old) rs.version = 1;
        else rs.version = (old->entities == rs.entities && old->suppressed == rs.suppressed)
                              ? old->version
                              : old->version + 1;
    }
    c.version = previous->version + 1;
    return c;
}

ServeResult serve_predict_entities(const RuleCache& c, std::string_view query_text,
                                   std::span<const std::string> item_entities) {
    ServeResult r;
    r.version = c.version;
    const QueryRuleSet* rs = c.find(query_text);
    if (!rs) {
        const std::string normalized = normalize_text(query_text);
        if (normalized != query_text) rs = c.find(normalized);
    }
    if (!rs) return r;
    r.outcome = ServeResult::Outcome::hit;
    for (const auto& e : item_entities) {
        if (rs->entities.count(e) &&
            std::find(r.rationale.begin(), r.rationale.end(), e) == r.rationale.end()) {
            r.rationale.push_back(e);
        }
    }
    r.label = r.rationale.empty() ? 0 : 1;
    return r;
}

ServeResult serve_predict(const RuleCache& c, std::string_view query_text, std::string_view item_id) {
    auto it = c.items.items.find(std::string(item_id));
    if (it == c.items.items.end()) {
        throw UnknownItemError("item '" + std::string(item_id) + "' is not in the entity index");
    }
    return serve_predict_entities(c, query_text, it->second);
}

InterventionOutcome apply_intervention(RuleCache& c, std::string_view query_text,
                                       InterventionAction action, std::string_view entity_text) {
    const std::string query = normalize_text(query_text);
    const std::string entity = normalize_text(entity_text);
    if (query.empty() || entity.empty()) throw ValidationError("query and entity must be non-empty");
    auto it = c.rules.find(query);
    if (action == InterventionAction::add) {
        if (it == c.rules.end()) {
            it = c.rules.emplace(query, QueryRuleSet{query, {}, {}, 0}).first;
        }
        auto& rs = it->second;
        auto existing = rs.entities.find(entity);
        if (existing != rs.entities.end() && existing->second == Provenance::human_add) {
            return {false, "entity '" + entity + "' is already a human rule for '" + query + "'"};
        }
        rs.entities[entity] = Provenance::human_add;
        ++rs.version;
        ++c.version;
        return {true, "added '" + entity + "' to '" + query + "'"};
    }
    if (it == c.rules.end() || !it->second.entities.count(entity)) {
        return {false, "entity '" + entity + "' is not a rule of '" + query + "'; nothing deleted"};
    }
    auto& rs = it->second;
    auto existing = rs.entities.find(entity);
    // Only model rules need a tombstone; a human addition simply goes away.
    if (existing->second == Provenance::model) rs.suppressed.insert(entity);
    rs.entities.erase(existing);
    ++rs.version;
    ++c.version;
    return {true, "deleted '" + entity + "' from '" + query + "'"};
}

RuleCache intervene(const RuleCache& c, std::string_view query_text, InterventionAction action,
                    std::string_view entity_text, InterventionOutcome* outcome) {
    RuleCache next = c;
    auto result = apply_intervention(next, query_text, action, entity_text);
    if (outcome) *outcome = std::move(result);
    return next;
}

InterventionOutcome clear_human_edits(RuleCache& c, std::string_view query_text) {
    auto it = c.rules.find(normalize_text(query_text));
    if (it == c.rules.end()) return {false, "query has no rule set"};
    auto& rs = it->second;
    bool changed = !rs.suppressed.empty();
    rs.suppressed.clear();
    for (auto e = rs.entities.begin(); e != rs.entities.end();) {
        if (e->second == Provenance::human_add) {
            e = rs.entities.erase(e);
            changed = true;
        } else {
            ++e;
        }
    }
    if (!changed) return {false, "query has no human edits"};
    ++rs.version;
    ++c.version;
    return {true, "cleared human edits"};
}

// Serialization --------------------------------------------------------------

std::string serialize_rules(const RuleCache& c) {
    std::vector<const QueryRuleSet*> sorted;
    for (const auto& [key, rs] : c.rules) sorted.push_back(&rs);
    std::sort(sorted.begin(), sorted.end(),
              [](const QueryRuleSet* a, const QueryRuleSet* b) { return a->query < b->query; });
    std::ostringstream os;
    os << json{{"format", "ebrm-rule-cache"},
               {"format_version", kCacheFormatVersion},
               {"version", c.version},
               {"model_checkpoint_ref", c.model_checkpoint_ref},
               {"rule_sets", sorted.size()}}
              .dump()
       << '\n';
    for (const auto* rs : sorted) {
        json ents = json::array();
        for (const auto& [text, prov] : rs->entities) ents.push_back({text, std::string(to_string(prov))});
        json line{{"q", rs->query}, {"v", rs->version}, {"e", ents}};
        if (!rs->suppressed.empty()) line["s"] = rs->suppressed;
        os << line.dump() << '\n';
    }
    return os.str();
}

std::string serialize_items(const RuleCache& c) {
    std::vector<std::pair<std::string, const std::vector<std::string>*>> sorted;
    for (const auto& [id, ents] : c.items.items) sorted.emplace_back(id, &ents);
    std::sort(sorted.begin(), sorted.end());
    std::ostringstream os;
    os << json{{"format", "ebrm-item-index"},
               {"format_version", kCacheFormatVersion},
               {"items", sorted.size()}}
              .dump()
       << '\n';
    for (const auto& [id, ents] : sorted) os << json{{"id", id}, {"e", *ents}}.dump() << '\n';
    return os.str();
}

std::filesystem::path items_path_for(const std::filesystem::path& rules_path) {
    auto p = rules_path;
    p += ".items";
    return p;
}

void save_cache(const RuleCache& c, const std::filesystem::path& path) {
    const auto write = [](const std::filesystem::path& p, const std::string& bytes) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
        out << bytes;
        if (!out) throw IoError("failed writing '" + p.string() + "'");
    };
    write(path, serialize_rules(c));
    write(items_path_for(path), serialize_items(c));
}

namespace {

std::vector<json> read_json_lines(const std::filesystem::path& path, const char* format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<json> lines;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            lines.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw CacheFormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (lines.empty()) throw CacheFormatError(path.string() + ": missing header");
    const auto& h = lines.front();
    if (!h.is_object() || h.value("format", std::string()) != format) {
        throw CacheFormatError(path.string() + ": not a " + format + " file");
    }
    if (h.value("format_version", -1) != kCacheFormatVersion) {
        throw CacheFormatError(path.string() + ": unsupported format version");
    }
    return lines;
}

}  // namespace

RuleCache load_cache(const std::filesystem::path& path) {
    RuleCache c;
    const auto rules = read_json_lines(path, "ebrm-rule-cache");
    const auto items = read_json_lines(items_path_for(path), "ebrm-item-index");
    try {
        const auto& h = rules.front();
        c.version = h.at("version").get<std::uint64_t>();
        c.model_checkpoint_ref = h.at("model_checkpoint_ref").get<std::string>();
        if (h.at("rule_sets").get<std::size_t>() != rules.size() - 1) {
            throw CacheFormatError(path.string() + ": rule set count does not match header");
        }
        for (std::size_t i = 1; i < rules.size(); ++i) {
            const auto& j = rules[i];
            QueryRuleSet rs;
            rs.query = j.at("q").get<std::string>();
            rs.version = j.at("v").get<std::uint64_t>();
            for (const auto& e : j.at("e")) {
                rs.entities[e.at(0).get<std::string>()] = parse_provenance(e.at(1).get<std::string>());
            }
            if (j.contains("s")) rs.suppressed = j["s"].get<std::set<std::string>>();
            const std::string key = rs.query;
            c.rules.emplace(key, std::move(rs));
        }
        if (items.front().at("items").get<std::size_t>() != items.size() - 1) {
            throw CacheFormatError(path.string() + ": item count does not match header");
        }
        for (std::size_t i = 1; i < items.size(); ++i) {
            c.items.items.emplace(items[i].at("id").get<std::string>(),
                                  items[i].at("e").get<std::vector<std::string>>());
        }
    } catch (const json::exception& e) {
        throw CacheFormatError(path.string() + ": " + e.what());
    }
    return c;
}

}  // namespace ebrm
