#include "ebrm/ner.hpp"

#include <algorithm>
#include <fstream>

namespace ebrm {

void Gazetteer::add(std::string_view surface, EntityType type) {
    std::string key = normalize_text(surface);
    if (key.empty()) throw ValidationError("gazetteer surface is empty");
    max_entry_tokens_ = std::max(max_entry_tokens_, tokenize(key).size());
    entries_[std::move(key)] = type;
}

const EntityType* Gazetteer::find(std::string_view surface) const {
    auto it = entries_.find(std::string(surface));
    return it == entries_.end() ? nullptr : &it->second;
}

namespace {

std::vector<std::string> read_tsv_rows(const std::filesystem::path& path, std::size_t columns) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::string> fields;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line.front() == '#') continue;
        std::size_t start = 0, count = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos
                                                                          : tab - start));
            ++count;
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (count != columns) {
            throw ParseError(path.string(), lineno,
                             "expected " + std::to_string(columns) + " tab-separated fields, got " +
                                 std::to_string(count));
        }
    }
    return fields;
}

}  // namespace

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
    const auto fields = read_tsv_rows(path, 2);
    Gazetteer g;
    for (std::size_t i = 0; i < fields.size(); i += 2) {
        g.add(fields[i], parse_entity_type(fields[i + 1]));
    }
    return g;
}

void Gazetteer::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    std::vector<std::pair<std::string, EntityType>> sorted(entries_.begin(), entries_.end());
    std::sort(sorted.begin(), sorted.end());
    for (const auto& [surface, type] : sorted) out << surface << '\t' << to_string(type) << '\n';
}

std::vector<TaggedSpan> segment(std::string_view normalized, const Gazetteer& gazetteer) {
    const auto tokens = tokenize(normalized);
    std::vector<TaggedSpan> spans;
    std::size_t i = 0;
    std::string candidate;
    while (i < tokens.size()) {
        const std::size_t longest = std::min(gazetteer.max_entry_tokens(), tokens.size() - i);
        std::size_t matched = 0;
        for (std::size_t len = longest; len >= 1; --len) {
            // Tokens are views into one string separated by single spaces.
            const char* first = tokens[i].data();
            const char* last = tokens[i + len - 1].data() + tokens[i + len - 1].size();
            if (gazetteer.find(std::string_view(first, static_cast<std::size_t>(last - first)))) {
                matched = len;
                break;
            }
        }
        if (matched > 0) {
            spans.push_back({i, i + matched, true});
            i += matched;
        } else {
            if (!spans.empty() && !spans.back().matched) {
                spans.back().end_token = i + 1;
            } else {
                spans.push_back({i, i + 1, false});
            }
            ++i;
        }
    }
    return spans;
}

EntityBag tag(std::string_view text, const Gazetteer& gazetteer) {
    const std::string normalized = normalize_text(text);
    const auto tokens = tokenize(normalized);
    EntityBag bag;
    for (const auto& span : segment(normalized, gazetteer)) {
        if (!span.matched) continue;
        const char* first = tokens[span.begin_token].data();
        const char* last = tokens[span.end_token - 1].data() + tokens[span.end_token - 1].size();
        std::string surface(first, static_cast<std::size_t>(last - first));
        const EntityType type = *gazetteer.find(surface);
        bag.add(Entity{std::move(surface), type});
    }
    return bag;
}

EntityBag product_entities(const EntityBag& bag) {
    EntityBag out;
    for (const auto& e : bag) {
        if (e.etype == EntityType::ProductType) out.add(e);
    }
    return out;
}

std::string_view to_string(Relation r) {
    switch (r) {
        case Relation::Synonym: return "Synonym";
        case Relation::SimilarTo: return "SimilarTo";
        case Relation::RelatedTo: return "RelatedTo";
    }
    return "Synonym";
}

Relation parse_relation(std::string_view name) {
    const std::string n = normalize_text(name);
    if (n == "synonym") return Relation::Synonym;
    if (n == "similarto") return Relation::SimilarTo;
    if (n == "relatedto") return Relation::RelatedTo;
    throw ValidationError("unknown relation '" + std::string(name) + "'");
}

void KnowledgeBase::add(std::string_view head, Relation relation, std::string_view tail) {
    Triple t{normalize_text(head), relation, normalize_text(tail)};
    if (t.head.empty() || t.tail.empty()) throw ValidationError("knowledge-base triple has an empty side");
    triples_.push_back(std::move(t));
}

KnowledgeBase KnowledgeBase::load(const std::filesystem::path& path) {
    const auto fields = read_tsv_rows(path, 3);
    KnowledgeBase kb;
    for (std::size_t i = 0; i < fields.size(); i += 3) {
        kb.add(fields[i], parse_relation(fields[i + 1]), fields[i + 2]);
    }
    return kb;
}

void KnowledgeBase::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const auto& t : triples_) out << t.head << '\t' << to_string(t.relation) << '\t' << t.tail << '\n';
}

EntityBag expand(const EntityBag& bag, const KnowledgeBase& kb, const std::set<Relation>& relations) {
    if (relations.empty()) throw ValidationError("expand requires at least one relation");
    EntityBag out = bag;
    for (const auto& e : bag) {
        for (const auto& t : kb.triples()) {
            if (t.head == e.text && relations.count(t.relation)) out.add(Entity{t.tail, e.etype});
        }
    }
    return out;
}

}  // namespace ebrm
