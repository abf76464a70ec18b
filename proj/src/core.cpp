#include "ebrm/core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace ebrm {

using nlohmann::json;

ParseError::ParseError(std::string source, std::size_t line, const std::string& reason)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + reason),
      source_(std::move(source)),
      line_(line) {}

// Text -----------------------------------------------------------------------

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::string trim(std::string_view text) {
    std::size_t b = 0, e = text.size();
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    return std::string(text.substr(b, e - b));
}

std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::vector<std::string_view> tokenize(std::string_view normalized) {
    std::vector<std::string_view> tokens;
    std::size_t start = 0;
    while (start < normalized.size()) {
        std::size_t end = normalized.find(' ', start);
        if (end == std::string_view::npos) end = normalized.size();
        if (end > start) tokens.push_back(normalized.substr(start, end - start));
        start = end + 1;
    }
    return tokens;
}

// Domain types ---------------------------------------------------------------

std::string_view to_string(EntityType type) {
    switch (type) {
        case EntityType::ProductType: return "ProductType";
        case EntityType::Brand: return "Brand";
        case EntityType::Color: return "Color";
        case EntityType::Other: return "Other";
    }
    return "Other";
}

EntityType parse_entity_type(std::string_view name) {
    const std::string n = normalize_text(name);
    if (n == "producttype" || n == "product_type") return EntityType::ProductType;
    if (n == "brand") return EntityType::Brand;
    if (n == "color") return EntityType::Color;
    if (n == "other") return EntityType::Other;
    throw ValidationError("unknown entity type '" + std::string(name) + "'");
}

Query Query::make(std::string id, std::string_view text) {
    Query q{std::move(id), normalize_text(text)};
    if (q.text.empty()) throw ValidationError("query '" + q.id + "' has empty text");
    return q;
}

Item Item::make(std::string id, std::string_view title) {
    Item i{std::move(id), normalize_text(title)};
    if (i.title.empty()) throw ValidationError("item '" + i.id + "' has empty title");
    return i;
}

Entity Entity::make(std::string_view text, EntityType etype) {
    Entity e{normalize_text(text), etype};
    if (e.text.empty()) throw ValidationError("entity has empty text");
    return e;
}

EntityBag::EntityBag(std::initializer_list<Entity> entities) {
    for (const auto& e : entities) add(e);
}

bool EntityBag::add(Entity entity) {
    if (contains(entity)) return false;
    entities_.push_back(std::move(entity));
    return true;
}

bool EntityBag::contains(const Entity& entity) const {
    return std::find(entities_.begin(), entities_.end(), entity) != entities_.end();
}

bool EntityBag::contains_text(std::string_view text) const {
    return std::any_of(entities_.begin(), entities_.end(),
                       [&](const Entity& e) { return e.text == text; });
}

ClickLog aggregate_clicks(std::vector<ClickRecord> records) {
    std::map<std::pair<std::string, std::string>, ClickRecord> merged;
    for (auto& r : records) {
        if (r.clicks > r.exposures) {
            throw ValidationError("click record (" + r.query.id + ", " + r.item.id + ") has " +
                                  std::to_string(r.clicks) + " clicks > " +
                                  std::to_string(r.exposures) + " exposures");
        }
        auto key = std::make_pair(r.query.id, r.item.id);
        auto it = merged.find(key);
        if (it == merged.end()) {
            merged.emplace(std::move(key), std::move(r));
            continue;
        }
        if (it->second.query.text != r.query.text || it->second.item.title != r.item.title) {
            throw ValidationError("click record (" + r.query.id + ", " + r.item.id +
                                  ") appears with conflicting texts");
        }
        it->second.exposures += r.exposures;
        it->second.clicks += r.clicks;
    }
    ClickLog log;
    log.records.reserve(merged.size());
    for (auto& [key, rec] : merged) log.records.push_back(std::move(rec));
    return log;
}

// File I/O -------------------------------------------------------------------

DatasetFormat format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".jsonl" ? DatasetFormat::jsonl : DatasetFormat::tsv;
}

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

bool skip_line(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return trim(line).empty() || line.front() == '#';
}

std::optional<int> parse_label(std::string_view field) {
    const std::string f = trim(field);
    if (f.empty()) return std::nullopt;
    if (f == "0") return 0;
    if (f == "1") return 1;
    throw ValidationError("label '" + f + "' is not 0 or 1");
}

std::uint64_t parse_count(std::string_view field, const char* what) {
    const std::string f = trim(field);
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
    if (ec != std::errc() || ptr != f.data() + f.size() || f.empty()) {
        throw ValidationError(std::string(what) + " '" + f + "' is not a non-negative integer");
    }
    return value;
}

std::optional<int> json_label(const json& j) {
    if (!j.contains("label") || j["label"].is_null()) return std::nullopt;
    const auto& l = j["label"];
    int v = -1;
    if (l.is_number_integer()) v = l.get<int>();
    else if (l.is_string()) return parse_label(l.get<std::string>());
    else throw ValidationError("label must be an integer");
    if (v != 0 && v != 1) throw ValidationError("label " + std::to_string(v) + " is not 0 or 1");
    return v;
}

void write_header(std::ostream& out, std::string_view header_comment) {
    if (header_comment.empty()) return;
    std::istringstream lines{std::string(header_comment)};
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
}

template <class Pair, class ParseTsv, class ParseJson>
Dataset<Pair> load_lines(const std::filesystem::path& path, DatasetFormat format,
                         ParseTsv parse_tsv, ParseJson parse_json) {
    auto in = open_in(path);
    Dataset<Pair> data;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (skip_line(line)) continue;
        try {
            if (format == DatasetFormat::tsv) {
                data.pairs.push_back(parse_tsv(split_tabs(line)));
            } else {
                data.pairs.push_back(parse_json(json::parse(line)));
            }
        } catch (const json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        } catch (const ValidationError& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return data;
}

}  // namespace

QIDataset load_qi_dataset(const std::filesystem::path& path, DatasetFormat format) {
    return load_lines<QIPair>(
        path, format,
        [](const std::vector<std::string>& f) {
            if (f.size() != 5) {
                throw ValidationError("expected 5 tab-separated fields, got " +
                                      std::to_string(f.size()));
            }
            return QIPair{Query::make(f[0], f[1]), Item::make(f[2], f[3]), parse_label(f[4])};
        },
        [](const json& j) {
            return QIPair{Query::make(j.at("query_id").get<std::string>(),
                                      j.at("query_text").get<std::string>()),
                          Item::make(j.at("item_id").get<std::string>(),
                                     j.at("item_title").get<std::string>()),
                          json_label(j)};
        });
}

void save_qi_dataset(const QIDataset& data, const std::filesystem::path& path,
                     DatasetFormat format, std::string_view header_comment) {
    auto out = open_out(path);
    if (format == DatasetFormat::tsv) write_header(out, header_comment);
    for (const auto& p : data.pairs) {
        if (format == DatasetFormat::tsv) {
            out << p.query.id << '\t' << p.query.text << '\t' << p.item.id << '\t' << p.item.title
                << '\t';
            if (p.label) out << *p.label;
            out << '\n';
        } else {
            json j{{"query_id", p.query.id},
                   {"query_text", p.query.text},
                   {"item_id", p.item.id},
                   {"item_title", p.item.title}};
            j["label"] = p.label ? json(*p.label) : json(nullptr);
            out << j.dump() << '\n';
        }
    }
}

QEDataset load_qe_dataset(const std::filesystem::path& path, DatasetFormat format) {
    return load_lines<QEPair>(
        path, format,
        [](const std::vector<std::string>& f) {
            if (f.size() != 5) {
                throw ValidationError("expected 5 tab-separated fields, got " +
                                      std::to_string(f.size()));
            }
            return QEPair{Query::make(f[0], f[1]), Entity::make(f[2], parse_entity_type(f[3])),
                          parse_label(f[4])};
        },
        [](const json& j) {
            return QEPair{Query::make(j.at("query_id").get<std::string>(),
                                      j.at("query_text").get<std::string>()),
                          Entity::make(j.at("entity_text").get<std::string>(),
                                       parse_entity_type(j.at("entity_type").get<std::string>())),
                          json_label(j)};
        });
}

void save_qe_dataset(const QEDataset& data, const std::filesystem::path& path,
                     DatasetFormat format, std::string_view header_comment) {
    auto out = open_out(path);
    if (format == DatasetFormat::tsv) write_header(out, header_comment);
    for (const auto& p : data.pairs) {
        if (format == DatasetFormat::tsv) {
            out << p.query.id << '\t' << p.query.text << '\t' << p.entity.text << '\t'
                << to_string(p.entity.etype) << '\t';
            if (p.label) out << *p.label;
            out << '\n';
        } else {
            json j{{"query_id", p.query.id},
                   {"query_text", p.query.text},
                   {"entity_text", p.entity.text},
                   {"entity_type", std::string(to_string(p.entity.etype))}};
            j["label"] = p.label ? json(*p.label) : json(nullptr);
            out << j.dump() << '\n';
        }
    }
}

ClickLog load_click_log(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<ClickRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (skip_line(line)) continue;
        try {
            const auto f = split_tabs(line);
            if (f.size() != 6) {
                throw ValidationError("expected 6 tab-separated fields, got " +
                                      std::to_string(f.size()));
            }
            ClickRecord r{Query::make(f[0], f[1]), Item::make(f[2], f[3]),
                          parse_count(f[4], "exposures"), parse_count(f[5], "clicks")};
            if (r.clicks > r.exposures) {
                throw ValidationError("record (" + r.query.id + ", " + r.item.id + ") has " +
                                      std::to_string(r.clicks) + " clicks > " +
                                      std::to_string(r.exposures) + " exposures");
            }
            records.push_back(std::move(r));
        } catch (const ValidationError& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return aggregate_clicks(std::move(records));
}

void save_click_log(const ClickLog& log, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& r : log.records) {
        out << r.query.id << '\t' << r.query.text << '\t' << r.item.id << '\t' << r.item.title
            << '\t' << r.exposures << '\t' << r.clicks << '\n';
    }
}

namespace detail {

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw ValidationError("split ratios must be non-negative");
        total += r;
    }
    if (!(total > 0.0)) throw ValidationError("split ratios must sum to a positive value");
    const auto share = [&](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r / total));
    };
    const std::size_t dev = share(ratios[1]);
    const std::size_t test = share(ratios[2]);
    return {n - dev - test, dev, test};
}

}  // namespace detail

}  // namespace ebrm
