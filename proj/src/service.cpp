#include "ebrm/service.hpp"

#include <thread>

#include <httplib.h>

#include "ebrm/metrics.hpp"

namespace ebrm {

using nlohmann::json;

struct RelevanceService::Impl {
    httplib::Server server;
    std::thread thread;
};

namespace {

Reply error(int status, std::string message) {
    return {status, json{{"error", std::move(message)}}};
}

std::optional<std::uint64_t> read_expected_version(const json& body) {
    if (!body.contains("expected_version")) return std::nullopt;
    return body.at("expected_version").get<std::uint64_t>();
}

json rule_set_json(const QueryRuleSet& rs, std::uint64_t cache_version) {
    json ents = json::array();
    for (const auto& [text, prov] : rs.entities) {
        ents.push_back({{"entity", text}, {"provenance", std::string(to_string(prov))}});
    }
    return {{"query", rs.query},
            {"rule_version", rs.version},
            {"version", cache_version},
            {"entities", ents},
            {"suppressed", rs.suppressed}};
}

}  // namespace

RelevanceService::RelevanceService(RuleCache cache, std::optional<EbrmModel> model, Gazetteer gazetteer,
                                   ServiceConfig config)
    : snapshot_(std::make_shared<const RuleCache>(std::move(cache))),
      model_(std::move(model)),
      gazetteer_(std::move(gazetteer)),
      config_(std::move(config)),
      impl_(std::make_unique<Impl>()) {}

RelevanceService::~RelevanceService() { stop(); }

std::unique_ptr<RelevanceService> RelevanceService::from_config(const ServiceConfig& config) {
    for (const auto* p : {&config.cache_path, &config.gazetteer_path}) {
        if (!std::filesystem::exists(*p)) throw IoError("missing file '" + p->string() + "'");
    }
    std::optional<EbrmModel> model;
    if (!config.model_path.empty()) model = load_model(config.model_path);
    return std::make_unique<RelevanceService>(load_cache(config.cache_path), std::move(model),
                                              Gazetteer::load(config.gazetteer_path), config);
}

std::shared_ptr<const RuleCache> RelevanceService::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
}

json RelevanceService::explain(const RuleCache& c, const Query& q,
                               std::span<const std::string> entities) const {
    const QueryRuleSet* rs = c.find(q.text);
    json out = json::array();
    for (const auto& text : entities) {
        json row{{"entity", text}};
        if (rs) {
            auto it = rs->entities.find(text);
            row["in_rules"] = it != rs->entities.end();
            if (it != rs->entities.end()) row["provenance"] = std::string(to_string(it->second));
        }
        if (model_) {
            const QEScore s = score_qe(*model_, q, Entity::make(text, EntityType::ProductType));
            row["score"] = s.score;
            row["probability"] = s.probability;
        }
        out.push_back(std::move(row));
    }
    return out;
}

Reply RelevanceService::fallback(const RuleCache& c, const Query& q,
                                 std::span<const std::string> entities) const {
    json body{{"query", q.text}, {"cache_hit", false}, {"version", c.version}};
    if (!config_.fallback_on_miss || !model_) {
        body["outcome"] = "miss";
        body["label"] = nullptr;
        body["rationale"] = json::array();
        return {200, body};
    }
    EntityBag bag;
    for (const auto& e : entities) bag.add(Entity::make(e, EntityType::ProductType));
    const QIPrediction p = predict_qi(*model_, q, bag);
    json rationale = json::array();
    json explanation = json::array();
    for (const auto& s : p.rationale) {
        if (s.score >= 0.0) rationale.push_back(s.entity.text);
        explanation.push_back({{"entity", s.entity.text}, {"score", s.score}, {"probability", s.probability}});
    }
    body["outcome"] = "model";
    body["label"] = p.label;
    body["rationale"] = rationale;
    body["explanation"] = explanation;
    return {200, body};
}

Reply RelevanceService::predict_by_id(const std::string& query_text, const std::string& item_id) const {
    if (trim(query_text).empty() || item_id.empty()) return error(400, "query and item_id are required");
    const auto c = snapshot();
    auto it = c->items.items.find(item_id);
    if (it == c->items.items.end()) return error(404, "unknown item '" + item_id + "'");
    const Query q = Query::make("", query_text);
    const ServeResult r = serve_predict_entities(*c, q.text, it->second);
    if (r.outcome == ServeResult::Outcome::miss) return fallback(*c, q, it->second);
    return {200, json{{"query", q.text},
                      {"item_id", item_id},
                      {"outcome", "hit"},
                      {"cache_hit", true},
                      {"label", r.label},
                      {"rationale", r.rationale},
                      {"explanation", explain(*c, q, r.rationale)},
                      {"item_entities", it->second},
                      {"version", r.version}}};
}

Reply RelevanceService::predict_by_title(const json& body) const {
    if (!body.is_object() || !body.contains("query") || !body.contains("title") ||
        !body["query"].is_string() || !body["title"].is_string()) {
        return error(400, "body must be {\"query\": string, \"title\": string}");
    }
    const std::string query_text = body["query"];
    if (trim(query_text).empty()) return error(400, "query must be non-empty");
    const Query q = Query::make("", query_text);
    std::vector<std::string> entities;
    for (const auto& e : product_entities(tag(body["title"].get<std::string>(), gazetteer_))) {
        entities.push_back(e.text);
    }
    const auto c = snapshot();
    const ServeResult r = serve_predict_entities(*c, q.text, entities);
    if (r.outcome == ServeResult::Outcome::miss) return fallback(*c, q, entities);
    return {200, json{{"query", q.text},
                      {"outcome", "hit"},
                      {"cache_hit", true},
                      {"label", r.label},
                      {"rationale", r.rationale},
                      {"explanation", explain(*c, q, r.rationale)},
                      {"item_entities", entities},
                      {"version", r.version}}};
}

Reply RelevanceService::get_rules(const std::string& query) const {
    const auto c = snapshot();
    const QueryRuleSet* rs = c->find(normalize_text(query));
    if (!rs) return error(404, "no rule set for query '" + query + "'");
    return {200, rule_set_json(*rs, c->version)};
}

Reply RelevanceService::mutate(const std::string& query, InterventionAction action, const std::string& entity,
                               std::optional<std::uint64_t> expected_version) {
    if (normalize_text(query).empty() || normalize_text(entity).empty()) {
        return error(400, "query and entity must be non-empty");
    }
    std::lock_guard writer(writer_mutex_);
    const auto current = snapshot();
    if (expected_version && *expected_version != current->version) {
        return {409, json{{"error", "cache version changed"},
                          {"expected_version", *expected_version},
                          {"version", current->version}}};
    }
    auto next = std::make_shared<RuleCache>(*current);
    const InterventionOutcome outcome = apply_intervention(*next, query, action, entity);
    const std::uint64_t version = next->version;
    const QueryRuleSet* rs = next->find(normalize_text(query));
    json body{{"changed", outcome.changed}, {"message", outcome.message}, {"version", version}};
    if (rs) body["rules"] = rule_set_json(*rs, version);
    if (outcome.changed) {
        std::lock_guard lock(snapshot_mutex_);
        snapshot_ = std::move(next);
    }
    return {200, body};
}

Reply RelevanceService::add_entity(const std::string& query, const json& body) {
    if (!body.is_object() || !body.contains("entity") || !body["entity"].is_string()) {
        return error(400, "body must be {\"entity\": string}");
    }
    std::optional<std::uint64_t> expected;
    try {
        expected = read_expected_version(body);
    } catch (const json::exception&) {
        return error(400, "expected_version must be a non-negative integer");
    }
    return mutate(query, InterventionAction::add, body["entity"], expected);
}

Reply RelevanceService::delete_entity(const std::string& query, const std::string& entity,
                                      std::optional<std::uint64_t> expected_version) {
    return mutate(query, InterventionAction::remove, entity, expected_version);
}

Reply RelevanceService::eval(const json& body) const {
    if (!body.is_object() || !body.contains("dataset") || !body["dataset"].is_string()) {
        return error(400, "body must be {\"dataset\": name or path}");
    }
    const std::string ref = body["dataset"];
    std::filesystem::path path = ref;
    if (auto it = config_.datasets.find(ref); it != config_.datasets.end()) path = it->second;
    if (!std::filesystem::exists(path)) return error(404, "unknown dataset '" + ref + "'");
    QIDataset data;
    try {
        data = load_qi_dataset(path, format_from_path(path));
    } catch (const std::exception& e) {
        return error(400, e.what());
    }
    const auto c = snapshot();
    std::vector<int> preds, golds;
    std::size_t hits = 0, fallbacks = 0;
    for (const auto& p : data.pairs) {
        if (!p.label) continue;
        std::vector<std::string> entities;
        if (auto it = c->items.items.find(p.item.id); it != c->items.items.end()) {
            entities = it->second;
        } else {
            for (const auto& e : product_entities(tag(p.item.title, gazetteer_))) entities.push_back(e.text);
        }
        const ServeResult r = serve_predict_entities(*c, p.query.text, entities);
        int label = r.label;
        if (r.outcome == ServeResult::Outcome::hit) {
            ++hits;
        } else if (config_.fallback_on_miss && model_) {
            EntityBag bag;
            for (const auto& e : entities) bag.add(Entity::make(e, EntityType::ProductType));
            label = predict_qi(*model_, p.query, bag).label;
            ++fallbacks;
        }
        preds.push_back(label);
        golds.push_back(*p.label);
    }
    if (preds.empty()) return error(400, "dataset has no labeled pairs");
    json out = to_json(evaluate(preds, golds));
    out["pairs"] = preds.size();
    out["cache_hits"] = hits;
    out["fallbacks"] = fallbacks;
    out["version"] = c->version;
    return {200, out};
}

Reply RelevanceService::version() const {
    const auto c = snapshot();
    return {200, json{{"version", c->version},
                      {"model_checkpoint_ref", c->model_checkpoint_ref},
                      {"rule_sets", c->rules.size()},
                      {"items", c->items.items.size()},
                      {"fallback_on_miss", config_.fallback_on_miss && model_.has_value()}}};
}

namespace {

void send(httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

json parse_body(const httplib::Request& req, bool* ok) {
    *ok = true;
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception&) {
        *ok = false;
        return {};
    }
}

}  // namespace

int RelevanceService::start(const std::string& host, int port) {
    auto& srv = impl_->server;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Get("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
        send(res, predict_by_id(req.get_param_value("query"), req.get_param_value("item_id")));
    });
    srv.Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
        bool ok;
        const json body = parse_body(req, &ok);
        send(res, ok ? predict_by_title(body) : error(400, "malformed JSON body"));
    });
    srv.Get(R"(/v1/rules/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        send(res, get_rules(req.matches[1]));
    });
    srv.Post(R"(/v1/rules/([^/]+)/entities)", [this](const httplib::Request& req, httplib::Response& res) {
        bool ok;
        const json body = parse_body(req, &ok);
        send(res, ok ? add_entity(req.matches[1], body) : error(400, "malformed JSON body"));
    });
    srv.Delete(R"(/v1/rules/([^/]+)/entities/([^/]+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                   std::optional<std::uint64_t> expected;
                   if (req.has_param("expected_version")) {
                       try {
                           expected = std::stoull(req.get_param_value("expected_version"));
                       } catch (const std::exception&) {
                           send(res, error(400, "expected_version must be a non-negative integer"));
                           return;
                       }
                   }
                   send(res, delete_entity(req.matches[1], req.matches[2], expected));
               });
    srv.Post("/v1/eval", [this](const httplib::Request& req, httplib::Response& res) {
        bool ok;
        const json body = parse_body(req, &ok);
        send(res, ok ? eval(body) : error(400, "malformed JSON body"));
    });
    srv.Get("/v1/version", [this](const httplib::Request&, httplib::Response& res) { send(res, version()); });
    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        Reply r = error(500, "internal error");
        try {
            std::rethrow_exception(ep);
        } catch (const ValidationError& e) {
            r = error(400, e.what());
        } catch (const std::exception& e) {
            r = error(500, e.what());
        }
        send(res, r);
    });

    const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    return bound;
}

void RelevanceService::listen(const std::string& host, int port, const std::function<void(int)>& on_ready) {
    const int bound = start(host, port);
    if (on_ready) on_ready(bound);
    if (impl_->thread.joinable()) impl_->thread.join();
}

void RelevanceService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) {
        impl_->thread.join();
    }
}

}  // namespace ebrm
