#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "ebrm/ebrm.hpp"
#include "ebrm/ner.hpp"
#include "ebrm/servecache.hpp"

namespace ebrm {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path cache_path;
    std::filesystem::path model_path;
    std::filesystem::path gazetteer_path;
    bool fallback_on_miss = true;
    /// Names accepted by POST /v1/eval besides literal paths.
    std::map<std::string, std::filesystem::path> datasets;
};

struct Reply {
    int status = 200;
    nlohmann::json body;
};

/// HTTP-independent handlers plus an embedded httplib server. Readers take
/// the current snapshot under a short lock and never see partial edits;
/// writers are serialized and publish a fresh snapshot.
class RelevanceService {
public:
    RelevanceService(RuleCache cache, std::optional<EbrmModel> model, Gazetteer gazetteer,
                     ServiceConfig config);
    ~RelevanceService();

    RelevanceService(const RelevanceService&) = delete;
    RelevanceService& operator=(const RelevanceService&) = delete;

    /// Loads cache, model and gazetteer from the configured paths.
    static std::unique_ptr<RelevanceService> from_config(const ServiceConfig& config);

    std::shared_ptr<const RuleCache> snapshot() const;

    Reply predict_by_id(const std::string& query, const std::string& item_id) const;
    Reply predict_by_title(const nlohmann::json& body) const;
    Reply get_rules(const std::string& query) const;
    Reply add_entity(const std::string& query, const nlohmann::json& body);
    Reply delete_entity(const std::string& query, const std::string& entity,
                        std::optional<std::uint64_t> expected_version);
    Reply eval(const nlohmann::json& body) const;
    Reply version() const;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    /// Returns the bound port.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from another thread. `on_ready` gets
    /// the bound port once the server accepts connections.
    void listen(const std::string& host, int port, const std::function<void(int)>& on_ready = {});
    void stop();

private:
    struct Impl;

    Reply mutate(const std::string& query, InterventionAction action, const std::string& entity,
                 std::optional<std::uint64_t> expected_version);
    nlohmann::json explain(const RuleCache& c, const Query& q,
                           std::span<const std::string> entities) const;
    Reply fallback(const RuleCache& c, const Query& q, std::span<const std::string> entities) const;

    mutable std::mutex snapshot_mutex_;
    std::shared_ptr<const RuleCache> snapshot_;
    std::mutex writer_mutex_;
    std::optional<EbrmModel> model_;
    Gazetteer gazetteer_;
    ServiceConfig config_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ebrm
