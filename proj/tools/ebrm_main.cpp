#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ebrm/baselines.hpp"
#include "ebrm/core.hpp"
#include "ebrm/ebrm.hpp"
#include "ebrm/evalbench.hpp"
#include "ebrm/logminer.hpp"
#include "ebrm/metrics.hpp"
#include "ebrm/ner.hpp"
#include "ebrm/servecache.hpp"
#include "ebrm/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ebrm;

namespace {

struct Common {
    std::uint64_t seed = 1;
    std::string config_path;
    std::string format = "json";
    json config = json::object();

    void load() {
        if (config_path.empty()) return;
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot open config '" + config_path + "'");
        try {
            config = json::parse(in);
        } catch (const json::exception& e) {
            throw ValidationError("config '" + config_path + "': " + e.what());
        }
        if (!config.is_object()) throw ValidationError("config must be a JSON object");
    }

    json section(const char* name) const { return config.contains(name) ? config[name] : json::object(); }
};

// Table output ------------------------------------------------------------------

std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) {
        std::ostringstream os;
        os << std::setprecision(6) << v.get<double>();
        return os.str();
    }
    if (v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return !x.is_structured(); })) {
        std::string s;
        for (const auto& x : v) s += (s.empty() ? "" : ", ") + scalar_text(x);
        return s;
    }
    return v.dump();
}

void flatten(const json& v, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& rows,
             std::vector<std::pair<std::string, json>>& tables) {
    for (auto it = v.begin(); it != v.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) {
            flatten(*it, key, rows, tables);
        } else if (it->is_array() && !it->empty() && it->front().is_object()) {
            tables.emplace_back(key, *it);
        } else {
            rows.emplace_back(key, scalar_text(*it));
        }
    }
}

void print_records(std::ostream& os, const json& records) {
    std::vector<std::string> cols;
    for (const auto& r : records) {
        for (auto it = r.begin(); it != r.end(); ++it) {
            if (std::find(cols.begin(), cols.end(), it.key()) == cols.end()) cols.push_back(it.key());
        }
    }
    std::vector<std::vector<std::string>> cells;
    std::vector<std::size_t> width;
    for (const auto& c : cols) width.push_back(c.size());
    for (const auto& r : records) {
        std::vector<std::string> row;
        for (std::size_t i = 0; i < cols.size(); ++i) {
            row.push_back(r.contains(cols[i]) ? scalar_text(r[cols[i]]) : "");
            width[i] = std::max(width[i], row.back().size());
        }
        cells.push_back(std::move(row));
    }
    const auto line = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << std::left << std::setw(static_cast<int>(width[i]) + 2) << row[i];
        }
        os << '\n';
    };
    line(cols);
    for (const auto& row : cells) line(row);
}

void emit(const json& v, const Common& common) {
    if (common.format == "json") {
        std::cout << v.dump(2) << '\n';
        return;
    }
    if (v.is_array()) {
        print_records(std::cout, v);
        return;
    }
    std::vector<std::pair<std::string, std::string>> rows;
    std::vector<std::pair<std::string, json>> tables;
    flatten(v, "", rows, tables);
    std::size_t w = 0;
    for (const auto& [k, _] : rows) w = std::max(w, k.size());
    for (const auto& [k, val] : rows) std::cout << std::left << std::setw(static_cast<int>(w) + 2) << k << val << '\n';
    for (const auto& [k, t] : tables) {
        std::cout << '\n' << k << ":\n";
        print_records(std::cout, t);
    }
}

// Shared loading ----------------------------------------------------------------

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw IoError(std::string(what) + " '" + path + "' does not exist");
}

QIDataset read_qi(const std::string& path) {
    require_file(path, "dataset");
    return load_qi_dataset(path, format_from_path(path));
}

EncoderConfig encoder_config(const Common& common) {
    EncoderConfig cfg = encoder_config_from_json(common.section("encoder"));
    cfg.seed = common.seed;
    cfg.validate();
    return cfg;
}

struct TrainFlags {
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> learning_rate;
    std::string optimizer;
    std::optional<double> smoothing_tau;
    std::string log_path;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "Training epochs");
        cmd->add_option("--batch-size", batch_size, "Mini-batch size");
        cmd->add_option("--lr", learning_rate, "Learning rate");
        cmd->add_option("--optimizer", optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
        cmd->add_option("--smoothing-tau", smoothing_tau, "Log-sum-exp temperature; 0 keeps the hard max");
        cmd->add_option("--log-jsonl", log_path, "Per-epoch JSONL training log");
    }

    TrainOptions resolve(const Common& common, const char* section) const {
        TrainOptions o = train_options_from_json(common.section(section));
        o.seed = common.seed;
        if (epochs) o.epochs = *epochs;
        if (batch_size) o.batch_size = *batch_size;
        if (learning_rate) o.optimizer.learning_rate = *learning_rate;
        if (optimizer == "sgd") o.optimizer.kind = OptimizerOptions::Kind::sgd_momentum;
        if (optimizer == "adam") o.optimizer.kind = OptimizerOptions::Kind::adam;
        if (smoothing_tau) o.smoothing_tau = *smoothing_tau;
        return o;
    }
};

json report_json(const TrainReport& r) {
    json epochs = json::array();
    for (const auto& e : r.epochs) {
        json row{{"epoch", e.epoch}, {"loss", e.mean_loss}};
        if (e.dev) {
            row["dev_accuracy"] = e.dev->accuracy;
            row["dev_macro_f1"] = e.dev->macro_f1;
        }
        epochs.push_back(row);
    }
    return {{"best_epoch", r.best_epoch},
            {"best_dev_macro_f1", r.best_dev_macro_f1},
            {"capped_pairs", r.capped_pairs},
            {"epochs", epochs}};
}

/// Checkpoint kind from its header: "ebrm" or a baseline name.
std::string checkpoint_kind(const std::string& path) {
    require_file(path, "model");
    return load_checkpoint(path).header.value("kind", std::string());
}

MinerConfig miner_config(const Common& common) {
    MinerConfig m;
    const json j = common.section("miner");
    m.top_n = j.value("top_n", m.top_n);
    m.neg_m = j.value("neg_m", m.neg_m);
    m.min_exposure_k = j.value("min_exposure_k", m.min_exposure_k);
    m.window_note = j.value("window_note", m.window_note);
    return m;
}

std::map<std::pair<std::string, std::string>, int> labels_by_key(const QIDataset& d, const char* what) {
    std::map<std::pair<std::string, std::string>, int> out;
    for (const auto& p : d.pairs) {
        if (!p.label) throw ValidationError(std::string(what) + " has an unlabeled pair for " + p.query.id);
        out[{p.query.id, p.item.id}] = *p.label;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entity-based query-item relevance: training, caching, serving, evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--config", common.config_path, "JSON file with encoder/train/pretrain/miner sections");
    app.add_option("--format", common.format, "Output format")->check(CLI::IsMember({"json", "table"}))
        ->capture_default_str();

    // tag
    auto* tag_cmd = app.add_subcommand("tag", "Tag text with gazetteer entities");
    std::string gazetteer_path, text, input_path;
    tag_cmd->add_option("--gazetteer", gazetteer_path, "Gazetteer TSV")->required();
    auto* text_opt = tag_cmd->add_option("--text", text, "Text to tag");
    tag_cmd->add_option("--input", input_path, "File with one text per line")->excludes(text_opt);

    // gen-log
    auto* gen_cmd = app.add_subcommand("gen-log", "Write a synthetic world and its click log");
    std::string out_path;
    WorldSpec spec;
    double noise = 0.0;
    gen_cmd->add_option("--out", out_path, "Output directory")->required();
    gen_cmd->add_option("--queries", spec.queries)->capture_default_str();
    gen_cmd->add_option("--items-per-query", spec.items_per_query)->capture_default_str();
    gen_cmd->add_option("--categories", spec.categories)->capture_default_str();
    gen_cmd->add_option("--items-per-category", spec.items_per_category)->capture_default_str();
    gen_cmd->add_option("--noise", noise, "Click noise rate in [0, 0.5)")->capture_default_str();

    // mine-qi / mine-qe
    std::string log_path;
    std::optional<std::size_t> top_n, neg_m, min_exposure;
    const auto miner_flags = [&](CLI::App* cmd) {
        cmd->add_option("--log", log_path, "Click log TSV")->required();
        cmd->add_option("--out", out_path, "Output dataset (.tsv or .jsonl)")->required();
        cmd->add_option("--top-n", top_n, "Positives per query (N)");
        cmd->add_option("--neg-m", neg_m, "Negatives per query (M)");
        cmd->add_option("--min-exposure", min_exposure, "Negative exposure threshold (K)");
    };
    auto* mine_qi_cmd = app.add_subcommand("mine-qi", "Mine QI pseudo-labels from a click log");
    miner_flags(mine_qi_cmd);
    auto* mine_qe_cmd = app.add_subcommand("mine-qe", "Mine QE pseudo-labels from a click log");
    miner_flags(mine_qe_cmd);
    mine_qe_cmd->add_option("--gazetteer", gazetteer_path, "Gazetteer TSV")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train EBRM or a neural baseline on labeled QI pairs");
    std::string train_path, dev_path, init_path, model_kind = "ebrm", pretrain_path;
    TrainFlags train_flags;
    train_cmd->add_option("--train", train_path, "Training QI dataset")->required();
    train_cmd->add_option("--dev", dev_path, "Dev QI dataset for epoch selection")->required();
    train_cmd->add_option("--gazetteer", gazetteer_path, "Gazetteer TSV")->required();
    train_cmd->add_option("--out", out_path, "Output checkpoint")->required();
    train_cmd->add_option("--init", init_path, "Initial checkpoint");
    train_cmd->add_option("--model-kind", model_kind, "ebrm, qirm_bi, qirm_cross, qesrm_bi or qesrm_cross")
        ->check(CLI::IsMember({"ebrm", "qirm_bi", "qirm_cross", "qesrm_bi", "qesrm_cross"}))
        ->capture_default_str();
    train_cmd->add_option("--pretrain-qi", pretrain_path, "Mined QI pairs for a baseline pretraining stage");
    train_flags.attach(train_cmd);

    // pretrain-qe
    auto* pre_cmd = app.add_subcommand("pretrain-qe", "Pretrain EBRM on labeled QE pairs");
    std::string qe_path;
    TrainFlags pre_flags;
    pre_cmd->add_option("--qe", qe_path, "QE dataset")->required();
    pre_cmd->add_option("--out", out_path, "Output checkpoint")->required();
    pre_cmd->add_option("--init", init_path, "Initial checkpoint");
    pre_flags.attach(pre_cmd);

    // init-from-cross
    auto* ifc_cmd = app.add_subcommand("init-from-cross", "Initialize EBRM from a QIRM cross-encoder");
    std::string cross_path;
    ifc_cmd->add_option("--cross", cross_path, "qirm_cross checkpoint")->required();
    ifc_cmd->add_option("--out", out_path, "Output EBRM checkpoint")->required();

    // build-cache
    auto* build_cmd = app.add_subcommand("build-cache", "Precompute the query-entity rule cache");
    std::string model_path, previous_path;
    std::size_t candidate_k = 100;
    build_cmd->add_option("--model", model_path, "EBRM checkpoint")->required();
    build_cmd->add_option("--log", log_path, "Click log TSV")->required();
    build_cmd->add_option("--gazetteer", gazetteer_path, "Gazetteer TSV")->required();
    build_cmd->add_option("--out", out_path, "Rule cache path (item index goes to <out>.items)")->required();
    build_cmd->add_option("--previous", previous_path, "Earlier cache whose human edits carry over");
    build_cmd->add_option("--candidate-k", candidate_k, "Candidate entities per query")->capture_default_str();

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
    ServiceConfig service;
    bool no_fallback = false;
    std::vector<std::string> named_datasets;
    serve_cmd->add_option("--cache", service.cache_path, "Rule cache")->required();
    serve_cmd->add_option("--model", service.model_path, "EBRM checkpoint for cache misses");
    serve_cmd->add_option("--gazetteer", service.gazetteer_path, "Gazetteer TSV")->required();
    serve_cmd->add_option("--host", service.host)->capture_default_str();
    serve_cmd->add_option("--port", service.port)->capture_default_str();
    serve_cmd->add_flag("--no-fallback", no_fallback, "Answer cache misses with a MISS payload");
    serve_cmd->add_option("--dataset", named_datasets, "name=path made available to /v1/eval");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Predict relevance for one pair or a dataset");
    std::string query_text, title, dataset_path, kb_path;
    predict_cmd->add_option("--model", model_path, "Checkpoint (EBRM or neural baseline)");
    predict_cmd->add_option("--model-kind", model_kind, "Needed for ner_pure / ner_kb, which have no checkpoint");
    predict_cmd->add_option("--kb", kb_path, "Knowledge base TSV for ner_kb");
    predict_cmd->add_option("--gazetteer", gazetteer_path, "Gazetteer TSV")->required();
    auto* q_opt = predict_cmd->add_option("--query", query_text, "Query text");
    auto* t_opt = predict_cmd->add_option("--title", title, "Item title");
    auto* d_opt = predict_cmd->add_option("--dataset", dataset_path, "QI dataset to label");
    predict_cmd->add_option("--out", out_path, "Write predictions as a QI dataset");
    q_opt->needs(t_opt);
    t_opt->needs(q_opt);
    d_opt->excludes(q_opt);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Score a predictions file against gold labels");
    std::string pred_path, gold_path;
    eval_cmd->add_option("--pred", pred_path, "Predictions (QI dataset with predicted labels)")->required();
    eval_cmd->add_option("--gold", gold_path, "Gold QI dataset")->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Throughput and cache size of the serving paths");
    std::string bi_path;
    std::size_t warmup = 1, repeats = 3;
    std::vector<std::string> system_names{"ebrm_cached", "qirm_bi_cached", "qirm_cross_direct"};
    std::string cache_path;
    bench_cmd->add_option("--cache", cache_path, "Rule cache")->required();
    bench_cmd->add_option("--bi", bi_path, "qirm_bi checkpoint");
    bench_cmd->add_option("--cross", cross_path, "qirm_cross checkpoint");
    bench_cmd->add_option("--log", log_path, "Click log whose pairs form the stream")->required();
    bench_cmd->add_option("--systems", system_names)->capture_default_str();
    bench_cmd->add_option("--warmup", warmup)->capture_default_str();
    bench_cmd->add_option("--repeats", repeats)->capture_default_str();

    // intervene
    auto* int_cmd = app.add_subcommand("intervene", "Edit the rule cache or simulate expert interventions");
    std::string add_entity, delete_entity;
    bool simulate = false;
    int_cmd->add_option("--cache", cache_path, "Rule cache")->required();
    auto* iq = int_cmd->add_option("--query", query_text, "Query whose rules change");
    auto* ia = int_cmd->add_option("--add", add_entity, "Entity to add");
    auto* idel = int_cmd->add_option("--delete", delete_entity, "Entity to delete");
    auto* isim = int_cmd->add_flag("--simulate", simulate, "Fix the errors of --dataset one action at a time");
    int_cmd->add_option("--dataset", dataset_path, "Labeled QI pairs for --simulate");
    int_cmd->add_option("--out", out_path, "Where to write the edited cache (default: in place)");
    ia->excludes(idel);
    isim->excludes(iq);

    CLI11_PARSE(app, argc, argv);

    try {
        common.load();

        if (*tag_cmd) {
            require_file(gazetteer_path, "gazetteer");
            const Gazetteer g = Gazetteer::load(gazetteer_path);
            const auto one = [&](const std::string& t) {
                json ents = json::array();
                for (const auto& e : tag(t, g)) ents.push_back({{"text", e.text}, {"type", to_string(e.etype)}});
                return json{{"text", normalize_text(t)}, {"entities", ents}};
            };
            if (!input_path.empty()) {
                require_file(input_path, "input");
                std::ifstream in(input_path);
                json all = json::array();
                for (std::string line; std::getline(in, line);) {
                    if (!trim(line).empty()) all.push_back(one(line));
                }
                emit(all, common);
            } else {
                if (trim(text).empty()) throw ValidationError("tag needs --text or --input");
                emit(one(text), common);
            }
        } else if (*gen_cmd) {
            spec.seed = common.seed;
            const World w = make_world(spec);
            const SyntheticLog log = gen_synthetic_log(w, noise, common.seed);
            const fs::path dir = out_path;
            fs::create_directories(dir);
            w.gazetteer.save(dir / "gazetteer.tsv");
            w.kb.save(dir / "kb.tsv");
            save_click_log(log.log, dir / "click_log.tsv");
            const std::string header = "ground truth by whitelist rule, seed=" + std::to_string(common.seed);
            save_qi_dataset(log.truth, dir / "truth.tsv", DatasetFormat::tsv, header);
            const auto parts = split_dataset(log.truth, {0.8, 0.1, 0.1}, common.seed);
            save_qi_dataset(parts.train, dir / "train.tsv", DatasetFormat::tsv, header);
            save_qi_dataset(parts.dev, dir / "dev.tsv", DatasetFormat::tsv, header);
            save_qi_dataset(parts.test, dir / "test.tsv", DatasetFormat::tsv, header);
            emit(json{{"dir", dir.string()},
                      {"queries", w.queries.size()},
                      {"items", w.items.size()},
                      {"records", log.log.records.size()},
                      {"train", parts.train.size()},
                      {"dev", parts.dev.size()},
                      {"test", parts.test.size()}},
                 common);
        } else if (*mine_qi_cmd || *mine_qe_cmd) {
            require_file(log_path, "click log");
            MinerConfig cfg = miner_config(common);
            if (top_n) cfg.top_n = *top_n;
            if (neg_m) cfg.neg_m = *neg_m;
            if (min_exposure) cfg.min_exposure_k = *min_exposure;
            cfg.validate();
            const ClickLog log = load_click_log(log_path);
            std::size_t pos = 0, n = 0;
            if (*mine_qi_cmd) {
                const QIDataset d = mine_qi(log, cfg, common.seed);
                save_qi_dataset(d, out_path, format_from_path(out_path), provenance_header(cfg, "mine_qi", common.seed));
                for (const auto& p : d.pairs) pos += *p.label;
                n = d.size();
            } else {
                require_file(gazetteer_path, "gazetteer");
                const QEDataset d = mine_qe(log, Gazetteer::load(gazetteer_path), cfg);
                save_qe_dataset(d, out_path, format_from_path(out_path), provenance_header(cfg, "mine_qe", common.seed));
                for (const auto& p : d.pairs) pos += *p.label;
                n = d.size();
            }
            emit(json{{"out", out_path}, {"pairs", n}, {"positives", pos}, {"negatives", n - pos}}, common);
        } else if (*train_cmd) {
            require_file(gazetteer_path, "gazetteer");
            const Gazetteer g = Gazetteer::load(gazetteer_path);
            const TaggedQIDataset train_set = tag_dataset(read_qi(train_path), g);
            const TaggedQIDataset dev_set = tag_dataset(read_qi(dev_path), g);
            TrainOptions options = train_flags.resolve(common, "train");
            std::ofstream log_file;
            if (!train_flags.log_path.empty()) {
                log_file.open(train_flags.log_path, std::ios::trunc);
                if (!log_file) throw IoError("cannot open '" + train_flags.log_path + "'");
                options.log = &log_file;
            }
            json out;
            if (model_kind == "ebrm") {
                const EbrmModel init = init_path.empty() ? EbrmModel::create(encoder_config(common)) : load_model(init_path);
                const TrainOutcome r = train(init, train_set, dev_set, options);
                save_model(r.model, out_path);
                out = report_json(r.report);
            } else {
                const BaselineKind kind = parse_baseline_kind(model_kind);
                const BaselineModel init = init_path.empty() ? BaselineModel::create(kind, encoder_config(common))
                                                             : load_baseline(init_path);
                if (init.kind != kind) throw ValidationError("--init checkpoint is not a " + model_kind);
                std::optional<TaggedQIDataset> pre;
                TrainOptions pre_options = train_flags.resolve(common, "pretrain");
                if (!pretrain_path.empty()) pre = tag_dataset(read_qi(pretrain_path), g);
                const auto r = train_baseline(init, train_set, dev_set, g, options, pre ? &*pre : nullptr,
                                              pre ? &pre_options : nullptr);
                save_baseline(r.model, out_path);
                out = report_json(r.report);
                if (pre) out["pretrain"] = report_json(r.pretrain_report);
            }
            out["model_kind"] = model_kind;
            out["out"] = out_path;
            out["dev"] = to_json(model_kind == "ebrm" ? evaluate_model(load_model(out_path), dev_set)
                                                      : evaluate_baseline(load_baseline(out_path), dev_set, g));
            emit(out, common);
        } else if (*pre_cmd) {
            require_file(qe_path, "QE dataset");
            const QEDataset qe = load_qe_dataset(qe_path, format_from_path(qe_path));
            TrainOptions options = pre_flags.resolve(common, "pretrain");
            std::ofstream log_file;
            if (!pre_flags.log_path.empty()) {
                log_file.open(pre_flags.log_path, std::ios::trunc);
                options.log = &log_file;
            }
            const EbrmModel init = init_path.empty() ? EbrmModel::create(encoder_config(common)) : load_model(init_path);
            const TrainOutcome r = pretrain_qe(init, qe, options);
            save_model(r.model, out_path);
            json out = report_json(r.report);
            out["out"] = out_path;
            out["pairs"] = qe.size();
            emit(out, common);
        } else if (*ifc_cmd) {
            require_file(cross_path, "cross-encoder checkpoint");
            const BaselineModel cross = load_baseline(cross_path);
            if (cross.kind != BaselineKind::qirm_cross) throw ValidationError("--cross must be a qirm_cross checkpoint");
            const EbrmModel m = init_from_cross(EbrmModel::zeros(cross.config), *cross.params, cross.config);
            save_model(m, out_path);
            emit(json{{"out", out_path}, {"from", cross_path}, {"config", to_json(m.config)}}, common);
        } else if (*build_cmd) {
            require_file(log_path, "click log");
            require_file(gazetteer_path, "gazetteer");
            const EbrmModel m = load_model(model_path);
            std::optional<RuleCache> previous;
            if (!previous_path.empty()) {
                require_file(previous_path, "previous cache");
                previous = load_cache(previous_path);
            }
            const RuleCache c = build_cache(m, load_click_log(log_path), Gazetteer::load(gazetteer_path), candidate_k,
                                            previous ? &*previous : nullptr, model_path);
            save_cache(c, out_path);
            std::size_t rules = 0;
            for (const auto& [q, rs] : c.rules) rules += rs.entities.size();
            emit(json{{"out", out_path},
                      {"version", c.version},
                      {"rule_sets", c.rules.size()},
                      {"rules", rules},
                      {"items", c.items.items.size()},
                      {"rule_bytes", serialize_rules(c).size()},
                      {"item_index_bytes", serialize_items(c).size()}},
                 common);
        } else if (*serve_cmd) {
            service.fallback_on_miss = !no_fallback;
            for (const auto& nd : named_datasets) {
                const auto eq = nd.find('=');
                if (eq == std::string::npos || eq == 0) throw ValidationError("--dataset expects name=path");
                service.datasets[nd.substr(0, eq)] = nd.substr(eq + 1);
            }
            auto svc = RelevanceService::from_config(service);
            svc->listen(service.host, service.port, [&](int bound) {
                std::cerr << "serving on " << service.host << ':' << bound << std::endl;
            });
        } else if (*predict_cmd) {
            require_file(gazetteer_path, "gazetteer");
            const Gazetteer g = Gazetteer::load(gazetteer_path);
            std::optional<EbrmModel> ebrm_model;
            std::optional<BaselineModel> baseline;
            if (!model_path.empty()) {
                const std::string kind = checkpoint_kind(model_path);
                if (kind == "ebrm") ebrm_model = load_model(model_path);
                else baseline = load_baseline(model_path);
            } else if (model_kind == "ner_pure" || model_kind == "ner_kb") {
                std::optional<KnowledgeBase> kb;
                if (!kb_path.empty()) {
                    require_file(kb_path, "knowledge base");
                    kb = KnowledgeBase::load(kb_path);
                }
                std::set<Relation> rels;
                if (model_kind == "ner_kb") rels = {Relation::Synonym, Relation::SimilarTo, Relation::RelatedTo};
                baseline = BaselineModel::ner(parse_baseline_kind(model_kind), std::move(kb), rels);
            } else {
                throw ValidationError("predict needs --model, or --model-kind ner_pure|ner_kb");
            }
            const auto predict_pair = [&](const Query& q, const Item& item) {
                const EntityBag bag = product_entities(tag(item.title, g));
                if (ebrm_model) {
                    const QIPrediction p = predict_qi(*ebrm_model, q, bag);
                    json rationale = json::array();
                    for (const auto& s : p.rationale) {
                        rationale.push_back({{"entity", s.entity.text}, {"score", s.score}, {"probability", s.probability}});
                    }
                    json out{{"label", p.label}, {"probability", p.probability}, {"rationale", rationale}};
                    out["score"] = std::isfinite(p.score) ? json(p.score) : json(nullptr);
                    out["argmax_entity"] = p.argmax_entity ? json(p.argmax_entity->text) : json(nullptr);
                    return out;
                }
                const BaselinePrediction p = predict_baseline(*baseline, q, item, bag, g);
                return json{{"label", p.label}, {"score", p.score}};
            };
            if (!dataset_path.empty()) {
                QIDataset d = read_qi(dataset_path);
                std::vector<int> preds, golds;
                for (auto& p : d.pairs) {
                    const int label = predict_pair(p.query, p.item)["label"].get<int>();
                    if (p.label) {
                        golds.push_back(*p.label);
                        preds.push_back(label);
                    }
                    p.label = label;
                }
                if (!out_path.empty()) save_qi_dataset(d, out_path, format_from_path(out_path), "predictions");
                json out{{"pairs", d.size()}, {"positives", std::count_if(d.pairs.begin(), d.pairs.end(), [](const QIPair& p) {
                                                   return *p.label == 1;
                                               })}};
                if (!golds.empty()) out["metrics"] = to_json(evaluate(preds, golds));
                emit(out, common);
            } else {
                if (query_text.empty()) throw ValidationError("predict needs --query/--title or --dataset");
                json out = predict_pair(Query::make("q", query_text), Item::make("i", title));
                out["query"] = normalize_text(query_text);
                out["title"] = normalize_text(title);
                emit(out, common);
            }
        } else if (*eval_cmd) {
            const auto pred = labels_by_key(read_qi(pred_path), "predictions");
            const auto gold = labels_by_key(read_qi(gold_path), "gold");
            std::vector<int> preds, golds;
            for (const auto& [key, label] : gold) {
                auto it = pred.find(key);
                if (it == pred.end()) throw ValidationError("no prediction for " + key.first + " / " + key.second);
                preds.push_back(it->second);
                golds.push_back(label);
            }
            if (golds.empty()) throw ValidationError("gold dataset is empty");
            emit(to_json(evaluate(preds, golds)), common);
        } else if (*bench_cmd) {
            require_file(cache_path, "cache");
            require_file(log_path, "click log");
            const RuleCache cache = load_cache(cache_path);
            const ClickLog log = load_click_log(log_path);
            std::vector<ServingSystem> systems;
            for (const auto& s : system_names) systems.push_back(parse_serving_system(s));
            std::optional<BaselineModel> bi, cross;
            std::optional<BiVectorCache> bi_cache;
            if (!bi_path.empty()) {
                bi = load_baseline(bi_path);
                std::vector<Query> qs;
                std::vector<Item> items;
                for (const auto& r : log.records) {
                    qs.push_back(r.query);
                    items.push_back(r.item);
                }
                bi_cache = build_bi_cache(*bi, qs, items);
            }
            if (!cross_path.empty()) cross = load_baseline(cross_path);
            std::vector<BenchPair> pairs;
            for (const auto& r : log.records) pairs.push_back({r.query.text, r.item.id, r.item.title});
            const BenchSystems loaded{&cache, bi ? &*bi : nullptr, bi_cache ? &*bi_cache : nullptr,
                                      cross ? &*cross : nullptr};
            const SpeedReport rep = bench_speed(systems, loaded, pairs, warmup, repeats);
            if (common.format == "table") {
                json rows = json::array();
                for (const auto& [s, speed] : rep.systems) {
                    rows.push_back({{"system", to_string(s)},
                                    {"instances_per_second", speed.instances_per_second},
                                    {"cache_bytes", speed.cache_bytes}});
                }
                emit(rows, common);
            } else {
                emit(to_json(rep), common);
            }
        } else if (*int_cmd) {
            require_file(cache_path, "cache");
            RuleCache cache = load_cache(cache_path);
            const std::string target = out_path.empty() ? cache_path : out_path;
            if (simulate) {
                if (dataset_path.empty()) throw ValidationError("--simulate needs --dataset");
                const InterventionRun run = simulate_intervention(std::move(cache), read_qi(dataset_path));
                if (!out_path.empty()) save_cache(run.cache, out_path);
                emit(to_json(run.report), common);
            } else {
                if (query_text.empty() || (add_entity.empty() && delete_entity.empty())) {
                    throw ValidationError("intervene needs --query with --add or --delete (or --simulate)");
                }
                const bool add = !add_entity.empty();
                const InterventionOutcome o = apply_intervention(
                    cache, query_text, add ? InterventionAction::add : InterventionAction::remove,
                    add ? add_entity : delete_entity);
                save_cache(cache, target);
                emit(json{{"changed", o.changed}, {"message", o.message}, {"version", cache.version}, {"out", target}},
                     common);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
