#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ebrm/core.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int status = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(EBRM_BIN) + " " + args + " 2>/dev/null";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

json run_json(const std::string& args) {
    const RunResult r = run(args);
    EXPECT_EQ(r.status, 0) << args << "\n" << r.out;
    return json::parse(r.out);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

class Pipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir = fs::temp_directory_path() / "ebrm_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(dir / "config.json") << R"({"encoder": {"embed_dim": 16, "hash_buckets": 4096, "mlp_hidden": 16},
                                                 "train": {"epochs": 8, "batch_size": 16,
                                                           "optimizer": {"kind": "adam", "learning_rate": 0.01}}})";
        run_json("gen-log --out " + p("w") + " --queries 30 --items-per-query 20 --categories 8 --items-per-category 15 --seed 3");
        run_json("train --config " + p("config.json") + " --train " + p("w/train.tsv") + " --dev " + p("w/dev.tsv") +
                 " --gazetteer " + p("w/gazetteer.tsv") + " --out " + p("model.ckpt"));
        run_json("build-cache --model " + p("model.ckpt") + " --log " + p("w/click_log.tsv") + " --gazetteer " +
                 p("w/gazetteer.tsv") + " --out " + p("cache.jsonl"));
    }

    static std::string p(const std::string& rel) { return (dir / rel).string(); }

    static inline fs::path dir;
};

}  // namespace

TEST_F(Pipeline, PredictPrintsLabelAndRationale) {
    const json out = run_json("predict --model " + p("model.ckpt") + " --gazetteer " + p("w/gazetteer.tsv") +
                              " --query 'some query' --title 'anything at all'");
    EXPECT_TRUE(out.contains("label"));
    EXPECT_TRUE(out["rationale"].is_array());
    const RunResult table = run("predict --format table --model " + p("model.ckpt") + " --gazetteer " +
                                p("w/gazetteer.tsv") + " --query q --title t");
    EXPECT_EQ(table.status, 0);
    EXPECT_NE(table.out.find("label"), std::string::npos);
}

TEST_F(Pipeline, EvalReportsMetrics) {
    run_json("predict --model " + p("model.ckpt") + " --gazetteer " + p("w/gazetteer.tsv") + " --dataset " +
             p("w/test.tsv") + " --out " + p("preds.tsv"));
    const json m = run_json("eval --pred " + p("preds.tsv") + " --gold " + p("w/test.tsv"));
    for (const char* k : {"accuracy", "macro_f1", "pos_acc", "neg_acc"}) {
        ASSERT_TRUE(m.contains(k)) << k;
        EXPECT_GE(m[k].get<double>(), 0.0);
        EXPECT_LE(m[k].get<double>(), 1.0);
    }
}

TEST_F(Pipeline, ServedLabelsMatchOfflinePredictions) {
    run_json("predict --model " + p("model.ckpt") + " --gazetteer " + p("w/gazetteer.tsv") + " --dataset " +
             p("w/test.tsv") + " --out " + p("offline.tsv"));
    const ebrm::QIDataset offline = ebrm::load_qi_dataset(p("offline.tsv"), ebrm::DatasetFormat::tsv);
    ASSERT_FALSE(offline.empty());

    const std::string log = p("serve.log");
    const std::string cmd = std::string(EBRM_BIN) + " serve --cache " + p("cache.jsonl") + " --model " + p("model.ckpt") +
                            " --gazetteer " + p("w/gazetteer.tsv") + " --port 0 2>" + log + " & echo $!";
    FILE* pipe = popen(cmd.c_str(), "r");
    ASSERT_NE(pipe, nullptr);
    int pid = 0;
    ASSERT_EQ(fscanf(pipe, "%d", &pid), 1);
    pclose(pipe);

    int port = 0;
    const std::regex re(R"(serving on [^:]+:(\d+))");
    for (int k = 0; k < 100 && port == 0; ++k) {
        std::smatch m;
        const std::string text = slurp(log);
        if (std::regex_search(text, m, re)) port = std::stoi(m[1]);
        else std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    ASSERT_GT(port, 0) << slurp(log);

    httplib::Client client("127.0.0.1", port);
    std::size_t hits = 0;
    for (const auto& pair : offline.pairs) {
        const auto res = client.Get("/v1/predict?query=" + httplib::detail::encode_query_param(pair.query.text) +
                                    "&item_id=" + httplib::detail::encode_query_param(pair.item.id));
        ASSERT_TRUE(res);
        ASSERT_EQ(res->status, 200) << res->body;
        const json body = json::parse(res->body);
        hits += body["cache_hit"].get<bool>();
        EXPECT_EQ(body["label"].get<int>(), *pair.label) << pair.query.text << " / " << pair.item.id;
    }
    EXPECT_EQ(hits, offline.size());
    kill(pid, SIGTERM);
}

TEST(Cli, ErrorsExitNonZero) {
    EXPECT_NE(run("no-such-command").status, 0);
    EXPECT_NE(run("eval --pred /nonexistent/a.tsv --gold /nonexistent/b.tsv").status, 0);
    EXPECT_NE(run("tag --gazetteer /nonexistent/g.tsv --text x --bogus-flag").status, 0);
    const std::string cmd = std::string(EBRM_BIN) + " eval --pred /nonexistent/a.tsv --gold /nonexistent/b.tsv 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    char buf[512] = {};
    const std::size_t n = fread(buf, 1, sizeof buf - 1, pipe);
    pclose(pipe);
    EXPECT_EQ(std::string(buf, n).rfind("error:", 0), 0u) << buf;
}
