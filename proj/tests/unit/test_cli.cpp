#include <gtest/gtest.h>

#include <sstream>

#include "caprl/cli.hpp"
#include "support/fixtures.hpp"

using namespace caprl;
using namespace caprl::testing;

namespace {

struct RunResult {
    int code = 0;
    std::string out, err;

    nlohmann::json summary() const {
        std::istringstream lines(out);
        std::string last, line;
        while (std::getline(lines, line)) {
            if (!line.empty()) last = line;
        }
        return nlohmann::json::parse(last);
    }
};

RunResult run_cli(std::vector<std::string> args, const std::string& input = "") {
    std::istringstream in(input);
    std::ostringstream out, err;
    const int code = cli::run(args, in, out, err);
    return {code, out.str(), err.str()};
}

// A toy corpus with features, written once per test.
struct ToyWorkspace {
    TempDir dir;
    std::string root = dir.path().string();

    explicit ToyWorkspace(int images = 6) {
        const auto r = run_cli({"toy-data", "--out", root, "--images", std::to_string(images)});
        EXPECT_EQ(r.code, 0) << r.err;
        const auto f = run_cli({"extract-toy-features", "--images", root + "/images", "--out", path("features.jsonl")});
        EXPECT_EQ(f.code, 0) << f.err;
    }

    std::string path(const std::string& leaf) const { return (dir / leaf).string(); }

    std::vector<std::string> train_args(std::vector<std::string> extra = {}) const {
        std::vector<std::string> a = {"train-base",    "--captions", path("captions.txt"), "--features",
                                      path("features.jsonl"), "--feature-dim", "64", "--embed", "8", "--hidden", "8",
                                      "--out",         path("model.json")};
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    }
};

}  // namespace

TEST(Cli, HelpExitsZero) {
    const auto r = run_cli({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("train-base"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
    EXPECT_EQ(run_cli({"gradcheck", "--no-such-flag"}).code, 2);
    EXPECT_EQ(run_cli({"train-base"}).code, 2);  // required options missing
    EXPECT_EQ(run_cli({"gradcheck", "--trials", "many"}).code, 2);
}

TEST(Cli, ValidationFailuresExitOneWithDiagnostic) {
    TempDir dir;
    const auto r = run_cli({"preprocess", "--captions", (dir / "missing.txt").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
    EXPECT_TRUE(r.out.empty());
}

TEST(Cli, GradcheckPassesAndReportsEverySuite) {
    const auto r = run_cli({"gradcheck", "--trials", "2", "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto s = r.summary();
    EXPECT_EQ(s["command"], "gradcheck");
    EXPECT_EQ(s["seed"], 4);
    EXPECT_TRUE(s["result"]["passed"].get<bool>());
    EXPECT_LT(s["result"]["max_rel_error"].get<double>(), 1e-4);
    std::set<std::string> names;
    for (const auto& suite : s["result"]["suites"]) names.insert(suite["name"]);
    for (const char* n : {"dense", "lstm", "softmax_ce", "caption_model", "critic"}) {
        EXPECT_TRUE(names.count(n)) << n;
    }
}

TEST(Cli, GradcheckFailsWhenThresholdUnreachable) {
    EXPECT_EQ(run_cli({"gradcheck", "--trials", "1", "--threshold", "0"}).code, 1);
}

TEST(Cli, EverySummaryHasSeedAndConfigHash) {
    ToyWorkspace ws(4);
    const auto r = run_cli({"preprocess", "--captions", ws.path("captions.txt"), "--seed", "9"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto s = r.summary();
    for (const char* key : {"command", "seed", "config", "config_hash", "result"}) EXPECT_TRUE(s.contains(key)) << key;
    EXPECT_EQ(s["seed"], 9);
    EXPECT_EQ(s["config_hash"].get<std::string>().size(), 16u);
    EXPECT_EQ(s["result"]["images"], 4);
}

TEST(Cli, ConfigHashTracksConfig) {
    ToyWorkspace ws(4);
    const auto a = run_cli({"bleu", "--references", ws.path("captions.txt"), "--candidates", ws.path("captions.txt")});
    const auto b = run_cli(
        {"bleu", "--references", ws.path("captions.txt"), "--candidates", ws.path("captions.txt"), "--max-n", "2"});
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_NE(a.summary()["config_hash"], b.summary()["config_hash"]);
}

TEST(Cli, BleuOfReferencesAgainstThemselvesIsHundred) {
    ToyWorkspace ws(5);
    const auto r = run_cli({"bleu", "--references", ws.path("captions.txt"), "--candidates", ws.path("captions.txt")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.summary()["result"]["candidates"][0]["score"].get<double>(), 100.0);
}

TEST(Cli, TrainBaseDefaultsToTenEpochs) {
    ToyWorkspace ws(4);
    const auto r = run_cli(ws.train_args({"--no-split", "--curve", ws.path("curve.csv")}));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto s = r.summary();
    EXPECT_EQ(s["config"]["epochs"], 10);
    EXPECT_EQ(s["result"]["epochs"], 10);
    const auto curve = read_file(ws.path("curve.csv"));
    EXPECT_EQ(curve.substr(0, curve.find('\n')), "epoch,train_loss,val_loss");
    EXPECT_EQ(count_lines(curve), 11u);
}

TEST(Cli, IdenticalRunsGiveByteIdenticalOutputs) {
    ToyWorkspace ws(6);
    auto train = ws.train_args({"--epochs", "3", "--seed", "5", "--curve", ws.path("curve.csv")});
    const auto a = run_cli(train);
    ASSERT_EQ(a.code, 0) << a.err;
    const auto curve_a = read_file(ws.path("curve.csv"));
    const auto model_a = read_file(ws.path("model.json"));
    const auto b = run_cli(train);
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(read_file(ws.path("curve.csv")), curve_a);
    EXPECT_EQ(read_file(ws.path("model.json")), model_a);

    const std::vector<std::string> ft = {"finetune", "--model", ws.path("model.json"), "--captions",
                                         ws.path("captions.txt"), "--features", ws.path("features.jsonl"),
                                         "--feedback", "overlap", "--mode", "advantage", "--steps", "6",
                                         "--eval-samples", "2", "--seed", "3", "--out", ws.path("tuned.json"),
                                         "--trace", ws.path("trace.csv")};
    const auto c = run_cli(ft);
    ASSERT_EQ(c.code, 0) << c.err;
    const auto trace_c = read_file(ws.path("trace.csv"));
    const auto d = run_cli(ft);
    EXPECT_EQ(c.out, d.out);
    EXPECT_EQ(read_file(ws.path("trace.csv")), trace_c);
    EXPECT_TRUE(c.summary()["result"].contains("quality_delta"));

    // A different seed changes the run.
    train.back() = ws.path("curve2.csv");
    train[train.size() - 3] = "6";
    ASSERT_EQ(run_cli(train).code, 0);
    EXPECT_NE(read_file(ws.path("curve2.csv")), curve_a);
}

TEST(Cli, ConfigFileSectionWithFlagsWinning) {
    ToyWorkspace ws(4);
    write_file(ws.dir / "run.toml", "[train-base]\nepochs = 2\nbatch-size = 4\n");
    const auto from_file = run_cli(ws.train_args({"--no-split", "--config", ws.path("run.toml")}));
    ASSERT_EQ(from_file.code, 0) << from_file.err;
    EXPECT_EQ(from_file.summary()["config"]["epochs"], 2);
    EXPECT_EQ(from_file.summary()["config"]["batch_size"], 4);

    const auto overridden =
        run_cli(ws.train_args({"--no-split", "--config", ws.path("run.toml"), "--epochs", "3"}));
    ASSERT_EQ(overridden.code, 0) << overridden.err;
    EXPECT_EQ(overridden.summary()["config"]["epochs"], 3);
    EXPECT_EQ(overridden.summary()["config"]["batch_size"], 4);
}

TEST(Cli, GenerateRateTrainCriticFinetunePipeline) {
    ToyWorkspace ws(4);
    ASSERT_EQ(run_cli(ws.train_args({"--epochs", "2", "--no-split"})).code, 0);
    const auto gen = run_cli({"generate", "--model", ws.path("model.json"), "--features", ws.path("features.jsonl"),
                              "--out", ws.path("manifest.jsonl"), "--captions-out", ws.path("generated.txt")});
    ASSERT_EQ(gen.code, 0) << gen.err;
    EXPECT_EQ(gen.summary()["result"]["images"], 4);
    const auto manifest = load_manifest(ws.path("manifest.jsonl"), ignore_warnings());

    // Terminal rating: one line per task, blank line stops.
    std::string answers;
    for (std::size_t k = 0; k < manifest.size(); ++k) answers += (k % 2 ? "0.5\n" : "-0.4\n");
    const auto rated = run_cli({"rate", "--manifest", ws.path("manifest.jsonl"), "--store", ws.path("fb.jsonl"),
                                "--rater", "tester"},
                               answers);
    ASSERT_EQ(rated.code, 0) << rated.err;
    EXPECT_EQ(rated.summary()["result"]["rated_now"], manifest.size());

    const auto crit = run_cli({"train-critic", "--store", ws.path("fb.jsonl"), "--features", ws.path("features.jsonl"),
                               "--feature-dim", "64", "--embed", "8", "--hidden", "8", "--epochs", "5",
                               "--vocab-from", ws.path("model.json"), "--out", ws.path("critic.json")});
    ASSERT_EQ(crit.code, 0) << crit.err;
    EXPECT_EQ(crit.summary()["result"]["records"], manifest.size());

    const auto ft = run_cli({"finetune", "--model", ws.path("model.json"), "--captions", ws.path("captions.txt"),
                             "--features", ws.path("features.jsonl"), "--critic", ws.path("critic.json"), "--steps",
                             "4", "--out", ws.path("tuned.json")});
    ASSERT_EQ(ft.code, 0) << ft.err;
    EXPECT_EQ(ft.summary()["result"]["mode"], "literal");
    EXPECT_EQ(ft.summary()["result"]["steps"], 4);

    const auto cmp = run_cli({"bleu", "--references", ws.path("captions.txt"), "--candidates",
                              ws.path("generated.txt"), ws.path("manifest.jsonl")});
    ASSERT_EQ(cmp.code, 0) << cmp.err;
    EXPECT_EQ(cmp.summary()["result"]["delta"].get<double>(), 0.0);
}

TEST(Cli, RateRejectsOutOfRangeAndKeepsAsking) {
    TempDir dir;
    write_file(dir / "m.jsonl", "{\"image_id\":\"a.jpg\",\"caption\":\"a dog\"}\n");
    const auto r = run_cli(
        {"rate", "--manifest", (dir / "m.jsonl").string(), "--store", (dir / "fb.jsonl").string(), "--rater", "x"},
        "2\nabc\n0.3\n");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto text = read_file(dir / "fb.jsonl");
    EXPECT_EQ(count_lines(text), 1u);
    EXPECT_NE(text.find("0.3"), std::string::npos);
}

TEST(Cli, FinetuneCriticFeedbackNeedsCriticPath) {
    ToyWorkspace ws(3);
    ASSERT_EQ(run_cli(ws.train_args({"--epochs", "1", "--no-split"})).code, 0);
    const auto r = run_cli({"finetune", "--model", ws.path("model.json"), "--captions", ws.path("captions.txt"),
                            "--features", ws.path("features.jsonl"), "--out", ws.path("t.json")});
    EXPECT_EQ(r.code, 1);
    const auto bad_mode = run_cli({"finetune", "--model", ws.path("model.json"), "--captions", ws.path("captions.txt"),
                                   "--features", ws.path("features.jsonl"), "--feedback", "overlap", "--mode", "ppo",
                                   "--out", ws.path("t.json")});
    EXPECT_EQ(bad_mode.code, 1);
}
