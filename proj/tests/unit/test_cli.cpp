#include "../support/test_util.hpp"
#include "ckptscope/cli.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

using namespace ckptscope;
namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* p = std::getenv("CKPTSCOPE_CLI");
    return p ? p : "";
}

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " '" + binary() + "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Name -> bytes for every regular file in `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) out[e.path().filename().string()] = testutil::slurp(e.path());
    return out;
}

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        data_ = new testutil::TempDir("cli_data");
        ASSERT_FALSE(binary().empty()) << "CKPTSCOPE_CLI not set";
        ASSERT_EQ(run("synth --seed 3 --out " + q(data_->path())), 0);
        testutil::spit(*data_ / "fast.toml", "seed = 5\nmanifest = \"manifest.json\"\nlayer = 25\n[encode]\nn_perm = 100\nparticipant = \"sub01\"\n");
    }
    static void TearDownTestSuite() { delete data_; }
    void SetUp() override {
        if (binary().empty()) GTEST_SKIP();
    }
    static fs::path manifest() { return *data_ / "manifest.json"; }
    static inline testutil::TempDir* data_ = nullptr;
};

}  // namespace

TEST(CliConfig, DefaultsFileAndFlagsMergeInOrder) {
    testutil::TempDir dir("cli_cfg");
    testutil::spit(dir / "c.toml", "manifest = \"m.json\"\nlayer = 3\nseed = 9\n[encode]\nfolds = 3\n");
    cli::Overrides ov;
    ov.config = (dir / "c.toml").string();
    ov.layer = 7;
    const auto cfg = cli::effective_config("encode", ov);
    EXPECT_EQ(cfg["layer"], 7);
    EXPECT_EQ(cfg["seed"], 9);
    EXPECT_EQ(cfg["encode"]["folds"], 3);
    EXPECT_EQ(cfg["encode"]["n_perm"], 1000);
    EXPECT_EQ(cfg["manifest"], cli::absolute_string(dir / "m.json"));
}

TEST(CliConfig, RejectsUnknownKeysAndWrongTypes) {
    testutil::TempDir dir("cli_cfg");
    cli::Overrides ov;
    ov.config = (dir / "c.toml").string();
    ov.manifest = "m.json";
    ov.layer = 1;
    testutil::spit(dir / "c.toml", "[encode]\nfoldz = 3\n");
    EXPECT_THROW(cli::effective_config("encode", ov), cli::ConfigError);
    testutil::spit(dir / "c.toml", "[encode]\nfolds = \"four\"\n");
    EXPECT_THROW(cli::effective_config("encode", ov), cli::ConfigError);
    testutil::spit(dir / "c.toml", "colour = 1\n");
    EXPECT_THROW(cli::effective_config("encode", ov), cli::ConfigError);
    testutil::spit(dir / "c.toml", "analysis = \"probe\"\n");
    EXPECT_THROW(cli::effective_config("encode", ov), cli::ConfigError);
    testutil::spit(dir / "c.toml", "[encode\n");
    EXPECT_THROW(cli::effective_config("encode", ov), cli::ConfigError);
    ov.config = (dir / "absent.toml").string();
    EXPECT_THROW(cli::effective_config("encode", ov), cli::ConfigError);
}

TEST(CliConfig, ManifestAnalysesNeedManifestAndLayer) {
    cli::Overrides ov;
    EXPECT_THROW(cli::effective_config("idim", ov), cli::ConfigError);
    ov.manifest = "m.json";
    EXPECT_THROW(cli::effective_config("idim", ov), cli::ConfigError);
    EXPECT_NO_THROW(cli::effective_config("report", {}));
}

TEST(CliConfig, FnvHashReferenceValues) {
    EXPECT_EQ(cli::fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(cli::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(cli::hex64(0xabcULL), "0000000000000abc");
}

TEST_F(CliTest, EncodeWritesOneSeriesRowPerCheckpoint) {
    testutil::TempDir out("cli_out");
    ASSERT_EQ(run("encode --config " + q(*data_ / "fast.toml") + " --out " + q(out.path())), 0);
    const auto rows = read_series_csv(out / "encode_series.csv");
    EXPECT_EQ(rows.size(), 8u);
    EXPECT_TRUE(fs::exists(out / "encode_sig_series.csv"));
    EXPECT_TRUE(fs::exists(out / "encode_step0_L25.csv"));
    const auto record = nlohmann::json::parse(testutil::slurp(out / "run_encode.json"));
    for (const char* key : {"config", "config_hash", "seeds", "version", "outputs"}) EXPECT_TRUE(record.contains(key)) << key;
    EXPECT_EQ(record["config"]["encode"]["n_perm"], 100);
}

TEST_F(CliTest, IdenticalRunsAreBitwiseIdenticalAndReplayable) {
    testutil::TempDir a("cli_a"), b("cli_b");
    const std::string args = "probe --manifest " + q(manifest()) + " --layer 25 --seed 4 --config " + q(*data_ / "probe.toml");
    testutil::spit(*data_ / "probe.toml", "[probe]\ntask = \"mmlu\"\n");
    ASSERT_EQ(run(args + " --out " + q(a.path()), "CKPTSCOPE_THREADS=1"), 0);
    ASSERT_EQ(run(args + " --out " + q(b.path()), "CKPTSCOPE_THREADS=3"), 0);
    EXPECT_EQ(snapshot(a.path()), snapshot(b.path()));

    testutil::TempDir c("cli_c");
    EXPECT_EQ(run("replay --record " + q(a / "run_probe.json") + " --out " + q(c.path())), 0);
    EXPECT_EQ(snapshot(a.path()), snapshot(c.path()));

    auto record = nlohmann::json::parse(testutil::slurp(a / "run_probe.json"));
    record["outputs"]["probe_series.csv"] = "0000000000000000";
    testutil::spit(a / "run_probe.json", record.dump());
    EXPECT_EQ(run("replay --record " + q(a / "run_probe.json") + " --out " + q(c.path())), cli::kReplayMismatch);
}

TEST_F(CliTest, ExitCodesPerErrorClass) {
    testutil::TempDir out("cli_err");
    EXPECT_EQ(run("idim --manifest " + q(out / "absent.json") + " --layer 25 --out " + q(out.path())), cli::kMissingData);
    EXPECT_EQ(run("idim --layer 25 --out " + q(out.path())), cli::kInvalidConfig);
    EXPECT_EQ(run("probe --manifest " + q(manifest()) + " --layer 25 --out " + q(out.path())), cli::kInvalidConfig);
    EXPECT_EQ(run("bogus --out x"), cli::kInvalidConfig);
    EXPECT_EQ(run("encode --layer notanumber --out x"), cli::kInvalidConfig);
    EXPECT_EQ(run("report --out " + q(out / "empty")), cli::kMissingData);
    EXPECT_EQ(run("--help"), cli::kOk);

    testutil::spit(out / "nan.csv", "checkpoint_id,training_tokens,value\na,1,0\nb,2,nan\nc,3,1\nd,4,0\ne,5,1\nf,6,2\n");
    testutil::spit(out / "phases.toml", "[phases]\nseries = \"nan.csv\"\n");
    EXPECT_EQ(run("phases --config " + q(out / "phases.toml") + " --out " + q(out / "p")), cli::kNumericalFailure);
}

TEST_F(CliTest, ScorePhasesAndReportChain) {
    testutil::TempDir out("cli_chain");
    nlohmann::json input;
    for (int c = 0; c < 8; ++c) {
        std::vector<std::string> outputs, golds;
        for (int s = 0; s < 8; ++s) {
            golds.push_back(std::string(1, static_cast<char>('A' + s % 4)));
            outputs.push_back(s < c ? golds.back() + " " : "Z");
        }
        input["checkpoints"].push_back({{"checkpoint_id", "step" + std::to_string(c)},
                                        {"training_tokens", 1000 * (1 << c)},
                                        {"outputs", outputs},
                                        {"golds", golds}});
    }
    testutil::spit(out / "answers.json", input.dump());
    testutil::spit(out / "score.toml", "[score]\ninput = \"answers.json\"\n");
    ASSERT_EQ(run("score --config " + q(out / "score.toml") + " --out " + q(out / "res")), 0);
    const auto score = read_series_csv(out / "res" / "score_series.csv");
    ASSERT_EQ(score.size(), 8u);
    EXPECT_EQ(score.points[3].value, 3.0 / 8.0);

    testutil::spit(out / "phases.toml", "[phases]\nseries = \"res/score_series.csv\"\n");
    ASSERT_EQ(run("phases --config " + q(out / "phases.toml") + " --out " + q(out / "res")), 0);
    const auto phases = nlohmann::json::parse(testutil::slurp(out / "res" / "phases.json"));
    EXPECT_EQ(phases["boundaries"].size(), 2u);
    EXPECT_EQ(phases["boundary_tokens"].size(), 2u);

    ASSERT_EQ(run("report --out " + q(out / "res")), 0);
    const auto csv = testutil::slurp(out / "res" / "report.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "training_tokens,benchmark");
    const auto svg = testutil::slurp(out / "res" / "report.svg");
    EXPECT_NE(svg.find("class=\"boundary\""), std::string::npos);

    testutil::spit(out / "bad.json", "{\"checkpoints\": [{\"checkpoint_id\": \"a\"}]}");
    testutil::spit(out / "bad.toml", "[score]\ninput = \"bad.json\"\n");
    EXPECT_EQ(run("score --config " + q(out / "bad.toml") + " --out " + q(out / "bad")), cli::kMissingData);
}

TEST_F(CliTest, RemainingAnalysesRun) {
    testutil::TempDir out("cli_rest");
    const std::string common = " --manifest " + q(manifest()) + " --layer 25 --out " + q(out.path());
    testutil::spit(out / "idim.toml", "[idim]\nk_grid = [1, 2, 4]\n");
    testutil::spit(out / "lens.toml", "[lens]\ntask = \"arith\"\n");
    testutil::spit(out / "xcorr.toml", "[xcorr]\nmode = \"per_neuron_mean\"\ngroups = [\"movie0\"]\n");
    EXPECT_EQ(run("idim --config " + q(out / "idim.toml") + common), 0);
    EXPECT_EQ(run("lens --config " + q(out / "lens.toml") + common), 0);
    EXPECT_EQ(run("xcorr --config " + q(out / "xcorr.toml") + common), 0);
    EXPECT_EQ(read_series_csv(out / "idim_series.csv").size(), 8u);
    EXPECT_EQ(read_series_csv(out / "lens_series.csv").size(), 8u);
    const auto xcorr = testutil::slurp(out / "xcorr_L25.csv");
    EXPECT_EQ(std::count(xcorr.begin(), xcorr.end(), '\n'), 9);
    for (const char* rec : {"run_idim.json", "run_lens.json", "run_xcorr.json"}) EXPECT_TRUE(fs::exists(out / rec)) << rec;
}
