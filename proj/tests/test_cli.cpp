#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "s2i/cli/cli.hpp"
#include "s2i/train/trainer.hpp"
#include "support/tempdir.hpp"
#include "support/tiny.hpp"

using namespace s2i;
using s2i::testing::slurp;
using s2i::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result invoke(std::vector<std::string> args)
{
    ::testing::internal::CaptureStdout();
    ::testing::internal::CaptureStderr();
    const int code = cli::run(args);
    Result r{code, ::testing::internal::GetCapturedStdout(), ::testing::internal::GetCapturedStderr()};
    return r;
}

int count_lines(const fs::path& p)
{
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line))
        ++n;
    return n;
}

// Corpus, pretrained encoders and a 10-step training run shared by the suite.
class CliRun : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        root_ = new TempDir("s2i_cli");
        cfg_ = (root_->path() / "run.json").string();
        std::ofstream(cfg_) << s2i::testing::tiny_config_json(root_->path(), 10);
        synth_ = invoke({"synth-data", "--config", cfg_});
        pre_ = invoke({"pretrain", "--config", cfg_});
        train_ = invoke({"train", "--config", cfg_});
    }
    static void TearDownTestSuite() { delete root_; }

    static fs::path path(const std::string& rel) { return root_->path() / rel; }
    static fs::path final_ckpt() { return path("ck") / train::checkpoint_name(10); }

    static TempDir* root_;
    static std::string cfg_;
    static Result synth_, pre_, train_;
};

TempDir* CliRun::root_ = nullptr;
std::string CliRun::cfg_;
Result CliRun::synth_, CliRun::pre_, CliRun::train_;

} // namespace

TEST(Cli, UsageErrorsExitOne)
{
    EXPECT_EQ(invoke({}).code, cli::kExitUser);
    EXPECT_EQ(invoke({"bogus"}).code, cli::kExitUser);
    EXPECT_EQ(invoke({"train", "--resume", "/no/such/file"}).code, cli::kExitUser);
    EXPECT_EQ(invoke({"--help"}).code, cli::kExitOk);
}

TEST(Cli, MalformedConfigNamesTheKey)
{
    TempDir dir;
    const fs::path cfg = dir / "bad.json";
    std::ofstream(cfg) << R"({"corpus": {"n_shapes": 2, "n_colours": 3}})";
    Result r = invoke({"synth-data", "--config", cfg.string(), "--out", (dir / "c").string()});
    EXPECT_EQ(r.code, cli::kExitUser);
    EXPECT_NE(r.err.find("corpus.n_colours"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(dir / "c"));
}

TEST(Cli, MissingCorpusIsAUserError)
{
    TempDir dir;
    std::ofstream(dir / "run.json") << s2i::testing::tiny_config_json(dir.path());
    Result r = invoke({"pretrain", "--config", (dir / "run.json").string()});
    EXPECT_EQ(r.code, cli::kExitUser);
    EXPECT_NE(r.err.find("synth-data"), std::string::npos) << r.err;
}

TEST_F(CliRun, SynthDataCreatesTheCorpus)
{
    ASSERT_EQ(synth_.code, 0) << synth_.err;
    EXPECT_TRUE(fs::exists(path("corpus/manifest.tsv")));
    EXPECT_TRUE(fs::exists(path("corpus/resolved_config.json")));
    // Idempotent: a second run into a fresh directory yields identical bytes.
    TempDir other;
    const fs::path out = other / "nested/dir";
    ASSERT_EQ(invoke({"synth-data", "--config", cfg_, "--out", out.string()}).code, 0);
    EXPECT_EQ(slurp(out / "manifest.tsv"), slurp(path("corpus/manifest.tsv")));
    EXPECT_EQ(slurp(out / "images/c00_0000.png"), slurp(path("corpus/images/c00_0000.png")));
}

TEST_F(CliRun, PretrainWritesEncodersAndReport)
{
    ASSERT_EQ(pre_.code, 0) << pre_.err;
    EXPECT_TRUE(fs::exists(path("ck") / train::kEncodersFile));
    EXPECT_TRUE(fs::exists(path("ck") / train::kClassifierFile));
    auto rep = nlohmann::json::parse(slurp(path("rep/pretrain_report.json")));
    EXPECT_TRUE(rep.contains("gap"));
    EXPECT_TRUE(rep.contains("classifier_accuracy"));
}

TEST_F(CliRun, TrainSmokeRunLogsEveryStep)
{
    ASSERT_EQ(train_.code, 0) << train_.err;
    EXPECT_EQ(count_lines(path("ck") / train::kMetricsFile), 11); // header + 10 records
    EXPECT_TRUE(fs::exists(path("ck") / train::checkpoint_name(0)));
    EXPECT_TRUE(fs::exists(final_ckpt()));
    EXPECT_TRUE(fs::exists(path("ck/resolved_config.json")));
    EXPECT_TRUE(fs::exists(path("rep/resolved_config.json")));
}

TEST_F(CliRun, ResumeReproducesTheLog)
{
    ASSERT_EQ(train_.code, 0);
    TempDir dir;
    const std::string log = slurp(path("ck") / train::kMetricsFile);
    for (const auto& e : fs::directory_iterator(path("ck")))
        fs::copy(e.path(), dir / e.path().filename().string());
    Result r = invoke({"train", "--config", cfg_, "--out", dir.path().string(), "--resume",
                    (dir / train::checkpoint_name(5)).string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(dir / train::kMetricsFile), log);
    EXPECT_EQ(slurp(dir / train::checkpoint_name(10)), slurp(final_ckpt()));
}

TEST_F(CliRun, NumericAbortExitsTwo)
{
    TempDir dir;
    const fs::path bad = dir / "nan.json";
    auto j = nlohmann::json::parse(slurp(cfg_));
    j["losses"]["damsm_gamma"] = 1e39;
    j["paths"]["checkpoints"] = (dir / "ck").string();
    std::ofstream(bad) << j.dump();
    fs::create_directories(dir / "ck");
    for (const char* f : {train::kEncodersFile, train::kClassifierFile})
        fs::copy(path("ck") / f, dir / "ck" / f);
    Result r = invoke({"train", "--config", bad.string()});
    EXPECT_EQ(r.code, cli::kExitNumeric) << r.err;
    EXPECT_NE(r.err.find("abort_step1.txt"), std::string::npos) << r.err;
    EXPECT_TRUE(fs::exists(dir / "ck/abort_step1.txt"));
}

TEST_F(CliRun, GenerateWritesSamplesSheetAndLatents)
{
    ASSERT_EQ(train_.code, 0);
    TempDir a, b;
    for (auto* d : {&a, &b})
        ASSERT_EQ(invoke({"generate", "--config", cfg_, "--checkpoint", final_ckpt().string(), "--captions", "8", "--n",
                       "1", "--out", d->path().string()})
                      .code,
                  0);
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(a.path()))
        if (e.path().extension() == ".png") {
            ++pngs;
            EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename().string())) << e.path();
        }
    EXPECT_EQ(pngs, 8 + 1);
    EXPECT_TRUE(fs::exists(a / "contact_sheet.png"));

    TempDir c;
    ASSERT_EQ(invoke({"generate", "--config", cfg_, "--checkpoint", final_ckpt().string(), "--captions", "3", "--n", "4",
                   "--out", c.path().string()})
                  .code,
              0);
    std::ifstream log(c / "z_log.tsv");
    std::string line;
    std::getline(log, line);
    std::set<std::string> hashes;
    int rows = 0;
    while (std::getline(log, line)) {
        std::istringstream ss(line);
        std::string id, sample, hash;
        ss >> id >> sample >> hash;
        hashes.insert(hash);
        ++rows;
    }
    EXPECT_EQ(rows, 12);
    EXPECT_EQ(hashes.size(), 12u);
}

TEST_F(CliRun, EvaluateReportsAllMetricsWithProvenance)
{
    ASSERT_EQ(train_.code, 0);
    TempDir out;
    Result r = invoke({"evaluate", "--config", cfg_, "--checkpoint", final_ckpt().string(), "--out", out.path().string()});
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = nlohmann::json::parse(slurp(out / "eval_report.json"));
    for (const char* m : {"is", "fid", "map", "r50"})
        EXPECT_TRUE(j["metrics"].contains(m)) << m;
    for (const char* f : {"n_generated", "checkpoint_checksum", "extractor_checksum", "config_hash", "step"})
        EXPECT_TRUE(j.contains(f)) << f;
    EXPECT_EQ(j["step"], 10);

    Result only = invoke({"evaluate", "--config", cfg_, "--checkpoint", final_ckpt().string(), "--metrics", "fid", "--out",
                       out.path().string()});
    ASSERT_EQ(only.code, 0) << only.err;
    auto k = nlohmann::json::parse(slurp(out / "eval_report.json"));
    EXPECT_EQ(k["metrics"].size(), 1u);
    EXPECT_EQ(k["metrics"]["fid"], j["metrics"]["fid"]);

    EXPECT_EQ(invoke({"evaluate", "--config", cfg_, "--checkpoint", final_ckpt().string(), "--metrics", "lpips"}).code,
              cli::kExitUser);
}

TEST_F(CliRun, EvaluateWithoutExtractorIsExplicit)
{
    ASSERT_EQ(train_.code, 0);
    TempDir dir;
    auto j = nlohmann::json::parse(slurp(cfg_));
    j["paths"]["checkpoints"] = (dir / "ck").string();
    std::ofstream(dir / "run.json") << j.dump();
    fs::create_directories(dir / "ck");
    fs::copy(path("ck") / train::kEncodersFile, dir / "ck" / train::kEncodersFile);
    Result r = invoke({"evaluate", "--config", (dir / "run.json").string(), "--checkpoint", final_ckpt().string(),
                    "--metrics", "is", "--out", (dir / "rep").string()});
    EXPECT_EQ(r.code, cli::kExitUser);
    EXPECT_NE(r.err.find(train::kClassifierFile), std::string::npos) << r.err;
    // R@50 needs only the encoders.
    Result ok = invoke({"evaluate", "--config", (dir / "run.json").string(), "--checkpoint", final_ckpt().string(),
                     "--metrics", "r50", "--out", (dir / "rep").string()});
    EXPECT_EQ(ok.code, 0) << ok.err;
}

TEST_F(CliRun, CommandsLeaveTheCorpusUntouched)
{
    ASSERT_EQ(train_.code, 0);
    std::set<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(path("corpus")))
        names.insert(fs::relative(e.path(), path("corpus")).string());
    for (const auto& n : names)
        EXPECT_TRUE(n == "manifest.tsv" || n == "resolved_config.json" || n.rfind("images", 0) == 0 ||
                    n.rfind("speech", 0) == 0)
            << n;
}
