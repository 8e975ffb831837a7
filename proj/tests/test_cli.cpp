#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& cwd = fs::current_path(), std::string* output = nullptr) {
  const fs::path out_file = cwd / "last_output.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && '" ATTRN_BIN "' " + args + " > '" + out_file.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(out_file);
    std::ostringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::current_path() / ("cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> jsonl(const fs::path& p) {
  std::vector<nlohmann::json> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

const std::string kSmall = "--train-episodes 60 --validation-episodes 20 --test-episodes 20 --items-per-class 30";

}  // namespace

TEST(Cli, GenerateMnistStyle) {
  const auto dir = fresh_dir("gen");
  ASSERT_EQ(run("generate --protocol mnist-style --t 30 --seed 7 --out data " + kSmall, dir), 0);
  for (const char* split : {"train", "validation", "test"}) {
    EXPECT_TRUE(fs::exists(dir / "data" / (std::string(split) + ".json")));
    EXPECT_TRUE(fs::exists(dir / "data" / (std::string(split) + ".emb")));
  }
  const auto j = nlohmann::json::parse(slurp(dir / "data/train.json"));
  EXPECT_EQ(j["episodes"].size(), 60u);
  for (const auto& e : j["episodes"]) EXPECT_EQ(e["candidates"].size(), 30u);
  EXPECT_EQ(j["manifest"]["subcommand"], "generate");
  EXPECT_EQ(j["manifest"]["seed"], 7);
}

TEST(Cli, GenerateIsByteIdentical) {
  const auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  ASSERT_EQ(run("generate --protocol newsgroups-style --seed 3 --out data " + kSmall, a), 0);
  ASSERT_EQ(run("generate --protocol newsgroups-style --seed 3 --out data " + kSmall, b), 0);
  for (const char* f : {"train.json", "train.emb", "validation.json", "test.emb"})
    EXPECT_EQ(slurp(a / "data" / f), slurp(b / "data" / f)) << f;
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("exit");
  std::string out;
  EXPECT_EQ(run("generate --protocol mnist-style --pool missing.emb --out data", dir, &out), 3);
  EXPECT_NE(out.find("missing.emb"), std::string::npos) << out;
  EXPECT_EQ(run("generate --protocol bogus --out data", dir), 2);
  EXPECT_EQ(run("generate", dir), 2);
  EXPECT_EQ(run("frobnicate", dir), 2);
  EXPECT_EQ(run("train --train nope.json --validation nope.json", dir), 3);
  EXPECT_EQ(run("generate --protocol mnist-style --items-per-class 3 --out small", dir, &out), 3);
  EXPECT_NE(out.find("class counts"), std::string::npos) << out;
}

TEST(Cli, GradcheckHinge) {
  std::string out;
  EXPECT_EQ(run("gradcheck --loss hinge --seed 1", fs::current_path(), &out), 0);
  const auto pos = out.find("max relative error");
  ASSERT_NE(pos, std::string::npos) << out;
  const double err = std::stod(out.substr(out.find_first_of("0123456789", pos)));
  EXPECT_LT(err, 1e-4);
}

TEST(Cli, EvalPerfectRanking) {
  const auto dir = fresh_dir("eval");
  std::string out;
  ASSERT_EQ(run("eval --rankings '" FIXTURE_DIR "/perfect_rankings.jsonl' --out report.json", dir, &out), 0);
  EXPECT_NE(out.find("0.00"), std::string::npos) << out;
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(j["map"]["mean"], 1.0);
  EXPECT_EQ(j["map"]["error"], 0.0);
}

TEST(Cli, BeamOneEqualsBeamFullOnTinyEpisodes) {
  const auto dir = fresh_dir("tiny");
  ASSERT_EQ(run("generate --protocol mnist-style --t 3 --k-min 1 --k-max 2 --seed 2 --out data " + kSmall, dir), 0);
  ASSERT_EQ(run("train --train data/train.json --validation data/validation.json --epochs 2 --batch 10 --out model.emb", dir), 0);
  ASSERT_EQ(run("rank --model model.emb --data data/test.json --beam 1 --out b1.jsonl", dir), 0);
  ASSERT_EQ(run("rank --model model.emb --data data/test.json --beam 120 --out b120.jsonl", dir), 0);
  ASSERT_EQ(run("rank --model model.emb --data data/test.json --method exhaustive --out ex.jsonl", dir), 0);
  const auto b1 = jsonl(dir / "b1.jsonl"), b120 = jsonl(dir / "b120.jsonl"), ex = jsonl(dir / "ex.jsonl");
  ASSERT_EQ(b1.size(), 21u);
  ASSERT_EQ(b120.size(), b1.size());
  for (std::size_t i = 1; i < b1.size(); ++i) {
    EXPECT_EQ(ex[i]["order"], b120[i]["order"]);
    EXPECT_EQ(ex[i]["order"], b1[i]["order"]) << "greedy is not optimal for " << b1[i]["query"];
    EXPECT_EQ(b1[i]["order"], b120[i]["order"]);
  }
}

TEST(Cli, PipelineIsReproducible) {
  std::vector<fs::path> dirs = {fresh_dir("pipe_a"), fresh_dir("pipe_b")};
  for (const auto& dir : dirs) {
    ASSERT_EQ(run("generate --protocol mnist-style --seed 5 --out data " + kSmall, dir), 0);
    ASSERT_EQ(run("train --train data/train.json --validation data/validation.json --epochs 2 --batch 20 --seed 3 "
                  "--out model.emb --log train.jsonl --norms norms.json",
                  dir),
              0);
    ASSERT_EQ(run("rank --model model.emb --data data/test.json --out ranks.jsonl", dir), 0);
    ASSERT_EQ(run("eval --rankings ranks.jsonl --out report.json", dir), 0);
    ASSERT_EQ(run("oasis --train data/train.json --test data/test.json --channels 2 --epochs 1 --out oasis.emb --report oasis.json", dir), 0);
  }
  for (const char* f : {"model.emb", "train.jsonl", "norms.json", "ranks.jsonl", "report.json", "oasis.emb", "oasis.json"})
    EXPECT_EQ(slurp(dirs[0] / f), slurp(dirs[1] / f)) << f;
  const auto log = jsonl(dirs[0] / "train.jsonl");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_TRUE(log[0].contains("manifest"));
  EXPECT_EQ(log[1]["epoch"], 1);
  const auto norms = nlohmann::json::parse(slurp(dirs[0] / "norms.json"));
  EXPECT_TRUE(norms.contains("before"));
  EXPECT_TRUE(norms.contains("change"));
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  const auto dir = fresh_dir("config");
  ASSERT_EQ(run("generate --protocol mnist-style --seed 1 --out data " + kSmall, dir), 0);
  std::ofstream(dir / "cfg.json") << R"({"epochs": 1, "lr": 0.05, "batch_size": 7})";
  ASSERT_EQ(run("train --train data/train.json --validation data/validation.json --config cfg.json --lr 0.02 --out m.emb", dir), 0);
  const auto meta = nlohmann::json::parse(slurp(dir / "m.emb").substr(9, [&] {
    const auto s = slurp(dir / "m.emb");
    return static_cast<std::size_t>(static_cast<unsigned char>(s[5]) | static_cast<unsigned char>(s[6]) << 8 |
                                    static_cast<unsigned char>(s[7]) << 16);
  }()));
  const auto& cfg = meta["manifest"]["config"];
  EXPECT_EQ(cfg["lr"], 0.02);
  EXPECT_EQ(cfg["epochs"], 1);
  EXPECT_EQ(cfg["batch_size"], 7);
}

TEST(Cli, SweepTable) {
  const auto dir = fresh_dir("sweep");
  ASSERT_EQ(run("generate --protocol mnist-style --seed 1 --out data " + kSmall, dir), 0);
  std::string out;
  ASSERT_EQ(run("sweep --train data/train.json --validation data/validation.json --test data/test.json --counts 1,2 "
                "--seeds 1 --epochs 1 --out sweep.json",
                dir, &out),
            0);
  const auto j = nlohmann::json::parse(slurp(dir / "sweep.json"));
  EXPECT_EQ(j["rows"].size(), 2u);
}
