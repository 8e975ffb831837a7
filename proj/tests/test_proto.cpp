#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "attrn/proto.hpp"

using namespace attrn;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const ItemPool> mnist_pool(std::uint64_t seed, int per_class = 40) {
  Rng rng(seed);
  const std::vector<double> noise = {0.3, 0.5};
  return std::make_shared<const ItemPool>(make_synthetic_pool(rng, 10, per_class, noise));
}

std::shared_ptr<const ItemPool> newsgroups_pool(std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<double> noise = {0.4};
  std::vector<int> superclass;
  for (int s = 0, sizes[] = {5, 4, 4, 1, 3, 3}; s < 6; ++s)
    for (int i = 0; i < sizes[s]; ++i) superclass.push_back(s);
  return std::make_shared<const ItemPool>(make_synthetic_pool(rng, 20, 30, noise, 5.0, superclass));
}

void check_episode_invariants(const Dataset& d) {
  for (const auto& e : d.episodes) {
    ASSERT_EQ(e.labels.size(), e.candidates.size());
    EXPECT_TRUE(std::any_of(e.labels.begin(), e.labels.end(), [](int l) { return l > 0; }));
    for (int l : e.labels) EXPECT_TRUE(l >= 0 && l <= 2);
    EXPECT_EQ(e.target, canonical_order(d.training_labels(e)));
    EXPECT_TRUE(std::find(e.candidates.begin(), e.candidates.end(), e.query) == e.candidates.end());
    std::vector<Eigen::Index> c = e.candidates;
    std::sort(c.begin(), c.end());
    EXPECT_TRUE(std::adjacent_find(c.begin(), c.end()) == c.end());
  }
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("attrn_proto_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(CanonicalOrder, DescendingLabelThenIndex) {
  const std::vector<int> l = {0, 2, 1, 2, 0, 1};
  EXPECT_EQ(canonical_order(l), (std::vector<Eigen::Index>{1, 3, 2, 5, 0, 4}));
  EXPECT_EQ(binarize(l, 2), (std::vector<int>{0, 1, 0, 1, 0, 0}));
}

TEST(Mnist, EpisodeShape) {
  Rng rng(7);
  const auto pool = mnist_pool(1);
  const auto d = build_mnist_style(rng, pool, 200);
  EXPECT_EQ(d.episodes.size(), 200u);
  for (const auto& e : d.episodes) {
    EXPECT_EQ(e.T(), 30);
    const int k = static_cast<int>(std::count(e.labels.begin(), e.labels.end(), 1));
    EXPECT_GE(k, 1);
    EXPECT_LE(k, 9);
    for (std::size_t i = 0; i < e.candidates.size(); ++i) {
      const bool same = pool->labels[static_cast<std::size_t>(e.candidates[i])] == pool->labels[static_cast<std::size_t>(e.query)];
      EXPECT_EQ(e.labels[i], same ? 1 : 0);
    }
  }
  check_episode_invariants(d);
}

TEST(Mnist, Deterministic) {
  const auto pool = mnist_pool(1);
  Rng a(3), b(3);
  EXPECT_EQ(build_mnist_style(a, pool, 50), build_mnist_style(b, pool, 50));
}

TEST(Mnist, KIsUniformChiSquare) {
  Rng rng(11);
  const auto pool = mnist_pool(2);
  const auto d = build_mnist_style(rng, pool, 10000);
  std::vector<int> hist(10, 0);
  for (const auto& e : d.episodes) ++hist[static_cast<std::size_t>(std::count(e.labels.begin(), e.labels.end(), 1))];
  double chi2 = 0.0;
  for (int k = 1; k <= 9; ++k) chi2 += std::pow(hist[static_cast<std::size_t>(k)] - 10000.0 / 9.0, 2) / (10000.0 / 9.0);
  // 8 degrees of freedom: P(chi2 > 20.090) = 0.01
  EXPECT_LT(chi2, 20.090);
}

TEST(Mnist, CandidatesLookShuffled) {
  Rng rng(12);
  const auto d = build_mnist_style(rng, mnist_pool(3), 2000);
  int first_positive = 0;
  for (const auto& e : d.episodes) first_positive += e.labels[0];
  // expected 2000 * 5/30 = 333 if positions are exchangeable
  EXPECT_GT(first_positive, 250);
  EXPECT_LT(first_positive, 420);
}

TEST(Mnist, InsufficientPoolReportsCounts) {
  Rng rng(1);
  const auto pool = mnist_pool(4, 5);
  try {
    build_mnist_style(rng, pool, 1);
    FAIL();
  } catch (const PoolError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("class counts"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0:5"), std::string::npos) << msg;
  }
}

TEST(Cifar, SharesTheMnistImplementation) {
  Rng prng(5);
  const std::vector<double> noise = {0.4, 0.4, 0.4};
  const auto cifar_pool = std::make_shared<const ItemPool>(make_synthetic_pool(prng, 10, 30, noise));
  Rng a(1), b(1);
  const auto x = build_mnist_style(a, cifar_pool, 20), y = build_mnist_style(b, cifar_pool, 20);
  EXPECT_EQ(x, y);
  check_episode_invariants(x);
}

TEST(Newsgroups, Ranges) {
  Rng rng(8);
  const auto pool = newsgroups_pool(1);
  const auto d = build_newsgroups_style(rng, pool, 500);
  EXPECT_EQ(d.train_threshold, 2);
  for (const auto& e : d.episodes) {
    const auto a = std::count(e.labels.begin(), e.labels.end(), 2);
    const auto b = std::count(e.labels.begin(), e.labels.end(), 1);
    const auto c = std::count(e.labels.begin(), e.labels.end(), 0);
    EXPECT_GE(a, 3);
    EXPECT_LE(a, 7);
    EXPECT_GE(b, 3);
    EXPECT_LE(b, 7);
    EXPECT_EQ(a + b + c, 30);
    const int qt = pool->labels[static_cast<std::size_t>(e.query)], qs = pool->superclasses[static_cast<std::size_t>(e.query)];
    for (std::size_t i = 0; i < e.candidates.size(); ++i) {
      const auto item = static_cast<std::size_t>(e.candidates[i]);
      const int expect = pool->labels[item] == qt ? 2 : (pool->superclasses[item] == qs ? 1 : 0);
      EXPECT_EQ(e.labels[i], expect);
    }
    const auto topic = binarize(e.labels, 2);
    for (std::size_t i = 0; i < topic.size(); ++i) EXPECT_EQ(topic[i] == 1, e.labels[i] == 2);
  }
  check_episode_invariants(d);
}

TEST(Newsgroups, NeedsSuperclasses) {
  Rng rng(1);
  EXPECT_THROW(build_newsgroups_style(rng, mnist_pool(1), 1), PoolError);
}

TEST(Dataset, RoundTrip) {
  Rng rng(9);
  auto d = build_newsgroups_style(rng, newsgroups_pool(2), 10, 30, "validation");
  d.seed = 9;
  d.params = {{"note", "x"}};
  d.manifest = {{"subcommand", "test"}};
  const auto dir = temp_dir("roundtrip");
  write_dataset(dir / "validation.json", d);
  EXPECT_TRUE(fs::exists(dir / "validation.emb"));
  const auto back = read_dataset(dir / "validation.json");
  EXPECT_EQ(back, d);
  EXPECT_EQ(back.params["note"], "x");
  EXPECT_EQ(back.manifest["subcommand"], "test");
}

TEST(Dataset, TruncatedPoolNamesTensor) {
  Rng rng(10);
  const auto d = build_mnist_style(rng, mnist_pool(5), 10);
  const auto dir = temp_dir("truncated");
  write_dataset(dir / "train.json", d);
  auto bytes = read_file_bytes(dir / "train.emb");
  bytes.resize(bytes.size() - 100);
  write_file_bytes(dir / "train.emb", bytes);
  try {
    read_dataset(dir / "train.json");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind, ParseError::Kind::truncated);
    EXPECT_NE(std::string(e.what()).find("'channel.1'"), std::string::npos) << e.what();
  }
}

TEST(Dataset, HistogramsSurviveRoundTrip) {
  Rng rng(11);
  const auto d = build_mnist_style(rng, mnist_pool(6), 1000);
  const auto dir = temp_dir("hist");
  write_dataset(dir / "test.json", d);
  const auto back = read_dataset(dir / "test.json");
  const auto hist = [](const Dataset& ds) {
    std::map<long, int> h;
    for (const auto& e : ds.episodes) ++h[std::count(e.labels.begin(), e.labels.end(), 1)];
    return h;
  };
  EXPECT_EQ(hist(back), hist(d));
}

TEST(Dataset, SchemaErrorsCarryJsonPath) {
  Rng rng(12);
  const auto pool = mnist_pool(7);
  const auto d = build_mnist_style(rng, pool, 5);
  auto j = dataset_to_json(d, "x.emb");
  j["episodes"][3]["labels"] = "oops";
  try {
    dataset_from_json(j, pool);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind, ParseError::Kind::schema);
    EXPECT_NE(std::string(e.what()).find("$.episodes[3].labels"), std::string::npos) << e.what();
  }
  j = dataset_to_json(d, "x.emb");
  j.erase("split");
  try {
    dataset_from_json(j, pool);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("$.split"), std::string::npos);
  }
  j = dataset_to_json(d, "x.emb");
  j["episodes"][1]["id"] = j["episodes"][0]["id"];
  EXPECT_THROW(dataset_from_json(j, pool), ParseError);
}

TEST(Pool, ContainerRoundTrip) {
  Rng rng(13);
  const auto pool = newsgroups_pool(3);
  EXPECT_EQ(pool_from_container(decode_container(encode_container(pool_to_container(*pool)))), *pool);
}

TEST(Pool, SuperclassLogitsRaised) {
  const auto pool = newsgroups_pool(4);
  // item 0 is topic 0 in superclass 0 (topics 0-4); its mass on topics 1-4 exceeds the mass on topics 5-8.
  double same = 0, other = 0;
  for (Eigen::Index i = 0; i < 30; ++i) {
    same += pool->channels[0].row(i).segment(1, 4).sum();
    other += pool->channels[0].row(i).segment(5, 4).sum();
  }
  EXPECT_GT(same, 3 * other);
}

TEST(Bundle, EpisodeBundleLayout) {
  Rng rng(14);
  const auto pool = mnist_pool(8);
  const auto d = build_mnist_style(rng, pool, 1);
  const auto& e = d.episodes[0];
  const auto b = episode_bundle(*pool, e, 2);
  EXPECT_EQ(b.M(), 2);
  EXPECT_EQ(b.N(), 2);
  EXPECT_EQ(b.T(), 30);
  EXPECT_EQ(b.r(4, 1).transpose(), pool->channels[1].row(e.candidates[4]));
  EXPECT_EQ(b.q(0).transpose(), pool->channels[0].row(e.query));
  EXPECT_THROW(episode_bundle(*pool, e, 3), std::invalid_argument);
}
