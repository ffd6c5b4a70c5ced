#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "revit/cli.hpp"
#include "tempdir.hpp"

using namespace revit;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

double top1_of(const std::string& out) {
  std::smatch m;
  static const std::regex re("top1=([0-9.eE+-]+)");
  if (!std::regex_search(out, m, re)) throw std::runtime_error("no top1 in: " + out);
  return std::stod(m[1]);
}

// Depth-2, 2-head model on 16x16 synthetic images: 4x4 patch grid, 17 tokens.
const char* kConfig = R"({
  "model": {"image_size": 16, "patch_size": 4, "dim": 16, "depth": 2, "heads": 2, "mlp_ratio": 2,
            "num_classes": 4, "seed": 3},
  "train": {"epochs": 2, "batch_size": 16, "warmup_epochs": 1, "base_lr": 0.003, "seed": 3},
  "data": {"path": "synthetic", "synthetic_train": 64, "synthetic_val": 32, "synthetic_seed": 5}
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    std::ofstream(*dir_ / "config.json") << kConfig;
    auto r = run_cli({"train", "--config", (*dir_ / "config.json").string(), "--out", (*dir_ / "revit").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run_cli({"train", "--config", (*dir_ / "config.json").string(), "--variant", "vit", "--out",
                 (*dir_ / "vit").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path path(const std::string& rel) { return *dir_ / rel; }
  static std::string ckpt(const std::string& run) { return path(run + "/best.rvt").string(); }

  static TempDir* dir_;
};

TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, TrainWritesArtifacts) {
  for (const char* run : {"revit", "vit"}) {
    EXPECT_TRUE(fs::exists(path(std::string(run) + "/best.rvt")));
    EXPECT_TRUE(fs::exists(path(std::string(run) + "/last.rvt")));
    EXPECT_TRUE(fs::exists(path(std::string(run) + "/config.json")));
    auto rows = read_csv(path(std::string(run) + "/metrics.csv"));
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].size(), 8u);
  }
}

TEST_F(Cli, FixedAlphaOneLogMatchesVit) {
  auto r = run_cli({"train", "--config", path("config.json").string(), "--alpha-mode", "fixed:1.0", "--out",
                    path("fixed1").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto a = read_csv(path("fixed1/metrics.csv"));
  auto b = read_csv(path("vit/metrics.csv"));
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a[0], b[0]);
  for (std::size_t i = 1; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), b[i].size());
    for (std::size_t j = 0; j < a[i].size(); ++j) EXPECT_NEAR(std::stod(a[i][j]), std::stod(b[i][j]), 1e-5);
  }
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({"train", "--bogus"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--ckpt", ckpt("revit"), "--perturb", "rotate:15"}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--ckpt", ckpt("revit"), "--perturb", "scale:20"}).code, 2);
  EXPECT_EQ(run_cli({"analyze", "--ckpt", ckpt("revit"), "--metric", "entropy", "--out", path("x").string()}).code,
            2);
  std::ofstream(path("bad.json")) << R"({"model": {"depth": 2, "wings": 2}})";
  auto r = run_cli({"train", "--config", path("bad.json").string(), "--out", path("bad").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("wings"), std::string::npos);
  EXPECT_EQ(run_cli({"train", "--help"}).code, 0);
}

TEST_F(Cli, MissingCheckpointExitsOne) {
  auto r = run_cli({"eval", "--ckpt", path("nowhere.rvt").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nowhere.rvt"), std::string::npos);
}

TEST_F(Cli, ZeroPerturbationEqualsPlainEval) {
  auto plain = run_cli({"eval", "--ckpt", ckpt("revit")});
  ASSERT_EQ(plain.code, 0) << plain.err;
  for (const char* p : {"hshift:0", "vshift:0", "scale:0"}) {
    auto r = run_cli({"eval", "--ckpt", ckpt("revit"), "--perturb", p});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(top1_of(r.out), top1_of(plain.out)) << p;
  }
}

TEST_F(Cli, SweepEmitsFourRowTable) {
  auto r = run_cli({"eval", "--ckpt", ckpt("revit"), "--perturb", "scale:all", "--table", path("sweep.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const double base = top1_of(r.out);
  auto rows = read_csv(path("sweep.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"mode", "percent", "top1", "delta"}));
  const char* pct[] = {"15", "30", "45", "60"};
  for (std::size_t i = 1; i < 5; ++i) {
    EXPECT_EQ(rows[i][0], "scale");
    EXPECT_EQ(rows[i][1], pct[i - 1]);
    EXPECT_NEAR(std::stod(rows[i][3]), std::stod(rows[i][2]) - base, 1e-9);
  }
}

TEST_F(Cli, NonLocalityShape) {
  auto r = run_cli({"analyze", "--ckpt", ckpt("revit"), "--metric", "nonlocality", "--samples", "1", "--out",
                    path("nl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto heads = read_csv(path("nl/nonlocality_heads.csv"));
  auto layers = read_csv(path("nl/nonlocality_layers.csv"));
  EXPECT_EQ(heads.size() - 1 + layers.size() - 1, 2u * 2u + 2u);
  const double max_d = std::sqrt(18.0);
  for (std::size_t i = 1; i < heads.size(); ++i) {
    EXPECT_GE(std::stod(heads[i][3]), 0.0);
    EXPECT_LE(std::stod(heads[i][3]), max_d);
  }
  auto j = nlohmann::json::parse(slurp(path("nl/nonlocality.json")));
  EXPECT_EQ(j["samples"], 1);
  EXPECT_EQ(j["models"][0]["decomposition"].size(), 1u);
}

TEST_F(Cli, NonLocalityComparison) {
  auto r = run_cli({"analyze", "--ckpt", ckpt("vit"), "--ckpt", ckpt("revit"), "--metric", "nonlocality",
                    "--samples", "4", "--out", path("cmp").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = read_csv(path("cmp/nonlocality_compare.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"layer", "D_vit", "D_revit"}));
}

TEST_F(Cli, SimilarityFilesPerLayerPerImage) {
  auto r = run_cli({"analyze", "--ckpt", ckpt("revit"), "--metric", "similarity", "--samples", "2", "--out",
                    path("sim").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (int img = 0; img < 2; ++img)
    for (int l = 0; l < 2; ++l) {
      auto m = read_csv(path("sim/similarity/revit/img" + std::to_string(img) + "_layer" + std::to_string(l) + ".csv"));
      ASSERT_EQ(m.size(), 16u);
      for (std::size_t i = 0; i < 16; ++i) {
        ASSERT_EQ(m[i].size(), 16u);
        EXPECT_NEAR(std::stod(m[i][i]), 1.0, 1e-9);
        for (std::size_t k = 0; k < 16; ++k) EXPECT_LE(std::abs(std::stod(m[i][k])), 1.0 + 1e-9);
      }
    }
  EXPECT_FALSE(fs::exists(path("sim/similarity/revit/img2_layer0.csv")));
}

TEST_F(Cli, AlphaReport) {
  auto r = run_cli({"analyze", "--ckpt", ckpt("vit"), "--metric", "alpha", "--out", path("av").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("notice"), std::string::npos);
  EXPECT_EQ(read_csv(path("av/alpha.csv")).size(), 1u);
  r = run_cli({"analyze", "--ckpt", ckpt("revit"), "--metric", "alpha", "--out", path("ar").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = read_csv(path("ar/alpha.csv"));
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 1; i < 3; ++i) {
    const double a = std::stod(rows[i][2]);
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
}

TEST_F(Cli, ExportAttentionIsDeterministicAndStochastic) {
  for (const char* out : {"x1", "x2"}) {
    auto r = run_cli({"export-attn", "--ckpt", ckpt("revit"), "--image", "3", "--out", path(out).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const std::size_t N = 17;
  int files = 0;
  for (int l = 0; l < 2; ++l)
    for (int h = 0; h < 2; ++h) {
      const std::string stem = "attn_l" + std::to_string(l) + "_h" + std::to_string(h);
      const std::string blob = slurp(path("x1/" + stem + ".f32"));
      EXPECT_EQ(blob, slurp(path("x2/" + stem + ".f32")));
      EXPECT_EQ(slurp(path("x1/" + stem + ".csv")), slurp(path("x2/" + stem + ".csv")));
      ASSERT_EQ(blob.size(), N * N * 4);
      for (std::size_t i = 0; i < N; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          float v;
          std::memcpy(&v, blob.data() + 4 * (i * N + j), 4);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
      EXPECT_EQ(read_csv(path("x1/" + stem + ".csv")).size(), N);
      ++files;
    }
  EXPECT_EQ(files, 4);
  EXPECT_EQ(slurp(path("x1/attention.f32")).size(), 4 * N * N * 4);
  auto idx = nlohmann::json::parse(slurp(path("x1/index.json")));
  EXPECT_EQ(idx["files"].size(), 4u);

  EXPECT_EQ(run_cli({"export-attn", "--ckpt", ckpt("revit"), "--image", "999", "--out", path("x3").string()}).code, 1);
  EXPECT_EQ(run_cli({"export-attn", "--ckpt", ckpt("revit"), "--image", path("nope.bin").string(), "--out",
                     path("x3").string()})
                .code,
            1);
}
