#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <queue>
#include <random>
#include <set>

#include "ct/data.hpp"
#include "ct/patching.hpp"
#include "ct/tensor.hpp"

namespace ct::data {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ct_data_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Component {
  int pixels = 0;
  int height = 0;
  int width = 0;
};

// 4-connected components of one class, found by flood fill.
std::vector<Component> components(const Mask& m, std::uint8_t cls) {
  std::vector<char> seen(m.ids.size(), 0);
  std::vector<Component> out;
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) {
      if (m.at(r, c) != cls || seen[static_cast<std::size_t>(r) * m.width + c]) continue;
      int r0 = r, r1 = r, c0 = c, c1 = c, n = 0;
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      seen[static_cast<std::size_t>(r) * m.width + c] = 1;
      while (!q.empty()) {
        const auto [y, x] = q.front();
        q.pop();
        ++n;
        r0 = std::min(r0, y), r1 = std::max(r1, y), c0 = std::min(c0, x), c1 = std::max(c1, x);
        const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width) continue;
          auto& s = seen[static_cast<std::size_t>(ny) * m.width + nx];
          if (s || m.at(ny, nx) != cls) continue;
          s = 1;
          q.push({ny, nx});
        }
      }
      out.push_back({n, r1 - r0 + 1, c1 - c0 + 1});
    }
  return out;
}

TEST(Scene, DeterministicUnderSeed) {
  SceneConfig cfg;
  std::mt19937_64 a(5), b(5), c(6);
  const auto s1 = generate_scene(cfg, a), s2 = generate_scene(cfg, b), s3 = generate_scene(cfg, c);
  EXPECT_EQ(s1.image, s2.image);
  EXPECT_EQ(s1.mask, s2.mask);
  EXPECT_NE(s1.mask, s3.mask);
  cfg.seed = 3;
  const auto batch1 = generate_samples(cfg, 4, 0, "train");
  const auto batch2 = generate_samples(cfg, 4, 0, "train");
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(batch1[i].image, batch2[i].image);
    EXPECT_EQ(batch1[i].id, batch2[i].id);
  }
  EXPECT_EQ(batch1[2].id, "train_00002");
  EXPECT_NE(generate_samples(cfg, 1, 1, "test")[0].mask, batch1[0].mask);
}

TEST(Scene, NoInstancesGivesUniformSurface) {
  SceneConfig cfg;
  cfg.buildings = cfg.low_vegetation = cfg.trees = cfg.cars = cfg.clutter = {0, 0};
  std::mt19937_64 rng(1);
  const auto s = generate_scene(cfg, rng);
  for (auto id : s.mask.ids) EXPECT_EQ(id, kSurface);
}

TEST(Scene, ValuesAndLabelsInRange) {
  SceneConfig cfg;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto s = generate_scene(cfg, rng);
    ASSERT_EQ(s.image.values.size(), 64u * 64u * 3u);
    ASSERT_EQ(s.mask.ids.size(), 64u * 64u);
    for (float v : s.image.values) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    for (auto id : s.mask.ids) EXPECT_LT(id, kClassCount);
  }
}

TEST(Scene, CarComponentsSmallerThanFinestPatch) {
  SceneConfig cfg;
  cfg.seed = 17;
  int cars = 0;
  for (const auto& s : generate_samples(cfg, 50, 0, "s")) {
    for (const auto& comp : components(s.mask, kCar)) {
      ++cars;
      EXPECT_LT(comp.height, 4);
      EXPECT_LT(comp.width, 4);
    }
    for (const auto& grid : patching::build_patch_grids(s.mask, patching::default_stage_specs(64)))
      EXPECT_TRUE(patching::positive_indices(grid, kCar).empty());
  }
  EXPECT_GT(cars, 100);
}

TEST(Scene, RarestClassAtMostTwoPercent) {
  SceneConfig cfg;
  cfg.seed = 99;
  std::array<std::int64_t, kClassCount> counts{};
  std::int64_t total = 0;
  for (const auto& s : generate_samples(cfg, 200, 0, "s")) {
    for (auto id : s.mask.ids) ++counts[id];
    total += static_cast<std::int64_t>(s.mask.ids.size());
  }
  const auto rarest = *std::min_element(counts.begin(), counts.end());
  EXPECT_GT(rarest, 0);
  EXPECT_LE(static_cast<double>(rarest) / static_cast<double>(total), 0.02);
  for (int c = 0; c < kClassCount; ++c) EXPECT_GT(counts[c], 0) << c;
}

TEST(Scene, CarSizeAtFinestPatchRejected) {
  SceneConfig cfg;
  cfg.car_size = {1, 4};
  try {
    cfg.validate();
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("finest"), std::string::npos) << e.what();
  }
  std::mt19937_64 rng(1);
  EXPECT_THROW(generate_scene(cfg, rng), Error);
}

TEST(Tiling, SixThousandByFiveHundredGives144Tiles) {
  const auto origins = tile_origins(6000, 6000, 500);
  EXPECT_EQ(origins.size(), 144u);
  EXPECT_EQ(origins.back(), (std::array<int, 2>{5500, 5500}));
  EXPECT_EQ(tile_origins(1100, 1000, 500).size(), 4u);
  EXPECT_THROW(tile_origins(400, 400, 500), Error);
}

TEST(Tiling, TileEqualToOutPassesThrough) {
  SceneConfig cfg;
  std::mt19937_64 rng(3);
  const auto s = generate_scene(cfg, rng);
  const auto tiles = tile_and_resize(s.image, s.mask, 32, 32, "t");
  ASSERT_EQ(tiles.size(), 4u);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      EXPECT_EQ(tiles[3].mask.at(r, c), s.mask.at(32 + r, 32 + c));
      for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(tiles[3].image.at(r, c, ch), s.image.at(32 + r, 32 + c, ch));
    }
  EXPECT_EQ(tiles[1].id, "t_r0_c1");
}

TEST(Tiling, ResizedMaskIntroducesNoNewClasses) {
  SceneConfig cfg;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = generate_scene(cfg, rng);
    for (const auto& t : tile_and_resize(s.image, s.mask, 20, 33)) {
      EXPECT_EQ(t.image.height, 33);
      EXPECT_EQ(t.mask.width, 33);
      std::set<std::uint8_t> after(t.mask.ids.begin(), t.mask.ids.end());
      // Find the crop this tile came from to compare class sets.
      const int r0 = std::stoi(t.id.substr(t.id.find("_r") + 2)) * 20;
      const int c0 = std::stoi(t.id.substr(t.id.find("_c") + 2)) * 20;
      std::set<std::uint8_t> before;
      for (int r = r0; r < r0 + 20; ++r)
        for (int c = c0; c < c0 + 20; ++c) before.insert(s.mask.at(r, c));
      EXPECT_TRUE(std::includes(before.begin(), before.end(), after.begin(), after.end()));
      for (float v : t.image.values) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
}

TEST(Tiling, MismatchedSizesRejected) {
  EXPECT_THROW(tile_and_resize(Image(10, 10), Mask(10, 12), 5, 5), Error);
  EXPECT_THROW(tile_and_resize(Image(10, 10), Mask(10, 10), 5, 4), Error);
}

TEST(Dataset, RoundTripIsBitExact) {
  const auto dir = fresh_dir("roundtrip");
  SceneConfig cfg;
  cfg.seed = 8;
  auto train = generate_samples(cfg, 3, 0, "train");
  auto test = generate_samples(cfg, 2, 1, "test");
  train[0].mask.at(0, 0) = kIgnoreLabel;
  save_dataset(dir, train, test, cfg.palette);
  const auto loaded = load_dataset(dir, Split::Train);
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].id, train[i].id);
    EXPECT_EQ(loaded[i].image, train[i].image);
    EXPECT_EQ(loaded[i].mask, train[i].mask);
  }
  EXPECT_EQ(load_dataset(dir, Split::Test).size(), 2u);
  EXPECT_EQ(load_manifest(dir).palette, default_palette());
  fs::remove_all(dir);
}

TEST(Dataset, EmptyDirectoryGivesNoSamples) {
  const auto dir = fresh_dir("empty");
  EXPECT_TRUE(load_dataset(dir, Split::Train).empty());
  fs::remove_all(dir);
}

TEST(Dataset, ManifestSplitCountsAndOrder) {
  const auto dir = fresh_dir("split");
  SceneConfig cfg;
  cfg.image_side = 32;
  auto train = generate_samples(cfg, 24, 0, "tile");
  auto test = generate_samples(cfg, 14, 1, "holdout");
  std::reverse(train.begin(), train.end());
  save_dataset(dir, train, test, cfg.palette);
  const auto tr = load_dataset(dir, Split::Train);
  const auto te = load_dataset(dir, Split::Test);
  ASSERT_EQ(tr.size(), 24u);
  ASSERT_EQ(te.size(), 14u);
  std::set<std::string> want;
  for (const auto& s : train) want.insert(s.id);
  std::vector<std::string> got;
  for (const auto& s : tr) got.push_back(s.id);
  EXPECT_TRUE(std::is_sorted(got.begin(), got.end()));
  EXPECT_EQ(std::set<std::string>(got.begin(), got.end()), want);
  EXPECT_EQ(te.front().id, "holdout_00000");
  fs::remove_all(dir);
}

TEST(Dataset, MissingMaskNamesTheId) {
  const auto dir = fresh_dir("missing");
  SceneConfig cfg;
  const auto train = generate_samples(cfg, 2, 0, "img");
  save_dataset(dir, train, {}, cfg.palette);
  fs::remove(dir / "masks" / "img_00001.png");
  try {
    load_dataset(dir, Split::Train);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("img_00001"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Dataset, CorruptRasterNamesThePath) {
  const auto dir = fresh_dir("corrupt");
  SceneConfig cfg;
  save_dataset(dir, generate_samples(cfg, 1, 0, "img"), {}, cfg.palette);
  const auto path = dir / "images" / "img_00000.png";
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "not a png header at all";
  }
  try {
    load_dataset(dir, Split::Train);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Dataset, SplitNames) {
  EXPECT_EQ(split_from_string("train"), Split::Train);
  EXPECT_EQ(split_from_string("test"), Split::Test);
  EXPECT_THROW(split_from_string("val"), Error);
}

}  // namespace
}  // namespace ct::data
