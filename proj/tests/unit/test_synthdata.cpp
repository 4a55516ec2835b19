#include "multidiff/synthdata.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace multidiff;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "multidiff_synth_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image gradient_image(int channels, int size) {
  Image img(Shape3{channels, size, size});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) img.at(c, y, x) = static_cast<float>((x + 2 * y + c) % 256) / 255.0f;
  return img;
}

}  // namespace

TEST_CASE("scenes are a pure function of the seed") {
  const Scene a = generate_scene(17, 32);
  const Scene b = generate_scene(17, 32);
  CHECK(a.heightfield == b.heightfield);
  CHECK(a.modalities == b.modalities);
  const Scene c = generate_scene(18, 32);
  CHECK_FALSE(a.heightfield == c.heightfield);
}

TEST_CASE("scene layout and value range") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Scene s = generate_scene(seed, 16);
    CHECK(s.modalities.size() == 4);
    CHECK(s.modalities.at("dem_hillshade").shape == Shape3{1, 16, 16});
    CHECK(s.modalities.at("optical").shape == Shape3{3, 16, 16});
    CHECK(s.modalities.at("radar_like").shape == Shape3{1, 16, 16});
    CHECK(s.modalities.at("optical_hazy").shape == Shape3{3, 16, 16});
    CHECK(*std::min_element(s.heightfield.begin(), s.heightfield.end()) == 0.0);
    CHECK(*std::max_element(s.heightfield.begin(), s.heightfield.end()) == 1.0);
    for (const auto& [name, img] : s.modalities)
      for (float v : img.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
  }
}

TEST_CASE("flat terrain: constant hillshade and pure speckle radar") {
  const SceneParams p;
  const Scene s = render_scene(5, 16, std::vector<double>(256, 0.4), p);
  const double expected_shade = std::sin(45.0 * M_PI / 180.0);
  for (float v : s.modalities.at("dem_hillshade").data) CHECK(v == doctest::Approx(expected_shade).epsilon(1e-6));

  Rng rng(derive_seed(5, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& radar = s.modalities.at("radar_like").data;
  for (float v : radar) {
    const double speckle = std::max(0.0, 1.0 + p.speckle_std * normal(rng));
    CHECK(v == doctest::Approx(std::min(1.0, p.radar_base * speckle)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(render_scene(5, 16, std::vector<double>(10, 0.0), p), ValidationError);
}

TEST_CASE("hillshade brightens slopes facing the light") {
  // Height rising toward the south-east tilts the surface toward a north-west light.
  std::vector<double> ramp(16 * 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) ramp[static_cast<std::size_t>(y * 16 + x)] = (x + y) / 30.0;
  std::vector<double> flipped(ramp.size());
  for (std::size_t i = 0; i < ramp.size(); ++i) flipped[i] = 1.0 - ramp[i];
  const SceneParams p;
  const auto toward = hillshade(ramp, 16, p);
  const auto away = hillshade(flipped, 16, p);
  const double flat = std::sin(M_PI / 4);
  CHECK(away[8 * 16 + 8] < flat);
  CHECK(toward[8 * 16 + 8] > flat);
}

TEST_CASE("haze is invertible up to the blur") {
  const SceneParams p;
  for (int size : {16, 64}) {
    double worst_blurred = 0.0, worst_sharp = 0.0, mean_sharp = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
      const Scene s = generate_scene(seed, size);
      const Image& hazy = s.modalities.at("optical_hazy");
      const Image& optical = s.modalities.at("optical");
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            double box = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx)
                box += optical.at(c, std::clamp(y + dy, 0, size - 1), std::clamp(x + dx, 0, size - 1));
            const double restored = (hazy.at(c, y, x) - p.haze) / (1.0 - p.haze);
            worst_blurred = std::max(worst_blurred, std::abs(restored - box / 9.0));
            const double sharp = std::abs(restored - optical.at(c, y, x));
            worst_sharp = std::max(worst_sharp, sharp);
            mean_sharp += sharp;
            ++count;
          }
    }
    MESSAGE("size " << size << ": residual vs blurred optical " << worst_blurred << ", vs optical max "
                    << worst_sharp << " mean " << mean_sharp / double(count));
    CHECK(worst_blurred < 0.1);
    CHECK(mean_sharp / double(count) < 0.1);
  }
}

TEST_CASE("scene size validation") {
  CHECK_THROWS_AS(generate_scene(0, 4), ValidationError);
  CHECK_THROWS_AS(generate_scene(0, 12), ValidationError);
  CHECK_THROWS_AS(generate_scene(0, 0), ValidationError);
  CHECK_NOTHROW(generate_scene(0, 8));
}

TEST_CASE("dataset splits") {
  const auto split = make_dataset(100, 0.95, 3);
  CHECK(split.train_seeds.size() == 95);
  CHECK(split.test_seeds.size() == 5);
  std::set<std::uint64_t> all(split.train_seeds.begin(), split.train_seeds.end());
  for (auto s : split.test_seeds) CHECK_FALSE(all.contains(s));
  all.insert(split.test_seeds.begin(), split.test_seeds.end());
  CHECK(all.size() == 100);
  CHECK(*all.rbegin() == 99);

  const auto again = make_dataset(100, 0.95, 3);
  CHECK(again.train_seeds == split.train_seeds);
  CHECK(again.test_seeds == split.test_seeds);
  CHECK_FALSE(make_dataset(100, 0.95, 4).train_seeds == split.train_seeds);

  const auto big = make_dataset(1015438, 0.95, 0);
  CHECK(big.train_seeds.size() == 964666);
  CHECK(big.test_seeds.size() == 50772);

  CHECK_THROWS_AS(make_dataset(1, 0.5, 0), ValidationError);
  CHECK_THROWS_AS(make_dataset(10, 0.0, 0), ValidationError);
  CHECK_THROWS_AS(make_dataset(10, 1.0, 0), ValidationError);
  CHECK_THROWS_AS(make_dataset(10, 0.01, 0), ValidationError);
}

TEST_CASE("split manifest round trip") {
  const fs::path dir = fresh_dir("manifest");
  const auto split = make_dataset(20, 0.75, 9);
  write_split_manifest(split, dir / "split.csv");
  const auto back = read_split_manifest(dir / "split.csv");
  CHECK(back.train_seeds == split.train_seeds);
  CHECK(back.test_seeds == split.test_seeds);
  CHECK(back.split_fraction == doctest::Approx(0.75));
  std::ofstream(dir / "bad.csv") << "3,validation\n";
  CHECK_THROWS_AS(read_split_manifest(dir / "bad.csv"), ValidationError);
}

TEST_CASE("paired directory loading") {
  const std::vector<std::string> mods = {"a", "b", "c", "d"};
  SUBCASE("one scene present everywhere") {
    const fs::path root = fresh_dir("one");
    for (const auto& m : mods) {
      fs::create_directories(root / m);
      write_png(root / m / "tile.png", gradient_image(3, 20));
    }
    const auto ds = load_paired_directory(root, mods, 8, 3);
    CHECK(ds.scene_ids == std::vector<std::string>{"tile"});
    CHECK(ds.skipped_missing == 0);
    for (const auto& m : mods) CHECK(ds.images.at(m).front().shape == Shape3{3, 8, 8});
  }
  SUBCASE("a scene missing from one modality is skipped") {
    const fs::path root = fresh_dir("missing");
    for (const auto& m : mods) {
      fs::create_directories(root / m);
      write_png(root / m / "x.png", gradient_image(1, 8));
      if (m != "d") write_png(root / m / "y.png", gradient_image(1, 8));
    }
    const auto ds = load_paired_directory(root, mods, 8, 1);
    CHECK(ds.scene_ids == std::vector<std::string>{"x"});
    CHECK(ds.skipped_missing == 1);
  }
  SUBCASE("undecodable files are reported") {
    const fs::path root = fresh_dir("corrupt");
    for (const auto& m : mods) {
      fs::create_directories(root / m);
      write_png(root / m / "ok.png", gradient_image(1, 8));
      if (m == "b") std::ofstream(root / m / "bad.png") << "not a png";
      else write_png(root / m / "bad.png", gradient_image(1, 8));
    }
    const auto ds = load_paired_directory(root, mods, 8, 1);
    CHECK(ds.scene_ids == std::vector<std::string>{"ok"});
    CHECK(ds.errors.size() == 1);
  }
  SUBCASE("large tiles are centre-cropped then resized") {
    const fs::path root = fresh_dir("crop");
    const Image big = gradient_image(3, 1068);
    fs::create_directories(root / "a");
    write_png(root / "a" / "t.png", big);
    const auto ds = load_paired_directory(root, {"a"}, 16, 3, 256);
    const Image expected = resize_area(center_crop(read_png(root / "a" / "t.png"), 256), 16, 16);
    REQUIRE(ds.images.at("a").size() == 1);
    CHECK(ds.images.at("a").front() == expected);
  }
  SUBCASE("missing modality directory") {
    const fs::path root = fresh_dir("nodir");
    CHECK_THROWS_AS(load_paired_directory(root, {"a"}, 8, 1), ValidationError);
  }
}

TEST_CASE("image helpers") {
  const Image rgb = gradient_image(3, 12);
  const Image gray = to_channels(rgb, 1);
  CHECK(gray.shape == Shape3{1, 12, 12});
  CHECK(gray.at(0, 2, 3) == doctest::Approx(0.299f * rgb.at(0, 2, 3) + 0.587f * rgb.at(1, 2, 3) + 0.114f * rgb.at(2, 2, 3)));
  const Image back = to_channels(gray, 3);
  CHECK(back.at(2, 5, 5) == gray.at(0, 5, 5));
  CHECK(center_crop(Image(Shape3{1, 10, 6}), 0).shape == Shape3{1, 6, 6});
  CHECK_THROWS_AS(center_crop(rgb, 13), ValidationError);
  Image flat(Shape3{1, 8, 8}, 0.25f);
  for (float v : resize_area(flat, 3, 3).data) CHECK(v == doctest::Approx(0.25f));
  const Image grid = tile_grid({flat, flat}, 1, 3);
  CHECK(grid.shape == Shape3{1, 8, 24});
  CHECK(grid.at(0, 0, 20) == 0.0f);

  const fs::path dir = fresh_dir("png");
  write_png(dir / "g.png", rgb);
  const Image read = read_png(dir / "g.png");
  CHECK(read.shape == rgb.shape);
  for (std::size_t i = 0; i < read.data.size(); ++i) CHECK(std::abs(read.data[i] - rgb.data[i]) <= 0.5f / 255.0f + 1e-6f);
  CHECK_THROWS_AS(read_png(dir / "none.png"), ImageIoError);
}
