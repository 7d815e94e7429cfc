#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "semflow/autodiff/param.hpp"
#include "semflow/scene/dataset_io.hpp"
#include "semflow/scene/png_io.hpp"

using namespace sf;
namespace fs = std::filesystem;

namespace {
std::string temp_dir(const std::string& tag) {
  std::string d = (fs::temp_directory_path() / ("semflow_test_" + tag)).string();
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}
}  // namespace

TEST_CASE("png round-trip, gray and rgb") {
  std::string dir = temp_dir("png");
  Rng rng(3);
  for (int channels : {1, 3}) {
    int w = 13, h = 7;
    std::vector<std::uint8_t> img(static_cast<size_t>(w) * h * channels);
    for (auto& b : img) b = static_cast<std::uint8_t>(rng.uniform_index(256));
    std::string path = dir + "/t" + std::to_string(channels) + ".png";
    write_png(path, img.data(), w, h, channels);
    PngImage back = read_png(path);
    REQUIRE(back.width == w);
    REQUIRE(back.height == h);
    REQUIRE(back.channels == channels);
    CHECK(std::memcmp(back.pixels.data(), img.data(), img.size()) == 0);
  }
}

TEST_CASE("dataset round-trips exactly") {
  SceneRecipe recipe = make_recipe("balloon");
  recipe.width = 24;
  recipe.height = 20;
  recipe.frames = 4;
  SyntheticScene scene = generate_scene(recipe, 123);

  std::string dir = temp_dir("roundtrip");
  write_dataset(scene, dir);
  SyntheticScene back = read_dataset(dir);

  REQUIRE(back.N == scene.N);
  REQUIRE(back.W == scene.W);
  REQUIRE(back.H == scene.H);
  REQUIRE(back.L == scene.L);
  CHECK(back.seed == scene.seed);
  for (int t = 0; t < scene.N; ++t) {
    CHECK((back.frames[t] - scene.frames[t]).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((back.labels[t] - scene.labels[t]).cwiseAbs().maxCoeff() == 0);
    CHECK((back.depth[t] - scene.depth[t]).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((back.flow_fwd[t] - scene.flow_fwd[t]).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((back.flow_bwd[t] - scene.flow_bwd[t]).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((back.foreground_mask[t].cast<int>() - scene.foreground_mask[t].cast<int>())
              .cwiseAbs()
              .maxCoeff() == 0);
  }
  for (int t = 0; t < scene.N; ++t) {
    CHECK((back.poses[t].rotation - scene.poses[t].rotation).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.poses[t].translation - scene.poses[t].translation).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.poses[t].fx == scene.poses[t].fx);
    CHECK(back.poses[t].cx == scene.poses[t].cx);
  }
}

TEST_CASE("hand-composed flow file decodes to known values") {
  std::string dir = temp_dir("flowbytes");
  std::string path = dir + "/flow.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f.write("SFLO", 4);
    std::uint32_t w = 2, h = 2;
    f.write(reinterpret_cast<char*>(&w), 4);
    f.write(reinterpret_cast<char*>(&h), 4);
    float vals[8] = {0.5f, -1.25f, 2.0f, 0.0f, -3.5f, 4.75f, 1e-3f, -7.0f};
    f.write(reinterpret_cast<char*>(vals), sizeof(vals));
  }
  // decode through the dataset reader path by placing it in a full dataset
  SceneRecipe recipe = make_recipe("balloon");
  recipe.width = 2;
  recipe.height = 2;
  recipe.frames = 2;
  SyntheticScene scene = generate_scene(recipe, 1);
  write_dataset(scene, dir);
  fs::copy_file(path, dir + "/flow/fwd_001.bin", fs::copy_options::overwrite_existing);
  SyntheticScene back = read_dataset(dir);
  CHECK(back.flow_fwd[0](0, 0) == 0.5f);
  CHECK(back.flow_fwd[0](0, 1) == -1.25f);
  CHECK(back.flow_fwd[0](1, 0) == 2.0f);
  CHECK(back.flow_fwd[0](2, 1) == 4.75f);
  CHECK(back.flow_fwd[0](3, 0) == 1e-3f);
  CHECK(back.flow_fwd[0](3, 1) == -7.0f);
}

TEST_CASE("truncated and corrupted files produce errors naming the file") {
  SceneRecipe recipe = make_recipe("balloon");
  recipe.width = 8;
  recipe.height = 8;
  recipe.frames = 2;
  SyntheticScene scene = generate_scene(recipe, 2);
  std::string dir = temp_dir("corrupt");
  write_dataset(scene, dir);

  // truncate a depth file
  std::string victim = dir + "/depth/depth_002.bin";
  fs::resize_file(victim, 20);
  try {
    read_dataset(dir);
    FAIL("expected a read error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("depth_002.bin") != std::string::npos);
  }

  // restore, then corrupt a flow magic
  write_dataset(scene, dir);
  victim = dir + "/flow/bwd_001.bin";
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    read_dataset(dir);
    FAIL("expected a magic error");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("bwd_001.bin") != std::string::npos);
    CHECK(msg.find("magic") != std::string::npos);
  }

  CHECK_THROWS(read_dataset(dir + "/does_not_exist"));
}
