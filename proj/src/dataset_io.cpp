#include "semflow/scene/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "semflow/scene/png_io.hpp"

namespace sf {

namespace {

namespace fs = std::filesystem;

std::string frame_id(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", t);
  return buf;
}

void write_f32_map(const std::string& path, const char magic[4], const float* data,
                   std::uint32_t w, std::uint32_t h, std::uint32_t per_pixel) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_f32_map: cannot open " + path);
  f.write(magic, 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(data),
          static_cast<std::streamsize>(sizeof(float)) * w * h * per_pixel);
  if (!f) throw std::runtime_error("write_f32_map: write failed for " + path);
}

void read_f32_map(const std::string& path, const char magic[4], float* data,
                  std::uint32_t expect_w, std::uint32_t expect_h, std::uint32_t per_pixel) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_f32_map: cannot open " + path);
  char m[4];
  std::uint32_t w = 0, h = 0;
  f.read(m, 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  f.read(reinterpret_cast<char*>(&h), 4);
  if (!f || std::memcmp(m, magic, 4) != 0)
    throw std::runtime_error("read_f32_map: magic mismatch in " + path);
  if (w != expect_w || h != expect_h)
    throw std::runtime_error("read_f32_map: dimension mismatch in " + path);
  f.read(reinterpret_cast<char*>(data),
         static_cast<std::streamsize>(sizeof(float)) * w * h * per_pixel);
  if (f.gcount() != static_cast<std::streamsize>(sizeof(float)) * w * h * per_pixel)
    throw std::runtime_error("read_f32_map: truncated file " + path);
}

}  // namespace

void write_dataset(const SyntheticScene& scene, const std::string& dir) {
  for (const char* sub : {"", "/frames", "/labels", "/flow", "/depth", "/masks"})
    fs::create_directories(dir + sub);

  for (int t = 1; t <= scene.N; ++t) {
    const std::string id = frame_id(t);
    const int W = scene.W, H = scene.H;

    std::vector<std::uint8_t> rgb(static_cast<size_t>(W) * H * 3);
    for (Index p = 0; p < W * H; ++p)
      for (int c = 0; c < 3; ++c)
        rgb[p * 3 + c] = static_cast<std::uint8_t>(
            std::lround(std::clamp(scene.frames[t - 1](p, c), 0.0f, 1.0f) * 255.0f));
    write_png(dir + "/frames/frame_" + id + ".png", rgb.data(), W, H, 3);

    std::vector<std::uint8_t> lab(static_cast<size_t>(W) * H);
    for (Index p = 0; p < W * H; ++p) lab[p] = static_cast<std::uint8_t>(scene.labels[t - 1](p));
    write_png(dir + "/labels/label_" + id + ".png", lab.data(), W, H, 1);

    std::vector<std::uint8_t> fg(static_cast<size_t>(W) * H);
    for (Index p = 0; p < W * H; ++p) fg[p] = scene.foreground_mask[t - 1](p);
    write_png(dir + "/masks/fg_" + id + ".png", fg.data(), W, H, 1);

    write_f32_map(dir + "/flow/fwd_" + id + ".bin", "SFLO", scene.flow_fwd[t - 1].data(),
                  W, H, 2);
    write_f32_map(dir + "/flow/bwd_" + id + ".bin", "SFLO", scene.flow_bwd[t - 1].data(),
                  W, H, 2);
    write_f32_map(dir + "/depth/depth_" + id + ".bin", "SDEP", scene.depth[t - 1].data(),
                  W, H, 1);
  }

  std::ofstream poses(dir + "/poses.txt");
  poses.precision(17);
  for (const auto& pose : scene.poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) poses << pose.rotation(r, c) << " ";
    for (int r = 0; r < 3; ++r) poses << pose.translation(r) << " ";
    poses << pose.fx << " " << pose.fy << " " << pose.cx << " " << pose.cy << "\n";
  }
  if (!poses) throw std::runtime_error("write_dataset: failed writing poses.txt");

  std::ofstream meta(dir + "/meta.txt");
  meta << "N=" << scene.N << "\nW=" << scene.W << "\nH=" << scene.H << "\nL=" << scene.L
       << "\nseed=" << scene.seed << "\n";
  if (!meta) throw std::runtime_error("write_dataset: failed writing meta.txt");
}

SyntheticScene read_dataset(const std::string& dir) {
  SyntheticScene scene;
  {
    std::ifstream meta(dir + "/meta.txt");
    if (!meta) throw std::runtime_error("read_dataset: cannot open " + dir + "/meta.txt");
    std::string line;
    while (std::getline(meta, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      std::string val = line.substr(eq + 1);
      if (key == "N") scene.N = std::stoi(val);
      else if (key == "W") scene.W = std::stoi(val);
      else if (key == "H") scene.H = std::stoi(val);
      else if (key == "L") scene.L = std::stoi(val);
      else if (key == "seed") scene.seed = std::stoull(val);
    }
    if (scene.N <= 0 || scene.W <= 0 || scene.H <= 0 || scene.L <= 0)
      throw std::runtime_error("read_dataset: malformed meta.txt in " + dir);
  }

  {
    std::ifstream poses(dir + "/poses.txt");
    if (!poses) throw std::runtime_error("read_dataset: cannot open " + dir + "/poses.txt");
    for (int t = 0; t < scene.N; ++t) {
      CameraPose pose;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) poses >> pose.rotation(r, c);
      for (int r = 0; r < 3; ++r) poses >> pose.translation(r);
      poses >> pose.fx >> pose.fy >> pose.cx >> pose.cy;
      if (!poses) throw std::runtime_error("read_dataset: malformed poses.txt in " + dir);
      scene.poses.push_back(pose);
    }
  }

  const int W = scene.W, H = scene.H;
  for (int t = 1; t <= scene.N; ++t) {
    const std::string id = frame_id(t);

    PngImage rgb = read_png(dir + "/frames/frame_" + id + ".png");
    if (rgb.width != W || rgb.height != H || rgb.channels != 3)
      throw std::runtime_error("read_dataset: frame dimension mismatch at t=" + id);
    Matf fr(W * H, 3);
    for (Index p = 0; p < W * H; ++p)
      for (int c = 0; c < 3; ++c) fr(p, c) = rgb.pixels[p * 3 + c] / 255.0f;
    scene.frames.push_back(std::move(fr));

    PngImage lab = read_png(dir + "/labels/label_" + id + ".png");
    if (lab.width != W || lab.height != H || lab.channels != 1)
      throw std::runtime_error("read_dataset: label dimension mismatch at t=" + id);
    Eigen::VectorXi lv(W * H);
    for (Index p = 0; p < W * H; ++p) {
      lv(p) = lab.pixels[p];
      if (lv(p) >= scene.L)
        throw std::runtime_error("read_dataset: class id out of range at t=" + id);
    }
    scene.labels.push_back(std::move(lv));

    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> fg(W * H);
    std::string mask_path = dir + "/masks/fg_" + id + ".png";
    if (fs::exists(mask_path)) {
      PngImage m = read_png(mask_path);
      if (m.width != W || m.height != H || m.channels != 1)
        throw std::runtime_error("read_dataset: mask dimension mismatch at t=" + id);
      for (Index p = 0; p < W * H; ++p) fg(p) = m.pixels[p];
    } else {
      for (Index p = 0; p < W * H; ++p) fg(p) = scene.labels.back()(p) != 0 ? 1 : 0;
    }
    scene.foreground_mask.push_back(std::move(fg));

    Matf ff(W * H, 2), fb(W * H, 2);
    read_f32_map(dir + "/flow/fwd_" + id + ".bin", "SFLO", ff.data(), W, H, 2);
    read_f32_map(dir + "/flow/bwd_" + id + ".bin", "SFLO", fb.data(), W, H, 2);
    scene.flow_fwd.push_back(std::move(ff));
    scene.flow_bwd.push_back(std::move(fb));

    Vec<float> dep(W * H);
    read_f32_map(dir + "/depth/depth_" + id + ".bin", "SDEP", dep.data(), W, H, 1);
    scene.depth.push_back(std::move(dep));
  }
  return scene;
}

}  // namespace sf
