#pragma once

// Synthetic dynamic scenes with exact ground truth. A scene is a set of
// analytic primitives (textured background plane, moving/static spheres)
// observed by a forward-facing camera rig; RGB, depth, per-pixel class
// labels and forward/backward optical flow all come from closed-form
// ray-primitive intersection.

#include <functional>
#include <string>
#include <vector>

#include "semflow/camera.hpp"

namespace sf {

enum class PrimitiveKind { Sphere, BackgroundPlane };

struct ScenePrimitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  int class_id = 0;
  // center path: base + velocity * s + amp * sin(2*pi*s), s = (t-1)/(N-1)
  Eigen::Vector3d base = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d wobble = Eigen::Vector3d::Zero();
  double radius = 0.5;        // sphere radius, or unused for planes
  double plane_z = 5.0;       // background plane depth (world z)
  Eigen::Vector3d color_a = Eigen::Vector3d(0.8, 0.8, 0.8);
  Eigen::Vector3d color_b = Eigen::Vector3d(0.2, 0.2, 0.2);
  double texture_freq = 2.0;

  bool dynamic() const { return velocity.norm() > 0 || wobble.norm() > 0; }

  Eigen::Vector3d center(int t, int N) const {
    double s = N > 1 ? static_cast<double>(t - 1) / (N - 1) : 0.0;
    return base + velocity * s + wobble * std::sin(2.0 * M_PI * s);
  }
};

struct SceneRecipe {
  std::string name = "balloon";
  int frames = 12;
  int width = 64, height = 64;
  int num_classes = 4;
  double rig_span = 0.6;  // lateral camera travel, world units
  std::vector<ScenePrimitive> primitives;
};

struct SyntheticScene {
  int N = 0;
  int W = 0, H = 0;
  int L = 0;
  std::uint64_t seed = 0;
  std::vector<CameraPose> poses;             // one per frame
  std::vector<Matf> frames;                  // (H*W)x3, RGB in [0,1]
  std::vector<Eigen::VectorXi> labels;       // (H*W), class ids
  std::vector<Vec<float>> depth;             // (H*W), first-hit distance
  std::vector<Matf> flow_fwd;                // (H*W)x2, pixels; zeros at t=N
  std::vector<Matf> flow_bwd;                // (H*W)x2, pixels; zeros at t=1
  std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>> foreground_mask;

  Index pix(int i, int j) const { return static_cast<Index>(j) * W + i; }
  bool flow_fwd_valid(int t) const { return t >= 1 && t < N; }
  bool flow_bwd_valid(int t) const { return t >= 2 && t <= N; }
};

// Named recipe presets. "balloon" is the desk-scale default: 12 frames,
// 64x64, 4 classes, one moving and one static sphere over a textured plane.
SceneRecipe make_recipe(const std::string& name);

SyntheticScene generate_scene(const SceneRecipe& recipe, std::uint64_t seed);

SyntheticScene add_flow_noise(const SyntheticScene& scene, double beta, std::uint64_t seed);

struct OccludeRect {
  int x = 0, y = 0, w = 0, h = 0;
};
SyntheticScene occlude_region(const SyntheticScene& scene, int frame_index,
                              const OccludeRect& rect);

// Analytic intersection result, exposed for the label/geometry oracle tests.
struct Hit {
  bool valid = false;
  double distance = 0;        // Euclidean distance along the unit-direction ray
  int primitive = -1;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};
Hit intersect_scene(const SceneRecipe& recipe, const Ray& ray, int t);

}  // namespace sf
