#include "semflow/scene/scene.hpp"

#include <stdexcept>

#include "semflow/autodiff/param.hpp"
#include "semflow/scene/dataset_io.hpp"

namespace sf {

namespace {

Eigen::Vector3d mix(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double s) {
  return a * (1.0 - s) + b * s;
}

// Albedo is attached to primitive-local coordinates so textures move with
// their primitive; that keeps the analytic flow consistent with appearance.
Eigen::Vector3d albedo(const ScenePrimitive& prim, const Eigen::Vector3d& p,
                       const Eigen::Vector3d& center, double phase) {
  if (prim.kind == PrimitiveKind::BackgroundPlane) {
    double s = 0.5 + 0.25 * std::sin(prim.texture_freq * p.x() + phase) +
               0.25 * std::sin(prim.texture_freq * 1.37 * p.y() - phase);
    return mix(prim.color_a, prim.color_b, s);
  }
  Eigen::Vector3d q = p - center;
  double s = 0.5 + 0.5 * std::sin(prim.texture_freq * q.x() + phase) *
                       std::cos(prim.texture_freq * (q.y() + q.z()));
  return mix(prim.color_a, prim.color_b, s);
}

bool intersect_primitive(const ScenePrimitive& prim, const Ray& ray,
                         const Eigen::Vector3d& center, double& dist,
                         Eigen::Vector3d& point) {
  if (prim.kind == PrimitiveKind::BackgroundPlane) {
    double dz = ray.direction.z();
    if (std::abs(dz) < 1e-12) return false;
    double s = (prim.plane_z - ray.origin.z()) / dz;
    if (s <= 1e-9) return false;
    dist = s;  // unit direction
    point = ray.origin + s * ray.direction;
    return true;
  }
  Eigen::Vector3d oc = ray.origin - center;
  double b = oc.dot(ray.direction);
  double c = oc.squaredNorm() - prim.radius * prim.radius;
  double disc = b * b - c;
  if (disc < 0) return false;
  double s = -b - std::sqrt(disc);
  if (s <= 1e-9) return false;
  dist = s;
  point = ray.origin + s * ray.direction;
  return true;
}

}  // namespace

Hit intersect_scene(const SceneRecipe& recipe, const Ray& ray, int t) {
  Hit best;
  for (size_t k = 0; k < recipe.primitives.size(); ++k) {
    const auto& prim = recipe.primitives[k];
    double dist;
    Eigen::Vector3d point;
    if (intersect_primitive(prim, ray, prim.center(t, recipe.frames), dist, point)) {
      if (!best.valid || dist < best.distance) {
        best.valid = true;
        best.distance = dist;
        best.primitive = static_cast<int>(k);
        best.point = point;
      }
    }
  }
  return best;
}

SceneRecipe make_recipe(const std::string& name) {
  SceneRecipe r;
  r.name = name;

  ScenePrimitive plane;
  plane.kind = PrimitiveKind::BackgroundPlane;
  plane.class_id = 0;
  plane.plane_z = 5.0;
  plane.color_a = Eigen::Vector3d(0.85, 0.80, 0.70);
  plane.color_b = Eigen::Vector3d(0.25, 0.35, 0.50);
  plane.texture_freq = 2.2;

  if (name == "balloon") {
    r.primitives.push_back(plane);

    ScenePrimitive balloon;  // dynamic foreground, drifts across the view
    balloon.class_id = 1;
    balloon.base = Eigen::Vector3d(-0.55, 0.05, 2.5);
    balloon.velocity = Eigen::Vector3d(1.1, -0.15, 0.0);
    balloon.wobble = Eigen::Vector3d(0.0, 0.12, 0.0);
    balloon.radius = 0.5;
    balloon.color_a = Eigen::Vector3d(0.85, 0.15, 0.10);
    balloon.color_b = Eigen::Vector3d(0.95, 0.6, 0.2);
    balloon.texture_freq = 4.0;
    r.primitives.push_back(balloon);

    ScenePrimitive rock;  // static foreground sphere
    rock.class_id = 2;
    rock.base = Eigen::Vector3d(0.75, -0.55, 3.6);
    rock.radius = 0.6;
    rock.color_a = Eigen::Vector3d(0.15, 0.55, 0.25);
    rock.color_b = Eigen::Vector3d(0.1, 0.25, 0.15);
    rock.texture_freq = 5.0;
    r.primitives.push_back(rock);
    return r;
  }
  if (name == "plane_only") {  // pure-parallax scene, no dynamics
    r.primitives.push_back(plane);
    r.num_classes = 2;
    return r;
  }
  if (name == "two_balloons") {
    r.primitives.push_back(plane);
    ScenePrimitive a;
    a.class_id = 1;
    a.base = Eigen::Vector3d(-0.5, 0.3, 2.4);
    a.velocity = Eigen::Vector3d(0.9, -0.4, 0.2);
    a.radius = 0.45;
    a.color_a = Eigen::Vector3d(0.8, 0.2, 0.6);
    a.color_b = Eigen::Vector3d(0.9, 0.7, 0.2);
    a.texture_freq = 4.0;
    r.primitives.push_back(a);
    ScenePrimitive b;
    b.class_id = 2;
    b.base = Eigen::Vector3d(0.6, 0.4, 3.2);
    b.velocity = Eigen::Vector3d(-0.8, -0.5, 0.0);
    b.wobble = Eigen::Vector3d(0.1, 0.0, 0.0);
    b.radius = 0.5;
    b.color_a = Eigen::Vector3d(0.2, 0.3, 0.8);
    b.color_b = Eigen::Vector3d(0.6, 0.8, 0.9);
    b.texture_freq = 4.5;
    r.primitives.push_back(b);
    return r;
  }
  throw std::invalid_argument("unknown scene recipe: " + name);
}

SyntheticScene generate_scene(const SceneRecipe& recipe, std::uint64_t seed) {
  require(recipe.frames >= 2, "generate_scene: need at least 2 frames");
  bool has_static = false, has_dynamic = false;
  for (const auto& p : recipe.primitives) (p.dynamic() ? has_dynamic : has_static) = true;
  if (recipe.name != "plane_only")
    require(has_static && has_dynamic,
            "generate_scene: recipe needs at least one static and one dynamic primitive");

  const int N = recipe.frames, W = recipe.width, H = recipe.height;
  Rng rng(seed);
  double phase = rng.uniform(0.0, 2.0 * M_PI);

  SyntheticScene scene;
  scene.N = N;
  scene.W = W;
  scene.H = H;
  scene.L = recipe.num_classes;
  scene.seed = seed;

  // Forward-facing rig: equal lateral steps, fixed orientation.
  for (int t = 1; t <= N; ++t) {
    CameraPose pose;
    double s = static_cast<double>(t - 1) / (N - 1);
    pose.translation = Eigen::Vector3d(-recipe.rig_span / 2 + recipe.rig_span * s, 0, 0);
    pose.fx = pose.fy = static_cast<double>(W);
    pose.cx = (W - 1) / 2.0;
    pose.cy = (H - 1) / 2.0;
    scene.poses.push_back(pose);
  }

  // Every primitive must be in front of at least one camera.
  for (const auto& prim : recipe.primitives) {
    bool visible = false;
    for (int t = 1; t <= N && !visible; ++t) {
      Eigen::Vector3d c = prim.kind == PrimitiveKind::BackgroundPlane
                              ? Eigen::Vector3d(0, 0, prim.plane_z)
                              : prim.center(t, N);
      visible = project(scene.poses[t - 1], c).z > 0;
    }
    require(visible, "generate_scene: degenerate recipe, primitive behind all cameras");
  }

  for (int t = 1; t <= N; ++t) {
    const CameraPose& pose = scene.poses[t - 1];
    Matf rgb = Matf::Zero(H * W, 3);
    Eigen::VectorXi lab = Eigen::VectorXi::Zero(H * W);
    Vec<float> dep = Vec<float>::Zero(H * W);
    Matf ffwd = Matf::Zero(H * W, 2);
    Matf fbwd = Matf::Zero(H * W, 2);
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> fg =
        Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>::Zero(H * W);

    for (int j = 0; j < H; ++j) {
      for (int i = 0; i < W; ++i) {
        Ray ray = pixel_ray(pose, i, j);
        ray.time = t;
        Hit hit = intersect_scene(recipe, ray, t);
        Index px = scene.pix(i, j);
        if (!hit.valid) continue;
        const auto& prim = recipe.primitives[hit.primitive];
        Eigen::Vector3d c_now = prim.center(t, N);
        Eigen::Vector3d col = albedo(prim, hit.point, c_now, phase);
        // quantize at generation so PNG round-trips reproduce frames exactly
        rgb(px, 0) = quantize8(static_cast<float>(col.x()));
        rgb(px, 1) = quantize8(static_cast<float>(col.y()));
        rgb(px, 2) = quantize8(static_cast<float>(col.z()));
        lab(px) = prim.class_id;
        dep(px) = static_cast<float>(hit.distance);
        fg(px) = prim.dynamic() ? 1 : 0;

        // Exact flow: move the hit point with its primitive, reproject with
        // the neighbouring frame's camera.
        if (t < N) {
          Eigen::Vector3d moved = hit.point + (prim.center(t + 1, N) - c_now);
          Projection pr = project(scene.poses[t], moved);
          ffwd(px, 0) = static_cast<float>(pr.u - i);
          ffwd(px, 1) = static_cast<float>(pr.v - j);
        }
        if (t > 1) {
          Eigen::Vector3d moved = hit.point + (prim.center(t - 1, N) - c_now);
          Projection pr = project(scene.poses[t - 2], moved);
          fbwd(px, 0) = static_cast<float>(pr.u - i);
          fbwd(px, 1) = static_cast<float>(pr.v - j);
        }
      }
    }
    scene.frames.push_back(std::move(rgb));
    scene.labels.push_back(std::move(lab));
    scene.depth.push_back(std::move(dep));
    scene.flow_fwd.push_back(std::move(ffwd));
    scene.flow_bwd.push_back(std::move(fbwd));
    scene.foreground_mask.push_back(std::move(fg));
  }
  return scene;
}

SyntheticScene add_flow_noise(const SyntheticScene& scene, double beta, std::uint64_t seed) {
  require(beta >= 0.0, "add_flow_noise: beta must be >= 0");
  SyntheticScene out = scene;
  if (beta == 0.0) return out;
  Rng rng(seed);
  auto perturb = [&](Matf& flow) {
    float lo = flow.minCoeff();
    float hi = flow.maxCoeff();
    for (Index r = 0; r < flow.rows(); ++r)
      for (Index c = 0; c < 2; ++c)
        flow(r, c) += static_cast<float>(beta * rng.uniform(lo, hi));
  };
  for (auto& f : out.flow_fwd) perturb(f);
  for (auto& f : out.flow_bwd) perturb(f);
  return out;
}

SyntheticScene occlude_region(const SyntheticScene& scene, int frame_index,
                              const OccludeRect& rect) {
  require(frame_index >= 1 && frame_index <= scene.N, "occlude_region: frame out of range");
  require(rect.x >= 0 && rect.y >= 0 && rect.x + rect.w <= scene.W &&
              rect.y + rect.h <= scene.H,
          "occlude_region: rect outside image bounds");
  SyntheticScene out = scene;
  if (rect.w == 0 || rect.h == 0) return out;
  const int f = frame_index - 1;
  const int occluder_class = scene.L - 1;
  for (int j = rect.y; j < rect.y + rect.h; ++j) {
    for (int i = rect.x; i < rect.x + rect.w; ++i) {
      Index px = scene.pix(i, j);
      out.frames[f](px, 0) = quantize8(0.35f);
      out.frames[f](px, 1) = quantize8(0.35f);
      out.frames[f](px, 2) = quantize8(0.35f);
      out.labels[f](px) = occluder_class;
      out.flow_fwd[f].row(px).setZero();
      out.flow_bwd[f].row(px).setZero();
    }
  }
  return out;
}

}  // namespace sf
