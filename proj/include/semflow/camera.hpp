#pragma once

// Pinhole camera. Poses are camera-to-world: `rotation` columns are the
// camera axes expressed in world coordinates and `translation` is the camera
// center. Camera space looks along +z, v grows down the image. Integer pixel
// coordinates address sample centers, so the ray for pixel (i, j) passes
// through image-plane point (u, v) = (i, j).

#include <Eigen/Dense>
#include <cmath>

#include "semflow/autodiff/tensor.hpp"

namespace sf {

struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1, fy = 1, cx = 0, cy = 0;

  bool orthonormal(double tol = 1e-6) const {
    return (rotation * rotation.transpose() - Eigen::Matrix3d::Identity())
               .cwiseAbs()
               .maxCoeff() < tol;
  }
};

struct Projection {
  double u = 0, v = 0, z = 0;  // z is camera-space depth; z <= 0 means behind
};

inline Projection project(const CameraPose& pose, const Eigen::Vector3d& x) {
  Eigen::Vector3d cam = pose.rotation.transpose() * (x - pose.translation);
  Projection p;
  p.z = cam.z();
  double z = cam.z() == 0.0 ? 1e-12 : cam.z();
  p.u = pose.fx * cam.x() / z + pose.cx;
  p.v = pose.fy * cam.y() / z + pose.cy;
  return p;
}

inline Eigen::Vector3d unproject(const CameraPose& pose, double u, double v, double z) {
  Eigen::Vector3d cam((u - pose.cx) / pose.fx * z, (v - pose.cy) / pose.fy * z, z);
  return pose.rotation * cam + pose.translation;
}

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // unit length
  double u_near = 0.05, u_far = 10.0;
  int pixel_i = 0, pixel_j = 0;  // column, row
  int time = 1;
};

inline Ray pixel_ray(const CameraPose& pose, double i, double j) {
  Eigen::Vector3d dir_cam((i - pose.cx) / pose.fx, (j - pose.cy) / pose.fy, 1.0);
  Ray r;
  r.origin = pose.translation;
  r.direction = (pose.rotation * dir_cam).normalized();
  r.pixel_i = static_cast<int>(std::lround(i));
  r.pixel_j = static_cast<int>(std::lround(j));
  return r;
}

}  // namespace sf
