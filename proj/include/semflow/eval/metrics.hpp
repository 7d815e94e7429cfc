#pragma once

// Segmentation and image-quality metrics.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "semflow/autodiff/tensor.hpp"

namespace sf {

struct ConfusionMatrix {
  Eigen::MatrixXd counts;  // rows = ground truth, cols = prediction

  explicit ConfusionMatrix(int num_classes)
      : counts(Eigen::MatrixXd::Zero(num_classes, num_classes)) {}

  void add(int gt, int pred) {
    if (gt < 0 || pred < 0 || gt >= counts.rows() || pred >= counts.cols())
      throw std::out_of_range("ConfusionMatrix: class id out of range");
    counts(gt, pred) += 1.0;
  }
};

struct PixelMetrics {
  double total_acc = 0;
  double avg_acc = 0;   // mean recall over classes present in ground truth
  double miou = 0;      // mean IoU over classes present in gt or prediction
};

inline PixelMetrics pixel_metrics(const ConfusionMatrix& cm) {
  const Eigen::MatrixXd& c = cm.counts;
  int L = static_cast<int>(c.rows());
  double total = c.sum();
  PixelMetrics m;
  if (total == 0) return m;
  m.total_acc = c.trace() / total;

  double acc_sum = 0, iou_sum = 0;
  int gt_classes = 0, union_classes = 0;
  for (int k = 0; k < L; ++k) {
    double gt_k = c.row(k).sum();
    double pred_k = c.col(k).sum();
    double tp = c(k, k);
    if (gt_k > 0) {
      acc_sum += tp / gt_k;
      ++gt_classes;
    }
    if (gt_k > 0 || pred_k > 0) {
      double denom = gt_k + pred_k - tp;  // TP + FP + FN
      iou_sum += denom > 0 ? tp / denom : 0.0;
      ++union_classes;
    }
  }
  m.avg_acc = gt_classes ? acc_sum / gt_classes : 0.0;
  m.miou = union_classes ? iou_sum / union_classes : 0.0;
  return m;
}

inline PixelMetrics pixel_metrics(const Eigen::VectorXi& pred, const Eigen::VectorXi& gt,
                                  int num_classes) {
  if (pred.size() != gt.size()) throw std::invalid_argument("pixel_metrics: shape mismatch");
  ConfusionMatrix cm(num_classes);
  for (Eigen::Index i = 0; i < pred.size(); ++i) cm.add(gt(i), pred(i));
  return pixel_metrics(cm);
}

struct ImageMetrics {
  double psnr = 0;  // capped at 99.0 when MSE is zero
  double ssim = 0;
};

inline double psnr_value(double mse) {
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// channel-averaged. Images are (H*W)xC in [0,1], row-major scanlines.
inline double ssim_value(const Matf& a, const Matf& b, int W, int H) {
  constexpr int R = 5;  // 11x11 window
  constexpr double sigma = 1.5, K1 = 0.01, K2 = 0.03;
  const double C1 = K1 * K1, C2 = K2 * K2;
  double wsum = 0;
  double win[11][11];
  for (int dy = -R; dy <= R; ++dy)
    for (int dx = -R; dx <= R; ++dx) {
      win[dy + R][dx + R] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      wsum += win[dy + R][dx + R];
    }
  for (auto& row : win)
    for (double& w : row) w /= wsum;

  double acc = 0;
  Eigen::Index count = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double mu_a = 0, mu_b = 0, va = 0, vb = 0, cov = 0;
        for (int dy = -R; dy <= R; ++dy) {
          int yy = std::clamp(y + dy, 0, H - 1);
          for (int dx = -R; dx <= R; ++dx) {
            int xx = std::clamp(x + dx, 0, W - 1);
            double w = win[dy + R][dx + R];
            double pa = a(static_cast<Eigen::Index>(yy) * W + xx, c);
            double pb = b(static_cast<Eigen::Index>(yy) * W + xx, c);
            mu_a += w * pa;
            mu_b += w * pb;
            va += w * pa * pa;
            vb += w * pb * pb;
            cov += w * pa * pb;
          }
        }
        va -= mu_a * mu_a;
        vb -= mu_b * mu_b;
        cov -= mu_a * mu_b;
        acc += ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) /
               ((mu_a * mu_a + mu_b * mu_b + C1) * (va + vb + C2));
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

inline ImageMetrics image_metrics(const Matf& pred, const Matf& gt, int W, int H) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw std::invalid_argument("image_metrics: shape mismatch");
  ImageMetrics m;
  double mse = (pred - gt).cast<double>().array().square().mean();
  m.psnr = psnr_value(mse);
  m.ssim = ssim_value(pred, gt, W, H);
  return m;
}

}  // namespace sf
