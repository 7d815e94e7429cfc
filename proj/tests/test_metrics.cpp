#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "semflow/autodiff/param.hpp"
#include "semflow/eval/metrics.hpp"

using namespace sf;

namespace {

// brute-force metric computation with ordinary maps, no confusion matrix
struct BruteSeg {
  double total_acc, avg_acc, miou;
};

BruteSeg brute_seg(const Eigen::VectorXi& pred, const Eigen::VectorXi& gt, int L) {
  std::map<int, double> gt_count, pred_count, tp;
  int correct = 0;
  for (Eigen::Index i = 0; i < gt.size(); ++i) {
    gt_count[gt(i)] += 1;
    pred_count[pred(i)] += 1;
    if (pred(i) == gt(i)) {
      tp[gt(i)] += 1;
      ++correct;
    }
  }
  BruteSeg out{};
  out.total_acc = double(correct) / double(gt.size());
  int n_gt = 0, n_union = 0;
  for (int k = 0; k < L; ++k) {
    if (gt_count.count(k)) {
      out.avg_acc += tp[k] / gt_count[k];
      ++n_gt;
    }
    if (gt_count.count(k) || pred_count.count(k)) {
      double denom = gt_count[k] + pred_count[k] - tp[k];
      out.miou += denom > 0 ? tp[k] / denom : 0.0;
      ++n_union;
    }
  }
  out.avg_acc /= n_gt;
  out.miou /= n_union;
  return out;
}

}  // namespace

TEST_CASE("segmentation metrics match a brute-force recount on random labels") {
  Rng rng(1);
  int L = 4;
  Eigen::VectorXi pred(500), gt(500);
  for (int i = 0; i < 500; ++i) {
    pred(i) = int(rng.uniform_index(uint64_t(L)));
    gt(i) = int(rng.uniform_index(uint64_t(L)));
  }
  auto m = pixel_metrics(pred, gt, L);
  auto b = brute_seg(pred, gt, L);
  CHECK(m.total_acc == doctest::Approx(b.total_acc).epsilon(1e-12));
  CHECK(m.avg_acc == doctest::Approx(b.avg_acc).epsilon(1e-12));
  CHECK(m.miou == doctest::Approx(b.miou).epsilon(1e-12));
}

TEST_CASE("perfect predictions score one on every segmentation metric") {
  Rng rng(2);
  Eigen::VectorXi gt(200);
  for (int i = 0; i < 200; ++i) gt(i) = int(rng.uniform_index(4));
  auto m = pixel_metrics(gt, gt, 4);
  CHECK(m.total_acc == 1.0);
  CHECK(m.avg_acc == 1.0);
  CHECK(m.miou == 1.0);
}

TEST_CASE("classes absent from both gt and prediction do not dilute the averages") {
  // only classes 0 and 1 appear; class 2/3 of a 4-class problem must not count
  Eigen::VectorXi gt(4), pred(4);
  gt << 0, 0, 1, 1;
  pred << 0, 1, 1, 1;
  auto m = pixel_metrics(pred, gt, 4);
  // per-class recall: class0 1/2, class1 2/2 -> avg 0.75
  CHECK(m.avg_acc == doctest::Approx(0.75).epsilon(1e-12));
  // IoU: class0 1/2, class1 2/3 -> mean (0.5 + 0.6667)/2
  CHECK(m.miou == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(m.total_acc == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("metrics are invariant to a consistent class relabeling") {
  Rng rng(3);
  int L = 4;
  Eigen::VectorXi pred(300), gt(300);
  for (int i = 0; i < 300; ++i) {
    pred(i) = int(rng.uniform_index(uint64_t(L)));
    gt(i) = int(rng.uniform_index(uint64_t(L)));
  }
  // swap classes 1 and 2 everywhere
  auto swap12 = [](Eigen::VectorXi v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v(i) = v(i) == 1 ? 2 : (v(i) == 2 ? 1 : v(i));
    return v;
  };
  auto m1 = pixel_metrics(pred, gt, L);
  auto m2 = pixel_metrics(swap12(pred), swap12(gt), L);
  CHECK(m1.total_acc == doctest::Approx(m2.total_acc).epsilon(1e-12));
  CHECK(m1.avg_acc == doctest::Approx(m2.avg_acc).epsilon(1e-12));
  CHECK(m1.miou == doctest::Approx(m2.miou).epsilon(1e-12));
}

TEST_CASE("out-of-range class ids are rejected") {
  ConfusionMatrix cm(3);
  CHECK_THROWS_AS(cm.add(3, 0), std::out_of_range);
  CHECK_THROWS_AS(cm.add(0, -1), std::out_of_range);
}

TEST_CASE("psnr of a uniform 0.1 offset is exactly 20 dB") {
  int W = 8, H = 8;
  Matf a = Matf::Constant(W * H, 3, 0.5f);
  Matf b = Matf::Constant(W * H, 3, 0.6f);
  auto m = image_metrics(a, b, W, H);
  CHECK(m.psnr == doctest::Approx(20.0).epsilon(1e-5));
  // identical images cap at 99
  auto mz = image_metrics(a, a, W, H);
  CHECK(mz.psnr == 99.0);
  CHECK(mz.ssim == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("psnr follows -10 log10(mse)") {
  CHECK(psnr_value(1e-3) == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(psnr_value(1e-4) == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(psnr_value(0.0) == 99.0);
}

TEST_CASE("ssim matches an independent reference on a small image") {
  // independent implementation: same definition, written with explicit sums
  // over unnormalized Gaussian weights
  Rng rng(4);
  int W = 12, H = 10;
  Matf a(W * H, 1), b(W * H, 1);
  for (int i = 0; i < W * H; ++i) {
    a(i, 0) = float(rng.uniform(0.0, 1.0));
    b(i, 0) = float(0.8 * a(i, 0) + 0.1 + 0.05 * rng.uniform(-1.0, 1.0));
  }
  const int R = 5;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double acc = 0;
  int count = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double sw = 0, ma = 0, mb = 0;
      for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
          int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
          double w = std::exp(-(dx * dx + dy * dy) / 4.5);
          sw += w;
          ma += w * a(yy * W + xx, 0);
          mb += w * b(yy * W + xx, 0);
        }
      ma /= sw;
      mb /= sw;
      double va = 0, vb = 0, cov = 0;
      for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
          int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
          double w = std::exp(-(dx * dx + dy * dy) / 4.5) / sw;
          va += w * (a(yy * W + xx, 0) - ma) * (a(yy * W + xx, 0) - ma);
          vb += w * (b(yy * W + xx, 0) - mb) * (b(yy * W + xx, 0) - mb);
          cov += w * (a(yy * W + xx, 0) - ma) * (b(yy * W + xx, 0) - mb);
        }
      acc += ((2 * ma * mb + C1) * (2 * cov + C2)) /
             ((ma * ma + mb * mb + C1) * (va + vb + C2));
      ++count;
    }
  double ref = acc / count;
  CHECK(ssim_value(a, b, W, H) == doctest::Approx(ref).epsilon(1e-6));
}

TEST_CASE("ssim penalizes structural noise more than a constant brightness shift") {
  Rng rng(5);
  int W = 16, H = 16;
  Matf base(W * H, 1);
  for (int i = 0; i < W * H; ++i) base(i, 0) = float(rng.uniform(0.2, 0.8));
  Matf shifted = base.array() + 0.05f;
  Matf noisy = base;
  for (int i = 0; i < W * H; ++i) noisy(i, 0) += float(rng.uniform(-0.15, 0.15));
  CHECK(ssim_value(base, shifted, W, H) > ssim_value(base, noisy, W, H));
}
