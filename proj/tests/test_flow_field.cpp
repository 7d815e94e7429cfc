#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "semflow/autodiff/gradcheck.hpp"
#include "semflow/field/flow_field.hpp"

using namespace sf;

namespace {

Matd rand_mat(Index r, Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.feature_dim = 6;
  cfg.trunk_width = 10;
  cfg.trunk_blocks = 1;
  return cfg;
}

// constant feature field, ignores position and time
template <class T>
std::function<Var<T>(const Var<T>&, int)> const_features(Index D, T fill) {
  return [D, fill](const Var<T>& pts, int) {
    return constant<T>(Mat<T>::Constant(pts->rows(), D, fill));
  };
}

}  // namespace

TEST_CASE("flow_step with a zeroed output layer is the exact identity") {
  Rng rng(1);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  pb.find("f.out.w")->value.setZero();
  pb.find("f.out.b")->value.setZero();
  Matd x = rand_mat(5, 3, rng);
  Matd feat = rand_mat(5, cfg.feature_dim, rng);
  auto [bwd, fwd] = flow_step(pb, "f", cfg, constant(feat), constant(x), 2, 4);
  CHECK((bwd->value - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fwd->value - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("flow_step displacement never exceeds the configured step bound") {
  Rng rng(2);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  // inflate weights so tanh saturates
  for (auto& t : pb.tensors) t->value *= 50.0;
  Matd x = rand_mat(8, 3, rng);
  Matd feat = rand_mat(8, cfg.feature_dim, rng);
  auto [bwd, fwd] = flow_step(pb, "f", cfg, constant(feat), constant(x), 1, 3);
  CHECK((bwd->value - x).cwiseAbs().maxCoeff() <= cfg.max_flow_step + 1e-12);
  CHECK((fwd->value - x).cwiseAbs().maxCoeff() <= cfg.max_flow_step + 1e-12);
  // saturated weights should actually move points close to the bound
  CHECK((fwd->value - x).cwiseAbs().maxCoeff() > 0.5 * cfg.max_flow_step);
}

TEST_CASE("trajectory layout: 2W+1 ascending entries with the anchor unchanged") {
  Rng rng(3);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  auto x = constant(rand_mat(4, 3, rng));
  auto traj = build_trajectory<double>(pb, "f", cfg, const_features<double>(cfg.feature_dim, 0.3),
                                       x, 3, 6, 2);
  REQUIRE(traj.times.size() == 5);
  CHECK(traj.times == std::vector<int>({1, 2, 3, 4, 5}));
  // anchor entry is the very same node, not a copy
  CHECK(traj.position_at(3).get() == x.get());
  CHECK(traj.is_anchor == std::vector<bool>({false, false, true, false, false}));
  for (auto& p : traj.positions) {
    CHECK(p->rows() == 4);
    CHECK(p->cols() == 3);
  }
  CHECK_THROWS_AS((void)traj.position_at(6), std::out_of_range);
}

TEST_CASE("window zero yields a single anchor entry") {
  Rng rng(4);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  auto x = constant(rand_mat(2, 3, rng));
  auto traj = build_trajectory<double>(pb, "f", cfg, const_features<double>(cfg.feature_dim, 0.0),
                                       x, 1, 4, 0);
  REQUIRE(traj.times.size() == 1);
  CHECK(traj.times[0] == 1);
  CHECK(traj.position_at(1).get() == x.get());
}

TEST_CASE("times outside the video duplicate the anchor position") {
  Rng rng(5);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  auto x = constant(rand_mat(3, 3, rng));
  // anchor at the first frame: the k=-1 entry falls before the video
  auto traj = build_trajectory<double>(pb, "f", cfg, const_features<double>(cfg.feature_dim, 0.1),
                                       x, 1, 4, 1);
  REQUIRE(traj.times.size() == 3);
  CHECK(traj.times == std::vector<int>({1, 1, 2}));
  CHECK(traj.is_anchor[0]);
  CHECK(traj.positions[0].get() == x.get());
  // last frame: k=+1 duplicates
  auto traj2 = build_trajectory<double>(pb, "f", cfg, const_features<double>(cfg.feature_dim, 0.1),
                                        x, 4, 4, 1);
  CHECK(traj2.times == std::vector<int>({3, 4, 4}));
  CHECK(traj2.positions[2].get() == x.get());
}

TEST_CASE("trajectory chaining equals manual sequential flow steps") {
  Rng rng(6);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  int N = 7, t = 4, W = 2;
  auto x = constant(rand_mat(4, 3, rng));
  // feature depends on position and time so chaining order matters
  auto features = [&](const Var<double>& pts, int tau) {
    Var<double> base = scale(pts, 0.5 + 0.1 * tau);
    return concat_cols<double>({base, base});  // 6 = feature_dim
  };
  auto traj = build_trajectory<double>(pb, "f", cfg, features, x, t, N, W);

  // manual forward chain
  Var<double> pf = x;
  for (int r = 1; r <= W; ++r) {
    pf = flow_step(pb, "f", cfg, features(pf, t + r - 1), pf, t + r - 1, N).second;
    CHECK((traj.position_at(t + r)->value - pf->value).cwiseAbs().maxCoeff() == 0.0);
  }
  // manual backward chain
  Var<double> pbk = x;
  for (int r = 1; r <= W; ++r) {
    pbk = flow_step(pb, "f", cfg, features(pbk, t - r + 1), pbk, t - r + 1, N).first;
    CHECK((traj.position_at(t - r)->value - pbk->value).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("gradients through a two-step trajectory pass finite differences") {
  Rng rng(7);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  Matd x = rand_mat(3, 3, rng, -0.5, 0.5);
  auto features = [&](const Var<double>& pts, int tau) {
    Var<double> base = scale(pts, 0.4 + 0.05 * tau);
    return concat_cols<double>({base, base});
  };
  auto f = [&]() {
    auto traj = build_trajectory<double>(pb, "f", cfg, features, constant(x), 2, 5, 2);
    Var<double> acc;
    for (auto& p : traj.positions)
      acc = acc ? add(acc, sum_all(square(p))) : sum_all(square(p));
    return acc;
  };
  auto rep = gradcheck<double>(f, pb, 1e-6, 1e-5, 6, rng);
  CHECK(rep.passed);
}

TEST_CASE("warp_ray returns the trajectory entry for the requested time") {
  Rng rng(8);
  ModelConfig cfg = small_cfg();
  ParamBlock<double> pb;
  pb.name = "flow";
  add_flow_field(pb, "f", cfg, rng);
  auto x = constant(rand_mat(2, 3, rng));
  auto traj = build_trajectory<double>(pb, "f", cfg, const_features<double>(cfg.feature_dim, 0.2),
                                       x, 2, 4, 1);
  CHECK(warp_ray(traj, 2).get() == x.get());
  CHECK(warp_ray(traj, 3).get() == traj.positions[2].get());
  CHECK(warp_ray(traj, 1).get() == traj.positions[0].get());
}
