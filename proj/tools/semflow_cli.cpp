#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "semflow/autodiff/gradcheck.hpp"
#include "semflow/eval/rendering.hpp"
#include "semflow/scene/dataset_io.hpp"
#include "semflow/scene/scene.hpp"
#include "semflow/train/trainer.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<sf::CameraPose> read_pose_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open pose file " + path);
  std::vector<sf::CameraPose> poses;
  while (true) {
    sf::CameraPose pose;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) f >> pose.rotation(r, c);
    for (int r = 0; r < 3; ++r) f >> pose.translation(r);
    f >> pose.fx >> pose.fy >> pose.cx >> pose.cy;
    if (!f) break;
    if (!pose.orthonormal()) throw std::runtime_error("non-orthonormal rotation in " + path);
    poses.push_back(pose);
  }
  if (poses.empty()) throw std::runtime_error("no poses parsed from " + path);
  return poses;
}

// A checkpoint lives next to the config that built its model; --config can
// override the colocated file.
sf::RunConfig config_for_checkpoint(const std::string& ckpt, const std::string& config_override) {
  if (!config_override.empty()) return sf::load_run_config(config_override);
  std::filesystem::path p(ckpt);
  std::filesystem::path cfg = p.parent_path() / "config.cfg";
  if (!std::filesystem::exists(cfg))
    throw std::runtime_error("no config.cfg next to " + ckpt + "; pass --config");
  return sf::load_run_config(cfg.string());
}

sf::SemanticFlowModel<float> load_model(const std::string& ckpt, const sf::RunConfig& cfg) {
  sf::SemanticFlowModel<float> model(cfg.model);
  sf::Rng rng(cfg.train.seed);
  model.init(rng);
  sf::load_checkpoint<float>(ckpt, model.all_blocks());
  return model;
}

// Frames held out from semantic supervision under a schedule.
bool frame_held_out(sf::LabelSchedule s, int t, int N) {
  return !sf::schedule_has_labels(s, t, N);
}

// Whether a key=value config file sets a key explicitly.
bool config_file_has_key(const std::string& path, const std::string& key) {
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    k.erase(0, k.find_first_not_of(" \t"));
    k.erase(k.find_last_not_of(" \t") + 1);
    if (k == key) return true;
  }
  return false;
}

int run_gradcheck(const std::string& module);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semflow: semantic neural fields for dynamic scenes"};
  app.require_subcommand(1);

  // --- synth -----------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_recipe = "balloon", synth_out;
  std::uint64_t synth_seed = 1;
  int synth_frames = 0, synth_size = 0;
  synth->add_option("--recipe", synth_recipe, "scene recipe name");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--frames", synth_frames, "override frame count");
  synth->add_option("--size", synth_size, "override square image size");

  // --- perturb ---------------------------------------------------------------
  auto* perturb = app.add_subcommand("perturb", "add flow noise / occlusions to a dataset");
  std::string pert_in, pert_out, occ_spec;
  double pert_beta = 0.0;
  std::uint64_t pert_seed = 1;
  perturb->add_option("--data", pert_in, "input dataset directory")->required();
  perturb->add_option("--out", pert_out, "output dataset directory")->required();
  perturb->add_option("--flow-noise", pert_beta, "flow noise amplitude beta");
  perturb->add_option("--seed", pert_seed, "noise seed");
  perturb->add_option("--occlude", occ_spec, "frame,x,y,w,h occluder rectangle");

  // --- train -----------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train a model on one or more datasets");
  std::string train_data, train_config, train_out;
  bool train_no_attention = false;
  train->add_option("--data", train_data, "dataset directory (comma-separated for several)")
      ->required();
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--out", train_out, "run output directory")->required();
  train->add_flag("--no-attention", train_no_attention, "disable flow attention (ablation)");

  // --- render ----------------------------------------------------------------
  auto* render = app.add_subcommand("render", "render frames from a checkpoint");
  std::string ren_ckpt, ren_poses, ren_out, ren_data, ren_config;
  int ren_frame = 0;
  bool ren_flow = false;
  render->add_option("--ckpt", ren_ckpt, "checkpoint file")->required();
  render->add_option("--data", ren_data, "dataset directory (source of images)")->required();
  render->add_option("--poses", ren_poses, "pose file overriding the dataset cameras");
  render->add_option("--out", ren_out, "output directory")->required();
  render->add_option("--config", ren_config, "config override (default: next to ckpt)");
  render->add_option("--frame", ren_frame, "render only this frame (default: all)");
  render->add_flag("--flow", ren_flow, "also write rendered optical flow");

  // --- eval ------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against a dataset");
  std::string ev_ckpt, ev_data, ev_split = "full", ev_report, ev_config;
  eval->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--split", ev_split, "full|completion|tracking");
  eval->add_option("--report", ev_report, "CSV report path")->required();
  eval->add_option("--config", ev_config, "config override (default: next to ckpt)");

  // --- edit ------------------------------------------------------------------
  auto* edit = app.add_subcommand("edit", "re-render with classes removed");
  std::string ed_ckpt, ed_data, ed_out, ed_config;
  std::vector<int> ed_remove;
  int ed_frame = 0;
  edit->add_option("--ckpt", ed_ckpt, "checkpoint file")->required();
  edit->add_option("--data", ed_data, "dataset directory")->required();
  edit->add_option("--remove", ed_remove, "class ids to remove")->required();
  edit->add_option("--out", ed_out, "output directory")->required();
  edit->add_option("--config", ed_config, "config override (default: next to ckpt)");
  edit->add_option("--frame", ed_frame, "edit only this frame (default: all)");

  // --- gradcheck ---------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_module = "all";
  gc->add_option("--module", gc_module, "ops|attention|renderer|pipeline|all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (synth->parsed()) {
      sf::SceneRecipe recipe = sf::make_recipe(synth_recipe);
      if (synth_frames > 0) recipe.frames = synth_frames;
      if (synth_size > 0) recipe.width = recipe.height = synth_size;
      sf::SyntheticScene scene = sf::generate_scene(recipe, synth_seed);
      sf::write_dataset(scene, synth_out);
      std::cout << "wrote " << scene.N << " frames to " << synth_out << "\n";

    } else if (perturb->parsed()) {
      sf::SyntheticScene scene = sf::read_dataset(pert_in);
      scene = sf::add_flow_noise(scene, pert_beta, pert_seed);
      if (!occ_spec.empty()) {
        auto parts = split_csv(occ_spec);
        if (parts.size() != 5)
          throw std::runtime_error("--occlude expects frame,x,y,w,h");
        scene = sf::occlude_region(scene, std::stoi(parts[0]),
                                   {std::stoi(parts[1]), std::stoi(parts[2]),
                                    std::stoi(parts[3]), std::stoi(parts[4])});
      }
      sf::write_dataset(scene, pert_out);
      std::cout << "wrote perturbed dataset to " << pert_out << "\n";

    } else if (train->parsed()) {
      sf::RunConfig cfg =
          train_config.empty() ? sf::RunConfig{} : sf::load_run_config(train_config);
      if (train_no_attention) cfg.model.use_attention = false;
      // label-completion runs default to absolute+relative displacement
      // tokens unless the config pins disp_mode explicitly
      if (cfg.train.label_schedule == sf::LabelSchedule::Completion &&
          (train_config.empty() || !config_file_has_key(train_config, "disp_mode")))
        cfg.model.disp_mode = sf::DispMode::Both;
      std::vector<sf::SyntheticScene> scenes;
      for (const auto& dir : split_csv(train_data)) scenes.push_back(sf::read_dataset(dir));
      if (scenes.empty()) throw std::runtime_error("no datasets given");
      cfg.model.num_classes = scenes.front().L;
      for (const auto& s : scenes)
        if (s.L != scenes.front().L)
          throw std::runtime_error("datasets disagree on class count");
      std::vector<const sf::SyntheticScene*> ptrs;
      for (const auto& s : scenes) ptrs.push_back(&s);

      sf::SemanticFlowModel<float> model(cfg.model);
      sf::Rng rng(cfg.train.seed);
      model.init(rng);
      std::filesystem::create_directories(train_out);
      sf::save_run_config(cfg, train_out + "/config.cfg");
      auto log = sf::run_training(model, cfg, ptrs, train_out);
      std::cout << "trained " << log.size() << " logged steps; final total "
                << (log.empty() ? 0.0 : log.back().total) << "; wrote " << train_out << "\n";

    } else if (render->parsed()) {
      sf::RunConfig cfg = config_for_checkpoint(ren_ckpt, ren_config);
      sf::SyntheticScene scene = sf::read_dataset(ren_data);
      cfg.model.num_classes = scene.L;
      auto model = load_model(ren_ckpt, cfg);
      std::vector<sf::CameraPose> poses =
          ren_poses.empty() ? scene.poses : read_pose_file(ren_poses);
      sf::RenderOptions opts;
      opts.want_flow = ren_flow;
      int lo = ren_frame > 0 ? ren_frame : 1;
      int hi = ren_frame > 0 ? ren_frame : scene.N;
      for (int t = lo; t <= hi; ++t) {
        const sf::CameraPose& pose =
            poses[static_cast<size_t>(std::min<int>(t, static_cast<int>(poses.size())) - 1)];
        auto frame = sf::render_frame(model, scene, t, pose, cfg.train, opts);
        char tag[16];
        std::snprintf(tag, sizeof(tag), "%03d", t);
        sf::write_rendered_frame(frame, scene.W, scene.H, ren_out, tag);
      }
      std::cout << "rendered frames " << lo << ".." << hi << " to " << ren_out << "\n";

    } else if (eval->parsed()) {
      sf::RunConfig cfg = config_for_checkpoint(ev_ckpt, ev_config);
      sf::SyntheticScene scene = sf::read_dataset(ev_data);
      cfg.model.num_classes = scene.L;
      auto model = load_model(ev_ckpt, cfg);
      sf::LabelSchedule split = sf::parse_label_schedule(ev_split);
      std::ofstream report(ev_report);
      if (!report) throw std::runtime_error("cannot write " + ev_report);
      report << "t,held_out,total_acc,avg_acc,miou,psnr,ssim,flow_epe_fg\n";
      report.precision(10);
      double acc = 0, miou = 0, psnr = 0;
      int n = 0;
      for (int t = 1; t <= scene.N; ++t) {
        sf::EvalRow row = sf::evaluate_frame(model, scene, t, cfg.train, true);
        report << t << "," << (frame_held_out(split, t, scene.N) ? 1 : 0) << ","
               << row.seg.total_acc << "," << row.seg.avg_acc << "," << row.seg.miou << ","
               << row.img.psnr << "," << row.img.ssim << "," << row.flow_epe_fg << "\n";
        acc += row.seg.total_acc;
        miou += row.seg.miou;
        psnr += row.img.psnr;
        ++n;
      }
      std::cout << "eval mean: total_acc " << acc / n << " miou " << miou / n << " psnr "
                << psnr / n << "; report " << ev_report << "\n";

    } else if (edit->parsed()) {
      sf::RunConfig cfg = config_for_checkpoint(ed_ckpt, ed_config);
      sf::SyntheticScene scene = sf::read_dataset(ed_data);
      cfg.model.num_classes = scene.L;
      auto model = load_model(ed_ckpt, cfg);
      sf::RenderOptions opts;
      for (int c : ed_remove) {
        if (c < 0 || c >= scene.L) throw std::runtime_error("class id out of range");
        opts.remove_classes.insert(c);
      }
      int lo = ed_frame > 0 ? ed_frame : 1;
      int hi = ed_frame > 0 ? ed_frame : scene.N;
      for (int t = lo; t <= hi; ++t) {
        auto frame = sf::render_frame(model, scene, t, cfg.train, opts);
        char tag[16];
        std::snprintf(tag, sizeof(tag), "%03d", t);
        sf::write_rendered_frame(frame, scene.W, scene.H, ed_out, tag);
      }
      std::cout << "wrote edited frames " << lo << ".." << hi << " to " << ed_out << "\n";

    } else if (gc->parsed()) {
      return run_gradcheck(gc_module);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

namespace {

sf::Matd rand_mat(sf::Index r, sf::Index c, sf::Rng& rng) {
  sf::Matd m(r, c);
  for (sf::Index i = 0; i < r; ++i)
    for (sf::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  return m;
}

bool report_module(const std::string& name, const sf::GradCheckReport& rep) {
  std::cout << name << ": " << (rep.passed ? "PASS" : "FAIL") << " (" << rep.checked
            << " probes, worst rel err " << rep.worst_rel_error << ")\n";
  return rep.passed;
}

bool gradcheck_ops() {
  using namespace sf;
  Rng rng(1);
  ParamBlock<double> pb;
  pb.name = "ops";
  pb.add("a", rand_mat(4, 5, rng));
  pb.add("b", rand_mat(5, 3, rng));
  pb.add("map", rand_mat(36, 2, rng));
  pb.add("coords", rand_mat(3, 2, rng).cwiseAbs() * 3.0);
  auto f = [&]() {
    Var<double> x = tanh_op(matmul(pb.find("a"), pb.find("b")));
    Var<double> s = bilinear_sample(pb.find("map"), pb.find("coords"), 6, 6);
    Var<double> e = sinusoidal_embed(s, 3, true);
    return add(sum_all(square(x)), mean_all(square(e)));
  };
  return report_module("ops", gradcheck<double>(f, pb, 1e-6, 1e-3, 10, rng));
}

bool gradcheck_attention() {
  using namespace sf;
  Rng rng(2);
  ParamBlock<double> pb;
  pb.name = "attn";
  add_attention(pb, "a", 8, rng);
  pb.add("x", rand_mat(12, 8, rng));
  auto f = [&]() {
    return sum_all(square(multi_head_attention_grouped(pb, "a", pb.find("x"), 3, 2)));
  };
  return report_module("attention", gradcheck<double>(f, pb, 1e-6, 1e-3, 10, rng));
}

bool gradcheck_renderer() {
  using namespace sf;
  Rng rng(3);
  Index R = 3, M = 5;
  Matd deltas = rand_mat(R, M, rng).cwiseAbs() * 0.2;
  deltas.array() += 0.02;
  ParamBlock<double> pb;
  pb.name = "rend";
  pb.add("raw_st", rand_mat(R * M, 1, rng));
  pb.add("raw_dy", rand_mat(R * M, 1, rng));
  pb.add("v_st", rand_mat(R * M, 3, rng));
  pb.add("v_dy", rand_mat(R * M, 3, rng));
  pb.add("raw_b", rand_mat(R * M, 1, rng));
  auto f = [&]() {
    auto out = blend(softplus(pb.find("raw_st")), pb.find("v_st"),
                     softplus(pb.find("raw_dy")), pb.find("v_dy"),
                     sigmoid(pb.find("raw_b")), deltas);
    return sum_all(square(integrate(out.quad, out.values)));
  };
  return report_module("renderer", gradcheck<double>(f, pb, 1e-6, 1e-3, 10, rng));
}

bool gradcheck_pipeline() {
  using namespace sf;
  SceneRecipe r = make_recipe("balloon");
  r.frames = 5;
  r.width = 20;
  r.height = 20;
  SyntheticScene scene = generate_scene(r, 42);
  RunConfig cfg;
  cfg.model.feature_dim = 6;
  cfg.model.attn_channels = 8;
  cfg.model.heads = 2;
  cfg.model.trunk_width = 10;
  cfg.model.trunk_blocks = 1;
  cfg.model.head_hidden = 8;
  cfg.model.enc_c1 = 4;
  cfg.model.enc_c2 = 6;
  cfg.model.enc_c3 = 8;
  cfg.train.samples_per_ray = 5;
  cfg.train.consist_max_rays = 3;

  SemanticFlowModel<double> model(cfg.model);
  Rng rng(3);
  model.init(rng);

  int t = 3;
  std::vector<Index> px;
  const auto& mask = scene.foreground_mask[static_cast<size_t>(t - 1)];
  for (Index p = 0; p < mask.size() && px.size() < 3; ++p)
    if (mask(p)) px.push_back(p);
  for (Index p = 0; p < mask.size() && px.size() < 6; ++p)
    if (!mask(p)) px.push_back(p);
  auto ctx = make_batch_context<double>(scene, t, px, cfg.model);

  ParamBlock<double> all;
  all.name = "model";
  for (auto* b : model.all_blocks())
    for (size_t i = 0; i < b->tensors.size(); ++i) {
      all.tensors.push_back(b->tensors[i]);
      all.tensor_names.push_back(b->name + "." + b->tensor_names[i]);
    }

  auto f = [&]() {
    FrameCache<double> dy;
    for (int tau = std::max(1, t - 2); tau <= std::min(scene.N, t + 2); ++tau) {
      auto img = constant<double>(scene.frames[static_cast<size_t>(tau - 1)].cast<double>());
      dy.emplace(tau, model.encode_dynamic(img, scene.H, scene.W));
    }
    FrameCache<double> st;
    auto img1 = constant<double>(scene.frames[0].cast<double>());
    st.emplace(1, model.encode_static(img1, scene.H, scene.W));
    Rng drng(9);
    Matd depths = sample_ray_depths<double>(static_cast<Index>(px.size()),
                                            cfg.train.samples_per_ray, cfg.model.u_near,
                                            cfg.model.u_far, false, drng);
    auto fwd = forward_dynamic(model, ctx.batch, depths, scene.N, dy, st, scene.poses, 1);
    Rng lrng(17);
    auto terms =
        dynamic_phase_losses(model, fwd, ctx, dy, scene.poses, cfg.train, lrng, false);
    return loss_total(terms, cfg.weights);
  };
  Rng crng(23);
  return report_module("pipeline", gradcheck<double>(f, all, 1e-3, 1e-3, 1, crng));
}

int run_gradcheck(const std::string& module) {
  bool ok = true;
  bool any = false;
  auto want = [&](const char* name) { return module == "all" || module == name; };
  if (want("ops")) ok &= gradcheck_ops(), any = true;
  if (want("attention")) ok &= gradcheck_attention(), any = true;
  if (want("renderer")) ok &= gradcheck_renderer(), any = true;
  if (want("pipeline")) ok &= gradcheck_pipeline(), any = true;
  if (!any) {
    std::cerr << "error: unknown module " << module << "\n";
    return 1;
  }
  return ok ? 0 : 1;
}

}  // namespace
