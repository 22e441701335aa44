#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <scanrl/scanrl.hpp>

namespace fs = std::filesystem;
using namespace scanrl;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int threads = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "run configuration file (JSON)")->required();
  cmd->add_option("--out-dir", o.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", o.seed, "seed override");
  cmd->add_option("--threads", o.threads, "worker threads, 0 = all cores");
}

RunConfig load_run_config(const CommonOpts& o, const std::string& mesh_override = {}) {
  RunConfig cfg = load_config(o.config_path);
  if (!mesh_override.empty()) {
    cfg.mesh.path = mesh_override;
    cfg.mesh.format = MeshFormat::Auto;
    validate_config(cfg);
  }
  if (o.has_seed) {
    cfg.seed = o.seed;
    cfg.ppo.seed = o.seed;
  }
  if (o.threads >= 0) cfg.threads = o.threads;
  worker_threads() = cfg.threads;
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failure: " + path.string());
}

std::vector<std::string> provenance_comments(const std::string& config_dg,
                                             const std::string& mesh_dg, std::uint64_t seed) {
  return {"config_digest=" + config_dg, "mesh_digest=" + mesh_dg,
          "seed=" + std::to_string(seed)};
}

std::vector<std::pair<std::string, std::string>> provenance_text(const std::string& config_dg,
                                                                 const std::string& mesh_dg,
                                                                 std::uint64_t seed) {
  return {{"config_digest", config_dg}, {"mesh_digest", mesh_dg},
          {"seed", std::to_string(seed)}};
}

void write_metrics_csv(const fs::path& path, const std::vector<IterStats>& history,
                       const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "iteration,steps,mean_ep_reward,mean_ep_len,normalized_reward,policy_loss,"
         "value_loss,clip_fraction\n";
  for (const auto& it : history) {
    out << it.iteration << ',' << it.steps << ',' << fmt_double(it.mean_ep_reward) << ','
        << fmt_double(it.mean_ep_len) << ',' << fmt_double(it.normalized_reward) << ','
        << fmt_double(it.policy_loss) << ',' << fmt_double(it.value_loss) << ','
        << fmt_double(it.clip_fraction) << '\n';
  }
  if (!out) throw Error("write failure: " + path.string());
}

nlohmann::json pass_to_json(const PassSpec& p) {
  return {{"id", p.id},
          {"start", {p.start.x(), p.start.y(), p.start.z()}},
          {"end_point", {p.end_point.x(), p.end_point.y(), p.end_point.z()}},
          {"advance", {p.advance.x(), p.advance.y(), p.advance.z()}},
          {"lateral_lo", p.lateral_lo},
          {"lateral_hi", p.lateral_hi}};
}

void print_plan_table(const BoustrophedonPlan& plan) {
  std::printf("%-5s %-28s %-28s %-10s %s\n", "pass", "start (mm)", "end (mm)", "direction",
              "stride");
  for (const auto& p : plan.passes) {
    std::printf("%-5d (%8.2f, %8.2f, %8.2f) (%8.2f, %8.2f, %8.2f) (%+.0f,%+.0f,%+.0f) %.2f\n",
                p.id, p.start.x(), p.start.y(), p.start.z(), p.end_point.x(), p.end_point.y(),
                p.end_point.z(), p.advance.x(), p.advance.y(), p.advance.z(), plan.stride);
  }
}

const char* done_reason_name(DoneReason r) {
  switch (r) {
    case DoneReason::ReachedEnd: return "reached_end";
    case DoneReason::MaxSteps: return "max_steps";
    case DoneReason::LostSurface: return "lost_surface";
    default: return "none";
  }
}

int cmd_train(const CommonOpts& o) {
  const RunConfig cfg = load_run_config(o);
  const fs::path out = resolve_out_dir(o.out_dir, cfg, "train-out");
  fs::create_directories(out);

  TriangleMesh mesh = realize_mesh(cfg.mesh);
  const std::string mesh_dg = mesh.digest_hex();
  const MeshAccel accel(std::move(mesh));
  const std::string cfg_dg = config_digest(cfg);
  const std::string mdp_dg = mdp_digest(cfg);

  const BoustrophedonPlan plan = plan_boustrophedon(accel, cfg.sensor, cfg.planner);
  const EpisodeSpec base = cfg.episode_defaults();
  std::vector<EpisodeSpec> episodes;
  for (const auto& pass : plan.passes) episodes.push_back(pass_episode(pass, base));

  std::printf("training on %d-triangle mesh, %zu pass(es), %ld steps\n",
              static_cast<int>(accel.mesh().triangles.size()), plan.passes.size(),
              cfg.ppo.total_steps);
  MultiPassEnv env(&accel, cfg.sensor, episodes, cfg.jitter, mix_seed(cfg.seed, 0x74726169),
                   true);

  TrainHooks hooks;
  hooks.on_iteration = [](const IterStats& it) {
    std::printf("iter %4d  steps %8ld  episodes %3d  norm_reward %+8.4f  policy %+9.5f  "
                "value %9.5f  clip %.3f\n",
                it.iteration, it.steps, it.episodes, it.normalized_reward, it.policy_loss,
                it.value_loss, it.clip_fraction);
    std::fflush(stdout);
  };
  const TrainResult res = train(env, cfg.ppo, hooks);

  const auto comments = provenance_comments(cfg_dg, mesh_dg, cfg.seed);
  write_metrics_csv(out / "metrics.csv", res.history, comments);

  nlohmann::json meta = {{"config_digest", cfg_dg},
                         {"mesh_digest", mesh_dg},
                         {"seed", cfg.seed},
                         {"steps", res.steps_done},
                         {"iterations", res.history.size()},
                         {"best_normalized_reward", res.best_normalized}};
  if (res.aborted) {
    meta["abort_message"] = res.abort_message;
    save_policy((out / "policy_checkpoint.json").string(), res.best_params, mdp_dg, meta);
    write_json(out / "config.json", config_to_json(cfg));
    std::fprintf(stderr, "training aborted after %ld steps: %s\n", res.steps_done,
                 res.abort_message.c_str());
    std::fprintf(stderr, "best checkpoint written to %s\n",
                 (out / "policy_checkpoint.json").string().c_str());
    return 3;
  }

  save_policy((out / "policy.json").string(), res.params, mdp_dg, meta);
  save_policy((out / "policy_best.json").string(), res.best_params, mdp_dg, meta);

  std::vector<double> norm, policy_loss, value_loss;
  for (const auto& it : res.history) {
    norm.push_back(it.normalized_reward);
    policy_loss.push_back(it.policy_loss);
    value_loss.push_back(it.value_loss);
  }
  const auto text = provenance_text(cfg_dg, mesh_dg, cfg.seed);
  save_png(plot_series({norm, smoothed_series(norm, 5)},
                       {Rgb{170, 170, 170}, Rgb{200, 40, 40}}),
           (out / "reward_curve.png").string(), text);
  save_png(plot_series({policy_loss, value_loss}, {Rgb{40, 90, 200}, Rgb{220, 140, 30}}),
           (out / "loss_curve.png").string(), text);

  MultiPassEnv eval_env(&accel, cfg.sensor, episodes, StartJitter{}, mix_seed(cfg.seed, 0x6576),
                        false);
  const EvalStats ev = evaluate_policy(eval_env, res.params, cfg.ppo.eval_episodes);
  write_json(out / "eval.json",
             {{"config_digest", cfg_dg},
              {"mesh_digest", mesh_dg},
              {"seed", cfg.seed},
              {"episodes", ev.episodes},
              {"mean_normalized_reward", ev.mean_normalized_reward},
              {"mean_episode_reward", ev.mean_ep_reward},
              {"mean_episode_length", ev.mean_ep_len}});
  write_json(out / "config.json", config_to_json(cfg));

  std::printf("done: %ld steps, %zu iterations, eval normalized reward %+.4f\n", res.steps_done,
              res.history.size(), ev.mean_normalized_reward);
  std::printf("policy written to %s\n", (out / "policy.json").string().c_str());
  return 0;
}

int cmd_plan(const CommonOpts& o, const std::string& policy_path, const std::string& mesh_path,
             bool override_provenance) {
  const RunConfig cfg = load_run_config(o, mesh_path);
  const fs::path out = resolve_out_dir(o.out_dir, cfg, "plan-out");
  fs::create_directories(out);

  TriangleMesh mesh = realize_mesh(cfg.mesh);
  const std::string mesh_dg = mesh.digest_hex();
  const MeshAccel accel(std::move(mesh));
  const std::string cfg_dg = config_digest(cfg);

  const LoadedPolicy policy = load_policy(policy_path);
  if (!override_provenance && policy.mdp_digest != mdp_digest(cfg)) {
    throw ProvenanceError("policy " + policy_path +
                          " was trained for a different sensor/episode configuration "
                          "(pass --override-provenance to use it anyway)");
  }

  const BoustrophedonPlan plan = plan_boustrophedon(accel, cfg.sensor, cfg.planner);
  print_plan_table(plan);

  const EpisodeSpec base = cfg.episode_defaults();
  std::vector<PassRollout> rl, st;
  for (const auto& pass : plan.passes) {
    rl.push_back(rollout_policy(accel, cfg.sensor, policy.params, pass, base,
                                mix_seed(cfg.seed, 0x726f6c6c, static_cast<std::uint64_t>(pass.id))));
    if (rl.back().reason == DoneReason::LostSurface) {
      std::fprintf(stderr, "warning: pass %d truncated, surface lost beyond patience\n", pass.id);
    }
    st.push_back(make_static_baseline(accel, cfg.sensor, pass, base, cfg.planner.baseline_step,
                                      mix_seed(cfg.seed, 0x73746174,
                                               static_cast<std::uint64_t>(pass.id))));
  }

  auto finish = [&](std::vector<PassRollout>& rollouts, const std::string& mode) {
    Trajectory traj = assemble(rollouts, cfg.planner.clearance);
    traj.mode = mode;
    traj.seed = cfg.seed;
    traj.mesh_digest = mesh_dg;
    traj.config_digest = cfg_dg;
    export_trajectory(traj, (out / ("trajectory_" + mode + ".csv")).string());
    export_trajectory(traj, (out / ("trajectory_" + mode + ".json")).string());
    auto comments = provenance_comments(cfg_dg, mesh_dg, cfg.seed);
    comments.push_back("mode=" + mode);
    for (std::size_t k = 0; k < rollouts.size(); ++k) {
      auto c = comments;
      c.push_back("pass=" + std::to_string(k));
      c.push_back("done=" + std::string(done_reason_name(rollouts[k].reason)));
      save_trace_csv(rollouts[k].trace,
                     (out / ("trace_" + mode + "_pass" + std::to_string(k) + ".csv")).string(),
                     c);
    }
    return traj;
  };
  const Trajectory traj_rl = finish(rl, "rl");
  const Trajectory traj_st = finish(st, "static");

  nlohmann::json jplan;
  jplan["config_digest"] = cfg_dg;
  jplan["mesh_digest"] = mesh_dg;
  jplan["seed"] = cfg.seed;
  jplan["pass_width"] = plan.pass_width;
  jplan["stride"] = plan.stride;
  jplan["lateral_min"] = plan.lateral_min;
  jplan["lateral_max"] = plan.lateral_max;
  jplan["advance_axis"] = {plan.advance_axis.x(), plan.advance_axis.y(), plan.advance_axis.z()};
  jplan["lateral_axis"] = {plan.lateral_axis.x(), plan.lateral_axis.y(), plan.lateral_axis.z()};
  nlohmann::json jp = nlohmann::json::array();
  for (const auto& p : plan.passes) jp.push_back(pass_to_json(p));
  jplan["passes"] = jp;
  jplan["rl_records"] = traj_rl.records.size();
  jplan["static_records"] = traj_st.records.size();
  write_json(out / "plan.json", jplan);

  std::printf("%zu pass(es), rl records %zu, static records %zu\n", plan.passes.size(),
              traj_rl.records.size(), traj_st.records.size());
  std::printf("trajectories written to %s\n", out.string().c_str());
  return 0;
}

int cmd_evaluate(const CommonOpts& o, const std::string& traj_path,
                 const std::string& reference_path, const std::string& mesh_path,
                 bool override_provenance) {
  const RunConfig cfg = load_run_config(o, mesh_path);
  const fs::path out = resolve_out_dir(o.out_dir, cfg, "eval-out");
  fs::create_directories(out);

  TriangleMesh mesh = realize_mesh(cfg.mesh);
  const std::string mesh_dg = mesh.digest_hex();
  const MeshAccel accel(std::move(mesh));
  const std::string cfg_dg = config_digest(cfg);

  const Trajectory cand = load_trajectory(traj_path);
  if (!override_provenance) {
    if (!cand.mesh_digest.empty() && cand.mesh_digest != mesh_dg) {
      throw ProvenanceError("trajectory was recorded against a different mesh "
                            "(pass --override-provenance to evaluate it anyway)");
    }
    if (!cand.config_digest.empty() && cand.config_digest != cfg_dg) {
      throw ProvenanceError("trajectory was recorded with a different configuration "
                            "(pass --override-provenance to evaluate it anyway)");
    }
  }

  const ReplayResult rep = replay(accel, cfg.sensor, cand, mix_seed(cfg.seed, 0x65766131));
  if (rep.profiles == 0) throw Error("trajectory contains no capture poses");
  const MetricsReport m = summarize(rep, cfg.sensor, cfg.ds_opt);

  nlohmann::json jrep = report_to_json(m);
  jrep["config_digest"] = cfg_dg;
  jrep["mesh_digest"] = mesh_dg;
  jrep["seed"] = cfg.seed;
  jrep["mode"] = cand.mode;
  write_json(out / "report.json", jrep);

  const auto comments = provenance_comments(cfg_dg, mesh_dg, cfg.seed);
  export_pointcloud(rep.map, (out / "pointcloud.ply").string(), PointcloudFormat::PlyBinary,
                    comments);
  export_pointcloud(rep.map, (out / "pointcloud.csv").string(), PointcloudFormat::XyzCsv,
                    comments);

  const Aabb bounds = accel.bounds();
  const auto text = provenance_text(cfg_dg, mesh_dg, cfg.seed);
  render_error_map(rep.map, bounds, ErrorField::Distance, cfg.render_distance_limit(),
                   (out / "error_distance.png").string(), text);
  render_error_map(rep.map, bounds, ErrorField::Orientation, cfg.render_orientation_limit(),
                   (out / "error_orientation.png").string(), text);

  std::printf("%ld profiles, %ld points\n", m.profiles, m.points);
  std::printf("mean |D - W_d| %.4f mm, mean |alpha| %.4f deg, in-range %.1f%%, "
              "ds within tol %.1f%%\n",
              m.mean_abs_dist, m.mean_abs_alpha, 100.0 * m.in_range_fraction,
              100.0 * m.ds_within_tol_fraction);

  if (!reference_path.empty()) {
    const Trajectory ref = load_trajectory(reference_path);
    check_provenance(cand, ref, override_provenance);
    const ReplayResult rep_ref = replay(accel, cfg.sensor, ref, mix_seed(cfg.seed, 0x65766132));
    if (rep_ref.profiles == 0) throw Error("reference trajectory contains no capture poses");
    const MetricsReport mr = summarize(rep_ref, cfg.sensor, cfg.ds_opt);
    const ComparisonReport cmp = compare(m, mr);
    nlohmann::json jcmp = comparison_to_json(cmp);
    jcmp["config_digest"] = cfg_dg;
    jcmp["mesh_digest"] = mesh_dg;
    jcmp["seed"] = cfg.seed;
    write_json(out / "comparison.json", jcmp);

    std::printf("\n%-22s %12s %12s %12s\n", "metric", "candidate", "reference", "improvement");
    std::printf("%-22s %12.4f %12.4f %11.1f%%\n", "mean |D - W_d| (mm)", cmp.candidate.mean_abs_dist,
                cmp.reference.mean_abs_dist, 100.0 * cmp.dist_improvement);
    std::printf("%-22s %12.4f %12.4f %11.1f%%\n", "mean |alpha| (deg)",
                cmp.candidate.mean_abs_alpha, cmp.reference.mean_abs_alpha,
                100.0 * cmp.alpha_improvement);
    std::printf("%-22s %11.1f%% %11.1f%% %11.1f%%\n", "in-range profiles",
                100.0 * cmp.candidate.in_range_fraction, 100.0 * cmp.reference.in_range_fraction,
                100.0 * cmp.range_improvement);
    std::printf("verdict: distance %s, orientation %s\n",
                cmp.candidate_better_dist ? "better" : "not better",
                cmp.candidate_better_alpha ? "better" : "not better");
  }
  return 0;
}

int cmd_info(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".stl" || ext == ".obj") {
    const TriangleMesh mesh = load_mesh(path);
    const Aabb bb = mesh.bounds();
    std::printf("mesh: %zu vertices, %zu triangles (%d degenerate dropped)\n",
                mesh.vertices.size(), mesh.triangles.size(), mesh.dropped_degenerate);
    std::printf("bounds: [%.3f, %.3f] x [%.3f, %.3f] x [%.3f, %.3f] mm\n", bb.lo.x(), bb.hi.x(),
                bb.lo.y(), bb.hi.y(), bb.lo.z(), bb.hi.z());
    std::printf("digest: %s\n", mesh.digest_hex().c_str());
    return 0;
  }
  if (ext == ".ply") {
    // a ply may hold a mesh or an exported point cloud; meshes have faces
    const TriangleMesh mesh = load_mesh(path);
    if (!mesh.triangles.empty()) {
      const Aabb bb = mesh.bounds();
      std::printf("mesh: %zu vertices, %zu triangles\n", mesh.vertices.size(),
                  mesh.triangles.size());
      std::printf("bounds: [%.3f, %.3f] x [%.3f, %.3f] x [%.3f, %.3f] mm\n", bb.lo.x(), bb.hi.x(),
                  bb.lo.y(), bb.hi.y(), bb.lo.z(), bb.hi.z());
      std::printf("digest: %s\n", mesh.digest_hex().c_str());
    } else {
      const ErrorMap map = load_pointcloud(path);
      std::printf("point cloud: %zu points\n", map.points.size());
    }
    return 0;
  }
  if (ext == ".json") {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("not a known file type (invalid JSON): " + std::string(e.what()));
    }
    const std::string format = j.is_object() ? j.value("format", "") : "";
    if (format == kPolicyFormat) {
      const LoadedPolicy p = load_policy(path);
      std::printf("policy: %d-%d-%d trunk, %d actions, %d parameters\n", p.params.dims.n_in,
                  p.params.dims.h1, p.params.dims.h2, p.params.dims.n_act,
                  p.params.param_count());
      std::printf("mdp digest: %s\n", p.mdp_digest.c_str());
      if (p.meta.is_object()) {
        std::printf("config digest: %s\n", p.meta.value("config_digest", "-").c_str());
        std::printf("seed: %llu\n", static_cast<unsigned long long>(
                                        p.meta.value("seed", std::uint64_t{0})));
      }
      return 0;
    }
    if (format == "scanrl-trajectory") {
      const Trajectory t = load_trajectory(path);
      long captures = 0;
      int max_pass = -1;
      for (const auto& r : t.records) {
        captures += r.capture ? 1 : 0;
        max_pass = std::max(max_pass, r.pass_id);
      }
      std::printf("trajectory (%s): %zu records, %ld captures, %d pass(es)\n", t.mode.c_str(),
                  t.records.size(), captures, max_pass + 1);
      std::printf("mesh digest: %s\nconfig digest: %s\nseed: %llu\n", t.mesh_digest.c_str(),
                  t.config_digest.c_str(), static_cast<unsigned long long>(t.seed));
      return 0;
    }
    throw ConfigError("unknown file type: " + path);
  }
  if (ext == ".csv") {
    const Trajectory t = load_trajectory(path);
    long captures = 0;
    int max_pass = -1;
    for (const auto& r : t.records) {
      captures += r.capture ? 1 : 0;
      max_pass = std::max(max_pass, r.pass_id);
    }
    std::printf("trajectory (%s): %zu records, %ld captures, %d pass(es)\n", t.mode.c_str(),
                t.records.size(), captures, max_pass + 1);
    return 0;
  }
  throw ConfigError("unknown file type: " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"profilometric scan planning with an RL-adjusted sensor pose"};
  app.require_subcommand(1);

  CommonOpts train_opts, plan_opts, eval_opts;
  std::string policy_path, plan_mesh, eval_mesh, traj_path, reference_path, info_path;
  bool plan_override = false, eval_override = false;

  CLI::App* train = app.add_subcommand("train", "train a policy on the configured piece");
  add_common(train, train_opts);

  CLI::App* plan = app.add_subcommand("plan", "plan passes and roll out a trained policy");
  add_common(plan, plan_opts);
  plan->add_option("--policy", policy_path, "trained policy file")->required();
  plan->add_option("--mesh", plan_mesh, "mesh file (overrides config)");
  plan->add_flag("--override-provenance", plan_override, "skip the policy digest check");

  CLI::App* evaluate = app.add_subcommand("evaluate", "replay a trajectory and report errors");
  add_common(evaluate, eval_opts);
  evaluate->add_option("--trajectory", traj_path, "trajectory to evaluate")->required();
  evaluate->add_option("--reference", reference_path, "reference trajectory to compare against");
  evaluate->add_option("--mesh", eval_mesh, "mesh file (overrides config)");
  evaluate->add_flag("--override-provenance", eval_override, "skip digest checks");

  CLI::App* info = app.add_subcommand("info", "describe a mesh, policy or trajectory file");
  info->add_option("path", info_path, "file to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  train_opts.has_seed = train->count("--seed") > 0;
  plan_opts.has_seed = plan->count("--seed") > 0;
  eval_opts.has_seed = evaluate->count("--seed") > 0;

  try {
    if (train->parsed()) return cmd_train(train_opts);
    if (plan->parsed()) return cmd_plan(plan_opts, policy_path, plan_mesh, plan_override);
    if (evaluate->parsed()) {
      return cmd_evaluate(eval_opts, traj_path, reference_path, eval_mesh, eval_override);
    }
    if (info->parsed()) return cmd_info(info_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ProvenanceError& e) {
    std::fprintf(stderr, "provenance error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}
