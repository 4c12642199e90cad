#pragma once

#include "coadapt/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iomanip>
#include <iostream>

namespace coadapt {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitCheckpoint = 4,
  kExitFormat = 5,
  kExitData = 6,
};

namespace clidetail {

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

inline std::string vec_str(const Vec3& v, int prec = 4) {
  return "[" + fmt(v[0], prec) + "," + fmt(v[1], prec) + "," + fmt(v[2], prec) + "]";
}

inline void print_aggregates(std::ostream& out, const MetricsTable& t) {
  for (const auto& a : t.aggregates)
    out << a.config_id << ' ' << a.metric << " n=" << a.n << " mean=" << fmt(a.mean) << " median=" << fmt(a.median)
        << " ci95=[" << fmt(a.ci_lo) << ',' << fmt(a.ci_hi) << "]\n";
}

inline std::string replay_line(const StepRecord& r) {
  std::ostringstream s;
  s << "k=" << r.k << " t=" << fmt(r.t, 3) << " u_h=" << (r.command.u_h > 0 ? "+1" : "-1")
    << (r.command.u_h != r.intended ? "(wrong)" : "") << " eps=" << fmt(r.command.epsilon, 3) << " model=("
    << r.command.model.i << ',' << r.command.model.j << ") dx=" << vec_str(r.command.delta_x)
    << " t_dec=" << fmt(r.command.decision_time, 3) << " exec=" << fmt(r.exec_time, 3)
    << " ik=" << (r.ik_ok ? "ok" : "fail") << " fired=" << (r.fired ? "yes" : "no") << " err=" << fmt(r.error)
    << " n_osc=" << r.n_osc << " reward=" << fmt(r.reward.total);
  return s.str();
}

inline std::string replay_summary(const EpisodeSummary& s) {
  std::ostringstream o;
  o << "summary controller=" << s.controller << " fidelity=" << s.fidelity << " seed=" << s.seed
    << " success=" << (s.success ? "yes" : "no") << (s.aborted ? " aborted" : "") << " total_time=" << fmt(s.total_time, 3)
    << " final_error=" << fmt(s.final_error) << " osc=" << s.osc_count << " microsteps=" << s.microstep_count
    << " return=" << fmt(s.total_reward);
  return o.str();
}

}  // namespace clidetail

// Entire command-line front end; returns the process exit status.
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Event-triggered multi-model human-robot co-adaptation toolkit", "coadapt"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (default: $COADAPT_CONFIG, else built-in defaults)");

  // train
  auto* train = app.add_subcommand("train", "Train both agents with one reward variant");
  std::string t_reward = "r2", t_out;
  int t_episodes = -1;
  std::uint64_t t_seed = 0;
  bool t_seed_set = false;
  train->add_option("--reward", t_reward, "Reward variant: r1 (no time penalty) or r2")
      ->check(CLI::IsMember({"r1", "r2"}));
  train->add_option("--episodes", t_episodes, "Training episodes (default from config)")->check(CLI::NonNegativeNumber);
  train->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { t_seed = s; t_seed_set = true; },
                                            "Training seed");
  train->add_option("--out", t_out, "Output directory (default <experiment.out_dir>/train_<reward>)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint greedily");
  std::string e_ckpt, e_fid = "dynamic", e_out;
  int e_episodes = -1;
  std::uint64_t e_seed_base = 0;
  bool e_seed_set = false;
  eval->add_option("--checkpoint", e_ckpt, "Checkpoint file (.damm)")->required();
  eval->add_option("--episodes", e_episodes, "Episodes (default experiment.compare_episodes)")->check(CLI::PositiveNumber);
  eval->add_option("--fidelity", e_fid, "fast or dynamic")->check(CLI::IsMember({"fast", "dynamic"}));
  eval->add_option_function<std::uint64_t>("--seed-base", [&](const std::uint64_t& s) { e_seed_base = s; e_seed_set = true; },
                                           "First episode seed");
  eval->add_option("--out", e_out, "Write rows.csv/aggregates.csv/traces here");

  // compare
  auto* compare = app.add_subcommand("compare", "Run a paired-seed comparison from a spec file");
  std::string c_spec, c_out;
  compare->add_option("--spec", c_spec, "Comparison spec (JSON)")->required();
  compare->add_option("--out", c_out, "Override the spec's out_dir");

  // profile
  auto* profile = app.add_subcommand("profile", "Step-size profile by distance band over a trace directory");
  std::string p_dir, p_out;
  profile->add_option("traces", p_dir, "Directory of .jsonl traces")->required();
  profile->add_option("--out", p_out, "Also write the profile as CSV");

  // serve
  auto* serve = app.add_subcommand("serve", "Live session service over WebSocket");
  std::string s_bind = "127.0.0.1:8765", s_ckpt, s_policy = "fixed", s_pressure, s_ui, s_out;
  double s_hi = 600.0, s_lo = 400.0, s_scale = 1.0, s_duration = 0.0;
  std::string s_radius = "big";
  bool s_no_charge = false;
  serve->add_option("--bind", s_bind, "Listen address host:port");
  serve->add_option("--checkpoint", s_ckpt, "Checkpoint for --robot-policy dammrl");
  serve->add_option("--robot-policy", s_policy, "fixed or dammrl")->check(CLI::IsMember({"fixed", "dammrl"}));
  serve->add_option("--pressure-source", s_pressure, "Byte stream of newline-delimited sensor samples");
  serve->add_option("--pressure-hi", s_hi, "Rising-edge threshold");
  serve->add_option("--pressure-lo", s_lo, "Falling-edge threshold");
  serve->add_option("--pressure-radius", s_radius, "Radius for sensor commands")->check(CLI::IsMember({"big", "small"}));
  serve->add_option("--ui-dir", s_ui, "Static operator UI bundle to serve over HTTP");
  serve->add_option("--out", s_out, "Session trace directory (default <experiment.out_dir>/sessions)");
  serve->add_option("--time-scale", s_scale, "Wall seconds per simulated second (0: unpaced)")->check(CLI::NonNegativeNumber);
  serve->add_flag("--no-charge-wait", s_no_charge, "Do not count operator deliberation toward total time");
  serve->add_option("--duration", s_duration, "Stop after this many seconds (0: until interrupted)");

  // replay
  auto* replay = app.add_subcommand("replay", "Print a trace as a human-readable step log");
  std::string r_path;
  replay->add_option("trace", r_path, "Trace file (.jsonl)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "coadapt: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  auto fail = [&](int code, const std::string& msg) {
    err << "coadapt: error: " << msg << "\n";
    return code;
  };

  try {
    const AppConfig cfg = resolve_config(config_path);

    if (*train) {
      TrainingConfig tc;
      tc.world = cfg.world;
      tc.env = cfg.env;
      tc.learner = cfg.learner;
      tc.variant = reward_variant_from_string(t_reward);
      tc.episodes = t_episodes >= 0 ? t_episodes : cfg.experiment.train_episodes;
      tc.seed = t_seed_set ? t_seed : cfg.experiment.seed_base;
      tc.eval_every = cfg.experiment.eval_every;
      tc.eval_episodes = cfg.experiment.eval_episodes;
      tc.checkpoint_every = cfg.experiment.checkpoint_every;
      tc.out_dir = t_out.empty() ? cfg.experiment.out_dir + "/train_" + t_reward : t_out;
      const auto r = run_training(tc);
      out << "trained " << tc.episodes << " episodes (" << t_reward << "), latest " << r.final_checkpoint << ", best "
          << r.best_checkpoint << " (eval return " << clidetail::fmt(r.best_eval.mean_return) << ", success "
          << clidetail::fmt(r.best_eval.success_rate, 3) << ")\n";
      return kExitOk;
    }

    if (*eval) {
      const int n = e_episodes > 0 ? e_episodes : cfg.experiment.compare_episodes;
      ComparisonSpec cs;
      cs.fidelity = fidelity_from_string(e_fid);
      cs.out_dir = e_out;
      cs.bootstrap_resamples = cfg.experiment.bootstrap_resamples;
      cs.configs.push_back(make_spec(ConfigId::dammrl_r2,
                                     seed_range(e_seed_set ? e_seed_base : cfg.experiment.seed_base, n),
                                     cfg.world.weights, e_ckpt));
      const auto res = run_comparison(cfg, cs);
      clidetail::print_aggregates(out, res.table);
      return kExitOk;
    }

    if (*compare) {
      std::ifstream in(c_spec);
      if (!in) return fail(kExitFailure, "cannot open spec file '" + c_spec + "'");
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        return fail(kExitFormat, c_spec + ": " + e.what());
      }
      ComparisonSpec cs;
      try {
        cs = comparison_spec_from_json(j, cfg);
      } catch (const ConfigInvalid& e) {
        return fail(kExitConfig, c_spec + ": " + e.what());
      } catch (const nlohmann::json::exception& e) {
        return fail(kExitConfig, c_spec + ": " + e.what());
      }
      if (!c_out.empty()) cs.out_dir = c_out;
      const auto res = run_comparison(cfg, cs);
      clidetail::print_aggregates(out, res.table);
      for (std::size_t a = 0; a < cs.configs.size(); ++a)
        for (std::size_t b = a + 1; b < cs.configs.size(); ++b)
          for (const char* m : {"success", "total_time", "osc_count"}) {
            const auto ia = to_string(cs.configs[a].config_id), ib = to_string(cs.configs[b].config_id);
            const auto d = paired_difference(res.table, ia, ib, m, cs.bootstrap_resamples);
            out << "diff " << ia << '-' << ib << ' ' << m << " n=" << d.n << " mean=" << clidetail::fmt(d.mean)
                << " ci95=[" << clidetail::fmt(d.ci.lo) << ',' << clidetail::fmt(d.ci.hi) << "]\n";
          }
      out << "wrote " << cs.out_dir << "/rows.csv\n";
      return kExitOk;
    }

    if (*profile) {
      const auto traces = read_trace_dir(p_dir);
      const auto p = step_size_profile(traces, cfg.world.magnitudes);
      const auto csv = profile_to_csv(p);
      out << csv;
      if (!p_out.empty()) {
        std::ofstream f(p_out);
        if (!f) return fail(kExitFailure, "cannot write '" + p_out + "'");
        f << csv;
      }
      return kExitOk;
    }

    if (*replay) {
      std::ifstream in(r_path);
      if (!in) return fail(kExitFailure, "cannot open trace file '" + r_path + "'");
      const auto tr = trace_from_jsonl(in, r_path);
      for (const auto& r : tr.records) out << clidetail::replay_line(r) << '\n';
      out << clidetail::replay_summary(tr.summary) << '\n';
      return kExitOk;
    }

    if (*serve) {
      ServiceConfig sc;
      sc.bind = ws::parse_endpoint(s_bind);
      sc.app = cfg;
      sc.robot_policy = robot_policy_from_string(s_policy);
      sc.checkpoint = s_ckpt;
      sc.pressure_source = s_pressure;
      sc.pressure = {s_hi, s_lo, s_radius == "big" ? Radius::big : Radius::small};
      sc.ui_dir = s_ui;
      sc.out_dir = s_out.empty() ? cfg.experiment.out_dir + "/sessions" : s_out;
      sc.session.time_scale = s_scale;
      sc.session.charge_wait = !s_no_charge;

      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);

      Service svc(sc);
      const int port = svc.start();
      out << "serving ws://" << sc.bind.host << ':' << port << "/ws" << (s_ui.empty() ? "" : " and the UI over http")
          << ", traces in " << sc.out_dir << std::endl;
      if (s_duration > 0.0) {
        timespec ts{static_cast<time_t>(s_duration), static_cast<long>((s_duration - std::floor(s_duration)) * 1e9)};
        sigtimedwait(&set, nullptr, &ts);
      } else {
        int sig = 0;
        sigwait(&set, &sig);
      }
      svc.stop();
      const auto post = svc.posterior();
      post.save(sc.out_dir + "/posterior.csv");
      out << "stopped; " << svc.trace_paths().size() << " session trace(s) written" << std::endl;
      return kExitOk;
    }
  } catch (const MissingCheckpoint& e) {
    return fail(kExitCheckpoint, e.what());
  } catch (const ConfigInvalid& e) {
    return fail(kExitConfig, e.what());
  } catch (const FormatError& e) {
    return fail(kExitFormat, e.what());
  } catch (const EmptyTraceSet& e) {
    return fail(kExitData, e.what());
  } catch (const InsufficientData& e) {
    return fail(kExitData, e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, e.what());
  }
  return kExitUsage;
}

}  // namespace coadapt
