#pragma once

// Operator command line. Each subcommand maps onto one library operation;
// run_cli returns the process exit status.

#include <csignal>
#include <pthread.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "emedge/classifier/evaluate.hpp"
#include "emedge/habits.hpp"
#include "emedge/service/service.hpp"
#include "emedge/sim_household.hpp"
#include "emedge/store.hpp"

namespace emedge::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// Action episodes of every appliance in a simulated trace, with the zone's
// presence and climate as circumstances.
inline std::vector<habits::RawEvent> activity_from_trace(const sim::SimTrace& t, const std::string& user) {
  std::vector<habits::RawEvent> out;
  for (const auto& a : t.appliances) {
    const auto& occ = t.occupancy.at(a.spec.zone_id);
    const auto& env = t.environment.at(a.spec.zone_id);
    std::vector<habits::LabeledSample> series;
    for (std::size_t i = 0; i < t.timestamps.size(); ++i)
      series.push_back({t.timestamps[i], a.labels[i], env.temperature_c[i], occ[i] != 0, env.humidity_pct[i]});
    auto ev = habits::episodes(user, a.spec.id, series);
    out.insert(out.end(), ev.begin(), ev.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.ts < y.ts; });
  return out;
}

// Same, from the label streams a running service wrote into the store.
inline std::vector<habits::RawEvent> activity_from_store(const store::Store& s, const std::string& site,
                                                         const std::vector<ApplianceSpec>& specs,
                                                         const std::string& user) {
  std::vector<habits::RawEvent> out;
  constexpr Timestamp kAll = std::numeric_limits<Timestamp>::max() / 2;
  for (const auto& spec : specs) {
    const auto occ_stream = telemetry::stream_id_for_occupancy(site, spec.zone_id);
    const auto env_stream = telemetry::stream_id_for_env(site, spec.zone_id);
    std::vector<habits::LabeledSample> series;
    for (const auto& p : s.raw_range(store::label_stream_id(site, spec.zone_id, spec.id), 0, kAll)) {
      habits::LabeledSample ls{p.ts, micro_moment_from_int(static_cast<int>(p.value)), std::nullopt, true, std::nullopt};
      if (auto o = s.at_or_before(occ_stream, p.ts)) ls.present = o->value > 0.5;
      if (auto e = s.at_or_before(env_stream, p.ts)) {
        ls.temperature_c = e->value;
        ls.humidity_pct = e->humidity;
      }
      series.push_back(ls);
    }
    auto ev = habits::episodes(user, spec.id, series);
    out.insert(out.end(), ev.begin(), ev.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.ts < y.ts; });
  return out;
}

inline classifier::Dataset select_rows(const classifier::Dataset& all, const std::string& rows, double split,
                                       std::uint64_t seed) {
  if (rows == "all") return all;
  const auto s = classifier::stratified_split(all.y, split, seed);
  auto d = all.subset(rows == "train" ? s.train : s.test);
  d.id = all.id + "/" + rows;
  return d;
}

namespace detail {

inline int serve(const fs::path& config_path, bool exit_after_replay, std::ostream& out, std::ostream& err) {
  auto config = service::load_config(config_path);
  // Block the shutdown signals before any thread starts so that only
  // sigwait below sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::Service svc(std::move(config));
  svc.start();
  err << "emedge: serving on http://" << svc.config().http.host << ":" << svc.port() << std::endl;
  if (exit_after_replay) {
    if (!svc.config().source.replay) throw ConfigError("source.replay", "--exit-after-replay needs a replay file");
    svc.wait_replay(std::chrono::hours(24));
    svc.stop();
    out << svc.health().dump(2) << "\n";
    return 0;
  }
  int sig = 0;
  sigwait(&signals, &sig);
  err << "emedge: signal " << sig << ", shutting down" << std::endl;
  svc.stop();
  return 0;
}

inline int replay(const fs::path& file, const fs::path& store_dir, const fs::path& specs_file, double rate,
                  bool realtime, double speedup, std::ostream& out) {
  const auto specs = load_specs(specs_file);
  store::Store st(store_dir);
  recommender::Recommender rec({}, &st);
  service::EventBus bus;
  service::Pipeline pipeline("default", specs, st, rec, bus);
  telemetry::Ingestor ingestor([&](telemetry::TelemetrySample s) { pipeline.submit(std::move(s)); });
  pipeline.start();
  telemetry::ReplayOptions opts;
  opts.events_per_second = rate;
  opts.realtime = realtime;
  opts.speedup = speedup;
  const auto lines = telemetry::replay_file(file, ingestor, opts);
  pipeline.stop();
  out << json{{"lines", lines},
              {"ingest", ingestor.counters().to_json()},
              {"pipeline", pipeline.health()},
              {"store", st.counters().to_json()}}
             .dump(2)
      << "\n";
  return 0;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Edge energy monitoring and recommendation service", "emedge"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the service with an HTTP API");
  std::string config_path;
  bool exit_after_replay = false;
  serve->add_option("--config", config_path, "Service configuration (JSON)")->required();
  serve->add_flag("--exit-after-replay", exit_after_replay, "Stop once the configured replay file is processed");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic household trace");
  std::uint64_t sim_seed = 0;
  double sim_days = 1.0;
  std::string sim_out, sim_config, household = "default";
  Timestamp sim_interval = 60;
  std::optional<double> sim_accuracy;
  std::optional<Timestamp> sim_start;
  simulate->add_option("--seed", sim_seed, "Random seed");
  simulate->add_option("--days", sim_days, "Duration in days")->check(CLI::PositiveNumber);
  simulate->add_option("--out", sim_out, "Output directory")->required();
  simulate->add_option("--interval", sim_interval, "Sample interval in seconds")->check(CLI::PositiveNumber);
  simulate->add_option("--household", household, "Built-in household")->check(CLI::IsMember({"default", "benchmark"}));
  simulate->add_option("--config", sim_config, "Simulation config (JSON); overrides --household");
  simulate->add_option("--accuracy", sim_accuracy, "Meter accuracy in percent; sets measurement noise");
  simulate->add_option("--start", sim_start, "Start time (epoch seconds)");

  // replay
  auto* replay = app.add_subcommand("replay", "Replay an event file through ingest, labelling and triggers");
  std::string replay_file, replay_store, replay_specs;
  double replay_rate = 0.0, replay_speedup = 1.0;
  bool replay_realtime = false;
  replay->add_option("--file", replay_file, "events.jsonl")->required();
  replay->add_option("--store", replay_store, "Store directory")->required();
  replay->add_option("--specs", replay_specs, "Appliance spec file")->required();
  replay->add_option("--rate", replay_rate, "Events per second (0 = as fast as possible)");
  replay->add_flag("--realtime", replay_realtime, "Pace by file timestamps");
  replay->add_option("--speedup", replay_speedup, "Speed-up factor for --realtime");

  // train / eval
  classifier::TrainOptions topts;
  std::string kind = "ebt", data_dir, model_path, rows;
  std::uint64_t seed = 0;
  double split = 0.7;
  auto* train = app.add_subcommand("train", "Train a micro-moment classifier on a trace");
  train->add_option("--data", data_dir, "Trace directory")->required();
  train->add_option("--model", model_path, "Output model file")->required();
  train->add_option("--kind", kind, "ebt, dt or knn")->check(CLI::IsMember({"ebt", "dt", "knn", "ensemble", "tree"}));
  train->add_option("--seed", seed, "Seed for the split and the learners");
  train->add_option("--max-splits", topts.max_splits, "Split cap per tree")->check(CLI::PositiveNumber);
  train->add_option("--learners", topts.n_learners, "Ensemble size")->check(CLI::PositiveNumber);
  train->add_option("--k", topts.k, "Neighbours for knn")->check(CLI::PositiveNumber);
  train->add_option("--threads", topts.threads, "Training threads (0 = all cores)");
  train->add_option("--split", split, "Training fraction of the stratified split");
  train->add_option("--rows", rows, "train or all")->check(CLI::IsMember({"train", "all"}));

  auto* eval = app.add_subcommand("eval", "Evaluate a model; prints an EvalReport");
  std::string format = "json";
  eval->add_option("--model", model_path, "Model file")->required();
  eval->add_option("--data", data_dir, "Trace directory")->required();
  eval->add_option("--seed", seed, "Seed of the stratified split");
  eval->add_option("--split", split, "Training fraction of the stratified split");
  eval->add_option("--rows", rows, "test or all")->check(CLI::IsMember({"test", "all"}));
  eval->add_option("--format", format, "json or table")->check(CLI::IsMember({"json", "table"}));

  // mine
  auto* mine = app.add_subcommand("mine", "Mine habit rules from labelled activity");
  std::string mine_data, mine_store, mine_specs, mine_user = "default", mine_site = "home";
  double min_support = 0.1, min_confidence = 0.6;
  bool persist = false;
  mine->add_option("--data", mine_data, "Trace directory");
  mine->add_option("--store", mine_store, "Store directory with label streams");
  mine->add_option("--specs", mine_specs, "Appliance spec file (with --store)");
  mine->add_option("--site", mine_site, "Site id (with --store)");
  mine->add_option("--user", mine_user, "User id");
  mine->add_option("--min-support", min_support, "Minimum support");
  mine->add_option("--min-confidence", min_confidence, "Minimum confidence");
  mine->add_flag("--persist", persist, "Save the rules in the store's knowledge base");

  // archive
  auto* archive = app.add_subcommand("archive", "Archive old raw samples");
  std::string archive_store;
  std::optional<Timestamp> before, retention_now;
  archive->add_option("--store", archive_store, "Store directory")->required();
  auto* before_opt = archive->add_option("--before", before, "Archive buckets holding samples older than this time");
  archive->add_option("--retention-at", retention_now, "Apply the retention policy as of this time")->excludes(before_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "emedge: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*serve) return detail::serve(config_path, exit_after_replay, out, err);

    if (*simulate) {
      sim::SimConfig cfg;
      const auto duration = static_cast<Timestamp>(std::llround(sim_days * static_cast<double>(kSecondsPerDay)));
      if (!sim_config.empty()) {
        std::ifstream in(sim_config);
        if (!in) throw ConfigError("simulate.config", "cannot open '" + sim_config + "'");
        cfg = sim::sim_config_from_json(json::parse(in));
        cfg.seed = sim_seed;
        cfg.duration_s = duration;
      } else if (household == "benchmark") {
        cfg = sim::benchmark_household(sim_seed, duration, sim_interval);
      } else {
        cfg = sim::default_household(sim_seed, duration);
      }
      cfg.sample_interval_s = sim_interval;
      if (sim_start) cfg.start = *sim_start;
      if (sim_accuracy) cfg.noise = sim::calibrate_noise(*sim_accuracy);
      const auto trace = sim::generate(cfg);
      sim::write_trace(trace, sim_out);
      sim::write_file(fs::path(sim_out) / "sim_config.json", sim::to_json(cfg).dump(2) + "\n");
      out << json{{"out", sim_out},
                  {"samples", trace.timestamps.size()},
                  {"appliances", trace.appliances.size()},
                  {"zones", trace.occupancy.size()}}
                 .dump(2)
          << "\n";
      return 0;
    }

    if (*replay)
      return detail::replay(replay_file, replay_store, replay_specs, replay_rate, replay_realtime, replay_speedup, out);

    if (*train) {
      topts.kind = classifier::parse_model_kind(kind);
      const auto data = classifier::dataset_from_trace(sim::read_trace(data_dir), fs::path(data_dir).filename().string());
      const auto rows_used = select_rows(data, rows.empty() ? "train" : rows, split, seed);
      const auto started = std::chrono::steady_clock::now();
      const auto model = classifier::train(rows_used, topts, seed);
      classifier::save_model(*model, model_path);
      err << fmt::format("trained {} on {} rows in {:.2f} s\n", model->kind(), rows_used.size(),
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
      out << json{{"model", model_path}, {"kind", model->kind()}, {"rows", rows_used.size()}, {"seed", seed}}.dump(2)
          << "\n";
      return 0;
    }

    if (*eval) {
      const auto model = classifier::load_model(model_path);
      const auto data = classifier::dataset_from_trace(sim::read_trace(data_dir), fs::path(data_dir).filename().string());
      const auto test = select_rows(data, rows.empty() ? "test" : rows, split, seed);
      const auto report = classifier::evaluate(*model, test, seed);
      if (format == "table")
        out << report.table();
      else
        out << report.to_json().dump(2) << "\n";
      return 0;
    }

    if (*mine) {
      if (mine_data.empty() == mine_store.empty()) throw ConfigError("mine", "give exactly one of --data or --store");
      std::vector<habits::RawEvent> raw;
      std::unique_ptr<store::Store> st;
      if (!mine_data.empty()) {
        raw = activity_from_trace(sim::read_trace(mine_data), mine_user);
      } else {
        if (mine_specs.empty()) throw ConfigError("mine.specs", "--store needs --specs");
        st = std::make_unique<store::Store>(mine_store);
        raw = activity_from_store(*st, mine_site, load_specs(mine_specs), mine_user);
      }
      if (persist && !st) throw ConfigError("mine.persist", "--persist needs --store");
      std::vector<habits::ActionEvent> events;
      for (const auto& r : raw) events.push_back(habits::discretize(r));
      const auto rules = habits::mine(events, min_support, min_confidence);
      json arr = json::array();
      for (const auto& r : rules) {
        arr.push_back(habits::to_json(r));
        if (persist) st->kb_put(store::KnowledgeKind::habit_rule, r.key(), habits::to_json(r));
      }
      out << json{{"events", events.size()}, {"rules", arr}}.dump(2) << "\n";
      return 0;
    }

    if (*archive) {
      if (!before && !retention_now) throw ConfigError("archive", "give --before or --retention-at");
      store::Store st(archive_store);
      const auto n = before ? st.archive_older_than(*before) : st.apply_retention(*retention_now);
      out << json{{"archived", n}, {"counters", st.counters().to_json()}}.dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "emedge: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "emedge: unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace emedge::cli
