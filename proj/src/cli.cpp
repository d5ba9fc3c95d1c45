#include "platesym/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "platesym/analysis.hpp"

namespace platesym::cli {

namespace fs = std::filesystem;

namespace {

void emit(std::ostream& out, const nlohmann::json& rec) { out << rec.dump() << '\n'; }

signals::Dataset open_dataset(const fs::path& path) {
  if (path.empty()) throw ConfigError("--dataset is required");
  if (!fs::exists(path)) throw DataError("dataset not found: " + path.string());
  try {
    if (fs::is_directory(path)) {
      auto ds = signals::import_directory(path);
      if (!ds) throw DataError("no importable dataset in " + path.string());
      return std::move(*ds);
    }
    return signals::load_dataset(path);
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

models::Checkpoint open_checkpoint(const fs::path& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  try {
    return models::read_checkpoint(path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

signals::CompressConfig compress_config(const signals::Dataset& ds) {
  if (ds.meta.contains("synth")) return ds.meta["synth"].get<signals::SynthConfig>().compress;
  return {};
}

struct Stat {
  double mean = 0.0, std = 0.0;
};

Stat stat(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(xs.size()));
  return s;
}

nlohmann::json window_json(const std::optional<training::Window>& w) {
  if (!w) return nullptr;
  return nlohmann::json::array({w->t0_ms, w->t1_ms});
}

std::optional<training::Window> window_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return training::Window{j.at(0).get<double>(), j.at(1).get<double>()};
}

std::string pm(double mean, double std, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << mean << " +- " << std;
  return os.str();
}

}  // namespace

// ---- configuration -------------------------------------------------------------

double RunConfig::split_ratio() const {
  if (train_fraction) return *train_fraction;
  return task == models::Task::locate ? 0.8 : 0.2;
}

models::ModelSpec RunConfig::model_spec(std::uint64_t seed, std::size_t input_length) const {
  auto spec = scale == Scale::desk ? models::ModelSpec::desk_scale(variant, task)
                                   : models::ModelSpec::full_scale(variant, task);
  spec.seed = seed;
  spec.input_length = input_length;
  spec.dropout = dropout;
  return spec;
}

training::TrainConfig RunConfig::train_config(std::uint64_t seed) const {
  training::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.seed = seed;
  tc.schedule = training::OneCycle::for_task(task, epochs);
  tc.adam.weight_decay = weight_decay;
  tc.eval_every = eval_every;
  tc.checkpoint_every = checkpoint_every;
  return tc;
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (epochs == 0) throw ConfigError("--epochs must be positive");
  if (batch_size == 0) throw ConfigError("--batch-size must be positive");
  if (grid == 0) throw ConfigError("--grid must be positive");
  const double r = split_ratio();
  if (!(r > 0.0 && r < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("--dropout must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("--weight-decay must be nonnegative");
  if (window && !(window->t0_ms >= 0.0 && window->t1_ms > window->t0_ms))
    throw ConfigError("--window needs 0 <= t0 < t1");
}

training::Window parse_window(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("--window expects t0:t1, got '" + text + "'");
  try {
    std::size_t a = 0, b = 0;
    const std::string lo = text.substr(0, colon), hi = text.substr(colon + 1);
    training::Window w{std::stod(lo, &a), std::stod(hi, &b)};
    if (a != lo.size() || b != hi.size()) throw std::invalid_argument("trailing text");
    return w;
  } catch (const std::logic_error&) {
    throw ConfigError("--window expects t0:t1, got '" + text + "'");
  }
}

signals::SymmetryBreakSpec load_sym_break(const std::string& spec) {
  if (spec.empty() || spec == "zero") return {};
  if (spec == "weak") return signals::SymmetryBreakSpec::weak();
  std::ifstream f(spec);
  if (!f) throw ConfigError("cannot read symmetry-break spec " + spec);
  try {
    return nlohmann::json::parse(f).get<signals::SymmetryBreakSpec>();
  } catch (const std::exception& e) {
    throw ConfigError("bad symmetry-break spec " + spec + ": " + e.what());
  }
}

Sets build_sets(const signals::Dataset& ds, models::Task task, std::uint64_t seed, double ratio,
                std::size_t views, const std::optional<training::Window>& window) {
  if (ds.size() < 2) throw DataError("dataset needs at least two locations");
  Sets s;
  const signals::Dataset* src = &ds;
  signals::Dataset cut;
  if (views > 0 && views < ds.baseline_count()) {
    cut = ds;
    cut.baselines.resize(views * ds.stride());
    src = &cut;
  }
  if (task == models::Task::locate) {
    const auto sp = signals::split(ds.size(), ratio, seed);
    s.train = signals::localization_set(*src, sp.train);
    s.test = signals::localization_set(*src, sp.test);
  } else {
    if (ds.baseline_count() < 2) throw DataError("detection needs at least two baselines");
    // Undamaged examples mix every baseline; `views` only limits the subtracted ones.
    const auto bal = signals::balance_detection(ds, seed);
    const auto dmg = signals::split(ds.size(), ratio, signals::mix_seed(seed, 1));
    const auto und = signals::split(bal.undamaged.size() / ds.stride(), ratio, signals::mix_seed(seed, 2));
    s.train = signals::detection_set(*src, bal, dmg.train, und.train, true);
    s.test = signals::detection_set(*src, bal, dmg.test, und.test, true);
  }
  if (s.train.count() == 0 || s.test.count() == 0) throw DataError("split leaves an empty train or test set");
  if (window) {
    const auto cc = compress_config(ds);
    s.train = training::windowed(s.train, *window, cc);
    s.test = training::windowed(s.test, *window, cc);
  }
  return s;
}

fs::path run_dir(const RunConfig& cfg, std::uint64_t seed) {
  return cfg.out / (models::to_string(cfg.task) + "_" + models::to_string(cfg.variant) + "_seed" +
                    std::to_string(seed));
}

// ---- commands ------------------------------------------------------------------

nlohmann::json cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.validate();
  signals::SynthConfig sc;
  sc.plate.grid_points = cfg.grid;
  sc.plate.baselines = cfg.baselines;
  sc.sym = load_sym_break(cfg.sym_break);
  sc.seed = cfg.seeds.front();
  try {
    sc.plate.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  fs::path path = cfg.out;
  if (path.extension() != ".pwds") path /= "dataset.pwds";

  log << "synthesizing " << cfg.grid * cfg.grid << " locations and " << cfg.baselines << " baselines\n";
  auto ds = signals::synthesize_dataset(sc, true);
  const auto cur = signals::curate(ds);
  try {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    signals::save_dataset(path, ds);
  } catch (const std::exception& e) {
    throw DataError(std::string("cannot write dataset: ") + e.what());
  }

  nlohmann::json rep{{"record", "synth"},
                     {"path", path.string()},
                     {"locations", ds.size()},
                     {"baselines", ds.baseline_count()},
                     {"time_len", ds.time_len},
                     {"curation", cur.to_json()},
                     {"sym_break", sc.sym}};
  if (ds.baseline_count() > 0) {
    const auto r0 = analysis::baseline_equivariance(ds);
    rep["r0"] = {{"mean", r0.mean}, {"std", r0.std}};
    log << "R0 = " << pm(r0.mean, r0.std, 4) << "\n";
  }
  log << "wrote " << path.string() << " (" << ds.size() << " locations, removed " << cur.removed.size()
      << ")\n";
  emit(out, rep);
  return rep;
}

nlohmann::json cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.validate();
  const auto ds = open_dataset(cfg.dataset);
  const bool locate = cfg.task == models::Task::locate;
  nlohmann::json runs = nlohmann::json::array();
  std::vector<double> mde, rmse, var, gap, acc, ppl, train_acc;

  for (const auto seed : cfg.seeds) {
    const auto sets = build_sets(ds, cfg.task, seed, cfg.split_ratio(), cfg.views, cfg.window);
    models::Model model(cfg.model_spec(seed, ds.time_len));
    const fs::path dir = run_dir(cfg, seed);
    fs::create_directories(dir);
    auto tc = cfg.train_config(seed);
    tc.history_path = dir / "history.jsonl";
    tc.checkpoint_dir = dir / "checkpoints";
    tc.on_epoch = [&](const nlohmann::json& rec) {
      const auto e = rec["epoch"].get<std::size_t>();
      if ((e + 1) % 10 == 0 || e + 1 == cfg.epochs)
        log << "seed " << seed << " epoch " << e + 1 << "/" << cfg.epochs << " loss " << rec["train_loss"].get<double>()
            << "\n";
    };
    log << "training " << models::to_string(cfg.variant) << " " << models::to_string(cfg.task) << " seed " << seed
        << ": " << model.parameter_count() << " parameters, " << sets.train.count() << " train / "
        << sets.test.count() << " test examples\n";
    const auto result = training::train(model, sets.train, sets.test, tc);

    const nlohmann::json meta{{"task", models::to_string(cfg.task)},
                              {"seed", seed},
                              {"epochs", cfg.epochs},
                              {"split_ratio", cfg.split_ratio()},
                              {"views", cfg.views},
                              {"window", window_json(cfg.window)},
                              {"weight_decay", cfg.weight_decay},
                              {"dataset", fs::absolute(cfg.dataset).string()}};
    models::save_checkpoint(dir / "model.ckpt", model, ad::Rng(seed), meta);

    nlohmann::json rec{{"record", "run"},
                       {"seed", seed},
                       {"dir", dir.string()},
                       {"metrics", result.final_metrics}};
    emit(out, rec);
    runs.push_back(rec);
    const auto& te = result.final_metrics["test"];
    if (locate) {
      mde.push_back(te["mde"].get<double>());
      rmse.push_back(te["rmse"].get<double>());
      var.push_back(te["var"].get<double>());
      gap.push_back(result.final_metrics["gap"].get<double>());
    } else {
      acc.push_back(te["accuracy"].get<double>());
      ppl.push_back(te["perplexity"].get<double>());
      train_acc.push_back(result.final_metrics["train"]["accuracy"].get<double>());
    }
  }

  nlohmann::json summary{{"record", "summary"},
                         {"task", models::to_string(cfg.task)},
                         {"variant", models::to_string(cfg.variant)},
                         {"seeds", cfg.seeds}};
  auto put = [&](const char* key, const std::vector<double>& xs) {
    const auto s = stat(xs);
    summary[key] = {{"mean", s.mean}, {"std", s.std}};
    log << "  " << key << ": " << pm(s.mean, s.std) << "\n";
  };
  log << "summary over " << cfg.seeds.size() << " seed(s)\n";
  if (locate) {
    put("test_mde", mde);
    put("test_var", var);
    put("test_rmse", rmse);
    put("gap", gap);
  } else {
    put("test_accuracy", acc);
    put("test_perplexity", ppl);
    put("train_accuracy", train_acc);
  }
  std::ofstream(cfg.out / "summary.json") << summary.dump(2) << '\n';
  emit(out, summary);
  return {{"runs", runs}, {"summary", summary}};
}

nlohmann::json cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  const auto ckpt = open_checkpoint(cfg.checkpoint);
  const auto& meta = ckpt.meta;
  for (const char* key : {"task", "seed", "split_ratio", "views", "window"})
    if (!meta.contains(key)) throw DataError(std::string("checkpoint lacks '") + key + "'; was it written by train?");
  const fs::path data = cfg.dataset.empty() ? fs::path(meta.value("dataset", "")) : cfg.dataset;
  const auto ds = open_dataset(data);
  if (ds.time_len != ckpt.spec.input_length) throw DataError("dataset length does not match the checkpoint");

  const auto model = models::load_model(ckpt);
  const auto seed = meta["seed"].get<std::uint64_t>();
  const auto sets = build_sets(ds, ckpt.spec.task, seed, meta["split_ratio"].get<double>(),
                               meta["views"].get<std::size_t>(), window_from(meta["window"]));
  RunConfig rc = cfg;
  rc.task = ckpt.spec.task;
  const auto metrics = training::evaluate(model, sets.train, sets.test, rc.train_config(seed));
  nlohmann::json rec{{"record", "eval"},
                     {"checkpoint", cfg.checkpoint.string()},
                     {"variant", models::to_string(ckpt.spec.variant)},
                     {"task", models::to_string(ckpt.spec.task)},
                     {"metrics", metrics}};
  log << "test " << metrics["test"].dump() << "\n";
  emit(out, rec);
  return rec;
}

nlohmann::json cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.validate();
  if (cfg.task != models::Task::locate) throw ConfigError("ablate runs on the locate task");
  const auto ds = open_dataset(cfg.dataset);
  const auto windows = cfg.window ? std::vector<training::Window>{*cfg.window} : training::ablation_windows();
  std::vector<std::vector<double>> mde(windows.size()), rmse(windows.size());
  std::vector<training::AblationRow> first;
  for (const auto seed : cfg.seeds) {
    const auto sets = build_sets(ds, cfg.task, seed, cfg.split_ratio(), cfg.views, std::nullopt);
    log << "ablation seed " << seed << "\n";
    const auto rows = training::ablate_windows(cfg.model_spec(seed, ds.time_len), sets.train, sets.test,
                                               cfg.train_config(seed), windows);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      mde[k].push_back(rows[k].test.mde);
      rmse[k].push_back(rows[k].test.rmse);
    }
    if (first.empty()) first = rows;
  }
  nlohmann::json table = nlohmann::json::array();
  std::size_t best = 0;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto m = stat(mde[k]), r = stat(rmse[k]);
    if (m.mean < stat(mde[best]).mean) best = k;
    nlohmann::json row{{"record", "ablation"},
                       {"window", windows[k].label()},
                       {"first_sample", first[k].samples.first},
                       {"last_sample", first[k].samples.last},
                       {"test_mde", {{"mean", m.mean}, {"std", m.std}}},
                       {"test_rmse", {{"mean", r.mean}, {"std", r.std}}}};
    log << windows[k].label() << " ms: MDE " << pm(m.mean, m.std) << " mm, RMSE " << pm(r.mean, r.std) << " mm\n";
    emit(out, row);
    table.push_back(row);
  }
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    std::ofstream f(cfg.out / "ablation.jsonl");
    for (const auto& row : table) f << row.dump() << '\n';
  }
  return {{"rows", table}, {"best", windows[best].label()}};
}

nlohmann::json cmd_equivariance(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  const auto ds = open_dataset(cfg.dataset);
  fs::create_directories(cfg.out);
  nlohmann::json rep{{"record", "equivariance"}};

  if (ds.baseline_count() > 0) {
    const auto r0 = analysis::baseline_equivariance(ds);
    rep["r0"] = {{"mean", r0.mean}, {"std", r0.std}, {"baselines", r0.count}};
    log << "R0 = " << pm(r0.mean, r0.std, 4) << " over " << r0.count << " baselines\n";

    const auto field = analysis::input_equivariance_field(ds);
    std::vector<double> vals;
    std::size_t skipped = 0;
    for (const auto& f : field) {
      vals.push_back(f.value);
      skipped += 8 - f.terms;
    }
    if (skipped) log << "R(x): " << skipped << " orbit partners missing and skipped\n";
    std::sort(vals.begin(), vals.end());
    const auto hm = analysis::render_heatmap(field);
    if (hm.snapped) log << "R(x): " << hm.snapped << " off-lattice positions snapped\n";
    hm.map.write_csv(cfg.out / "R.csv");
    hm.map.write_pgm(cfg.out / "R.pgm", 0.0, std::max(vals.back(), 1e-300));
    rep["R"] = {{"median", vals[vals.size() / 2]}, {"max", vals.back()}, {"skipped_partners", skipped}};
  }

  if (!cfg.checkpoint.empty()) {
    const auto ckpt = open_checkpoint(cfg.checkpoint);
    if (ds.time_len != ckpt.spec.input_length) throw DataError("dataset length does not match the checkpoint");
    const auto model = models::load_model(ckpt);
    const auto q = analysis::learned_equivariance_field(model, ds);
    double edge = 0.0;
    for (const auto& p : ds.positions) edge = std::max({edge, std::abs(p[0]), std::abs(p[1])});
    double qmax = 0.0, nmax = 0.0, boundary = 0.0;
    std::size_t nb = 0;
    for (const auto& s : q) {
      qmax = std::max(qmax, s.q);
      nmax = std::max(nmax, s.normalized);
      if (std::max(std::abs(s.position[0]), std::abs(s.position[1])) >= edge - 1e-9) {
        boundary += s.q;
        ++nb;
      }
    }
    const auto raw = analysis::render_heatmap(q, false);
    const auto norm = analysis::render_heatmap(q, true);
    raw.map.write_csv(cfg.out / "Q.csv");
    raw.map.write_pgm(cfg.out / "Q.pgm", 0.0, std::max(qmax, 1e-300));
    norm.map.write_csv(cfg.out / "Q_normalized.csv");
    rep["Q"] = {{"variant", models::to_string(ckpt.spec.variant)},
                {"max", qmax},
                {"max_normalized", nmax},
                {"boundary_mean", nb ? boundary / static_cast<double>(nb) : 0.0}};
    log << "Q max " << qmax << ", boundary mean " << rep["Q"]["boundary_mean"].get<double>() << "\n";
  }
  std::ofstream(cfg.out / "equivariance.json") << rep.dump(2) << '\n';
  emit(out, rep);
  return rep;
}

nlohmann::json cmd_weights(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  const auto ckpt = open_checkpoint(cfg.checkpoint);
  if (ckpt.spec.variant != models::Variant::approximate)
    throw ConfigError("weights needs an approximate model, checkpoint holds " + models::to_string(ckpt.spec.variant));
  const auto model = models::load_model(ckpt);
  const auto rep = analysis::symmetry_weight_report(model);
  for (const auto& l : rep.layers) {
    log << std::setw(14) << std::left << l.layer << " max|w-1| = " << std::fixed << std::setprecision(5)
        << l.max_deviation << "\n";
    emit(out, {{"record", "weights"}, {"layer", l.layer}, {"omega", l.omega}, {"max_deviation", l.max_deviation}});
  }
  log.unsetf(std::ios::fixed | std::ios::left);
  nlohmann::json j = rep.to_json();
  emit(out, {{"record", "trend"}, {"slope", rep.trend.slope}, {"monotone_decreasing", rep.trend.monotone_decreasing}});
  return j;
}

// ---- argument parsing ----------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log) {
  CLI::App app{"Symmetry-aware guided-wave damage localization and detection"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string task = "locate", variant = "exact", scale = "full", window;
  std::optional<double> fraction;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seeds", cfg.seeds, "Comma-separated seeds")->delimiter(',');
    sub->add_option("--out", cfg.out, "Output file or directory");
  };
  auto learning = [&](CLI::App* sub) {
    sub->add_option("--dataset", cfg.dataset, "Dataset (.pwds file or import directory)")->required();
    sub->add_option("--task", task, "locate | detect");
    sub->add_option("--variant", variant, "ordinary | exact | approx");
    sub->add_option("--scale", scale, "full | desk model widths");
    sub->add_option("--epochs", cfg.epochs, "Training epochs");
    sub->add_option("--batch-size", cfg.batch_size, "Mini-batch size");
    sub->add_option("--views", cfg.views, "Baselines subtracted per location (0: all)");
    sub->add_option("--train-fraction", fraction, "Train share of the split");
    sub->add_option("--weight-decay", cfg.weight_decay, "Decoupled weight decay");
    sub->add_option("--dropout", cfg.dropout, "Channel dropout rate");
    sub->add_option("--eval-every", cfg.eval_every, "Test-set evaluation cadence in epochs");
  };

  auto* synth = app.add_subcommand("synth", "Synthesize and curate a dataset");
  common(synth);
  synth->add_option("--grid", cfg.grid, "Load locations per axis");
  synth->add_option("--baselines", cfg.baselines, "Undamaged acquisitions");
  synth->add_option("--sym-break", cfg.sym_break, "SymmetryBreakSpec JSON file, 'zero' or 'weak'");

  auto* train = app.add_subcommand("train", "Train one model per seed");
  common(train);
  learning(train);
  train->add_option("--window", window, "Time window t0:t1 in ms");
  train->add_option("--checkpoint-every", cfg.checkpoint_every, "Checkpoint cadence in epochs");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  common(eval);
  eval->add_option("--checkpoint", cfg.checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--dataset", cfg.dataset, "Dataset (defaults to the one used for training)");

  auto* ablate = app.add_subcommand("ablate", "Retrain per time window");
  common(ablate);
  learning(ablate);
  ablate->add_option("--window", window, "Single window t0:t1 in ms (default: all four)");

  auto* eqv = app.add_subcommand("equivariance", "R0, R(x) and optional Q(x) reports and heatmaps");
  common(eqv);
  eqv->add_option("--dataset", cfg.dataset, "Dataset")->required();
  eqv->add_option("--checkpoint", cfg.checkpoint, "Trained model for Q(x)");

  auto* weights = app.add_subcommand("weights", "Symmetry-breaking weight report");
  common(weights);
  weights->add_option("--checkpoint", cfg.checkpoint, "Approximate-model checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    log << "error: " << e.what() << "\n";
    return kInvalidConfig;
  }

  try {
    try {
      cfg.task = models::parse_task(task);
      cfg.variant = models::parse_variant(variant);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (scale != "full" && scale != "desk") throw ConfigError("--scale must be full or desk");
    cfg.scale = scale == "desk" ? Scale::desk : Scale::full;
    cfg.train_fraction = fraction;
    if (!window.empty()) cfg.window = parse_window(window);

    if (synth->parsed()) cmd_synth(cfg, out, log);
    else if (train->parsed()) cmd_train(cfg, out, log);
    else if (eval->parsed()) cmd_eval(cfg, out, log);
    else if (ablate->parsed()) cmd_ablate(cfg, out, log);
    else if (eqv->parsed()) cmd_equivariance(cfg, out, log);
    else if (weights->parsed()) cmd_weights(cfg, out, log);
    return kOk;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const training::DivergenceError& e) {
    log << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    log << "data error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace platesym::cli
