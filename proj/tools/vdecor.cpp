// vdecor command-line tool: simulate, fit, predict, tune, benchmark, transform.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vdecor/vdecor.hpp"

namespace {

using namespace vdecor;

enum class LogLevel { Off = 0, Error, Warn, Info, Debug };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char *env = std::getenv("VDECOR_LOG");
    const std::string v = env ? env : "warn";
    if (v == "off" || v == "0") return LogLevel::Off;
    if (v == "error") return LogLevel::Error;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

void log(LogLevel level, const std::string &msg) {
  static const char *names[] = {"", "error", "warn", "info", "debug"};
  if (level <= log_level()) {
    std::cerr << "[vdecor " << names[static_cast<int>(level)] << "] " << msg << '\n';
  }
}

struct RunConfig {
  std::string train;
  std::string query;
  std::string artifact;
  std::string out;
  std::string report;
  std::string factors_out;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  Index C = kDefaultNeighbors;
  std::string kernel = "exponential";
  double range = 0.0; // 0: unset
  double nugget = 0.0;
  double smoothness = 0.5;
  std::vector<std::string> learner{"linear"};
  Index k = 10;
  Index trees = 64;
  Index min_leaf = 5;
  Index mtry = 0;
  int scenario = 0; // 0: unset
  Index n = 2000;
  Index features = 10;
  std::string sampler = "dense";
  Index folds = 5;
  bool blocked = false;
  bool tune = false;
  Index replicates = 10;
  std::vector<double> nuggets;
  std::vector<double> ranges;
};

// One entry per config key: reads it from JSON, writes it back, and copies it
// from the flag-bound config when the flag was given.
struct Field {
  std::function<void(RunConfig &, const json &)> read;
  std::function<void(const RunConfig &, json &)> write;
  std::function<void(RunConfig &, const RunConfig &)> copy;
};

template <typename T> Field make_field(const std::string &key, T RunConfig::*mem) {
  return Field{[key, mem](RunConfig &c, const json &j) {
                 try {
                   c.*mem = j.get<T>();
                 } catch (const json::exception &) {
                   throw InvalidArgument("config key '" + key + "' has the wrong type");
                 }
               },
               [key, mem](const RunConfig &c, json &j) { j[key] = c.*mem; },
               [mem](RunConfig &dst, const RunConfig &src) { dst.*mem = src.*mem; }};
}

const std::map<std::string, Field> &fields() {
  static const std::map<std::string, Field> table = {
      {"train", make_field("train", &RunConfig::train)},
      {"query", make_field("query", &RunConfig::query)},
      {"artifact", make_field("artifact", &RunConfig::artifact)},
      {"out", make_field("out", &RunConfig::out)},
      {"report", make_field("report", &RunConfig::report)},
      {"factors_out", make_field("factors_out", &RunConfig::factors_out)},
      {"seed", make_field("seed", &RunConfig::seed)},
      {"threads", make_field("threads", &RunConfig::threads)},
      {"C", make_field("C", &RunConfig::C)},
      {"kernel", make_field("kernel", &RunConfig::kernel)},
      {"range", make_field("range", &RunConfig::range)},
      {"nugget", make_field("nugget", &RunConfig::nugget)},
      {"smoothness", make_field("smoothness", &RunConfig::smoothness)},
      {"learner", make_field("learner", &RunConfig::learner)},
      {"k", make_field("k", &RunConfig::k)},
      {"trees", make_field("trees", &RunConfig::trees)},
      {"min_leaf", make_field("min_leaf", &RunConfig::min_leaf)},
      {"mtry", make_field("mtry", &RunConfig::mtry)},
      {"scenario", make_field("scenario", &RunConfig::scenario)},
      {"n", make_field("n", &RunConfig::n)},
      {"features", make_field("features", &RunConfig::features)},
      {"sampler", make_field("sampler", &RunConfig::sampler)},
      {"folds", make_field("folds", &RunConfig::folds)},
      {"blocked", make_field("blocked", &RunConfig::blocked)},
      {"tune", make_field("tune", &RunConfig::tune)},
      {"replicates", make_field("replicates", &RunConfig::replicates)},
      {"nuggets", make_field("nuggets", &RunConfig::nuggets)},
      {"ranges", make_field("ranges", &RunConfig::ranges)},
  };
  return table;
}

void apply_config_file(RunConfig &cfg, const std::string &path) {
  const json j = read_json_file(path);
  detail::require(j.is_object(), "config '" + path + "' must be a JSON object");
  detail::require(j.contains("version"), "config '" + path + "' has no 'version' field");
  detail::require(j.at("version").is_number_integer() && j.at("version").get<int>() == kFormatVersion,
                  "config '" + path + "': unsupported version (expected " +
                      std::to_string(kFormatVersion) + ")");
  for (const auto &[key, value] : j.items()) {
    if (key == "version") {
      continue;
    }
    const auto it = fields().find(key);
    if (it == fields().end()) {
      throw InvalidArgument("config '" + path + "': unknown key '" + key + "'");
    }
    it->second.read(cfg, value);
  }
}

json config_to_json(const RunConfig &cfg) {
  json j{{"version", kFormatVersion}};
  for (const auto &[key, f] : fields()) {
    f.write(cfg, j);
  }
  return j;
}

// Per-subcommand option binding.
struct Command {
  CLI::App *app = nullptr;
  std::string config_path;
  RunConfig flags;
  std::vector<std::pair<CLI::Option *, std::string>> bound;

  template <typename T> CLI::Option *option(const std::string &key, const std::string &help) {
    const std::string flag = "--" + (key == "C" ? key : CLI::detail::find_and_replace(key, "_", "-"));
    auto *mem = &(flags.*member<T>(key));
    CLI::Option *opt = app->add_option(flag, *mem, help);
    bound.emplace_back(opt, key);
    return opt;
  }

  CLI::Option *flag(const std::string &key, bool RunConfig::*mem, const std::string &help) {
    CLI::Option *opt = app->add_flag("--" + key, flags.*mem, help);
    bound.emplace_back(opt, key);
    return opt;
  }

  template <typename T> static T RunConfig::*member(const std::string &key);

  RunConfig effective() const {
    RunConfig cfg;
    if (!config_path.empty()) {
      apply_config_file(cfg, config_path);
    }
    for (const auto &[opt, key] : bound) {
      if (opt->count() > 0) {
        fields().at(key).copy(cfg, flags);
      }
    }
    return cfg;
  }
};

template <> std::string RunConfig::*Command::member<std::string>(const std::string &key) {
  static const std::map<std::string, std::string RunConfig::*> m = {
      {"train", &RunConfig::train},     {"query", &RunConfig::query},
      {"artifact", &RunConfig::artifact}, {"out", &RunConfig::out},
      {"report", &RunConfig::report},   {"factors_out", &RunConfig::factors_out},
      {"kernel", &RunConfig::kernel},   {"sampler", &RunConfig::sampler}};
  return m.at(key);
}
template <> double RunConfig::*Command::member<double>(const std::string &key) {
  static const std::map<std::string, double RunConfig::*> m = {
      {"range", &RunConfig::range}, {"nugget", &RunConfig::nugget}, {"smoothness", &RunConfig::smoothness}};
  return m.at(key);
}
template <> Index RunConfig::*Command::member<Index>(const std::string &key) {
  static const std::map<std::string, Index RunConfig::*> m = {
      {"C", &RunConfig::C},         {"k", &RunConfig::k},         {"trees", &RunConfig::trees},
      {"min_leaf", &RunConfig::min_leaf}, {"mtry", &RunConfig::mtry}, {"n", &RunConfig::n},
      {"features", &RunConfig::features}, {"folds", &RunConfig::folds},
      {"replicates", &RunConfig::replicates}};
  return m.at(key);
}
template <> std::uint64_t RunConfig::*Command::member<std::uint64_t>(const std::string &) {
  return &RunConfig::seed;
}
template <> unsigned RunConfig::*Command::member<unsigned>(const std::string &) {
  return &RunConfig::threads;
}
template <> int RunConfig::*Command::member<int>(const std::string &) { return &RunConfig::scenario; }
template <>
std::vector<std::string> RunConfig::*Command::member<std::vector<std::string>>(const std::string &) {
  return &RunConfig::learner;
}
template <> std::vector<double> RunConfig::*Command::member<std::vector<double>>(const std::string &key) {
  return key == "nuggets" ? &RunConfig::nuggets : &RunConfig::ranges;
}

void add_common(Command &c) {
  c.app->add_option("--config", c.config_path, "JSON config file; flags override its values")
      ->check(CLI::ExistingFile);
  c.option<std::uint64_t>("seed", "random seed");
  c.option<unsigned>("threads", "worker threads (0: all cores)");
}

void add_kernel(Command &c) {
  c.option<std::string>("kernel", "exponential or matern");
  c.option<double>("range", "kernel range phi");
  c.option<double>("nugget", "nugget omega in [0, 1]");
  c.option<double>("smoothness", "Matern smoothness nu");
  c.option<Index>("C", "conditioning set size");
}

void add_learner(Command &c) {
  c.option<std::vector<std::string>>("learner", "linear, knn or trees");
  c.option<Index>("k", "knn neighbors");
  c.option<Index>("trees", "bagged trees count");
  c.option<Index>("min_leaf", "minimum rows per tree leaf");
  c.option<Index>("mtry", "features tried per split (0: p/3)");
}

void add_grid(Command &c) {
  c.option<std::vector<double>>("nuggets", "nugget grid");
  c.option<std::vector<double>>("ranges", "range grid (default: from the data extent)");
  c.option<Index>("folds", "cross-validation folds");
  c.flag("blocked", &RunConfig::blocked, "spatially blocked folds");
}

std::string require_path(const std::string &value, const std::string &name) {
  if (value.empty()) {
    throw InvalidArgument("missing required option --" + name);
  }
  return value;
}

CorrelationModel kernel_model(const RunConfig &cfg) {
  detail::require(cfg.range > 0.0, "--range is required (a positive kernel range)");
  CorrelationModel m{parse_kernel_family(cfg.kernel), cfg.range, cfg.smoothness, cfg.nugget};
  m.validate();
  return m;
}

LearnerSpec learner_spec(const RunConfig &cfg, const std::string &name) {
  LearnerSpec s;
  s.kind = parse_learner_kind(name);
  s.k = cfg.k;
  s.trees = cfg.trees;
  s.min_leaf = cfg.min_leaf;
  s.mtry = cfg.mtry;
  s.seed = cfg.seed;
  s.validate();
  return s;
}

LearnerSpec single_learner(const RunConfig &cfg) {
  detail::require(cfg.learner.size() == 1, "exactly one --learner is required here");
  return learner_spec(cfg, cfg.learner.front());
}

CvOptions cv_options(const RunConfig &cfg) {
  CvOptions opt;
  opt.folds = cfg.folds;
  opt.seed = cfg.seed;
  opt.neighbors = cfg.C;
  opt.family = parse_kernel_family(cfg.kernel);
  opt.smoothness = cfg.smoothness;
  opt.blocked = cfg.blocked;
  opt.threads = resolve_threads(cfg.threads);
  return opt;
}

TuningGrid tuning_grid(const RunConfig &cfg, const SpatialDataset &data) {
  TuningGrid grid;
  if (!cfg.nuggets.empty()) {
    grid.nuggets = cfg.nuggets;
  }
  grid.ranges = cfg.ranges.empty() ? default_ranges(data.locs) : cfg.ranges;
  for (const auto &name : cfg.learner) {
    const auto g = default_learner_grid(learner_spec(cfg, name));
    grid.learners.insert(grid.learners.end(), g.begin(), g.end());
  }
  grid.validate();
  return grid;
}

void ensure_parent(const std::string &path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::filesystem::create_directories(parent);
  }
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig &cfg) {
  detail::require(cfg.scenario != 0, "missing required option --scenario");
  const std::string dir = require_path(cfg.out, "out");
  SimulationConfig sim;
  sim.scenario = parse_scenario(cfg.scenario);
  sim.n = cfg.n;
  sim.features = cfg.features;
  sim.seed = cfg.seed;
  if (cfg.sampler == "vecchia") {
    sim.sampler = GpSampler::Vecchia;
  } else {
    detail::require(cfg.sampler == "dense", "--sampler must be dense or vecchia");
  }
  const SimulatedDataset ds = generate_scenario(sim);
  std::filesystem::create_directories(dir);
  write_dataset_csv(dir + "/train.csv", ds.data.subset(ds.train));
  write_dataset_csv(dir + "/test.csv", ds.data.subset(ds.test));
  write_json_file(dir + "/simulation.json",
                  {{"format", "vdecor-simulation"},
                   {"version", kFormatVersion},
                   {"config", config_to_json(cfg)},
                   {"beta", detail::vec_to_json(ds.beta)},
                   {"zeroed", ds.zeroed},
                   {"train_rows", ds.train.size()},
                   {"test_rows", ds.test.size()}});
  log(LogLevel::Info, "wrote " + dir + "/{train,test}.csv");
  return 0;
}

int cmd_fit(const RunConfig &cfg) {
  const SpatialDataset data = read_csv_file(require_path(cfg.train, "train"), true).to_dataset();
  const std::string artifact = require_path(cfg.artifact, "artifact");
  json report{{"format", "vdecor-fit"}, {"version", kFormatVersion}, {"config", config_to_json(cfg)}};
  FittedPipeline fitted;
  if (cfg.tune) {
    const CvOptions opt = cv_options(cfg);
    const CvResult cv = cross_validate(data, tuning_grid(cfg, data), opt);
    const CvCell &best = cv.best_cell();
    log(LogLevel::Info, "tuned: nugget " + format_double(best.nugget) + ", range " +
                            format_double(best.range) + ", cv rmse " + format_double(best.mean_rmse));
    fitted = final_fit(data, cell_model(best, opt), best.learner, cfg.C, opt.threads);
    report["cv"] = to_json(cv);
  } else {
    fitted = final_fit(data, kernel_model(cfg), single_learner(cfg), cfg.C, resolve_threads(cfg.threads));
  }
  ensure_parent(artifact);
  write_json_file(artifact, to_json(fitted.pipeline));
  report["model"] = to_json(fitted.pipeline.factors().model);
  report["fit"] = to_json(fitted.report);
  if (!cfg.report.empty()) {
    ensure_parent(cfg.report);
    write_json_file(cfg.report, report);
  }
  log(LogLevel::Info, "training rmse (transformed scale) " + format_double(fitted.report.train_rmse));
  return 0;
}

int cmd_predict(const RunConfig &cfg) {
  const SpatialPipeline pipeline = pipeline_from_json(read_json_file(require_path(cfg.artifact, "artifact")));
  const CsvTable q = read_csv_file(require_path(cfg.query, "query"), false);
  const Index d = pipeline.training().locs.dim();
  const Index p = pipeline.training().feature_count();
  detail::require(q.locs.cols() == d, "query has " + std::to_string(q.locs.cols()) +
                                          " location columns, artifact expects " + std::to_string(d));
  detail::require(q.features.cols() == p, "query has " + std::to_string(q.features.cols()) +
                                              " features, artifact expects " + std::to_string(p));
  Eigen::VectorXd pred(0);
  if (q.rows() > 0) {
    pred = pipeline.predict(LocationSet(q.locs), with_intercept(q.features), resolve_threads(cfg.threads));
  }
  std::ofstream file;
  if (!cfg.out.empty()) {
    ensure_parent(cfg.out);
    file.open(cfg.out);
    detail::require(static_cast<bool>(file), "cannot write '" + cfg.out + "'");
  }
  std::ostream &out = cfg.out.empty() ? std::cout : file;
  for (Index k = 0; k < d; ++k) {
    out << "loc_" << k + 1 << ',';
  }
  out << "y_pred\n";
  for (Index r = 0; r < q.rows(); ++r) {
    for (Index k = 0; k < d; ++k) {
      out << format_double(q.locs(r, k)) << ',';
    }
    out << format_double(pred(r)) << '\n';
  }
  return 0;
}

int cmd_tune(const RunConfig &cfg) {
  const SpatialDataset data = read_csv_file(require_path(cfg.train, "train"), true).to_dataset();
  const CvResult cv = cross_validate(data, tuning_grid(cfg, data), cv_options(cfg));
  const CvCell &best = cv.best_cell();
  std::cout << "best: nugget " << format_double(best.nugget) << ", range " << format_double(best.range)
            << ", learner " << to_string(best.learner.kind) << ", cv rmse " << format_double(best.mean_rmse)
            << '\n';
  if (!cfg.out.empty()) {
    json j = to_json(cv);
    j["config"] = config_to_json(cfg);
    ensure_parent(cfg.out);
    write_json_file(cfg.out, j);
  }
  return 0;
}

int cmd_benchmark(const RunConfig &cfg) {
  detail::require(cfg.scenario != 0, "missing required option --scenario");
  BenchmarkConfig bc;
  bc.simulation.scenario = parse_scenario(cfg.scenario);
  bc.simulation.n = cfg.n;
  bc.simulation.features = cfg.features;
  bc.simulation.seed = cfg.seed;
  bc.replicates = cfg.replicates;
  bc.folds = cfg.folds;
  bc.neighbors = cfg.C;
  bc.family = parse_kernel_family(cfg.kernel);
  bc.smoothness = cfg.smoothness;
  if (!cfg.nuggets.empty()) {
    bc.nuggets = cfg.nuggets;
  }
  bc.ranges = cfg.ranges;
  bc.threads = resolve_threads(cfg.threads);
  for (const auto &name : cfg.learner) {
    bc.learner_grids.push_back(default_learner_grid(learner_spec(cfg, name)));
  }
  const BenchmarkReport r = run_benchmark(bc);
  std::cout << std::left << std::setw(10) << "learner" << std::right << std::setw(14) << "spatial"
            << std::setw(14) << "non-spatial" << std::setw(8) << "wins" << '\n';
  for (const auto &l : r.learners) {
    std::cout << std::left << std::setw(10) << l.name << std::right << std::fixed << std::setprecision(4)
              << std::setw(14) << l.spatial_mean() << std::setw(14) << l.nonspatial_mean() << std::setw(5)
              << l.spatial_wins() << '/' << r.config.replicates << '\n';
  }
  if (!cfg.report.empty() || !cfg.out.empty()) {
    json j = to_json(r);
    j["config"] = config_to_json(cfg);
    const std::string path = cfg.report.empty() ? cfg.out : cfg.report;
    ensure_parent(path);
    write_json_file(path, j);
  }
  return 0;
}

int cmd_transform(const RunConfig &cfg) {
  const SpatialDataset data = read_csv_file(require_path(cfg.train, "train"), true).to_dataset();
  const std::string out_path = require_path(cfg.out, "out");
  const VecchiaFactors f = compute_factors(data.locs, kernel_model(cfg), cfg.C, resolve_threads(cfg.threads));
  const TransformedDataset t = decorrelate(data.y, data.x, f);
  ensure_parent(out_path);
  std::ofstream out(out_path);
  detail::require(static_cast<bool>(out), "cannot write '" + out_path + "'");
  // Rows in max-min order; `row` is the 0-based input row, x_0 the
  // transformed intercept.
  out << "row";
  for (Index c = 0; c < t.x.cols(); ++c) {
    out << ",x_" << c;
  }
  out << ",y\n";
  for (Index pos = 0; pos < t.x.rows(); ++pos) {
    out << f.ordering.perm[static_cast<std::size_t>(pos)];
    for (Index c = 0; c < t.x.cols(); ++c) {
      out << ',' << format_double(t.x(pos, c));
    }
    out << ',' << format_double(t.y(pos)) << '\n';
  }
  if (!cfg.factors_out.empty()) {
    ensure_parent(cfg.factors_out);
    write_json_file(cfg.factors_out, to_json(f));
  }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Spatial decorrelation transform for regression learners"};
  app.require_subcommand(1);

  std::map<std::string, std::pair<Command, std::function<int(const RunConfig &)>>> commands;
  auto add = [&](const std::string &name, const std::string &help, std::function<int(const RunConfig &)> run) {
    auto &entry = commands[name];
    entry.first.app = app.add_subcommand(name, help);
    entry.second = std::move(run);
    add_common(entry.first);
    return &entry.first;
  };

  Command *sim = add("simulate", "generate a scenario dataset", cmd_simulate);
  sim->option<int>("scenario", "1, 2 or 3");
  sim->option<Index>("n", "number of locations");
  sim->option<Index>("features", "number of features");
  sim->option<std::string>("sampler", "dense or vecchia GP sampler");
  sim->option<std::string>("out", "output directory");

  Command *fit = add("fit", "fit a pipeline and write its artifact", cmd_fit);
  fit->option<std::string>("train", "training CSV");
  fit->option<std::string>("artifact", "pipeline artifact to write");
  fit->option<std::string>("report", "fit report JSON");
  fit->flag("tune", &RunConfig::tune, "choose nugget, range and learner settings by cross-validation");
  add_kernel(*fit);
  add_learner(*fit);
  add_grid(*fit);

  Command *pred = add("predict", "predict at query locations", cmd_predict);
  pred->option<std::string>("artifact", "pipeline artifact");
  pred->option<std::string>("query", "query CSV");
  pred->option<std::string>("out", "predictions CSV (default: stdout)");

  Command *tune = add("tune", "cross-validate a kernel and learner grid", cmd_tune);
  tune->option<std::string>("train", "training CSV");
  tune->option<std::string>("out", "CV report JSON");
  tune->option<std::string>("kernel", "exponential or matern");
  tune->option<double>("smoothness", "Matern smoothness nu");
  tune->option<Index>("C", "conditioning set size");
  add_learner(*tune);
  add_grid(*tune);

  Command *bench = add("benchmark", "spatial vs non-spatial RMSE on simulated replicates", cmd_benchmark);
  bench->option<int>("scenario", "1, 2 or 3");
  bench->option<Index>("n", "locations per replicate");
  bench->option<Index>("features", "number of features");
  bench->option<Index>("replicates", "number of replicates");
  bench->option<std::string>("report", "benchmark report JSON");
  bench->option<std::string>("out", "alias for --report");
  bench->option<std::string>("kernel", "exponential or matern");
  bench->option<double>("smoothness", "Matern smoothness nu");
  bench->option<Index>("C", "conditioning set size");
  add_learner(*bench);
  add_grid(*bench);

  Command *tr = add("transform", "write the decorrelated response and features", cmd_transform);
  tr->option<std::string>("train", "training CSV");
  tr->option<std::string>("out", "transformed CSV");
  tr->option<std::string>("factors_out", "factors JSON");
  add_kernel(*tr);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (auto &[name, entry] : commands) {
    if (!entry.first.app->parsed()) {
      continue;
    }
    try {
      const RunConfig cfg = entry.first.effective();
      return entry.second(cfg);
    } catch (const NumericalError &e) {
      log(LogLevel::Error, e.what());
      return 2;
    } catch (const InvalidArgument &e) {
      log(LogLevel::Error, e.what());
      return 1;
    } catch (const json::exception &e) {
      log(LogLevel::Error, std::string("invalid JSON content: ") + e.what());
      return 1;
    } catch (const std::filesystem::filesystem_error &e) {
      log(LogLevel::Error, e.what());
      return 1;
    }
  }
  return 1;
}
