// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: acceptance [criterion ...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "oracles.hpp"
#include "vdecor/vdecor.hpp"

using namespace vdecor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Every vars vector seen with a nugget above zero, checked by the bounds line.
struct VarianceLog {
  Index checked = 0;
  Index violations = 0;
  double min = 1.0;
  double max = 0.0;

  void record(const VecchiaFactors &f) {
    if (f.model.nugget <= 0.0) {
      return;
    }
    for (double v : f.vars) {
      ++checked;
      min = std::min(min, v);
      max = std::max(max, v);
      violations += (v > 0.0 && v <= 1.0) ? 0 : 1;
    }
  }
};

VarianceLog g_vars;

Eigen::VectorXd normals(Index n, std::mt19937_64 &rng) {
  std::normal_distribution<double> z;
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) {
    v(i) = z(rng);
  }
  return v;
}

Eigen::MatrixXd design(Index n, Index p, std::mt19937_64 &rng) {
  Eigen::MatrixXd raw(n, p);
  for (Index j = 0; j < p; ++j) {
    raw.col(j) = normals(n, rng);
  }
  return with_intercept(raw);
}

struct RandomConfig {
  LocationSet locs;
  CorrelationModel model;
};

// n in [100, 300], alternating kernel family, nugget cycling {0, .25, .5}.
RandomConfig random_config(int i) {
  std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(i));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index n = 100 + static_cast<Index>(u(rng) * 200.0);
  const double nuggets[] = {0.0, 0.25, 0.5};
  CorrelationModel m;
  m.nugget = nuggets[i % 3];
  m.range = 0.05 + 0.25 * u(rng);
  if (i % 2 == 0) {
    m.family = KernelFamily::Exponential;
    m.smoothness = 0.5;
  } else {
    const double nus[] = {0.5, 1.0, 1.5, 2.1};
    m.family = KernelFamily::Matern;
    m.smoothness = nus[(i / 2) % 4];
  }
  return {oracle::random_locs(n, 2000 + static_cast<std::uint64_t>(i)), m};
}

double max_abs(const Eigen::MatrixXd &m) { return m.cwiseAbs().maxCoeff(); }

Outcome whitening() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const RandomConfig c = random_config(i);
    const Index n = c.locs.size();
    const VecchiaFactors f = compute_factors(c.locs, c.model, n - 1);
    g_vars.record(f);
    const Eigen::MatrixXd a = transform_matrix(f);
    const Eigen::MatrixXd r = oracle::dense_correlation(c.locs, c.model);
    worst = std::max(worst, max_abs(a * r * a.transpose() - Eigen::MatrixXd::Identity(n, n)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-8 && secs < 10.0,
          fmt("20 configs, max |A R A' - I| = %.3g (tol 1e-8), %.2f s (limit 10 s)", worst, secs)};
}

Outcome round_trip() {
  double worst = 0.0;
  Index count = 0;
  for (int i = 0; i < 20; ++i) {
    const RandomConfig c = random_config(i);
    const Index n = c.locs.size();
    std::mt19937_64 rng(static_cast<std::uint64_t>(i));
    const Eigen::VectorXd y = 10.0 * normals(n, rng);
    for (Index cap : {Index{10}, Index{30}, n - 1}) {
      const VecchiaFactors f = compute_factors(c.locs, c.model, cap);
      g_vars.record(f);
      const Eigen::VectorXd yt = decorrelate_response(y, f);
      for (Index p = 0; p < n; ++p) {
        const double back = recorrelate_prediction(yt(p), training_prediction_factors(f, p), y);
        worst = std::max(worst, std::abs(back - y(f.ordering.perm[static_cast<std::size_t>(p)])));
        ++count;
      }
    }
  }
  return {worst <= 1e-10, fmt("%ld points over 60 factorizations, max |error| = %.3g (tol 1e-10)",
                              static_cast<long>(count), worst)};
}

Outcome gls_equivalence() {
  const Index n = 300;
  double worst = 0.0;
  const CorrelationModel models[] = {{KernelFamily::Exponential, 0.236, 0.5, 0.25},
                                     {KernelFamily::Exponential, 0.1, 0.5, 0.0},
                                     {KernelFamily::Matern, 0.15, 1.5, 0.1},
                                     {KernelFamily::Matern, 0.3, 0.8, 0.5}};
  std::uint64_t seed = 1;
  for (const auto &m : models) {
    std::mt19937_64 rng(seed++);
    const LocationSet locs = oracle::random_locs(n, 77 + seed);
    const VecchiaFactors f = compute_factors(locs, m, n - 1);
    g_vars.record(f);
    const Eigen::MatrixXd x = design(n, 4, rng);
    Eigen::VectorXd beta(5);
    beta << 1.0, 2.0, -1.0, 0.5, 0.0;
    const Eigen::VectorXd y = x * beta + 3.0 * normals(n, rng);
    const TransformedDataset t = decorrelate(y, x, f);
    const Eigen::VectorXd ols = t.x.colPivHouseholderQr().solve(t.y);
    const Eigen::VectorXd gls = oracle::gls(x, y, oracle::dense_correlation(locs, m));
    worst = std::max(worst, (ols - gls).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-6, fmt("n = 300, 4 models, max |beta_ols - beta_gls| = %.3g (tol 1e-6)", worst)};
}

Outcome unit_nugget_identity() {
  bool ok = true;
  std::string names;
  for (int s = 1; s <= 3; ++s) {
    SimulationConfig sim;
    sim.scenario = parse_scenario(s);
    sim.n = 500;
    sim.seed = 40 + static_cast<std::uint64_t>(s);
    const SimulatedDataset ds = generate_scenario(sim);
    const SpatialDataset train = ds.data.subset(ds.train);
    const SpatialDataset test = ds.data.subset(ds.test);
    for (LearnerKind kind : {LearnerKind::Linear, LearnerKind::Knn, LearnerKind::BaggedTrees}) {
      LearnerSpec ls;
      ls.kind = kind;
      ls.trees = 16;
      const FittedPipeline p = final_fit(train, {KernelFamily::Exponential, 0.2, 0.5, 1.0}, ls);
      const SpatialDataset ordered = train.subset(p.pipeline.factors().ordering.perm);
      Learner plain(ls);
      plain.fit(ordered.x, ordered.y);
      const bool same = p.pipeline.predict(test.locs, test.x) == plain.predict(test.x) &&
                        p.pipeline.predict(train.locs, train.x) == plain.predict(train.x);
      ok = ok && same;
      if (s == 1) {
        names += (names.empty() ? "" : ", ") + to_string(kind);
      }
    }
  }
  return {ok, "bitwise-equal predictions for " + names + " on 3 scenarios (train and test rows)"};
}

Outcome kernel_anchor() {
  const double anchor = correlation(std::sqrt(2.0) / 2.0, {KernelFamily::Exponential, 0.236, 0.5, 0.0});
  double worst = 0.0;
  for (double range : {0.01, 0.236, 0.842, 5.0}) {
    for (int i = 0; i <= 1000; ++i) {
      const double d = 10.0 * range * i / 1000.0;
      worst = std::max(worst, std::abs(correlation(d, {KernelFamily::Matern, range, 0.5, 0.0}) -
                                       correlation(d, {KernelFamily::Exponential, range, 0.5, 0.0})));
    }
  }
  return {std::abs(anchor - 0.05) <= 0.0005 && worst <= 1e-10,
          fmt("rho(sqrt(2)/2; 0.236) = %.6f (0.05 +- 5e-4), max |matern(1/2) - exp| = %.3g (tol 1e-10)", anchor,
              worst)};
}

Outcome ordering_oracles() {
  Index mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Index n = 50 + static_cast<Index>(seed % 4) * 50;
    const LocationSet locs = seed % 2 ? oracle::random_locs(n, seed) : oracle::lattice_locs(n, seed, 8);
    const Ordering ord = maxmin_order(locs);
    if (ord.perm != oracle::maxmin(locs) || !oracle::maxmin_optimal(locs, ord.perm)) {
      ++mismatches;
      continue;
    }
    for (Index cap : {Index{1}, Index{10}, Index{30}}) {
      const ConditioningSets sets = conditioning_sets(locs, ord, cap);
      const auto want = oracle::conditioning(locs, ord.perm, cap);
      for (Index p = 0; p < n; ++p) {
        if (std::vector<Index>(sets[p].begin(), sets[p].end()) != want[static_cast<std::size_t>(p)]) {
          ++mismatches;
          break;
        }
      }
    }
  }
  return {mismatches == 0,
          fmt("20 seeds, n <= 200, random and lattice layouts, C in {1, 10, 30}: %ld mismatches",
              static_cast<long>(mismatches))};
}

BenchmarkReport benchmark_scenario(int scenario) {
  BenchmarkConfig bc;
  bc.simulation.scenario = parse_scenario(scenario);
  bc.simulation.n = 2000;
  bc.simulation.seed = 2024;
  bc.replicates = 10;
  LearnerSpec lm;
  LearnerSpec knn;
  knn.kind = LearnerKind::Knn;
  LearnerSpec trees;
  trees.kind = LearnerKind::BaggedTrees;
  trees.trees = 32;
  trees.min_leaf = 5;
  bc.learner_grids = {{lm}, default_learner_grid(knn), {trees}};
  return run_benchmark(bc);
}

std::string summarize(const BenchmarkReport &r) {
  std::string s;
  for (const auto &l : r.learners) {
    s += fmt(" %s %.3f/%.3f (%ld wins)", l.name.c_str(), l.spatial_mean(), l.nonspatial_mean(),
             static_cast<long>(l.spatial_wins()));
  }
  return s;
}

Outcome table_direction() {
  const auto t0 = Clock::now();
  const BenchmarkReport s2 = benchmark_scenario(2);
  std::printf("  scenario 2 (spatial/non-spatial mean RMSE):%s, %.0f s\n", summarize(s2).c_str(), s2.total_seconds);
  const BenchmarkReport s3 = benchmark_scenario(3);
  std::printf("  scenario 3:%s, %.0f s\n", summarize(s3).c_str(), s3.total_seconds);
  const BenchmarkReport s1 = benchmark_scenario(1);
  std::printf("  scenario 1:%s, %.0f s\n", summarize(s1).c_str(), s1.total_seconds);
  std::fflush(stdout);
  const double secs = seconds_since(t0);

  const LearnerOutcome &lm2 = s2.learners[0];
  const double ratio = lm2.spatial_mean() / lm2.nonspatial_mean();
  Index min_wins = 10;
  for (const auto &l : s3.learners) {
    min_wins = std::min(min_wins, l.spatial_wins());
  }
  double worst_gap = 0.0;
  for (const auto &l : s1.learners) {
    worst_gap = std::max(worst_gap, std::abs(l.spatial_mean() - l.nonspatial_mean()) / l.nonspatial_mean());
  }
  const bool pass = ratio < 0.8 && min_wins >= 9 && worst_gap <= 0.02 && secs <= 1800.0;
  return {pass, fmt("s2 LM ratio %.3f (< 0.8), s3 min wins %ld/10 (>= 9), s1 max gap %.2f%% (<= 2%%), %.0f s "
                    "(limit 1800 s)",
                    ratio, static_cast<long>(min_wins), 100.0 * worst_gap, secs)};
}

double time_transform(Index n, int repeats) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(n));
  const LocationSet locs = sample_locations(n, rng);
  const Eigen::MatrixXd x = design(n, 10, rng);
  const Eigen::VectorXd y = normals(n, rng);
  const CorrelationModel m{KernelFamily::Exponential, 0.236, 0.5, 0.25};
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    const VecchiaFactors f = compute_factors(locs, m, 30);
    const TransformedDataset t = decorrelate(y, x, f);
    best = std::min(best, seconds_since(t0));
    if (r == 0) {
      g_vars.record(f);
    }
    if (!std::isfinite(t.y.sum())) {
      return 1e300;
    }
  }
  return best;
}

Outcome performance() {
  const double t12 = time_transform(12500, 3);
  const double t25 = time_transform(25000, 3);
  const double t50 = time_transform(50000, 1);
  const double per[] = {t12 / 12500.0, t25 / 25000.0, t50 / 50000.0};
  const double spread = *std::max_element(std::begin(per), std::end(per)) /
                        *std::min_element(std::begin(per), std::end(per));
  return {t50 <= 120.0 && spread <= 3.0,
          fmt("n = 50000, C = 30: %.2f s (limit 120 s); per-point cost 12.5k/25k/50k = %.3g/%.3g/%.3g us, "
              "spread %.2fx (limit 3x)",
              t50, 1e6 * per[0], 1e6 * per[1], 1e6 * per[2], spread)};
}

Outcome variance_bounds() {
  for (int i = 0; i < 10; ++i) {
    const RandomConfig c = random_config(i);
    for (double w : {1e-6, 0.01, 0.99, 1.0}) {
      CorrelationModel m = c.model;
      m.nugget = w;
      g_vars.record(compute_factors(c.locs, m, 30));
    }
  }
  return {g_vars.violations == 0 && g_vars.checked > 0,
          fmt("%ld variances with nugget > 0 in [%.3g, %.3g], %ld outside (0, 1]", static_cast<long>(g_vars.checked),
              g_vars.min, g_vars.max, static_cast<long>(g_vars.violations))};
}

} // namespace

int main(int argc, char **argv) {
  // bounds last: it also audits every factorization made by the others
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"whitening", whitening},
      {"round_trip", round_trip},
      {"gls_equivalence", gls_equivalence},
      {"unit_nugget_identity", unit_nugget_identity},
      {"kernel_anchor", kernel_anchor},
      {"ordering_oracles", ordering_oracles},
      {"table_direction", table_direction},
      {"performance", performance},
      {"variance_bounds", variance_bounds},
  };
  const std::vector<std::string> wanted(argv + 1, argv + argc);
  int failed = 0;
  for (const auto &[name, run] : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) {
      continue;
    }
    Outcome o;
    try {
      o = run();
    } catch (const std::exception &e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
