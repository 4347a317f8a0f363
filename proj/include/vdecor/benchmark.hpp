#pragma once

// Spatial-vs-non-spatial comparison on simulated replicates. The non-spatial
// arm is the same pipeline with the nugget pinned at 1, which makes the
// transform the identity, so both arms share every other code path.

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "vdecor/dataset.hpp"
#include "vdecor/learners.hpp"
#include "vdecor/simgen.hpp"
#include "vdecor/tune.hpp"

namespace vdecor {

struct BenchmarkConfig {
  SimulationConfig simulation;
  Index replicates = 10;
  Index folds = 5;
  Index neighbors = kDefaultNeighbors;
  KernelFamily family = KernelFamily::Exponential;
  double smoothness = 0.5;
  std::vector<double> nuggets{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> ranges; // empty: default_ranges of each replicate
  // One entry per learner family; each inner list is its hyperparameter grid.
  std::vector<std::vector<LearnerSpec>> learner_grids;
  unsigned threads = 1;
};

struct LearnerOutcome {
  std::string name;
  std::vector<double> spatial_rmse;
  std::vector<double> nonspatial_rmse;
  std::vector<CvCell> spatial_choice;

  double mean(const std::vector<double> &v) const {
    double s = 0.0;
    for (double x : v) {
      s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
  double spatial_mean() const { return mean(spatial_rmse); }
  double nonspatial_mean() const { return mean(nonspatial_rmse); }
  Index spatial_wins() const {
    Index w = 0;
    for (std::size_t i = 0; i < spatial_rmse.size(); ++i) {
      w += spatial_rmse[i] < nonspatial_rmse[i] ? 1 : 0;
    }
    return w;
  }
};

struct BenchmarkReport {
  BenchmarkConfig config;
  std::vector<LearnerOutcome> learners;
  double spatial_seconds = 0.0;
  double nonspatial_seconds = 0.0;
  double total_seconds = 0.0;
};

namespace detail {

// One CV run over every learner family; each family then takes its own best
// cell and is refit and scored on the test rows.
inline void score_arm(const SpatialDataset &train, const SpatialDataset &test,
                      const std::vector<double> &nuggets, const std::vector<double> &ranges,
                      const BenchmarkConfig &cfg, const CvOptions &opt, std::vector<double> &rmse_out,
                      std::vector<CvCell> *choice_out) {
  TuningGrid grid{nuggets, ranges, {}};
  for (const auto &g : cfg.learner_grids) {
    grid.learners.insert(grid.learners.end(), g.begin(), g.end());
  }
  const CvResult cv = cross_validate(train, grid, opt);
  for (std::size_t li = 0; li < cfg.learner_grids.size(); ++li) {
    const LearnerKind kind = cfg.learner_grids[li].front().kind;
    const std::size_t best =
        best_cell_index(cv.cells, [&](const CvCell &c) { return c.learner.kind == kind; });
    const FittedPipeline fitted = final_fit(train, cv.cells[best], opt);
    rmse_out[li] = rmse(fitted.pipeline.predict(test.locs, test.x, opt.threads), test.y);
    if (choice_out) {
      (*choice_out)[li] = cv.cells[best];
    }
  }
}

} // namespace detail

inline BenchmarkReport run_benchmark(const BenchmarkConfig &cfg) {
  detail::require(cfg.replicates >= 1, "need at least one replicate");
  detail::require(!cfg.learner_grids.empty(), "benchmark needs at least one learner");
  const auto start = std::chrono::steady_clock::now();
  BenchmarkReport report;
  report.config = cfg;
  for (const auto &g : cfg.learner_grids) {
    detail::require(!g.empty(), "empty learner grid");
    for (const auto &spec : g) {
      detail::require(spec.kind == g.front().kind, "a learner grid must hold a single learner kind");
    }
    for (const auto &seen : report.learners) {
      detail::require(seen.name != to_string(g.front().kind), "learner kinds must be distinct");
    }
    report.learners.push_back(LearnerOutcome{to_string(g.front().kind)});
  }
  const std::size_t families = cfg.learner_grids.size();

  for (Index rep = 0; rep < cfg.replicates; ++rep) {
    SimulationConfig sim = cfg.simulation;
    sim.seed = cfg.simulation.seed + static_cast<std::uint64_t>(rep) * 7919u;
    const SimulatedDataset ds = generate_scenario(sim);
    const SpatialDataset train = ds.data.subset(ds.train);
    const SpatialDataset test = ds.data.subset(ds.test);

    CvOptions opt;
    opt.folds = cfg.folds;
    opt.seed = sim.seed + 1;
    opt.neighbors = cfg.neighbors;
    opt.family = cfg.family;
    opt.smoothness = cfg.smoothness;
    opt.threads = cfg.threads;
    const std::vector<double> ranges = cfg.ranges.empty() ? default_ranges(train.locs) : cfg.ranges;

    std::vector<double> spatial(families);
    std::vector<double> plain(families);
    std::vector<CvCell> choice(families);
    const auto t0 = std::chrono::steady_clock::now();
    detail::score_arm(train, test, cfg.nuggets, ranges, cfg, opt, spatial, &choice);
    const auto t1 = std::chrono::steady_clock::now();
    detail::score_arm(train, test, {1.0}, {ranges.front()}, cfg, opt, plain, nullptr);
    const auto t2 = std::chrono::steady_clock::now();
    for (std::size_t li = 0; li < families; ++li) {
      LearnerOutcome &out = report.learners[li];
      out.spatial_rmse.push_back(spatial[li]);
      out.nonspatial_rmse.push_back(plain[li]);
      out.spatial_choice.push_back(choice[li]);
    }
    report.spatial_seconds += std::chrono::duration<double>(t1 - t0).count();
    report.nonspatial_seconds += std::chrono::duration<double>(t2 - t1).count();
  }
  report.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

} // namespace vdecor
