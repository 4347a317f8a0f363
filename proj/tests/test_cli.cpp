#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <cstdlib>
#include <sys/wait.h>

#include "vdecor/csv.hpp"
#include "vdecor/serialize.hpp"

#ifndef VDECOR_CLI_PATH
#error "VDECOR_CLI_PATH must point at the built command-line tool"
#endif

using namespace vdecor;
namespace fs = std::filesystem;

namespace {

struct Exit {
  int code;
  std::string err;
};

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("vdecor_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string &name) const { return (dir_ / name).string(); }

  Exit run(const std::string &args) const {
    const std::string err = path("stderr.txt");
    const std::string cmd = std::string(VDECOR_CLI_PATH) + " " + args + " > " + path("stdout.txt") + " 2> " + err;
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  static std::string slurp(const std::string &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string &name, const std::string &text) const {
    std::ofstream(path(name)) << text;
  }

  // 300-row scenario-2 simulation split into train.csv / test.csv
  void simulate(int n = 300) const {
    ASSERT_EQ(run("simulate --scenario 2 --n " + std::to_string(n) + " --seed 7 --out " + path("sim")).code, 0);
  }

  fs::path dir_;
};

std::vector<std::vector<double>> read_numbers(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      row.push_back(std::stod(cell));
    }
    rows.push_back(row);
  }
  return rows;
}

} // namespace

TEST_F(Cli, SimulateIsByteDeterministic) {
  ASSERT_EQ(run("simulate --scenario 2 --n 500 --seed 7 --out " + path("a")).code, 0);
  const std::string train = slurp(path("a/train.csv"));
  const std::string test = slurp(path("a/test.csv"));
  const std::string side = slurp(path("a/simulation.json"));
  ASSERT_EQ(run("simulate --scenario 2 --n 500 --seed 7 --out " + path("a")).code, 0);
  EXPECT_EQ(slurp(path("a/train.csv")), train);
  EXPECT_EQ(slurp(path("a/test.csv")), test);
  EXPECT_EQ(slurp(path("a/simulation.json")), side);
  const auto count_lines = [](const std::string &s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(count_lines(train) - 1 + count_lines(test) - 1, 500);
  EXPECT_EQ(count_lines(train) - 1, 400);
  EXPECT_EQ(train.substr(0, train.find('\n')), "loc_1,loc_2,x_1,x_2,x_3,x_4,x_5,x_6,x_7,x_8,x_9,x_10,y");
  const json j = json::parse(side);
  EXPECT_EQ(j["config"]["seed"], 7);
  EXPECT_EQ(j["config"]["scenario"], 2);
}

TEST_F(Cli, SimulatedCsvRoundTripsExactly) {
  simulate();
  const CsvTable t = read_csv_file(path("sim/train.csv"), true);
  std::ostringstream out;
  write_csv(out, t.locs, t.features, t.y);
  EXPECT_EQ(out.str(), slurp(path("sim/train.csv")));
}

TEST_F(Cli, UsageErrorsExitOne) {
  Exit r = run("simulate --n 10 --out " + path("x"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--scenario"), std::string::npos) << r.err;
  EXPECT_EQ(run("simulate --scenario 5 --out " + path("x")).code, 1);
  EXPECT_EQ(run("simulate --scenario 1 --bogus 3 --out " + path("x")).code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, UnitNuggetFitMatchesPlainLearner) {
  simulate();
  for (const char *learner : {"linear", "knn", "trees"}) {
    const std::string art = path(std::string(learner) + ".json");
    ASSERT_EQ(run("fit --train " + path("sim/train.csv") + " --artifact " + art + " --range 0.2 --nugget 1 --learner " +
                  learner + " --trees 10")
                  .code,
              0);
    ASSERT_EQ(run("predict --artifact " + art + " --query " + path("sim/test.csv") + " --out " + path("p.csv")).code, 0);
    const auto rows = read_numbers(slurp(path("p.csv")));

    const SpatialDataset train = read_csv_file(path("sim/train.csv"), true).to_dataset();
    const CsvTable test = read_csv_file(path("sim/test.csv"), true);
    const SpatialDataset ordered = train.subset(maxmin_order(train.locs).perm);
    LearnerSpec spec;
    spec.kind = parse_learner_kind(learner);
    spec.trees = 10;
    Learner plain(spec);
    plain.fit(ordered.x, ordered.y);
    const Eigen::VectorXd want = plain.predict(with_intercept(test.features));
    ASSERT_EQ(static_cast<Index>(rows.size()), want.size());
    for (Index i = 0; i < want.size(); ++i) {
      EXPECT_EQ(rows[static_cast<std::size_t>(i)].back(), want(i)) << learner << " row " << i;
    }
  }
}

TEST_F(Cli, RefitGivesIdenticalArtifact) {
  simulate();
  const std::string args = "fit --train " + path("sim/train.csv") + " --range 0.2 --nugget 0.3 --learner trees --trees 6 --seed 4";
  ASSERT_EQ(run(args + " --artifact " + path("a.json")).code, 0);
  ASSERT_EQ(run(args + " --artifact " + path("b.json") + " --threads 3").code, 0);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
}

TEST_F(Cli, FitWritesReportAndSupportsTuning) {
  simulate();
  ASSERT_EQ(run("fit --train " + path("sim/train.csv") + " --artifact " + path("m.json") + " --tune --learner linear" +
                " --nuggets 0.25 1 --ranges 0.1 0.3 --report " + path("r.json"))
                .code,
            0);
  const json r = json::parse(slurp(path("r.json")));
  EXPECT_EQ(r["cv"]["cells"].size(), 4u);
  EXPECT_GE(r["fit"]["train_rmse"].get<double>(), 0.0);
  EXPECT_EQ(r["config"]["tune"], true);
  EXPECT_NO_THROW(pipeline_from_json(read_json_file(path("m.json"))));
}

TEST_F(Cli, MalformedCsvCellNamesRowAndColumn) {
  write("bad.csv", "loc_1,loc_2,x_1,y\n0.1,0.2,1,2\n0.3,0.4,oops,5\n");
  const Exit r = run("fit --train " + path("bad.csv") + " --artifact " + path("m.json") + " --range 0.2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("x_1"), std::string::npos) << r.err;
}

TEST_F(Cli, PredictAtTrainingLocationsInterpolates) {
  simulate(200);
  ASSERT_EQ(run("fit --train " + path("sim/train.csv") + " --artifact " + path("m.json") +
                " --range 0.236 --nugget 0 --C 200 --learner linear")
                .code,
            0);
  ASSERT_EQ(run("predict --artifact " + path("m.json") + " --query " + path("sim/train.csv") + " --out " + path("p.csv")).code, 0);
  const auto pred = read_numbers(slurp(path("p.csv")));
  const CsvTable train = read_csv_file(path("sim/train.csv"), true);
  ASSERT_EQ(static_cast<Index>(pred.size()), train.rows());
  for (Index i = 0; i < train.rows(); ++i) {
    EXPECT_NEAR(pred[static_cast<std::size_t>(i)].back(), train.y(i), 1e-6 * (1.0 + std::abs(train.y(i))));
  }
}

TEST_F(Cli, EmptyQueryAndSchemaMismatch) {
  simulate();
  ASSERT_EQ(run("fit --train " + path("sim/train.csv") + " --artifact " + path("m.json") + " --range 0.2").code, 0);
  write("empty.csv", "loc_1,loc_2,x_1,x_2,x_3,x_4,x_5,x_6,x_7,x_8,x_9,x_10\n");
  ASSERT_EQ(run("predict --artifact " + path("m.json") + " --query " + path("empty.csv") + " --out " + path("p.csv")).code, 0);
  EXPECT_EQ(slurp(path("p.csv")), "loc_1,loc_2,y_pred\n");
  write("narrow.csv", "loc_1,loc_2,x_1,x_2\n0.5,0.5,1,2\n");
  const Exit r = run("predict --artifact " + path("m.json") + " --query " + path("narrow.csv"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("features"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigFileStrictAndOverriddenByFlags) {
  simulate();
  write("cfg.json", R"({"version": 1, "range": 0.2, "nugget": 0.5, "C": 10})");
  ASSERT_EQ(run("transform --config " + path("cfg.json") + " --train " + path("sim/train.csv") + " --out " + path("t.csv") +
                " --nugget 0.25 --factors-out " + path("f.json"))
                .code,
            0);
  const VecchiaFactors f = factors_from_json(read_json_file(path("f.json")));
  EXPECT_EQ(f.model.nugget, 0.25);
  EXPECT_EQ(f.model.range, 0.2);
  EXPECT_EQ(f.cap, 10);

  write("unknown.json", R"({"version": 1, "range": 0.2, "colour": "red"})");
  Exit r = run("transform --config " + path("unknown.json") + " --train " + path("sim/train.csv") + " --out " + path("t.csv"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
  write("noversion.json", R"({"range": 0.2})");
  EXPECT_EQ(run("transform --config " + path("noversion.json") + " --train " + path("sim/train.csv") + " --out " + path("t.csv")).code, 1);
  write("badtype.json", R"({"version": 1, "range": "wide"})");
  EXPECT_EQ(run("transform --config " + path("badtype.json") + " --train " + path("sim/train.csv") + " --out " + path("t.csv")).code, 1);
  write("broken.json", "{");
  EXPECT_EQ(run("transform --config " + path("broken.json") + " --train " + path("sim/train.csv") + " --out " + path("t.csv")).code, 1);
}

TEST_F(Cli, TransformMatchesLibraryExactly) {
  simulate();
  ASSERT_EQ(run("transform --train " + path("sim/train.csv") + " --range 0.15 --nugget 0.2 --kernel matern --smoothness 1.5" +
                " --out " + path("t.csv") + " --factors-out " + path("f.json"))
                .code,
            0);
  const SpatialDataset d = read_csv_file(path("sim/train.csv"), true).to_dataset();
  const VecchiaFactors f = compute_factors(d.locs, {KernelFamily::Matern, 0.15, 1.5, 0.2}, kDefaultNeighbors);
  const VecchiaFactors g = factors_from_json(read_json_file(path("f.json")));
  EXPECT_EQ(g.vars, f.vars);
  EXPECT_EQ(g.weights, f.weights);
  const TransformedDataset t = decorrelate(d.y, d.x, f);
  const auto rows = read_numbers(slurp(path("t.csv")));
  ASSERT_EQ(static_cast<Index>(rows.size()), d.size());
  for (Index p = 0; p < d.size(); ++p) {
    const auto &row = rows[static_cast<std::size_t>(p)];
    EXPECT_EQ(static_cast<Index>(row[0]), f.ordering.perm[static_cast<std::size_t>(p)]);
    for (Index c = 0; c < t.x.cols(); ++c) {
      EXPECT_EQ(row[static_cast<std::size_t>(1 + c)], t.x(p, c));
    }
    EXPECT_EQ(row.back(), t.y(p));
  }
}

TEST_F(Cli, NumericalFailureExitsTwo) {
  simulate();
  const Exit r = run("transform --train " + path("sim/train.csv") + " --kernel matern --smoothness 200 --range 0.3 --out " +
                    path("t.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Matern"), std::string::npos) << r.err;
}

TEST_F(Cli, TuneAndBenchmarkReports) {
  simulate();
  ASSERT_EQ(run("tune --train " + path("sim/train.csv") + " --learner linear knn --k 5 --nuggets 0.5 1 --ranges 0.2 --out " +
                path("cv.json"))
                .code,
            0);
  const json cv = json::parse(slurp(path("cv.json")));
  EXPECT_EQ(cv["cells"].size(), 12u); // 2 nuggets x (1 linear + 5 knn)
  ASSERT_EQ(run("benchmark --scenario 1 --n 200 --replicates 2 --learner linear --nuggets 0.5 1 --ranges 0.1 --report " +
                path("b.json"))
                .code,
            0);
  const json b = json::parse(slurp(path("b.json")));
  EXPECT_EQ(b["replicates"], 2);
  EXPECT_EQ(b["learners"][0]["spatial_rmse"].size(), 2u);
  EXPECT_EQ(b["config"]["n"], 200);
  EXPECT_GE(b["learners"][0]["spatial_mean"].get<double>(), 0.0);
}

TEST_F(Cli, LogVerbosityFromEnvironment) {
  const std::string args = "simulate --scenario 1 --n 20 --out " + path("q");
  ::unsetenv("VDECOR_LOG");
  EXPECT_EQ(run(args).err, "");
  ::setenv("VDECOR_LOG", "info", 1);
  const Exit r = run(args);
  ::unsetenv("VDECOR_LOG");
  EXPECT_NE(r.err.find("[vdecor info]"), std::string::npos) << r.err;
}
