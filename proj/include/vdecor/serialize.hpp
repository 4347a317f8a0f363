#pragma once

// JSON persistence for factors, learners, pipelines and reports. Each
// top-level document carries "format" and "version"; readers reject other
// values. Doubles round-trip exactly.

#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "vdecor/benchmark.hpp"
#include "vdecor/error.hpp"
#include "vdecor/learners.hpp"
#include "vdecor/tune.hpp"
#include "vdecor/vecchia.hpp"

namespace vdecor {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline json vec_to_json(const Eigen::Ref<const Eigen::VectorXd> &v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vec_from_json(const json &j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

inline json matrix_to_json(const Eigen::Ref<const Eigen::MatrixXd> &m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index c = 0; c < m.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = m(r, c);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json &j, Index cols) {
  Eigen::MatrixXd m(static_cast<Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = j[r].get<std::vector<double>>();
    require(static_cast<Index>(row.size()) == cols, "matrix row has wrong width");
    for (Index c = 0; c < cols; ++c) {
      m(static_cast<Index>(r), c) = row[static_cast<std::size_t>(c)];
    }
  }
  return m;
}

inline void check_header(const json &j, const std::string &format) {
  require(j.is_object() && j.value("format", "") == format,
          "expected a '" + format + "' document");
  require(j.value("version", -1) == kFormatVersion,
          "unsupported " + format + " version (expected " + std::to_string(kFormatVersion) + ")");
}

} // namespace detail

inline json to_json(const CorrelationModel &m) {
  return {{"family", to_string(m.family)},
          {"range", m.range},
          {"smoothness", m.smoothness},
          {"nugget", m.nugget}};
}

inline CorrelationModel model_from_json(const json &j) {
  CorrelationModel m;
  m.family = parse_kernel_family(j.at("family").get<std::string>());
  m.range = j.at("range").get<double>();
  m.smoothness = j.at("smoothness").get<double>();
  m.nugget = j.at("nugget").get<double>();
  m.validate();
  return m;
}

inline json to_json(const LearnerSpec &s) {
  return {{"kind", to_string(s.kind)}, {"k", s.k},       {"trees", s.trees},
          {"min_leaf", s.min_leaf},     {"mtry", s.mtry}, {"seed", s.seed}};
}

inline LearnerSpec learner_spec_from_json(const json &j) {
  LearnerSpec s;
  s.kind = parse_learner_kind(j.at("kind").get<std::string>());
  s.k = j.value("k", s.k);
  s.trees = j.value("trees", s.trees);
  s.min_leaf = j.value("min_leaf", s.min_leaf);
  s.mtry = j.value("mtry", s.mtry);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

inline json to_json(const VecchiaFactors &f) {
  return {{"format", "vdecor-factors"},
          {"version", kFormatVersion},
          {"model", to_json(f.model)},
          {"C", f.cap},
          {"ordering", f.ordering.perm},
          {"offsets", f.sets.offsets},
          {"neighbors", f.sets.neighbors},
          {"weights", f.weights},
          {"vars", f.vars}};
}

inline VecchiaFactors factors_from_json(const json &j) {
  detail::check_header(j, "vdecor-factors");
  VecchiaFactors f;
  f.model = model_from_json(j.at("model"));
  f.cap = j.at("C").get<Index>();
  f.ordering.perm = j.at("ordering").get<std::vector<Index>>();
  f.sets.offsets = j.at("offsets").get<std::vector<std::size_t>>();
  f.sets.neighbors = j.at("neighbors").get<std::vector<Index>>();
  f.sets.cap = f.cap;
  f.weights = j.at("weights").get<std::vector<double>>();
  f.vars = j.at("vars").get<std::vector<double>>();
  const auto n = f.ordering.perm.size();
  detail::require(f.ordering.is_valid(static_cast<Index>(n)), "factors: ordering is not a permutation");
  detail::require(f.sets.offsets.size() == n + 1 && f.vars.size() == n &&
                      f.sets.offsets.back() == f.sets.neighbors.size() &&
                      f.weights.size() == f.sets.neighbors.size(),
                  "factors: inconsistent array lengths");
  return f;
}

inline json to_json(const Learner &l) {
  json j{{"spec", to_json(l.spec())}, {"features", l.feature_count()}};
  std::visit(
      [&](const auto &m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) {
          j["coefficients"] = detail::vec_to_json(m.coefficients());
        } else if constexpr (std::is_same_v<T, KnnRegressor>) {
          j["train_x"] = detail::matrix_to_json(m.train_x());
          j["train_y"] = detail::vec_to_json(m.train_y());
        } else if constexpr (std::is_same_v<T, BaggedTrees>) {
          json forest = json::array();
          for (const auto &tree : m.forest()) {
            json t{{"feature", json::array()}, {"threshold", json::array()},
                   {"left", json::array()},    {"right", json::array()},
                   {"value", json::array()}};
            for (const auto &nd : tree.nodes()) {
              t["feature"].push_back(nd.feature);
              t["threshold"].push_back(nd.threshold);
              t["left"].push_back(nd.left);
              t["right"].push_back(nd.right);
              t["value"].push_back(nd.value);
            }
            forest.push_back(std::move(t));
          }
          j["forest"] = std::move(forest);
        }
      },
      l.state());
  return j;
}

inline Learner learner_from_json(const json &j) {
  const LearnerSpec spec = learner_spec_from_json(j.at("spec"));
  const Index features = j.at("features").get<Index>();
  switch (spec.kind) {
  case LearnerKind::Linear: {
    LinearModel m;
    m.set_coefficients(detail::vec_from_json(j.at("coefficients")));
    detail::require(m.coefficients().size() == features, "linear model: coefficient count mismatch");
    return Learner(spec, std::move(m), features);
  }
  case LearnerKind::Knn: {
    KnnRegressor m(spec.k);
    m.fit(detail::matrix_from_json(j.at("train_x"), features), detail::vec_from_json(j.at("train_y")));
    return Learner(spec, std::move(m), features);
  }
  case LearnerKind::BaggedTrees: {
    std::vector<RegressionTree> forest;
    for (const auto &t : j.at("forest")) {
      const auto feature = t.at("feature").get<std::vector<Index>>();
      const auto threshold = t.at("threshold").get<std::vector<double>>();
      const auto left = t.at("left").get<std::vector<Index>>();
      const auto right = t.at("right").get<std::vector<Index>>();
      const auto value = t.at("value").get<std::vector<double>>();
      const auto count = feature.size();
      detail::require(count >= 1 && threshold.size() == count && left.size() == count &&
                          right.size() == count && value.size() == count,
                      "tree: inconsistent node arrays");
      std::vector<RegressionTree::Node> nodes(count);
      for (std::size_t i = 0; i < count; ++i) {
        nodes[i] = {feature[i], threshold[i], left[i], right[i], value[i]};
        if (feature[i] >= 0) {
          detail::require(feature[i] < features && left[i] > 0 && right[i] > 0 &&
                              static_cast<std::size_t>(left[i]) < count &&
                              static_cast<std::size_t>(right[i]) < count,
                          "tree: node references out of range");
        }
      }
      RegressionTree tree;
      tree.set_nodes(std::move(nodes));
      forest.push_back(std::move(tree));
    }
    BaggedTrees m(spec.trees, spec.min_leaf, spec.mtry, spec.seed);
    m.set_forest(std::move(forest));
    return Learner(spec, std::move(m), features);
  }
  }
  throw InvalidArgument("unknown learner kind");
}

inline json to_json(const SpatialPipeline &p) {
  const SpatialDataset &t = p.training();
  return {{"format", "vdecor-pipeline"},
          {"version", kFormatVersion},
          {"factors", to_json(p.factors())},
          {"dimension", t.locs.dim()},
          {"features", t.feature_count()},
          {"locations", detail::matrix_to_json(t.locs.coords())},
          {"x", detail::matrix_to_json(t.x.rightCols(t.feature_count()))},
          {"y", detail::vec_to_json(t.y)},
          {"learner", to_json(p.learner())}};
}

inline SpatialPipeline pipeline_from_json(const json &j) {
  detail::check_header(j, "vdecor-pipeline");
  const Index d = j.at("dimension").get<Index>();
  const Index p = j.at("features").get<Index>();
  RowMatrix locs = detail::matrix_from_json(j.at("locations"), d);
  SpatialDataset train{LocationSet(std::move(locs)),
                       with_intercept(detail::matrix_from_json(j.at("x"), p)),
                       detail::vec_from_json(j.at("y"))};
  train.validate();
  VecchiaFactors factors = factors_from_json(j.at("factors"));
  detail::require(factors.size() == train.size(), "pipeline: factors do not match training rows");
  Learner learner = learner_from_json(j.at("learner"));
  detail::require(learner.feature_count() == p + 1, "pipeline: learner feature count mismatch");
  return SpatialPipeline(std::move(factors), std::move(train), std::move(learner));
}

inline json to_json(const FitReport &r) {
  return {{"train_rmse", r.train_rmse}, {"learner", to_json(r.spec)}, {"wall_seconds", r.wall_seconds}};
}

inline json to_json(const CvResult &r) {
  json cells = json::array();
  for (const auto &c : r.cells) {
    cells.push_back({{"nugget", c.nugget},
                     {"range", c.range},
                     {"learner", to_json(c.learner)},
                     {"fold_rmse", c.fold_rmse},
                     {"mean_rmse", c.mean_rmse}});
  }
  return {{"format", "vdecor-cv"},
          {"version", kFormatVersion},
          {"cells", std::move(cells)},
          {"best", r.best},
          {"wall_seconds", r.wall_seconds}};
}

inline json to_json(const BenchmarkReport &r) {
  json learners = json::array();
  for (const auto &l : r.learners) {
    json choices = json::array();
    for (const auto &c : l.spatial_choice) {
      choices.push_back({{"nugget", c.nugget}, {"range", c.range}, {"learner", to_json(c.learner)}});
    }
    learners.push_back({{"learner", l.name},
                        {"spatial_rmse", l.spatial_rmse},
                        {"nonspatial_rmse", l.nonspatial_rmse},
                        {"spatial_mean", l.spatial_mean()},
                        {"nonspatial_mean", l.nonspatial_mean()},
                        {"spatial_wins", l.spatial_wins()},
                        {"spatial_choice", std::move(choices)}});
  }
  return {{"format", "vdecor-benchmark"},
          {"version", kFormatVersion},
          {"replicates", r.config.replicates},
          {"learners", std::move(learners)},
          {"spatial_seconds", r.spatial_seconds},
          {"nonspatial_seconds", r.nonspatial_seconds},
          {"total_seconds", r.total_seconds}};
}

inline json read_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw InvalidArgument("cannot open '" + path + "'");
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw InvalidArgument("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::string &path, const json &j) {
  std::ofstream out(path);
  if (!out) {
    throw InvalidArgument("cannot write '" + path + "'");
  }
  out << j.dump(1) << '\n';
}

} // namespace vdecor
