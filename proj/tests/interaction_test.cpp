#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "instopt/error.hpp"
#include "instopt/interaction.hpp"
#include "instopt/rng.hpp"

using namespace instopt;

namespace {

ScoreMatrix planted(const std::vector<double>& g, double noise = 0.0, std::uint64_t seed = 5) {
  SyntheticScoreSpec spec;
  for (std::size_t i = 0; i < g.size(); ++i) spec.categories.push_back("c" + std::to_string(i));
  spec.instances_per_category = 30;
  spec.seed = seed;
  spec.addition_gain.assign(g.size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) spec.addition_gain[i][j] = g[i];
  }
  spec.addition_noise_sd = noise;
  return generate_synthetic_scores(spec);
}

// Average linkage by brute force over original points.
struct NaiveMerge {
  std::set<std::size_t> members;
  double height;
};
std::vector<NaiveMerge> naive_upgma(const std::vector<std::vector<double>>& d) {
  std::vector<std::set<std::size_t>> clusters;
  for (std::size_t i = 0; i < d.size(); ++i) clusters.push_back({i});
  std::vector<NaiveMerge> merges;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double sum = 0;
        for (auto x : clusters[a]) {
          for (auto y : clusters[b]) sum += d[x][y];
        }
        const double avg = sum / static_cast<double>(clusters[a].size() * clusters[b].size());
        if (avg < best - 1e-12) {
          best = avg;
          ba = a;
          bb = b;
        }
      }
    }
    clusters[ba].insert(clusters[bb].begin(), clusters[bb].end());
    merges.push_back({clusters[ba], best});
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  return merges;
}

}  // namespace

TEST(Coefficient, WorkedExample) {
  const auto cell = equivalence_coefficient({-2, -3}, {-1.5, -2.5}, {-1, -2});
  EXPECT_DOUBLE_EQ(cell.gamma, 0.5);
  EXPECT_EQ(cell.retained, 2u);
  EXPECT_EQ(cell.skipped, 0u);
}

TEST(Coefficient, SkipsNearZeroDenominators) {
  const auto cell = equivalence_coefficient({-2, -2}, {-1, -1.5}, {-2, -1});
  EXPECT_EQ(cell.skipped, 1u);
  EXPECT_EQ(cell.retained, 1u);
  EXPECT_DOUBLE_EQ(cell.gamma, 0.5);
  try {
    equivalence_coefficient({-2, -2}, {-1, -1}, {-2, -2});
    FAIL();
  } catch (const UndefinedResultError& e) {
    EXPECT_EQ(e.skipped(), 2u);
  }
  EXPECT_THROW(equivalence_coefficient({-2}, {-1, -1}, {-2}), ValidationError);
}

TEST(Coefficient, AggregationVariants) {
  const std::vector<double> base = {0, 0, 0, 0};
  const std::vector<double> ai = {1, 1, 1, 10};
  const std::vector<double> aj = {1, 1, 1, 1};
  EquivalenceOptions o;
  EXPECT_DOUBLE_EQ(equivalence_coefficient(base, ai, aj, o).gamma, 13.0 / 4.0);
  o.aggregation = RatioAggregation::ratio_of_means;
  EXPECT_DOUBLE_EQ(equivalence_coefficient(base, ai, {1, 1, 1, 3}, o).gamma, 13.0 / 6.0);
  o.aggregation = RatioAggregation::per_instance_mean;
  o.winsorize = Winsorization{0.0, 0.5};
  // Ratios {1,1,1,10}; the median clamps the outlier.
  EXPECT_DOUBLE_EQ(equivalence_coefficient(base, ai, aj, o).gamma, 1.0);
  o.winsorize.reset();
  o.size_ratio = 2.0;
  EXPECT_DOUBLE_EQ(equivalence_coefficient(base, ai, aj, o).gamma, 13.0 / 2.0);
}

TEST(Matrix, RecoversPlantedRatiosExactly) {
  const std::vector<double> g = {1.0, 2.5, 0.4, 7.0};
  const auto m = planted(g);
  const auto gm = build_equivalence_matrix(m);
  ASSERT_EQ(gm.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(gm.gamma[i][i], 1.0);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(gm.gamma[i][j], g[i] / g[j], 1e-9);
      EXPECT_NEAR(gm.gamma[i][j] * gm.gamma[j][i], 1.0, 1e-9);
    }
  }
}

TEST(Matrix, ThreadedEqualsSerialAndSizeRatio) {
  const auto m = planted({1.0, 2.0, 3.0, 4.0, 5.0}, 0.05);
  const auto serial = build_equivalence_matrix(m, {}, 1);
  const auto threaded = build_equivalence_matrix(m, {}, 4);
  EXPECT_EQ(serial.gamma, threaded.gamma);
  EXPECT_EQ(serial.skipped, threaded.skipped);
  EquivalenceOptions o;
  o.addition_sizes = {{"c0", 100}, {"c1", 50}, {"c2", 100}, {"c3", 100}, {"c4", 100}};
  const auto scaled = build_equivalence_matrix(m, o);
  EXPECT_TRUE(scaled.size_ratio_applied);
  EXPECT_NEAR(scaled.gamma[0][1], serial.gamma[0][1] * 0.5, 1e-12);
  EXPECT_NEAR(scaled.gamma[1][0], serial.gamma[1][0] * 2.0, 1e-12);
  EXPECT_EQ(scaled.gamma[1][1], 1.0);
  o.addition_sizes.erase("c4");
  EXPECT_THROW(build_equivalence_matrix(m, o), ValidationError);
}

TEST(Matrix, MissingAdditionVariantIsAnError) {
  SyntheticScoreSpec spec;
  spec.categories = {"a", "b"};
  spec.instances_per_category = 3;
  spec.ablation_ppl_shift = {{0, 0}, {0, 0}};
  EXPECT_THROW(build_equivalence_matrix(generate_synthetic_scores(spec)), ValidationError);
}

TEST(MatrixIo, CsvRoundTripAndSvg) {
  const auto gm = build_equivalence_matrix(planted({1.0, 3.0, 0.7}, 0.02));
  std::stringstream s;
  write_equivalence_csv(s, gm, "# prov");
  const auto back = read_equivalence_csv(s);
  EXPECT_EQ(back.categories, gm.categories);
  EXPECT_EQ(back.gamma, gm.gamma);
  std::ostringstream svg;
  EquivalenceMatrix named = gm;
  named.categories[0] = "Humanities & Social Sciences QA";
  write_equivalence_svg(svg, named, "# prov");
  const auto text = svg.str();
  EXPECT_EQ(text.rfind("<svg", 0), 0u);
  EXPECT_NE(text.find("Humanities &amp; Social Sciences QA"), std::string::npos);
  EXPECT_NE(text.find("1.00"), std::string::npos);
  EXPECT_NE(text.find("</svg>"), std::string::npos);
  std::stringstream bad("category,a,b\na,1\n");
  EXPECT_THROW(read_equivalence_csv(bad), ValidationError);
}

TEST(CorrelationDistance, Basics) {
  EXPECT_NEAR(correlation_distance({1, 2, 3}, {2, 4, 6}), 0.0, 1e-12);
  EXPECT_NEAR(correlation_distance({1, 2, 3}, {3, 2, 1}), 2.0, 1e-12);
  EXPECT_NEAR(correlation_distance({1, 1, 1}, {1, 2, 3}), 1.0, 1e-12);
}

TEST(MetaGroups, MatchesNaiveAverageLinkage) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.below(8);
    EquivalenceMatrix g;
    g.gamma.assign(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      g.categories.push_back("k" + std::to_string(i));
      for (std::size_t j = 0; j < n; ++j) g.gamma[i][j] = i == j ? 1.0 : rng.normal();
    }
    std::vector<std::vector<double>> d(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i][j] = correlation_distance(g.gamma[i], g.gamma[j]);
    }
    const auto oracle = naive_upgma(d);
    const auto got = cluster_meta_groups(g, 2);
    ASSERT_EQ(got.dendrogram.size(), n - 1);
    for (std::size_t t = 0; t < n - 1; ++t) {
      EXPECT_NEAR(got.dendrogram[t].height, oracle[t].height, 1e-9);
      EXPECT_EQ(got.dendrogram[t].size, oracle[t].members.size());
    }
    // The two-group cut is the state before the last merge.
    const auto& last = oracle.back().members;
    std::set<std::size_t> group0;
    for (std::size_t i = 0; i < n; ++i) {
      if (got.assignment[i] == got.assignment[0]) group0.insert(i);
    }
    EXPECT_EQ(got.groups, 2u);
    EXPECT_EQ(got.assignment[0], 0u);
    EXPECT_LT(group0.size(), last.size());
  }
}

TEST(MetaGroups, RecoversPlantedBlocks) {
  // Two blocks of rows with opposite profiles.
  EquivalenceMatrix g;
  const std::size_t n = 8;
  g.gamma.assign(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    g.categories.push_back("c" + std::to_string(i));
    for (std::size_t j = 0; j < n; ++j) {
      const bool same = (i < 4) == (j < 4);
      g.gamma[i][j] = i == j ? 1.0 : same ? 0.6 + 0.01 * static_cast<double>(j) : -0.2;
    }
  }
  const auto grouping = cluster_meta_groups(g, 2);
  EXPECT_EQ(grouping.assignment, (std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1, 1}));
  std::ostringstream out;
  write_meta_groups(out, grouping, R"({"tool":"instopt"})");
  EXPECT_NE(out.str().find("\"dendrogram\""), std::string::npos);
  EXPECT_THROW(cluster_meta_groups(g, 0), ValidationError);
  EXPECT_THROW(cluster_meta_groups(g, 9), ValidationError);
}
