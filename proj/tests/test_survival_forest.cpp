#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "support.hpp"
#include "transport/error.hpp"
#include "transport/logrank.hpp"

using namespace testing;

namespace {

SurvivalData forest_data(std::uint64_t seed, std::size_t n, std::size_t p, bool coarse_times) {
  Rng rng(seed);
  std::vector<std::vector<double>> x(n, std::vector<double>(p));
  std::vector<double> time(n);
  std::vector<bool> event(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      // Column 1 is coarse so threshold ties and repeated values occur.
      x[i][j] = j == 1 ? static_cast<double>(rng.below(4)) : rng.normal(0, 1);
    }
    const double rate = 0.2 * std::exp(0.8 * x[i][0]);
    double t = rng.exponential(rate);
    const double c = rng.exponential(0.1);
    event[i] = t <= c;
    t = std::min(t, c);
    time[i] = coarse_times ? std::ceil(t * 2) / 2 : t;
  }
  return survival_data(x, time, event);
}

std::string bytes(const SurvivalForest& f) {
  std::ostringstream out;
  f.write(out);
  return out.str();
}

double nelson_aalen_risk(const std::vector<double>& time, const std::vector<bool>& event,
                         const std::vector<double>& mult, double horizon) {
  std::vector<double> grid;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i] && mult[i] > 0 && time[i] <= horizon) grid.push_back(time[i]);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  double chf = 0;
  for (double t : grid) {
    double n = 0, d = 0;
    for (std::size_t i = 0; i < time.size(); ++i) {
      if (time[i] >= t) n += mult[i];
      if (time[i] == t && event[i]) d += mult[i];
    }
    chf += d / n;
  }
  return 1 - std::exp(-chf);
}

struct BruteSplit {
  int column = -1;
  double threshold = 0;
  double statistic = 0;
};

/// Every midpoint of every column, scored with the direct log-rank loop on
/// the expanded bag, subject to the child size and event minima.
BruteSplit brute_force_split(const SurvivalData& d, const std::vector<std::uint32_t>& bag, int min_size,
                             int min_events) {
  std::vector<double> times;
  std::vector<bool> events;
  for (auto r : bag) {
    times.push_back(d.time[r]);
    events.push_back(d.event[r]);
  }
  BruteSplit best;
  for (std::size_t c = 0; c < d.x.cols(); ++c) {
    std::vector<double> values;
    for (auto r : bag) values.push_back(d.x(r, c));
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
      const double thr = values[k] + (values[k + 1] - values[k]) / 2.0;
      std::vector<bool> left;
      int n_left = 0, e_left = 0, e_total = 0;
      for (auto r : bag) {
        const bool l = d.x(r, c) <= thr;
        left.push_back(l);
        n_left += l;
        e_left += l && d.event[r];
        e_total += d.event[r];
      }
      const int n_right = static_cast<int>(bag.size()) - n_left;
      if (n_left < min_size || n_right < min_size) continue;
      if (e_left < min_events || e_total - e_left < min_events) continue;
      const double stat = brute_force_logrank(left, times, events);
      if (stat > 1e-10 && stat > best.statistic) best = {static_cast<int>(c), thr, stat};
    }
  }
  return best;
}

}  // namespace

TEST_CASE("forest params validation") {
  ForestParams p;
  CHECK(p.n_trees == 500);
  CHECK(p.resolve_mtry(9) == 3);
  CHECK(p.resolve_mtry(10) == 4);
  p.mtry = 11;
  CHECK_THROWS_AS(p.resolve_mtry(10), Error);
  p = {};
  p.n_trees = 0;
  CHECK_THROWS_AS(p.resolve_mtry(3), Error);
  p = {};
  p.max_depth = -1;
  CHECK_THROWS_AS(p.resolve_mtry(3), Error);
}

TEST_CASE("zero events is an error") {
  auto d = survival_data({{0.0}, {1.0}, {2.0}}, {1, 2, 3}, {false, false, false});
  CHECK_THROWS_WITH(SurvivalForest::fit(d, ForestParams{}), "cannot fit survival model with no events");
}

TEST_CASE("single-row cohort gives a root leaf with the one-subject hazard") {
  auto d = survival_data({{0.5}}, {2.0}, {true});
  ForestParams p;
  p.n_trees = 3;
  p.seed = 11;
  auto f = SurvivalForest::fit(d, p);
  REQUIRE(f.trees().size() == 3);
  for (const auto& t : f.trees()) {
    REQUIRE(t.nodes().size() == 1);
    REQUIRE(t.leaves().size() == 1);
    CHECK(t.leaves()[0].times == std::vector<double>{2.0});
    CHECK(t.leaves()[0].chf == std::vector<double>{1.0});
  }
  const std::vector<double> x{0.5};
  CHECK(f.predict_risk(x, 1.0) == 0.0);
  CHECK(f.predict_risk(x, 2.0) == doctest::Approx(1 - std::exp(-1.0)).epsilon(1e-15));
  CHECK(f.predict_risk(x, 3.0) == doctest::Approx(0.6321205588285577).epsilon(1e-15));
}

TEST_CASE("leaf with no events predicts zero risk") {
  SurvivalTree t({SurvivalTree::Node{}}, {SurvivalTree::Leaf{}}, {1});
  const std::vector<double> x{3.0};
  for (double h : {0.1, 1.0, 100.0}) CHECK(t.risk(x, h) == 0.0);
}

TEST_CASE("max_depth 0 collapses to the bagged marginal Nelson-Aalen risk") {
  auto d = forest_data(3, 60, 2, true);
  ForestParams p;
  p.n_trees = 1;
  p.max_depth = 0;
  p.seed = 5;
  auto f = SurvivalForest::fit(d, p);
  const auto& tree = f.trees()[0];
  REQUIRE(tree.nodes().size() == 1);
  // Ids are already in canonical order, so the in-bag table lines up with d.
  std::vector<double> mult(tree.inbag().begin(), tree.inbag().end());
  for (double h : {0.5, 2.0, 7.5}) {
    const double expected = nelson_aalen_risk(d.time, d.event, mult, h);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(f.predict_risk(d.x, i, h) == doctest::Approx(expected).epsilon(1e-13));
    }
  }
}

TEST_CASE("six-row dataset: root splits on the separating binary covariate") {
  // Columns: z (binary), u (noise). Enumerated splits: z<=0.5 scores
  // 1369/271; the best u split scores 361/269.
  auto d = survival_data({{1, 0.3}, {1, 0.9}, {1, 0.1}, {0, 0.7}, {0, 0.4}, {0, 0.2}}, {1, 2, 3, 4, 5, 6},
                         {true, true, true, true, false, true});
  ForestParams p;
  p.mtry = 2;
  p.min_node_size = 1;
  p.min_node_events = 1;
  p.max_depth = 1;
  Rng rng(1);
  auto tree = SurvivalTree::grow(d, {0, 1, 2, 3, 4, 5}, p, rng);
  REQUIRE(tree.nodes().size() == 3);
  CHECK(tree.nodes()[0].column == 0);
  CHECK(tree.nodes()[0].threshold == 0.5);

  std::vector<bool> z_left{false, false, false, true, true, true};
  CHECK(logrank_statistic(z_left, d.time, d.event) == doctest::Approx(1369.0 / 271.0).epsilon(1e-12));
  std::vector<bool> u_left{true, false, true, true, true, true};
  CHECK(logrank_statistic(u_left, d.time, d.event) == doctest::Approx(361.0 / 269.0).epsilon(1e-12));
}

TEST_CASE("incremental split scan agrees with brute-force enumeration") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const bool coarse = seed % 2 == 0;
    auto d = forest_data(seed, 70, 3, coarse);
    ForestParams p;
    p.mtry = 3;
    p.min_node_size = 5;
    p.min_node_events = 2;
    p.max_depth = 1;

    std::vector<std::uint32_t> bag(d.size());
    if (seed % 3 == 0) {
      std::iota(bag.begin(), bag.end(), 0u);
    } else {
      Rng b(seed + 100);
      for (auto& r : bag) r = static_cast<std::uint32_t>(b.below(d.size()));
    }
    Rng rng(seed);
    auto tree = SurvivalTree::grow(d, bag, p, rng);
    auto expected = brute_force_split(d, bag, p.min_node_size, p.min_node_events);
    CAPTURE(seed);
    if (expected.column < 0) {
      CHECK(tree.nodes().size() == 1);
      continue;
    }
    REQUIRE(tree.nodes().size() == 3);
    CHECK(tree.nodes()[0].column == expected.column);
    CHECK(tree.nodes()[0].threshold == doctest::Approx(expected.threshold).epsilon(1e-12));
    Rng again(seed);
    const auto split = best_split(d, bag, p, again);
    REQUIRE(split.has_value());
    CHECK(split->statistic == doctest::Approx(expected.statistic).epsilon(1e-10));
  }
}

TEST_CASE("child constraints hold in every leaf") {
  auto d = forest_data(21, 300, 3, false);
  ForestParams p;
  p.n_trees = 5;
  p.seed = 2;
  auto f = SurvivalForest::fit(d, p);
  for (const auto& tree : f.trees()) {
    std::vector<int> size(tree.leaves().size(), 0), events(tree.leaves().size(), 0);
    for (std::size_t r = 0; r < d.size(); ++r) {
      const auto& leaf = tree.leaf_for(d.x.row(r));
      const auto idx = static_cast<std::size_t>(&leaf - tree.leaves().data());
      size[idx] += tree.inbag()[r];
      events[idx] += d.event[r] ? tree.inbag()[r] : 0;
    }
    if (tree.leaves().size() == 1) continue;
    for (std::size_t l = 0; l < size.size(); ++l) {
      CHECK(size[l] >= p.min_node_size);
      CHECK(events[l] >= p.min_node_events);
    }
  }
}

TEST_CASE("leaf hazards are nondecreasing and non-negative") {
  auto d = forest_data(8, 200, 2, true);
  ForestParams p;
  p.n_trees = 20;
  auto f = SurvivalForest::fit(d, p);
  for (const auto& tree : f.trees()) {
    for (const auto& leaf : tree.leaves()) {
      CHECK(std::is_sorted(leaf.times.begin(), leaf.times.end()));
      CHECK(std::adjacent_find(leaf.times.begin(), leaf.times.end()) == leaf.times.end());
      for (std::size_t k = 0; k < leaf.chf.size(); ++k) {
        CHECK(leaf.chf[k] > 0);
        if (k > 0) CHECK(leaf.chf[k] >= leaf.chf[k - 1]);
      }
    }
  }
}

TEST_CASE("prediction is the mean of tree risks, bounded and monotone in horizon") {
  auto d = forest_data(4, 150, 3, false);
  ForestParams p;
  p.n_trees = 40;
  p.seed = 9;
  auto f = SurvivalForest::fit(d, p);
  for (std::size_t i = 0; i < d.size(); i += 7) {
    double prev = 0;
    for (double h : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 50.0}) {
      const auto risks = f.tree_risks(d.x.row(i), h);
      REQUIRE(risks.size() == 40);
      double sum = 0;
      for (double r : risks) sum += r;
      const double r = f.predict_risk(d.x, i, h);
      CHECK(r == doctest::Approx(sum / 40).epsilon(1e-15));
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
      CHECK(r >= prev);
      prev = r;
    }
  }
  CHECK_THROWS_AS(f.predict_risk(d.x, 0, 0.0), Error);
  ModelMatrix other(d.x.cols(), std::vector<double>(d.x.cols(), 0.0), 999);
  CHECK_THROWS_AS(f.predict_risk(other, 0, 1.0), Error);
}

TEST_CASE("out-of-bag predictions") {
  auto d = forest_data(5, 200, 2, false);
  ForestParams p;
  p.n_trees = 500;
  p.seed = 17;
  auto f = SurvivalForest::fit(d, p);

  double oob = 0;
  for (const auto& tree : f.trees()) {
    for (std::size_t r = 0; r < d.size(); ++r) oob += tree.is_oob(r) ? 1 : 0;
  }
  const double fraction = oob / (500.0 * 200.0);
  // A row is left out of one bootstrap draw with probability (1 - 1/n)^n.
  CHECK(std::abs(fraction - std::pow(1 - 1 / 200.0, 200)) < 0.05);

  for (std::size_t r = 0; r < d.size(); r += 13) {
    double sum = 0;
    std::size_t count = 0;
    for (const auto& tree : f.trees()) {
      if (!tree.is_oob(r)) continue;
      sum += tree.risk(d.x.row(r), 3.0);
      ++count;
    }
    CHECK(f.oob_tree_count(r) == count);
    CHECK(f.predict_risk_oob(r, 3.0) == doctest::Approx(sum / static_cast<double>(count)).epsilon(1e-15));
  }

  // With very few trees some rows are OOB in exactly one tree or in none.
  p.n_trees = 2;
  auto small = SurvivalForest::fit(d, p);
  bool saw_single = false, saw_none = false;
  for (std::size_t r = 0; r < d.size(); ++r) {
    const auto count = small.oob_tree_count(r);
    if (count == 0) {
      saw_none = true;
      CHECK_THROWS_WITH(small.predict_risk_oob(r, 3.0), "no OOB trees");
      CHECK_FALSE(small.try_predict_risk_oob(r, 3.0).has_value());
    } else if (count == 1) {
      saw_single = true;
      const auto& tree = small.trees()[small.trees()[0].is_oob(r) ? 0 : 1];
      CHECK(small.predict_risk_oob(r, 3.0) == tree.risk(d.x.row(r), 3.0));
    }
  }
  CHECK(saw_single);
  CHECK(saw_none);
}

TEST_CASE("pure leaves on noiseless data without censoring") {
  // Event time is a deterministic function of x; one tree grown to single
  // rows. The leaf's Nelson-Aalen hazard reaches at least 1 at the last
  // event time, and the risk equals 1 - exp(-CHF).
  std::vector<std::vector<double>> x;
  std::vector<double> time;
  std::vector<bool> event;
  for (int i = 0; i < 24; ++i) {
    x.push_back({static_cast<double>(i)});
    time.push_back(1.0 + i * 0.5);
    event.push_back(true);
  }
  auto d = survival_data(x, time, event);
  ForestParams p;
  p.n_trees = 1;
  p.min_node_size = 1;
  p.min_node_events = 1;
  p.seed = 3;
  auto f = SurvivalForest::fit(d, p);
  const auto& tree = f.trees()[0];
  const double horizon = *std::max_element(time.begin(), time.end());
  for (std::size_t r = 0; r < d.size(); ++r) {
    if (tree.is_oob(r)) continue;
    const auto& leaf = tree.leaf_for(d.x.row(r));
    REQUIRE_FALSE(leaf.chf.empty());
    CHECK(leaf.chf.back() >= 1.0);
    CHECK(tree.risk(d.x.row(r), horizon) == doctest::Approx(1 - std::exp(-leaf.chf.back())).epsilon(1e-15));
  }
}

TEST_CASE("fits are deterministic, order-invariant and thread-invariant") {
  auto d = forest_data(6, 120, 3, true);
  ForestParams p;
  p.n_trees = 30;
  p.seed = 123;
  auto a = SurvivalForest::fit(d, p);
  auto b = SurvivalForest::fit(d, p);
  CHECK(bytes(a) == bytes(b));

  p.threads = 4;
  CHECK(bytes(SurvivalForest::fit(d, p)) == bytes(a));
  p.threads = 1;

  // Reverse the row order, keeping ids attached to their rows.
  std::vector<std::size_t> rev(d.size());
  std::iota(rev.rbegin(), rev.rend(), std::size_t{0});
  SurvivalData r;
  r.x = d.x.gather(rev);
  for (auto i : rev) {
    r.time.push_back(d.time[i]);
    r.event.push_back(d.event[i]);
    r.ids.push_back(d.ids[i]);
  }
  auto c = SurvivalForest::fit(r, p);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(c.predict_risk(d.x, i, 2.0) == a.predict_risk(d.x, i, 2.0));
    CHECK(c.predict_risk_oob(d.size() - 1 - i, 2.0) == a.predict_risk_oob(i, 2.0));
  }

  p.seed = 124;
  CHECK(bytes(SurvivalForest::fit(d, p)) != bytes(a));
}

TEST_CASE("serialization round trip is lossless") {
  auto d = forest_data(7, 100, 2, false);
  ForestParams p;
  p.n_trees = 10;
  p.seed = 99;
  p.max_depth = 4;
  auto f = SurvivalForest::fit(d, p);
  std::istringstream in(bytes(f));
  auto g = SurvivalForest::read(in);
  CHECK(bytes(g) == bytes(f));
  CHECK(g.fingerprint() == f.fingerprint());
  CHECK(g.n_training() == f.n_training());
  CHECK(g.params().max_depth == p.max_depth);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(g.predict_risk(d.x, i, 1.5) == f.predict_risk(d.x, i, 1.5));
    CHECK(g.try_predict_risk_oob(i, 1.5) == f.try_predict_risk_oob(i, 1.5));
  }

  std::istringstream garbage("not a forest");
  CHECK_THROWS_AS(SurvivalForest::read(garbage), Error);
  auto text = bytes(f);
  std::istringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(SurvivalForest::read(truncated), Error);
}
