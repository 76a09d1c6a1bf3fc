#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transport/alignment.hpp"
#include "transport/random.hpp"

namespace transport {

struct ForestParams {
  int n_trees = 500;
  std::optional<int> mtry;  // unset: ceil(sqrt(p))
  int min_node_size = 15;
  int min_node_events = 3;
  std::optional<int> max_depth;  // unset: unlimited
  std::uint64_t seed = 0;
  int threads = 1;  // 0 = hardware concurrency; never changes results

  /// Validates the bounds against p covariate columns and returns mtry.
  int resolve_mtry(std::size_t p) const;
};

/// Right-censored outcomes for one arm, aligned with the rows of `x`.
struct SurvivalData {
  ModelMatrix x;
  std::vector<double> time;
  std::vector<bool> event;
  std::vector<std::string> ids;

  std::size_t size() const { return time.size(); }
  void validate() const;
};

/// One log-rank survival tree. Internal nodes send x[column] <= threshold to
/// the left child. Leaves hold the Nelson-Aalen cumulative hazard of their
/// in-bag rows on the leaf's distinct event times.
class SurvivalTree {
 public:
  struct Node {
    std::int32_t column = -1;  // -1 for a leaf
    double threshold = 0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t leaf = 0;
  };
  struct Leaf {
    std::vector<double> times;
    std::vector<double> chf;
  };

  SurvivalTree() = default;
  SurvivalTree(std::vector<Node> nodes, std::vector<Leaf> leaves, std::vector<std::uint16_t> inbag);

  /// Grows a tree on `bag` (row indices into `data`, duplicates allowed).
  /// Consumes `rng` only to pick candidate columns.
  static SurvivalTree grow(const SurvivalData& data, std::vector<std::uint32_t> bag,
                           const ForestParams& params, Rng& rng);

  const Leaf& leaf_for(std::span<const double> x) const;
  double cumulative_hazard(std::span<const double> x, double horizon) const;
  double risk(std::span<const double> x, double horizon) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Leaf>& leaves() const { return leaves_; }
  /// In-bag multiplicity per training row.
  const std::vector<std::uint16_t>& inbag() const { return inbag_; }
  bool is_oob(std::size_t row) const { return inbag_.at(row) == 0; }
  std::size_t depth() const;

 private:
  std::vector<Node> nodes_;
  std::vector<Leaf> leaves_;
  std::vector<std::uint16_t> inbag_;
};

struct SplitCandidate {
  std::int32_t column;
  double threshold;
  double statistic;  // log-rank chi-square
};

/// The split the tree grower would choose at a node holding `bag`, with
/// candidate columns drawn from `rng`. Nullopt when no admissible split has
/// a positive statistic.
std::optional<SplitCandidate> best_split(const SurvivalData& data, std::vector<std::uint32_t> bag,
                                         const ForestParams& params, Rng& rng);

double leaf_cumulative_hazard(const SurvivalTree::Leaf& leaf, double horizon);

/// Bagged survival trees for one arm. Training rows are sorted by id before
/// any randomness is consumed, so the fit does not depend on row order.
class SurvivalForest {
 public:
  SurvivalForest() = default;

  /// Throws Error("cannot fit survival model with no events") when the data
  /// contain no event.
  static SurvivalForest fit(const SurvivalData& data, const ForestParams& params);

  /// Mean over trees of 1 - exp(-CHF(horizon)). The matrix fingerprint must
  /// match the forest's.
  double predict_risk(const ModelMatrix& x, std::size_t row, double horizon) const;
  double predict_risk(std::span<const double> x, double horizon) const;
  std::vector<double> tree_risks(std::span<const double> x, double horizon) const;

  /// Mean over the trees that left training row `row` (input order) out of
  /// bag. Throws Error("no OOB trees") when every tree used the row.
  double predict_risk_oob(std::size_t row, double horizon) const;
  std::optional<double> try_predict_risk_oob(std::size_t row, double horizon) const;
  std::size_t oob_tree_count(std::size_t row) const;

  const ForestParams& params() const { return params_; }
  const std::vector<SurvivalTree>& trees() const { return trees_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  std::size_t n_training() const { return canonical_of_input_.size(); }
  std::size_t n_columns() const { return training_x_.cols(); }

  void write(std::ostream& out) const;
  static SurvivalForest read(std::istream& in);

 private:
  void check_horizon(double horizon) const;

  ForestParams params_;
  std::vector<SurvivalTree> trees_;
  std::uint64_t fingerprint_ = 0;
  ModelMatrix training_x_;                       // canonical order
  std::vector<std::uint32_t> canonical_of_input_;
};

}  // namespace transport
