#include "transport/survival_forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "transport/error.hpp"
#include "transport/parallel.hpp"

namespace transport {

int ForestParams::resolve_mtry(std::size_t p) const {
  if (n_trees < 1) throw Error("n_trees must be positive");
  if (min_node_size < 1) throw Error("min_node_size must be positive");
  if (min_node_events < 1) throw Error("min_node_events must be positive");
  if (max_depth && *max_depth < 0) throw Error("max_depth must be >= 0");
  if (p == 0) throw Error("no covariate columns");
  const int m = mtry.value_or(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p)))));
  if (m < 1 || static_cast<std::size_t>(m) > p) throw Error("mtry must be in [1, p]");
  return m;
}

void SurvivalData::validate() const {
  if (time.size() != x.rows() || event.size() != x.rows() || ids.size() != x.rows()) {
    throw Error("survival data columns differ in length");
  }
  for (double t : time) {
    if (!(t >= 0) || !std::isfinite(t)) throw Error("follow-up times must be finite and >= 0");
  }
}

namespace {

/// Prefix-sum tree over positions 0..size-1.
class Fenwick {
 public:
  void reset(std::size_t size) { tree_.assign(size + 1, 0.0); }
  void add(std::size_t pos, double v) {
    for (std::size_t i = pos + 1; i < tree_.size(); i += i & (~i + 1)) tree_[i] += v;
  }
  /// Sum over positions [0, pos].
  double prefix(std::size_t pos) const {
    double s = 0;
    for (std::size_t i = pos + 1; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<double> tree_;
};

constexpr double kMinStatistic = 1e-10;

/// Grows one tree. Node samples live in a single buffer; each node owns a
/// contiguous range that is partitioned in place when it splits.
class TreeGrower {
 public:
  TreeGrower(const SurvivalData& data, const ForestParams& params, Rng& rng)
      : data_(data), params_(params), rng_(rng), mtry_(params.resolve_mtry(data.x.cols())) {}

  SurvivalTree grow(std::vector<std::uint32_t> bag) {
    std::vector<std::uint16_t> inbag(data_.size(), 0);
    for (auto r : bag) {
      if (inbag[r] < std::numeric_limits<std::uint16_t>::max()) ++inbag[r];
    }
    samples_ = std::move(bag);
    nodes_.clear();
    leaves_.clear();

    struct Pending {
      std::uint32_t node;
      std::size_t begin, end;
      int depth;
    };
    nodes_.push_back({});
    std::vector<Pending> stack{{0, 0, samples_.size(), 0}};
    while (!stack.empty()) {
      const auto job = stack.back();
      stack.pop_back();
      auto split = find_split(job.begin, job.end, job.depth);
      if (!split) {
        nodes_[job.node].column = -1;
        nodes_[job.node].leaf = static_cast<std::uint32_t>(leaves_.size());
        leaves_.push_back(make_leaf(job.begin, job.end));
        continue;
      }
      const auto column = split->column;
      const double threshold = split->threshold;
      auto first = samples_.begin() + static_cast<std::ptrdiff_t>(job.begin);
      auto last = samples_.begin() + static_cast<std::ptrdiff_t>(job.end);
      auto mid = std::stable_partition(first, last, [&](std::uint32_t r) {
        return data_.x(r, static_cast<std::size_t>(column)) <= threshold;
      });
      const std::size_t middle = static_cast<std::size_t>(mid - samples_.begin());
      const auto left = static_cast<std::uint32_t>(nodes_.size());
      nodes_.push_back({});
      nodes_.push_back({});
      auto& node = nodes_[job.node];
      node.column = column;
      node.threshold = threshold;
      node.left = left;
      node.right = left + 1;
      // Right first so the left subtree is expanded (and numbered) first.
      stack.push_back({left + 1, middle, job.end, job.depth + 1});
      stack.push_back({left, job.begin, middle, job.depth + 1});
    }
    return SurvivalTree(std::move(nodes_), std::move(leaves_), std::move(inbag));
  }

  std::optional<SplitCandidate> root_split(std::vector<std::uint32_t> bag) {
    samples_ = std::move(bag);
    return find_split(0, samples_.size(), 0);
  }

 private:
  using Split = SplitCandidate;

  std::optional<Split> find_split(std::size_t begin, std::size_t end, int depth) {
    const std::size_t m = end - begin;
    if (params_.max_depth && depth >= *params_.max_depth) return std::nullopt;
    const auto min_size = static_cast<std::size_t>(params_.min_node_size);
    const auto min_events = static_cast<std::size_t>(params_.min_node_events);
    if (m < 2 * min_size) return std::nullopt;

    std::size_t events = 0;
    for (std::size_t s = begin; s < end; ++s) events += data_.event[samples_[s]] ? 1 : 0;
    if (events < 2 * min_events) return std::nullopt;

    prepare_event_grid(begin, end);

    // Candidate columns: mtry drawn without replacement, then scanned in
    // ascending order so ties resolve to the lower column index.
    const std::size_t p = data_.x.cols();
    columns_.resize(p);
    std::iota(columns_.begin(), columns_.end(), std::size_t{0});
    for (std::size_t i = 0; i < static_cast<std::size_t>(mtry_); ++i) {
      const auto j = i + static_cast<std::size_t>(rng_.below(p - i));
      std::swap(columns_[i], columns_[j]);
    }
    std::sort(columns_.begin(), columns_.begin() + mtry_);

    std::optional<Split> best;
    for (int c = 0; c < mtry_; ++c) {
      const auto column = columns_[static_cast<std::size_t>(c)];
      scan_column(begin, end, column, events, best);
    }
    return best;
  }

  /// Distinct event times of the node, with the log-rank prefix sums
  /// H(k) = sum d/n, C(k) = sum c, E(k) = sum c/n over the first k times and
  /// the per-sample index k_s = #{event times <= t_s}.
  void prepare_event_grid(std::size_t begin, std::size_t end) {
    const std::size_t m = end - begin;
    by_time_.resize(m);
    for (std::size_t s = 0; s < m; ++s) by_time_[s] = samples_[begin + s];
    std::sort(by_time_.begin(), by_time_.end(), [&](std::uint32_t a, std::uint32_t b) {
      return data_.time[a] < data_.time[b];
    });
    grid_.clear();
    hazard_.assign(1, 0.0);
    cvar_.assign(1, 0.0);
    evar_.assign(1, 0.0);
    std::size_t k = 0;
    while (k < m) {
      const double t = data_.time[by_time_[k]];
      const double at_risk = static_cast<double>(m - k);
      double d = 0;
      std::size_t j = k;
      for (; j < m && data_.time[by_time_[j]] == t; ++j) d += data_.event[by_time_[j]] ? 1.0 : 0.0;
      if (d > 0) {
        const double c = at_risk > 1 ? d * (at_risk - d) / (at_risk * (at_risk - 1)) : 0.0;
        grid_.push_back(t);
        hazard_.push_back(hazard_.back() + d / at_risk);
        cvar_.push_back(cvar_.back() + c);
        evar_.push_back(evar_.back() + c / at_risk);
      }
      k = j;
    }
    grid_index_.resize(m);
    for (std::size_t s = 0; s < m; ++s) {
      const double t = data_.time[samples_[begin + s]];
      grid_index_[s] = static_cast<std::uint32_t>(std::upper_bound(grid_.begin(), grid_.end(), t) - grid_.begin());
    }
  }

  /// Scans every threshold between distinct sorted values of `column`,
  /// moving one sample at a time into the left child and updating the
  /// log-rank numerator U and variance V incrementally:
  ///   U = sum_{s in L} (delta_s - H(k_s))
  ///   V = sum_{s in L} C(k_s) - sum_j e_j nL_j^2
  /// The quadratic term is maintained with two Fenwick trees over k.
  void scan_column(std::size_t begin, std::size_t end, std::size_t column, std::size_t events,
                   std::optional<Split>& best) {
    const std::size_t m = end - begin;
    order_.resize(m);
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    auto value = [&](std::uint32_t s) { return data_.x(samples_[begin + s], column); };
    std::sort(order_.begin(), order_.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double va = value(a), vb = value(b);
      return va < vb || (va == vb && a < b);
    });
    if (value(order_.front()) == value(order_.back())) return;

    const std::size_t grid_size = grid_.size();
    count_tree_.reset(grid_size + 1);
    evar_tree_.reset(grid_size + 1);
    const auto min_size = static_cast<std::size_t>(params_.min_node_size);
    const auto min_events = static_cast<std::size_t>(params_.min_node_events);

    double u = 0, sum_c = 0, quad = 0;
    std::size_t n_left = 0, e_left = 0;
    for (std::size_t q = 0; q + 1 < m; ++q) {
      const auto s = order_[q];
      const std::size_t k = grid_index_[s];
      const bool delta = data_.event[samples_[begin + s]];
      if (k > 0) {
        const double below_count = count_tree_.prefix(k - 1);
        const double below_evar = evar_tree_.prefix(k - 1);
        const double weighted = evar_[k] * (static_cast<double>(n_left) - below_count) + below_evar;
        quad += 2.0 * weighted + evar_[k];
      }
      u += (delta ? 1.0 : 0.0) - hazard_[k];
      sum_c += cvar_[k];
      ++n_left;
      e_left += delta ? 1 : 0;
      count_tree_.add(k, 1.0);
      evar_tree_.add(k, evar_[k]);

      const double here = value(s);
      const double next = value(order_[q + 1]);
      if (!(here < next)) continue;
      if (n_left < min_size || m - n_left < min_size) continue;
      if (e_left < min_events || events - e_left < min_events) continue;
      const double variance = sum_c - quad;
      if (!(variance > 1e-12 * std::max(1.0, sum_c))) continue;
      const double stat = u * u / variance;
      if (stat <= kMinStatistic) continue;
      const double threshold = here + (next - here) / 2.0;
      if (!best || stat > best->statistic) {
        best = Split{static_cast<std::int32_t>(column), threshold, stat};
      }
    }
  }

  SurvivalTree::Leaf make_leaf(std::size_t begin, std::size_t end) const {
    std::vector<std::uint32_t> rows(samples_.begin() + static_cast<std::ptrdiff_t>(begin),
                                    samples_.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) {
      return data_.time[a] < data_.time[b];
    });
    SurvivalTree::Leaf leaf;
    const std::size_t m = rows.size();
    double chf = 0;
    std::size_t k = 0;
    while (k < m) {
      const double t = data_.time[rows[k]];
      double d = 0;
      std::size_t j = k;
      for (; j < m && data_.time[rows[j]] == t; ++j) d += data_.event[rows[j]] ? 1.0 : 0.0;
      if (d > 0) {
        chf += d / static_cast<double>(m - k);
        leaf.times.push_back(t);
        leaf.chf.push_back(chf);
      }
      k = j;
    }
    return leaf;
  }

  const SurvivalData& data_;
  const ForestParams& params_;
  Rng& rng_;
  int mtry_;

  std::vector<std::uint32_t> samples_;
  std::vector<SurvivalTree::Node> nodes_;
  std::vector<SurvivalTree::Leaf> leaves_;

  std::vector<std::size_t> columns_;
  std::vector<std::uint32_t> by_time_;
  std::vector<std::uint32_t> order_;
  std::vector<std::uint32_t> grid_index_;
  std::vector<double> grid_, hazard_, cvar_, evar_;
  Fenwick count_tree_, evar_tree_;
};

}  // namespace

SurvivalTree::SurvivalTree(std::vector<Node> nodes, std::vector<Leaf> leaves, std::vector<std::uint16_t> inbag)
    : nodes_(std::move(nodes)), leaves_(std::move(leaves)), inbag_(std::move(inbag)) {}

SurvivalTree SurvivalTree::grow(const SurvivalData& data, std::vector<std::uint32_t> bag,
                                const ForestParams& params, Rng& rng) {
  if (bag.empty()) throw Error("cannot grow a tree on an empty sample");
  for (auto r : bag) {
    if (r >= data.size()) throw Error("bag index out of range");
  }
  TreeGrower grower(data, params, rng);
  return grower.grow(std::move(bag));
}

std::optional<SplitCandidate> best_split(const SurvivalData& data, std::vector<std::uint32_t> bag,
                                        const ForestParams& params, Rng& rng) {
  if (bag.empty()) throw Error("cannot split an empty sample");
  for (auto r : bag) {
    if (r >= data.size()) throw Error("bag index out of range");
  }
  TreeGrower grower(data, params, rng);
  return grower.root_split(std::move(bag));
}

const SurvivalTree::Leaf& SurvivalTree::leaf_for(std::span<const double> x) const {
  std::uint32_t i = 0;
  while (nodes_[i].column >= 0) {
    const auto& n = nodes_[i];
    i = x[static_cast<std::size_t>(n.column)] <= n.threshold ? n.left : n.right;
  }
  return leaves_[nodes_[i].leaf];
}

double leaf_cumulative_hazard(const SurvivalTree::Leaf& leaf, double horizon) {
  auto it = std::upper_bound(leaf.times.begin(), leaf.times.end(), horizon);
  if (it == leaf.times.begin()) return 0.0;
  return leaf.chf[static_cast<std::size_t>(it - leaf.times.begin()) - 1];
}

double SurvivalTree::cumulative_hazard(std::span<const double> x, double horizon) const {
  return leaf_cumulative_hazard(leaf_for(x), horizon);
}

double SurvivalTree::risk(std::span<const double> x, double horizon) const {
  return 1.0 - std::exp(-cumulative_hazard(x, horizon));
}

std::size_t SurvivalTree::depth() const {
  std::vector<std::size_t> d(nodes_.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (nodes_[i].column >= 0) {
      d[nodes_[i].left] = d[i] + 1;
      d[nodes_[i].right] = d[i] + 1;
    }
  }
  return deepest;
}

SurvivalForest SurvivalForest::fit(const SurvivalData& data, const ForestParams& params) {
  data.validate();
  if (data.size() == 0) throw Error("cannot fit survival model on an empty cohort");
  params.resolve_mtry(data.x.cols());
  if (std::none_of(data.event.begin(), data.event.end(), [](bool e) { return e; })) {
    throw Error("cannot fit survival model with no events");
  }

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.ids[a] < data.ids[b]; });

  SurvivalData canonical;
  canonical.x = data.x.gather(order);
  canonical.time.reserve(n);
  canonical.event.reserve(n);
  canonical.ids.reserve(n);
  for (auto i : order) {
    canonical.time.push_back(data.time[i]);
    canonical.event.push_back(data.event[i]);
    canonical.ids.push_back(data.ids[i]);
  }

  SurvivalForest forest;
  forest.params_ = params;
  forest.fingerprint_ = data.x.fingerprint();
  forest.canonical_of_input_.resize(n);
  for (std::size_t c = 0; c < n; ++c) forest.canonical_of_input_[order[c]] = static_cast<std::uint32_t>(c);

  forest.trees_.resize(static_cast<std::size_t>(params.n_trees));
  parallel_for(forest.trees_.size(), params.threads, [&](std::size_t t) {
    Rng rng(derive_seed(params.seed, Stream::Tree, t));
    std::vector<std::uint32_t> bag(n);
    for (auto& b : bag) b = static_cast<std::uint32_t>(rng.below(n));
    forest.trees_[t] = SurvivalTree::grow(canonical, std::move(bag), params, rng);
  });
  forest.training_x_ = std::move(canonical.x);
  return forest;
}

void SurvivalForest::check_horizon(double horizon) const {
  if (!(horizon > 0)) throw Error("horizon must be > 0");
}

double SurvivalForest::predict_risk(const ModelMatrix& x, std::size_t row, double horizon) const {
  if (x.fingerprint() != fingerprint_) throw Error("covariate layout does not match the fitted forest");
  return predict_risk(x.row(row), horizon);
}

double SurvivalForest::predict_risk(std::span<const double> x, double horizon) const {
  check_horizon(horizon);
  if (x.size() != training_x_.cols()) throw Error("covariate vector has the wrong length");
  double sum = 0;
  for (const auto& tree : trees_) sum += tree.risk(x, horizon);
  return sum / static_cast<double>(trees_.size());
}

std::vector<double> SurvivalForest::tree_risks(std::span<const double> x, double horizon) const {
  check_horizon(horizon);
  std::vector<double> out;
  out.reserve(trees_.size());
  for (const auto& tree : trees_) out.push_back(tree.risk(x, horizon));
  return out;
}

std::optional<double> SurvivalForest::try_predict_risk_oob(std::size_t row, double horizon) const {
  check_horizon(horizon);
  if (row >= canonical_of_input_.size()) throw Error("training row out of range");
  const auto c = canonical_of_input_[row];
  const auto x = training_x_.row(c);
  double sum = 0;
  std::size_t count = 0;
  for (const auto& tree : trees_) {
    if (!tree.is_oob(c)) continue;
    sum += tree.risk(x, horizon);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

double SurvivalForest::predict_risk_oob(std::size_t row, double horizon) const {
  auto r = try_predict_risk_oob(row, horizon);
  if (!r) throw Error("no OOB trees");
  return *r;
}

std::size_t SurvivalForest::oob_tree_count(std::size_t row) const {
  const auto c = canonical_of_input_.at(row);
  return static_cast<std::size_t>(
      std::count_if(trees_.begin(), trees_.end(), [&](const SurvivalTree& t) { return t.is_oob(c); }));
}

}  // namespace transport
