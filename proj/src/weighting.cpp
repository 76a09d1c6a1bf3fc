#include "transport/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "transport/error.hpp"
#include "transport/parallel.hpp"
#include "transport/random.hpp"

namespace transport {

namespace {

class ClassificationGrower {
 public:
  ClassificationGrower(const ModelMatrix& x, const std::vector<bool>& label, const SelectionParams& params,
                       int mtry, Rng& rng)
      : x_(x), label_(label), params_(params), mtry_(mtry), rng_(rng) {}

  std::vector<ClassificationForest::Node> grow(std::vector<std::uint32_t> bag) {
    samples_ = std::move(bag);
    std::vector<ClassificationForest::Node> nodes(1);
    struct Pending {
      std::uint32_t node;
      std::size_t begin, end;
      int depth;
    };
    std::vector<Pending> stack{{0, 0, samples_.size(), 0}};
    while (!stack.empty()) {
      const auto job = stack.back();
      stack.pop_back();
      std::size_t positives = 0;
      for (std::size_t s = job.begin; s < job.end; ++s) positives += label_[samples_[s]] ? 1 : 0;
      const std::size_t m = job.end - job.begin;
      auto split = find_split(job.begin, job.end, job.depth, positives);
      if (!split) {
        nodes[job.node].column = -1;
        nodes[job.node].share = static_cast<double>(positives) / static_cast<double>(m);
        continue;
      }
      auto first = samples_.begin() + static_cast<std::ptrdiff_t>(job.begin);
      auto last = samples_.begin() + static_cast<std::ptrdiff_t>(job.end);
      auto mid = std::stable_partition(first, last, [&](std::uint32_t r) {
        return x_(r, static_cast<std::size_t>(split->first)) <= split->second;
      });
      const auto middle = static_cast<std::size_t>(mid - samples_.begin());
      const auto left = static_cast<std::uint32_t>(nodes.size());
      nodes.emplace_back();
      nodes.emplace_back();
      nodes[job.node].column = split->first;
      nodes[job.node].threshold = split->second;
      nodes[job.node].left = left;
      nodes[job.node].right = left + 1;
      stack.push_back({left + 1, middle, job.end, job.depth + 1});
      stack.push_back({left, job.begin, middle, job.depth + 1});
    }
    return nodes;
  }

 private:
  std::optional<std::pair<std::int32_t, double>> find_split(std::size_t begin, std::size_t end, int depth,
                                                            std::size_t positives) {
    const std::size_t m = end - begin;
    const auto min_size = static_cast<std::size_t>(params_.min_node_size);
    if (params_.max_depth && depth >= *params_.max_depth) return std::nullopt;
    if (m < 2 * min_size || positives == 0 || positives == m) return std::nullopt;

    const std::size_t p = x_.cols();
    columns_.resize(p);
    std::iota(columns_.begin(), columns_.end(), std::size_t{0});
    for (std::size_t i = 0; i < static_cast<std::size_t>(mtry_); ++i) {
      std::swap(columns_[i], columns_[i + static_cast<std::size_t>(rng_.below(p - i))]);
    }
    std::sort(columns_.begin(), columns_.begin() + mtry_);

    const double total = static_cast<double>(m);
    const double pos = static_cast<double>(positives);
    const double parent = (pos * pos + (total - pos) * (total - pos)) / total;
    double best_gain = 1e-12;
    std::optional<std::pair<std::int32_t, double>> best;
    order_.resize(m);
    for (int c = 0; c < mtry_; ++c) {
      const auto column = columns_[static_cast<std::size_t>(c)];
      for (std::size_t s = 0; s < m; ++s) order_[s] = samples_[begin + s];
      std::sort(order_.begin(), order_.end(), [&](std::uint32_t a, std::uint32_t b) {
        return x_(a, column) < x_(b, column) || (x_(a, column) == x_(b, column) && a < b);
      });
      double n_left = 0, pos_left = 0;
      for (std::size_t q = 0; q + 1 < m; ++q) {
        n_left += 1;
        pos_left += label_[order_[q]] ? 1 : 0;
        const double here = x_(order_[q], column);
        const double next = x_(order_[q + 1], column);
        if (!(here < next)) continue;
        const double n_right = total - n_left;
        if (n_left < static_cast<double>(min_size) || n_right < static_cast<double>(min_size)) continue;
        const double pos_right = pos - pos_left;
        const double neg_left = n_left - pos_left;
        const double neg_right = n_right - pos_right;
        const double gain = (pos_left * pos_left + neg_left * neg_left) / n_left +
                            (pos_right * pos_right + neg_right * neg_right) / n_right - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best = std::make_pair(static_cast<std::int32_t>(column), here + (next - here) / 2.0);
        }
      }
    }
    return best;
  }

  const ModelMatrix& x_;
  const std::vector<bool>& label_;
  const SelectionParams& params_;
  int mtry_;
  Rng& rng_;
  std::vector<std::uint32_t> samples_;
  std::vector<std::uint32_t> order_;
  std::vector<std::size_t> columns_;
};

}  // namespace

double ClassificationForest::Tree::predict(std::span<const double> x) const {
  std::uint32_t i = 0;
  while (nodes[i].column >= 0) {
    i = x[static_cast<std::size_t>(nodes[i].column)] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  }
  return nodes[i].share;
}

ClassificationForest ClassificationForest::fit(const ModelMatrix& x, const std::vector<bool>& label,
                                               const SelectionParams& params) {
  const std::size_t n = x.rows();
  if (n == 0 || label.size() != n) throw Error("classification forest needs labelled rows");
  if (params.n_trees < 1 || params.min_node_size < 1) throw Error("invalid selection forest parameters");
  const int mtry = params.mtry.value_or(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(x.cols())))));
  if (mtry < 1 || static_cast<std::size_t>(mtry) > x.cols()) throw Error("mtry must be in [1, p]");

  ClassificationForest forest;
  forest.training_x_ = x;
  forest.trees_.resize(static_cast<std::size_t>(params.n_trees));
  parallel_for(forest.trees_.size(), params.threads, [&](std::size_t t) {
    Rng rng(derive_seed(params.seed, Stream::Tree, t));
    std::vector<std::uint32_t> bag(n);
    auto& tree = forest.trees_[t];
    tree.inbag.assign(n, 0);
    for (auto& b : bag) {
      b = static_cast<std::uint32_t>(rng.below(n));
      if (tree.inbag[b] < std::numeric_limits<std::uint16_t>::max()) ++tree.inbag[b];
    }
    ClassificationGrower grower(x, label, params, mtry, rng);
    tree.nodes = grower.grow(std::move(bag));
  });
  return forest;
}

double ClassificationForest::predict(std::span<const double> x) const {
  double sum = 0;
  for (const auto& t : trees_) sum += t.predict(x);
  return sum / static_cast<double>(trees_.size());
}

std::optional<double> ClassificationForest::predict_oob(std::size_t row) const {
  const auto x = training_x_.row(row);
  double sum = 0;
  std::size_t count = 0;
  for (const auto& t : trees_) {
    if (t.inbag[row] != 0) continue;
    sum += t.predict(x);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

SelectionModel SelectionModel::fit(const ModelMatrix& source, const std::vector<std::string>& source_ids,
                                   const ModelMatrix& target, const std::vector<std::string>& target_ids,
                                   const SelectionParams& params) {
  if (source.rows() == 0 || target.rows() == 0) throw Error("selection model needs non-empty source and target");
  if (source.fingerprint() != target.fingerprint()) {
    throw Error("source and target covariates are not aligned for the selection model");
  }
  if (source_ids.size() != source.rows() || target_ids.size() != target.rows()) {
    throw Error("selection model ids do not match the matrices");
  }
  if (!(params.clip_low > 0 && params.clip_low < params.clip_high && params.clip_high < 1)) {
    throw Error("clipping bounds must satisfy 0 < low < high < 1");
  }
  auto sorted = [](const std::vector<std::string>& ids) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    return order;
  };
  const auto s_order = sorted(source_ids);
  const auto t_order = sorted(target_ids);
  const std::size_t cols = source.cols();
  std::vector<double> values;
  values.reserve((s_order.size() + t_order.size()) * cols);
  for (auto i : s_order) values.insert(values.end(), source.row(i).begin(), source.row(i).end());
  for (auto i : t_order) values.insert(values.end(), target.row(i).begin(), target.row(i).end());
  ModelMatrix stacked(cols, std::move(values), source.fingerprint());
  std::vector<bool> label(stacked.rows(), false);
  std::fill(label.begin(), label.begin() + static_cast<std::ptrdiff_t>(s_order.size()), true);

  SelectionModel model;
  model.params_ = params;
  model.fingerprint_ = source.fingerprint();
  model.forest_ = ClassificationForest::fit(stacked, label, params);
  model.source_ids_ = source_ids;
  model.source_oob_.resize(source.rows());
  for (std::size_t k = 0; k < s_order.size(); ++k) {
    const auto oob = model.forest_.predict_oob(k);
    model.source_oob_[s_order[k]] = oob ? *oob : model.forest_.predict(stacked.row(k));
  }
  return model;
}

double SelectionModel::clip(double p) const { return std::clamp(p, params_.clip_low, params_.clip_high); }

double SelectionModel::probability(std::span<const double> x) const { return clip(forest_.predict(x)); }

std::vector<double> SelectionModel::source_probabilities(const ModelMatrix& source,
                                                         const std::vector<std::string>& ids) const {
  if (source.fingerprint() != fingerprint_) throw Error("source covariates do not match the selection model");
  if (ids == source_ids_) return source_oob_;
  std::vector<double> out;
  out.reserve(source.rows());
  for (std::size_t i = 0; i < source.rows(); ++i) out.push_back(forest_.predict(source.row(i)));
  return out;
}

SelectionModel fit_selection_model(const Cohort& source, const Cohort& target, const FeatureLayout& layout,
                                   const SelectionParams& params) {
  auto ids = [](const Cohort& c) {
    std::vector<std::string> out;
    for (const auto& r : c.rows()) out.push_back(r.id);
    return out;
  };
  return SelectionModel::fit(make_model_matrix(source, layout), ids(source), make_model_matrix(target, layout),
                             ids(target), params);
}

WeightSet weights_from_probabilities(std::vector<std::string> ids, std::vector<double> probability) {
  if (ids.size() != probability.size()) throw Error("weights: ids and probabilities differ in length");
  if (probability.empty()) throw Error("weights: no rows");
  WeightSet w;
  w.ids = std::move(ids);
  w.probability = std::move(probability);
  double sum_sq = 0;
  for (double p : w.probability) {
    if (!(p > 0 && p < 1)) throw Error("membership probability must lie in (0, 1)");
    const double weight = (1.0 - p) / p;
    w.weight.push_back(weight);
    w.sum += weight;
    sum_sq += weight * weight;
  }
  w.min = *std::min_element(w.weight.begin(), w.weight.end());
  w.max = *std::max_element(w.weight.begin(), w.weight.end());
  w.ess = w.sum * w.sum / sum_sq;
  return w;
}

WeightSet compute_weights(const SelectionModel& model, const ModelMatrix& source, const std::vector<std::string>& ids) {
  auto raw = model.source_probabilities(source, ids);
  std::size_t clipped = 0;
  for (auto& p : raw) {
    const double c = model.clip(p);
    if (c != p) ++clipped;
    p = c;
  }
  auto w = weights_from_probabilities(ids, std::move(raw));
  w.clipped = clipped;
  return w;
}

WeightSet compute_weights(const SelectionModel& model, const Cohort& source, const FeatureLayout& layout) {
  std::vector<std::string> ids;
  for (const auto& r : source.rows()) ids.push_back(r.id);
  return compute_weights(model, make_model_matrix(source, layout), ids);
}

void write_weights_csv(std::ostream& out, const WeightSet& w) {
  out << "id,probability,weight\n";
  for (std::size_t i = 0; i < w.ids.size(); ++i) {
    out << w.ids[i] << ',' << fmt::format("{:.6f},{:.6f}", w.probability[i], w.weight[i]) << '\n';
  }
  out << fmt::format("# summary,n={},min={:.6f},max={:.6f},sum={:.6f},ess={:.3f},clipped={}\n", w.ids.size(), w.min,
                     w.max, w.sum, w.ess, w.clipped);
}

ContrastEstimate weighted_contrast(const SourceData& source, const WeightSet& weights, const Contrast& contrast,
                                   double horizon) {
  if (weights.weight.size() != source.size()) throw Error("weights do not cover every source row");
  const double a = arm_km_risk(source, source.arm_index(contrast.treated()), horizon, weights.weight);
  const double b = arm_km_risk(source, source.arm_index(contrast.reference()), horizon, weights.weight);
  auto e = ContrastEstimate::make(contrast, Estimand::Weighted, a - b, 0.0, 0);
  e.n = source.size();
  return e;
}

ContrastEstimate weighted_contrast(const Cohort& source, const WeightSet& weights, const Contrast& contrast,
                                   double horizon) {
  // Only arms, times and events are read; the covariate matrix is a placeholder.
  SourceData data;
  data.x = ModelMatrix(1, std::vector<double>(source.size(), 0.0), 0);
  data.arms = source.arms();
  for (const auto& r : source.rows()) {
    data.time.push_back(*r.time);
    data.event.push_back(*r.event);
    data.ids.push_back(r.id);
    data.arm_of.push_back(static_cast<std::uint32_t>(data.arm_index(*r.arm)));
  }
  return weighted_contrast(data, weights, contrast, horizon);
}

}  // namespace transport
