// Binary forest format, all integers little-endian, doubles as IEEE-754 bits:
//   "TRSF" u32 version
//   params: i32 n_trees, i32 mtry (-1 unset), i32 min_node_size,
//           i32 min_node_events, i32 max_depth (-1 unset), u64 seed
//   u64 fingerprint
//   training matrix: u64 rows, u64 cols, rows*cols f64 (canonical order)
//   u64 n, n x u32 canonical position of each input row
//   u64 trees, then per tree:
//     u64 nodes, per node: i32 column, f64 threshold, u32 left, u32 right, u32 leaf
//     u64 leaves, per leaf: u64 k, k x f64 times, k x f64 chf
//     u64 n, n x u16 in-bag counts

#include <bit>
#include <istream>
#include <ostream>

#include "transport/error.hpp"
#include "transport/survival_forest.hpp"

namespace transport {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <class U>
  void uint(U v) {
    char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
    out_.write(buf, sizeof(U));
  }
  void i32(std::int32_t v) { uint(static_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  template <class U>
  U uint() {
    unsigned char buf[sizeof(U)];
    if (!in_.read(reinterpret_cast<char*>(buf), sizeof(U))) throw Error("forest file is truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<U>(v);
  }
  std::int32_t i32() { return static_cast<std::int32_t>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::size_t count(std::size_t limit = std::size_t{1} << 34) {
    const auto n = uint<std::uint64_t>();
    if (n > limit) throw Error("forest file has an implausible length field");
    return static_cast<std::size_t>(n);
  }

 private:
  std::istream& in_;
};

}  // namespace

void SurvivalForest::write(std::ostream& out) const {
  Writer w(out);
  out.write(kMagic, 4);
  w.uint(kVersion);
  w.i32(params_.n_trees);
  w.i32(params_.mtry.value_or(-1));
  w.i32(params_.min_node_size);
  w.i32(params_.min_node_events);
  w.i32(params_.max_depth.value_or(-1));
  w.uint(params_.seed);
  w.uint(fingerprint_);
  w.uint<std::uint64_t>(training_x_.rows());
  w.uint<std::uint64_t>(training_x_.cols());
  for (std::size_t i = 0; i < training_x_.rows(); ++i) {
    for (double v : training_x_.row(i)) w.f64(v);
  }
  w.uint<std::uint64_t>(canonical_of_input_.size());
  for (auto c : canonical_of_input_) w.uint(c);
  w.uint<std::uint64_t>(trees_.size());
  for (const auto& tree : trees_) {
    w.uint<std::uint64_t>(tree.nodes().size());
    for (const auto& n : tree.nodes()) {
      w.i32(n.column);
      w.f64(n.threshold);
      w.uint(n.left);
      w.uint(n.right);
      w.uint(n.leaf);
    }
    w.uint<std::uint64_t>(tree.leaves().size());
    for (const auto& leaf : tree.leaves()) {
      w.uint<std::uint64_t>(leaf.times.size());
      for (double t : leaf.times) w.f64(t);
      for (double h : leaf.chf) w.f64(h);
    }
    w.uint<std::uint64_t>(tree.inbag().size());
    for (auto c : tree.inbag()) w.uint(c);
  }
  if (!out) throw Error("failed to write forest");
}

SurvivalForest SurvivalForest::read(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw Error("not a survival forest file");
  Reader r(in);
  if (const auto version = r.uint<std::uint32_t>(); version != kVersion) {
    throw Error("unsupported forest file version " + std::to_string(version));
  }
  SurvivalForest f;
  f.params_.n_trees = r.i32();
  if (const auto m = r.i32(); m >= 0) f.params_.mtry = m;
  f.params_.min_node_size = r.i32();
  f.params_.min_node_events = r.i32();
  if (const auto d = r.i32(); d >= 0) f.params_.max_depth = d;
  f.params_.seed = r.uint<std::uint64_t>();
  f.fingerprint_ = r.uint<std::uint64_t>();
  const auto rows = r.count();
  const auto cols = r.count(1u << 20);
  if (cols == 0) throw Error("forest file has no covariate columns");
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = r.f64();
  f.training_x_ = ModelMatrix(cols, std::move(values), f.fingerprint_);
  f.canonical_of_input_.resize(r.count());
  for (auto& c : f.canonical_of_input_) {
    c = r.uint<std::uint32_t>();
    if (c >= rows) throw Error("forest file has a corrupt row mapping");
  }
  const auto n_trees = r.count();
  f.trees_.reserve(n_trees);
  for (std::size_t t = 0; t < n_trees; ++t) {
    std::vector<SurvivalTree::Node> nodes(r.count());
    for (auto& n : nodes) {
      n.column = r.i32();
      n.threshold = r.f64();
      n.left = r.uint<std::uint32_t>();
      n.right = r.uint<std::uint32_t>();
      n.leaf = r.uint<std::uint32_t>();
    }
    std::vector<SurvivalTree::Leaf> leaves(r.count());
    for (auto& leaf : leaves) {
      const auto k = r.count();
      leaf.times.resize(k);
      leaf.chf.resize(k);
      for (auto& v : leaf.times) v = r.f64();
      for (auto& v : leaf.chf) v = r.f64();
    }
    for (const auto& n : nodes) {
      const bool bad = n.column >= 0 ? (n.left >= nodes.size() || n.right >= nodes.size() ||
                                        static_cast<std::size_t>(n.column) >= cols)
                                     : n.leaf >= leaves.size();
      if (bad) throw Error("forest file has a corrupt tree");
    }
    std::vector<std::uint16_t> inbag(r.count());
    if (inbag.size() != rows) throw Error("forest file has a corrupt in-bag table");
    for (auto& c : inbag) c = r.uint<std::uint16_t>();
    f.trees_.emplace_back(std::move(nodes), std::move(leaves), std::move(inbag));
  }
  return f;
}

}  // namespace transport
