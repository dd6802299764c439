#pragma once

// Undirected, unweighted networks: construction, shortest-path distances,
// interference sets and the summary statistics behind the HAC bandwidth.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace netdid {

using Edge = std::pair<std::size_t, std::size_t>;

// Symmetric binary adjacency with zero diagonal. Stored twice: as sorted
// neighbor lists for aggregation and as packed bit rows for BFS.
class NetworkGraph {
 public:
  NetworkGraph() = default;

  // Empty graph on n units.
  explicit NetworkGraph(std::size_t n);

  // Symmetrizes, drops self-loops and duplicates. Indices must be < n.
  static NetworkGraph from_edges(std::size_t n, std::span<const Edge> edges);

  std::size_t size() const { return n_; }
  std::size_t edge_count() const { return edge_count_; }

  bool adjacent(std::size_t i, std::size_t j) const {
    return (bits_[i * words_ + (j >> 6)] >> (j & 63)) & 1ULL;
  }

  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {adj_.data() + offsets_[i], adj_.data() + offsets_[i + 1]};
  }

  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  const std::vector<std::size_t>& degrees() const { return degrees_; }

  // Components are labelled 0, 1, ... in order of their lowest member.
  const std::vector<std::uint32_t>& component_ids() const { return component_; }
  std::size_t component_count() const { return component_count_; }

  std::span<const std::uint64_t> bit_row(std::size_t i) const {
    return {bits_.data() + i * words_, words_};
  }
  std::size_t words_per_row() const { return words_; }

  // Each undirected edge once, with i < j, in row-major order.
  std::vector<Edge> edges() const;

 private:
  void finalize();

  std::size_t n_ = 0;
  std::size_t words_ = 0;
  std::size_t edge_count_ = 0;
  std::vector<std::uint64_t> bits_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> adj_;
  std::vector<std::size_t> degrees_;
  std::vector<std::uint32_t> component_;
  std::size_t component_count_ = 0;
};

// Exact shortest-path lengths; kInf marks pairs in different components.
class DistanceMatrix {
 public:
  static constexpr std::int32_t kInf = std::numeric_limits<std::int32_t>::max();

  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), dist_(n * n, kInf) {}

  std::size_t size() const { return n_; }
  std::int32_t operator()(std::size_t i, std::size_t j) const { return dist_[i * n_ + j]; }
  std::int32_t& operator()(std::size_t i, std::size_t j) { return dist_[i * n_ + j]; }
  std::span<const std::int32_t> row(std::size_t i) const { return {dist_.data() + i * n_, n_}; }

 private:
  std::size_t n_ = 0;
  std::vector<std::int32_t> dist_;
};

// sets[i] = { j : 1 <= dist(i, j) <= radius }, sorted ascending.
struct InterferenceGraph {
  int radius = 1;
  std::vector<std::vector<std::uint32_t>> sets;

  std::size_t pair_count() const;
};

struct GraphStats {
  double avg_degree = 0.0;
  double avg_path_length = 0.0;
  std::size_t largest_component_size = 0;
};

// One uniform draw per unordered pair (i < j, row-major); edge iff draw < p.
NetworkGraph erdos_renyi(std::size_t n, double p, std::uint64_t seed);

DistanceMatrix bfs_distances(const NetworkGraph& g);

InterferenceGraph interference_sets(const NetworkGraph& g, const DistanceMatrix& d, int radius);

// avg_path_length averages over ordered pairs i != j of the largest component
// (ties broken toward the component holding the lowest unit index).
GraphStats graph_stats(const NetworkGraph& g, const DistanceMatrix& d);

// Truncation distance for the network HAC variance:
//   ceil(L / 4)     if L < 2^(log n / log delta)
//   ceil(L^(1/4))   otherwise
// where delta is the average degree and L the average path length.
int hac_bandwidth(std::size_t n, double avg_degree, double avg_path_length);

}  // namespace netdid
