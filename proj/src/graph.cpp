#include "netdid/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "netdid/errors.hpp"
#include "netdid/rng.hpp"

namespace netdid {

NetworkGraph::NetworkGraph(std::size_t n) : n_(n), words_((n + 63) / 64), bits_(n * words_, 0) {
  finalize();
}

NetworkGraph NetworkGraph::from_edges(std::size_t n, std::span<const Edge> edges) {
  NetworkGraph g(n);
  for (const auto& [i, j] : edges) {
    if (i >= n || j >= n) {
      throw InputError("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                       ") out of range for " + std::to_string(n) + " units");
    }
    if (i == j) continue;
    g.bits_[i * g.words_ + (j >> 6)] |= 1ULL << (j & 63);
    g.bits_[j * g.words_ + (i >> 6)] |= 1ULL << (i & 63);
  }
  g.finalize();
  return g;
}

void NetworkGraph::finalize() {
  offsets_.assign(n_ + 1, 0);
  adj_.clear();
  degrees_.assign(n_, 0);
  for (std::size_t i = 0; i < n_; ++i) {
    const std::uint64_t* row = bits_.data() + i * words_;
    for (std::size_t w = 0; w < words_; ++w) {
      std::uint64_t word = row[w];
      while (word != 0) {
        const int b = std::countr_zero(word);
        adj_.push_back(static_cast<std::uint32_t>(w * 64 + b));
        word &= word - 1;
      }
    }
    offsets_[i + 1] = adj_.size();
    degrees_[i] = offsets_[i + 1] - offsets_[i];
  }
  edge_count_ = adj_.size() / 2;

  // Connected components by BFS, labelled in order of lowest member.
  constexpr std::uint32_t kUnset = std::numeric_limits<std::uint32_t>::max();
  component_.assign(n_, kUnset);
  component_count_ = 0;
  std::vector<std::uint32_t> queue;
  queue.reserve(n_);
  for (std::size_t s = 0; s < n_; ++s) {
    if (component_[s] != kUnset) continue;
    const auto label = static_cast<std::uint32_t>(component_count_++);
    component_[s] = label;
    queue.assign(1, static_cast<std::uint32_t>(s));
    for (std::size_t head = 0; head < queue.size(); ++head) {
      for (std::uint32_t v : neighbors(queue[head])) {
        if (component_[v] == kUnset) {
          component_[v] = label;
          queue.push_back(v);
        }
      }
    }
  }
}

std::vector<Edge> NetworkGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(edge_count_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::uint32_t j : neighbors(i)) {
      if (j > i) out.emplace_back(i, j);
    }
  }
  return out;
}

std::size_t InterferenceGraph::pair_count() const {
  std::size_t total = 0;
  for (const auto& s : sets) total += s.size();
  return total;
}

NetworkGraph erdos_renyi(std::size_t n, double p, std::uint64_t seed) {
  if (n < 2) throw ConfigError("erdos_renyi: need at least 2 units, got " + std::to_string(n));
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("erdos_renyi: edge probability must lie in [0, 1]");
  Rng rng(seed);
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(p * static_cast<double>(n * (n - 1) / 2)) + 16);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) edges.emplace_back(i, j);
    }
  }
  return NetworkGraph::from_edges(n, edges);
}

DistanceMatrix bfs_distances(const NetworkGraph& g) {
  const std::size_t n = g.size();
  const std::size_t words = g.words_per_row();
  DistanceMatrix d(n);
  std::vector<std::uint64_t> visited(words), next(words);
  std::vector<std::uint32_t> frontier, upcoming;
  frontier.reserve(n);
  upcoming.reserve(n);

  for (std::size_t s = 0; s < n; ++s) {
    std::fill(visited.begin(), visited.end(), 0);
    visited[s >> 6] |= 1ULL << (s & 63);
    d(s, s) = 0;
    frontier.assign(1, static_cast<std::uint32_t>(s));
    std::int32_t level = 0;
    while (!frontier.empty()) {
      ++level;
      std::fill(next.begin(), next.end(), 0);
      for (std::uint32_t u : frontier) {
        // Dense rows are cheaper to OR wholesale; sparse ones to walk.
        if (g.degree(u) >= words) {
          const auto row = g.bit_row(u);
          for (std::size_t w = 0; w < words; ++w) next[w] |= row[w];
        } else {
          for (std::uint32_t v : g.neighbors(u)) next[v >> 6] |= 1ULL << (v & 63);
        }
      }
      upcoming.clear();
      for (std::size_t w = 0; w < words; ++w) {
        std::uint64_t fresh = next[w] & ~visited[w];
        visited[w] |= fresh;
        while (fresh != 0) {
          const auto v = static_cast<std::uint32_t>(w * 64 + std::countr_zero(fresh));
          d(s, v) = level;
          upcoming.push_back(v);
          fresh &= fresh - 1;
        }
      }
      frontier.swap(upcoming);
    }
  }
  return d;
}

InterferenceGraph interference_sets(const NetworkGraph& g, const DistanceMatrix& d, int radius) {
  if (radius < 1) throw ConfigError("interference radius K must be >= 1, got " + std::to_string(radius));
  if (d.size() != g.size()) throw ShapeError("distance matrix does not match graph size");
  const std::size_t n = g.size();
  InterferenceGraph out;
  out.radius = radius;
  out.sets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (radius == 1) {
      const auto nb = g.neighbors(i);
      out.sets[i].assign(nb.begin(), nb.end());
      continue;
    }
    const auto row = d.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (row[j] >= 1 && row[j] <= radius) out.sets[i].push_back(static_cast<std::uint32_t>(j));
    }
  }
  return out;
}

GraphStats graph_stats(const NetworkGraph& g, const DistanceMatrix& d) {
  const std::size_t n = g.size();
  if (n == 0) throw StatisticError("graph_stats: empty graph");
  if (d.size() != n) throw ShapeError("distance matrix does not match graph size");

  GraphStats stats;
  stats.avg_degree = 2.0 * static_cast<double>(g.edge_count()) / static_cast<double>(n);

  std::vector<std::size_t> sizes(g.component_count(), 0);
  for (auto c : g.component_ids()) ++sizes[c];
  // Labels follow lowest member, so the first maximum wins ties correctly.
  const auto largest = static_cast<std::uint32_t>(
      std::distance(sizes.begin(), std::max_element(sizes.begin(), sizes.end())));
  const std::size_t m = sizes[largest];
  stats.largest_component_size = m;
  if (m < 2) throw StatisticError("graph_stats: largest component has a single unit; path length undefined");

  std::vector<std::uint32_t> members;
  members.reserve(m);
  for (std::size_t i = 0; i < n; ++i) {
    if (g.component_ids()[i] == largest) members.push_back(static_cast<std::uint32_t>(i));
  }
  std::uint64_t total = 0;
  for (std::uint32_t i : members) {
    const auto row = d.row(i);
    for (std::uint32_t j : members) total += static_cast<std::uint64_t>(row[j]);  // row[i] == 0
  }
  stats.avg_path_length = static_cast<double>(total) / (static_cast<double>(m) * static_cast<double>(m - 1));
  return stats;
}

int hac_bandwidth(std::size_t n, double avg_degree, double avg_path_length) {
  if (n < 2) throw ConfigError("hac_bandwidth: need at least 2 units");
  if (!(avg_degree > 1.0)) {
    throw BandwidthError("hac_bandwidth: average degree must exceed 1 (got " + std::to_string(avg_degree) + ")");
  }
  if (!std::isfinite(avg_path_length) || !(avg_path_length > 0.0)) {
    throw BandwidthError("hac_bandwidth: average path length must be finite and positive");
  }
  const double threshold = std::pow(2.0, std::log(static_cast<double>(n)) / std::log(avg_degree));
  const double raw = avg_path_length < threshold ? avg_path_length / 4.0 : std::pow(avg_path_length, 0.25);
  return std::max(1, static_cast<int>(std::ceil(raw)));
}

}  // namespace netdid
