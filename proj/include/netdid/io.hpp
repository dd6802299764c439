#pragma once

// Panel CSV files, edge lists, JSON reports and run manifests.
//
// Panel CSV: optional leading comment "# true_tau=<value>", then a header row
// naming id, D, Y0, Y1, W, Z, X1..Xd and optionally U1..Uk (any order), then
// one row per unit. ids must be 0..n-1, each exactly once.
//
// Edge list: one "i j" pair per line, 0-based; blank lines and lines starting
// with '#' are skipped.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>
#include <nlohmann/json.hpp>

#include "netdid/dgp.hpp"
#include "netdid/graph.hpp"

namespace netdid {

PanelDataset read_panel(const std::filesystem::path& path);

// Writes U columns and the true_tau comment when present and with_latent is set.
void write_panel(const PanelDataset& ds, const std::filesystem::path& path, bool with_latent = true);

NetworkGraph read_edge_list(const std::filesystem::path& path, std::size_t n);
void write_edge_list(const NetworkGraph& g, const std::filesystem::path& path);

struct NegativeControls {
  Vector w;  // treated share among neighbors
  Vector z;  // treated share among non-neighbors other than the unit itself
  std::vector<std::string> warnings;
};

NegativeControls derive_negative_controls(const Vector& d, const NetworkGraph& g);

// Writes text, creating parent directories; IoError naming the path on failure.
void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
  std::string subcommand;
  nlohmann::ordered_json config;
  nlohmann::ordered_json seeds;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
  double wall_clock_seconds = 0.0;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
};

// Hashes each file and records it.
void add_hashed(std::vector<std::pair<std::string, std::string>>& list, const std::filesystem::path& path);

void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

// printf("%.17g").
std::string format_double(double v);

}  // namespace netdid
