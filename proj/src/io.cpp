#include "netdid/io.hpp"

#include <openssl/evp.h>

#include <Eigen/Core>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "netdid/errors.hpp"
#include "netdid/exposure.hpp"

#ifndef NETDID_VERSION
#define NETDID_VERSION "0.0.0"
#endif

namespace netdid {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

// Indexed-family columns: prefix1..prefixK, contiguous from 1.
std::vector<std::size_t> family(const std::map<std::string, std::size_t>& cols, const std::string& prefix) {
  std::vector<std::size_t> out;
  for (int k = 1;; ++k) {
    const auto it = cols.find(prefix + std::to_string(k));
    if (it == cols.end()) break;
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

PanelDataset read_panel(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  long line_no = 0;
  std::optional<double> true_tau;

  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      const auto body = trim(t.substr(1));
      constexpr std::string_view key = "true_tau=";
      if (body.starts_with(key)) {
        double v;
        if (!parse_double(body.substr(key.size()), v) || !std::isfinite(v)) {
          throw SchemaError("malformed true_tau comment", line_no);
        }
        true_tau = v;
      }
      continue;
    }
    for (auto f : split(t, ',')) header.emplace_back(trim(f));
    break;
  }
  if (header.empty()) throw SchemaError("missing header row");

  std::map<std::string, std::size_t> cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!cols.emplace(header[c], c).second) throw SchemaError("duplicate column", -1, header[c]);
  }
  for (const char* req : {"id", "D", "Y0", "Y1", "W", "Z", "X1"}) {
    if (!cols.count(req)) throw SchemaError("missing required column", -1, req);
  }
  const auto x_cols = family(cols, "X");
  const auto u_cols = family(cols, "U");

  std::vector<std::vector<double>> rows;
  std::vector<long> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split(t, ',');
    if (fields.size() != header.size()) {
      throw SchemaError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                        line_no);
    }
    std::vector<double> vals(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (!parse_double(fields[c], vals[c])) throw SchemaError("not a number: '" + std::string(trim(fields[c])) + "'", line_no, header[c]);
      if (!std::isfinite(vals[c])) throw SchemaError("non-finite value", line_no, header[c]);
    }
    rows.push_back(std::move(vals));
    row_lines.push_back(line_no);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 2) throw SchemaError("dataset must contain at least 2 rows");

  std::vector<long> slot(rows.size(), -1);
  const std::size_t id_col = cols.at("id");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double id = rows[r][id_col];
    if (id != std::floor(id) || id < 0 || id >= static_cast<double>(n)) {
      throw SchemaError("id must be an integer in [0, " + std::to_string(n - 1) + "]", row_lines[r], "id");
    }
    auto& s = slot[static_cast<std::size_t>(id)];
    if (s >= 0) throw SchemaError("duplicate id " + format_double(id), row_lines[r], "id");
    s = static_cast<long>(r);
  }

  PanelDataset ds;
  ds.d.resize(n);
  ds.y0.resize(n);
  ds.y1.resize(n);
  ds.w.resize(n);
  ds.z.resize(n);
  ds.x.resize(n, static_cast<Eigen::Index>(x_cols.size()));
  Matrix u(n, static_cast<Eigen::Index>(u_cols.size()));
  const std::size_t dc = cols.at("D"), y0c = cols.at("Y0"), y1c = cols.at("Y1"), wc = cols.at("W"), zc = cols.at("Z");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(slot[static_cast<std::size_t>(i)]);
    const auto& v = rows[r];
    if (v[dc] != 0.0 && v[dc] != 1.0) throw SchemaError("D must be 0 or 1, found " + format_double(v[dc]), row_lines[r], "D");
    ds.d[i] = v[dc];
    ds.y0[i] = v[y0c];
    ds.y1[i] = v[y1c];
    ds.w[i] = v[wc];
    ds.z[i] = v[zc];
    for (std::size_t k = 0; k < x_cols.size(); ++k) ds.x(i, static_cast<Eigen::Index>(k)) = v[x_cols[k]];
    for (std::size_t k = 0; k < u_cols.size(); ++k) u(i, static_cast<Eigen::Index>(k)) = v[u_cols[k]];
  }
  ds.dy = ds.y1 - ds.y0;
  if (!u_cols.empty()) ds.u = std::move(u);
  ds.true_tau = true_tau;
  ds.validate();
  return ds;
}

void write_panel(const PanelDataset& ds, const fs::path& path, bool with_latent) {
  if (ds.size() < 2) throw InputError("refusing to write a dataset with fewer than 2 units");
  ds.validate();
  const bool latent = with_latent && ds.u.has_value();
  std::ostringstream os;
  if (with_latent && ds.true_tau) os << "# true_tau=" << format_double(*ds.true_tau) << '\n';
  os << "id,D,Y0,Y1,W,Z";
  for (Eigen::Index k = 0; k < ds.x.cols(); ++k) os << ",X" << k + 1;
  if (latent)
    for (Eigen::Index k = 0; k < ds.u->cols(); ++k) os << ",U" << k + 1;
  os << '\n';
  for (Eigen::Index i = 0; i < ds.d.size(); ++i) {
    os << i << ',' << format_double(ds.d[i]) << ',' << format_double(ds.y0[i]) << ',' << format_double(ds.y1[i]) << ','
       << format_double(ds.w[i]) << ',' << format_double(ds.z[i]);
    for (Eigen::Index k = 0; k < ds.x.cols(); ++k) os << ',' << format_double(ds.x(i, k));
    if (latent)
      for (Eigen::Index k = 0; k < ds.u->cols(); ++k) os << ',' << format_double((*ds.u)(i, k));
    os << '\n';
  }
  write_text(path, os.str());
}

NetworkGraph read_edge_list(const fs::path& path, std::size_t n) {
  std::ifstream in = open_in(path);
  std::vector<Edge> edges;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::istringstream ls{std::string(t)};
    long long a = -1, b = -1;
    std::string extra;
    if (!(ls >> a >> b) || (ls >> extra)) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected two integer indices");
    }
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": index out of range [0, " +
                       std::to_string(n) + ")");
    }
    edges.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
  }
  return NetworkGraph::from_edges(n, edges);
}

void write_edge_list(const NetworkGraph& g, const fs::path& path) {
  std::ostringstream os;
  for (const auto& [a, b] : g.edges()) os << a << ' ' << b << '\n';
  write_text(path, os.str());
}

NegativeControls derive_negative_controls(const Vector& d, const NetworkGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  if (d.size() != n) throw ShapeError("treatment vector length does not match graph");
  if (n < 3) throw InputError("negative controls need n >= 3");
  require_binary(d);
  const double total = d.sum();
  NegativeControls out;
  out.w.resize(n);
  out.z.resize(n);
  std::size_t isolated = 0, saturated = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto nb = g.neighbors(static_cast<std::size_t>(i));
    double treated_nb = 0.0;
    for (std::uint32_t j : nb) treated_nb += d[j];
    const double deg = static_cast<double>(nb.size());
    out.w[i] = nb.empty() ? 0.0 : treated_nb / deg;
    const double others = static_cast<double>(n - 1) - deg;
    if (nb.empty()) ++isolated;
    if (others > 0.0) {
      out.z[i] = (total - d[i] - treated_nb) / others;
    } else {
      out.z[i] = 0.0;
      ++saturated;
    }
  }
  if (isolated) out.warnings.push_back(std::to_string(isolated) + " isolated unit(s): W set to 0");
  if (saturated) out.warnings.push_back(std::to_string(saturated) + " unit(s) adjacent to everyone: Z set to 0");
  return out;
}

void write_text(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  out.close();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int k = 0; k < len; ++k) {
    out.push_back(kHex[digest[k] >> 4]);
    out.push_back(kHex[digest[k] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

json RunManifest::to_json() const {
  json in = json::object(), out = json::object();
  for (const auto& [p, h] : inputs) in[p] = h;
  for (const auto& [p, h] : outputs) out[p] = h;
  return json{{"tool", "netdid"},
              {"subcommand", subcommand},
              {"versions",
               {{"netdid", NETDID_VERSION},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"compiler", __VERSION__}}},
              {"config", config},
              {"seeds", seeds},
              {"inputs", std::move(in)},
              {"outputs", std::move(out)},
              {"wall_clock_seconds", wall_clock_seconds}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  m.config = j.at("config");
  m.seeds = j.value("seeds", json::object());
  for (const auto& [p, h] : j.at("inputs").items()) m.inputs.emplace_back(p, h.get<std::string>());
  for (const auto& [p, h] : j.at("outputs").items()) m.outputs.emplace_back(p, h.get<std::string>());
  m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
  return m;
}

void add_hashed(std::vector<std::pair<std::string, std::string>>& list, const fs::path& path) {
  list.emplace_back(path.string(), sha256_file(path));
}

void write_manifest(const RunManifest& m, const fs::path& path) { write_text(path, m.to_json().dump(2) + "\n"); }

RunManifest read_manifest(const fs::path& path) {
  try {
    return RunManifest::from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw InputError("malformed manifest '" + path.string() + "': " + e.what());
  }
}

}  // namespace netdid
