#include "netdid/exposure.hpp"

#include <charconv>
#include <cstdio>

#include "netdid/errors.hpp"

namespace netdid {

namespace {

double parse_number(std::string_view text, std::string_view what) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("exposure: cannot parse " + std::string(what) + " from '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

ExposureSpec ExposureSpec::parse(std::string_view text) {
  ExposureSpec spec;
  if (text == "any") {
    spec = any_treated();
  } else if (text == "fraction") {
    spec = fraction_treated();
  } else if (text.starts_with("atleast:")) {
    const double t = parse_number(text.substr(8), "threshold");
    if (t != static_cast<int>(t)) throw ConfigError("exposure: atleast threshold must be an integer");
    spec = at_least(static_cast<int>(t));
  } else if (text.starts_with("relative:")) {
    spec = relative_mean(parse_number(text.substr(9), "fraction"));
  } else {
    throw ConfigError("unknown exposure mapping '" + std::string(text) +
                      "' (expected any | atleast:T | relative:F | fraction)");
  }
  spec.validate();
  return spec;
}

std::string ExposureSpec::to_string() const {
  switch (kind) {
    case ExposureKind::kAnyTreated:
      return "any";
    case ExposureKind::kAtLeast:
      return "atleast:" + std::to_string(threshold);
    case ExposureKind::kRelativeMean: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "relative:%.17g", fraction);
      return buf;
    }
    case ExposureKind::kFractionTreated:
      return "fraction";
  }
  return "any";
}

void ExposureSpec::validate() const {
  if (radius != 1) throw ConfigError("exposure mappings are defined on the 1-neighborhood only");
  if (kind == ExposureKind::kAtLeast && threshold < 1) throw ConfigError("atleast threshold must be >= 1");
  if (kind == ExposureKind::kRelativeMean && !(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("relative fraction must lie in (0, 1]");
  }
}

void require_binary(const Vector& d, std::string_view name) {
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d[i] != 0.0 && d[i] != 1.0) {
      throw InputError(std::string(name) + " must be binary; entry " + std::to_string(i) + " is " +
                       std::to_string(d[i]));
    }
  }
}

Eigen::VectorXi treated_neighbor_count(const Vector& d, const NetworkGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  if (d.size() != n) throw ShapeError("treatment vector length does not match graph size");
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int c = 0;
    for (std::uint32_t j : g.neighbors(static_cast<std::size_t>(i))) c += d[j] != 0.0 ? 1 : 0;
    counts[i] = c;
  }
  return counts;
}

ExposureVector compute_exposure(const ExposureSpec& spec, const Vector& d, const NetworkGraph& g) {
  spec.validate();
  if (d.size() != static_cast<Eigen::Index>(g.size())) throw ShapeError("treatment vector length does not match graph size");
  require_binary(d);
  const Eigen::VectorXi counts = treated_neighbor_count(d, g);
  const auto n = counts.size();
  ExposureVector out(n);
  switch (spec.kind) {
    case ExposureKind::kAnyTreated:
      for (Eigen::Index i = 0; i < n; ++i) out[i] = counts[i] > 0 ? 1.0 : 0.0;
      break;
    case ExposureKind::kAtLeast:
      for (Eigen::Index i = 0; i < n; ++i) out[i] = counts[i] > spec.threshold - 1 ? 1.0 : 0.0;
      break;
    case ExposureKind::kRelativeMean: {
      const double cut = spec.fraction * counts.cast<double>().mean();
      for (Eigen::Index i = 0; i < n; ++i) out[i] = static_cast<double>(counts[i]) > cut ? 1.0 : 0.0;
      break;
    }
    case ExposureKind::kFractionTreated:
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto deg = g.degree(static_cast<std::size_t>(i));
        out[i] = deg == 0 ? 0.0 : static_cast<double>(counts[i]) / static_cast<double>(deg);
      }
      break;
  }
  return out;
}

}  // namespace netdid
