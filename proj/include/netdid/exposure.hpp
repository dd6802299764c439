#pragma once

#include <string>
#include <string_view>

#include "netdid/graph.hpp"
#include "netdid/types.hpp"

namespace netdid {

enum class ExposureKind {
  kAnyTreated,       // 1{ #treated neighbors > 0 }
  kAtLeast,          // 1{ #treated neighbors >= threshold }
  kRelativeMean,     // 1{ #treated neighbors > fraction * network mean of that count }
  kFractionTreated,  // #treated neighbors / degree, 0 for isolated units
};

struct ExposureSpec {
  ExposureKind kind = ExposureKind::kAnyTreated;
  int threshold = 1;
  double fraction = 0.2;
  int radius = 1;

  static ExposureSpec any_treated() { return {}; }
  static ExposureSpec at_least(int t) { return {ExposureKind::kAtLeast, t, 0.2, 1}; }
  static ExposureSpec relative_mean(double f) { return {ExposureKind::kRelativeMean, 1, f, 1}; }
  static ExposureSpec fraction_treated() { return {ExposureKind::kFractionTreated, 1, 0.2, 1}; }

  // CLI syntax: any | atleast:T | relative:F | fraction
  static ExposureSpec parse(std::string_view text);
  std::string to_string() const;

  void validate() const;
};

using ExposureVector = Vector;

// Throws InputError unless every entry is exactly 0 or 1.
void require_binary(const Vector& d, std::string_view name = "D");

Eigen::VectorXi treated_neighbor_count(const Vector& d, const NetworkGraph& g);

ExposureVector compute_exposure(const ExposureSpec& spec, const Vector& d, const NetworkGraph& g);

}  // namespace netdid
