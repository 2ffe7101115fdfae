#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wtnn/losses.hpp"
#include "wtnn/matrix.hpp"

namespace wtnn {

/// Encoded missions. Rows of one vehicle appear in chronological order.
struct Dataset {
  Matrix X;
  std::vector<double> z;
  std::vector<int> delta;
  std::vector<std::string> vehicle;
  std::vector<std::string> columns;  // encoded covariate names, X.cols of them

  [[nodiscard]] std::size_t size() const { return z.size(); }
  /// Throws DataError on a bad row, UsageError on inconsistent lengths.
  void validate() const;
  [[nodiscard]] Dataset subset(std::span<const std::size_t> rows) const;
  /// Batch with the given per-row weights (all ones when empty).
  [[nodiscard]] Batch to_batch(std::span<const double> w = {}) const;
  /// Distinct vehicle ids in order of first appearance.
  [[nodiscard]] std::vector<std::string> vehicles() const;
};

struct Split {
  Dataset train;
  Dataset test;
  std::vector<std::string> single_mission_vehicles;
};

/// Each vehicle's last mission goes to test, the rest to train. Vehicles with
/// one mission stay wholly in train and are listed.
Split time_split(const Dataset& data);

}  // namespace wtnn
