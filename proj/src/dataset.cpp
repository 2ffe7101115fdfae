#include "wtnn/dataset.hpp"

#include <cmath>
#include <map>

#include "wtnn/errors.hpp"

namespace wtnn {

void Dataset::validate() const {
  const std::size_t n = z.size();
  if (X.rows != n || delta.size() != n || vehicle.size() != n) throw UsageError("Dataset: column lengths differ");
  if (!columns.empty() && columns.size() != X.cols) throw UsageError("Dataset: column names do not match X");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(z[i] > 0.0) || !std::isfinite(z[i])) throw DataError("row " + std::to_string(i) + ": duration must be positive");
    if (delta[i] != 0 && delta[i] != 1) throw DataError("row " + std::to_string(i) + ": event flag must be 0 or 1");
    for (double v : X.row(i))
      if (!std::isfinite(v)) throw DataError("row " + std::to_string(i) + ": non-finite covariate");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.X = Matrix(rows.size(), X.cols);
  out.columns = columns;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = X.row(rows[i]);
    std::copy(src.begin(), src.end(), out.X.row(i).begin());
    out.z.push_back(z[rows[i]]);
    out.delta.push_back(delta[rows[i]]);
    out.vehicle.push_back(vehicle[rows[i]]);
  }
  return out;
}

Batch Dataset::to_batch(std::span<const double> w) const {
  if (!w.empty() && w.size() != size()) throw UsageError("Dataset: weight count differs from rows");
  Batch b;
  b.X = X;
  b.z = z;
  b.delta = delta;
  b.w = w.empty() ? std::vector<double>(size(), 1.0) : std::vector<double>(w.begin(), w.end());
  return b;
}

std::vector<std::string> Dataset::vehicles() const {
  std::vector<std::string> ids;
  std::map<std::string, bool> seen;
  for (const auto& v : vehicle)
    if (seen.emplace(v, true).second) ids.push_back(v);
  return ids;
}

Split time_split(const Dataset& data) {
  if (data.size() == 0) throw UsageError("time_split: empty dataset");
  std::map<std::string, std::size_t> last;
  std::map<std::string, std::size_t> count;
  for (std::size_t i = 0; i < data.size(); ++i) {
    last[data.vehicle[i]] = i;
    ++count[data.vehicle[i]];
  }
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& v = data.vehicle[i];
    if (count[v] >= 2 && last[v] == i) {
      test.push_back(i);
    } else {
      train.push_back(i);
    }
  }
  Split s{data.subset(train), data.subset(test), {}};
  for (const auto& v : data.vehicles())
    if (count[v] == 1) s.single_mission_vehicles.push_back(v);
  return s;
}

}  // namespace wtnn
