#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wtnn/dataset.hpp"
#include "wtnn/network.hpp"

namespace wtnn {

enum class CovariateKind { OrdinalMonotone, Ordinal, Nominal };
enum class Direction { SurvivalDecreasing, SurvivalIncreasing };

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::Ordinal;
  Direction direction = Direction::SurvivalDecreasing;  // ordinal_monotone only
};

struct DatasetSchema {
  std::string id_column;
  std::string duration_column;
  std::string event_column;
  std::vector<CovariateSpec> covariates;

  /// Throws UsageError on empty or duplicate column names.
  void validate() const;
  [[nodiscard]] std::string to_json() const;
  static DatasetSchema from_json(const std::string& text);
};

struct NumericStats {
  std::string name;
  double center = 0.0;
  double scale = 1.0;
};

struct NominalLevels {
  std::string name;
  std::vector<std::string> levels;  // sorted
};

/// Encoding learned on a training file and replayed on later files.
struct NormalizationStats {
  std::vector<NumericStats> numeric;
  std::vector<NominalLevels> nominal;
  double duration_factor = 1.0;  // normalised duration = raw * factor

  [[nodiscard]] std::string to_json() const;
  static NormalizationStats from_json(const std::string& text);
};

struct LoadedData {
  Dataset data;
  CovariatePartition partition;
  NormalizationStats stats;
  std::vector<std::size_t> source_rows;  // 0-based data row in the file
};

/// Parsed CSV: header plus rows of raw fields.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);

/// Encodes a CSV file. Without `stats` they are fitted on this file:
/// numerics standardised (survival_increasing ones negated first), nominal
/// levels sorted and one-hot encoded, durations scaled by 1 / min. With
/// `stats` the stored encoding is applied. Errors name the row and column.
LoadedData load_dataset(const std::filesystem::path& csv, const DatasetSchema& schema,
                        const std::optional<NormalizationStats>& stats = std::nullopt);
LoadedData encode_table(const CsvTable& table, const DatasetSchema& schema,
                        const std::optional<NormalizationStats>& stats = std::nullopt);

/// Positions of the encoded columns: ordinal_monotone -> o_a, ordinal -> o_b,
/// nominal indicators -> nominal.
CovariatePartition partition_for(const DatasetSchema& schema, const NormalizationStats& stats);

struct TrainMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t chosen_restart = 0;
};

struct FittedModel {
  ArchSpec spec;
  ParamSet params;
  DatasetSchema schema;
  NormalizationStats stats;
  TrainMetadata meta;
};

inline constexpr int kModelFormatVersion = 1;

std::string model_to_json(const FittedModel& model);
/// Throws DataError on malformed input or an unsupported format_version.
FittedModel model_from_json(const std::string& text);

std::string spec_to_json(const ArchSpec& spec);
ArchSpec spec_from_json(const std::string& text);
std::string params_to_json(const ParamSet& params);
ParamSet params_from_json(const std::string& text);

void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

/// Writes through a temporary file in the same directory, then renames.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& text);

}  // namespace wtnn
