#include "wtnn/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "wtnn/errors.hpp"

namespace wtnn {

using nlohmann::ordered_json;

namespace {

const char* kind_name(CovariateKind k) {
  switch (k) {
    case CovariateKind::OrdinalMonotone:
      return "ordinal_monotone";
    case CovariateKind::Ordinal:
      return "ordinal";
    case CovariateKind::Nominal:
      return "nominal";
  }
  return "";
}

CovariateKind parse_kind(const std::string& s) {
  if (s == "ordinal_monotone") return CovariateKind::OrdinalMonotone;
  if (s == "ordinal") return CovariateKind::Ordinal;
  if (s == "nominal") return CovariateKind::Nominal;
  throw UsageError("schema: unknown covariate kind '" + s + "'");
}

Direction parse_direction(const std::string& s) {
  if (s == "survival_decreasing") return Direction::SurvivalDecreasing;
  if (s == "survival_increasing") return Direction::SurvivalIncreasing;
  throw UsageError("schema: unknown direction '" + s + "'");
}

ordered_json parse_json(const std::string& text, const char* what) {
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string(what) + ": " + e.what());
  }
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
  if (b == e) return false;
  if (*b == '+') ++b;
  const auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e && std::isfinite(out);
}

std::string where(std::size_t row, const std::string& column) {
  return "data row " + std::to_string(row + 1) + " (line " + std::to_string(row + 2) + "), column '" + column + "'";
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema and statistics

void DatasetSchema::validate() const {
  if (id_column.empty() || duration_column.empty() || event_column.empty())
    throw UsageError("schema: id, duration and event columns are required");
  std::set<std::string> names{id_column};
  for (const auto& n : {duration_column, event_column})
    if (!names.insert(n).second) throw UsageError("schema: duplicate column '" + n + "'");
  for (const auto& c : covariates) {
    if (c.name.empty()) throw UsageError("schema: covariate with empty name");
    if (!names.insert(c.name).second) throw UsageError("schema: duplicate column '" + c.name + "'");
  }
}

std::string DatasetSchema::to_json() const {
  ordered_json j;
  j["id_column"] = id_column;
  j["duration_column"] = duration_column;
  j["event_column"] = event_column;
  j["covariates"] = ordered_json::array();
  for (const auto& c : covariates) {
    ordered_json cj{{"name", c.name}, {"kind", kind_name(c.kind)}};
    if (c.kind == CovariateKind::OrdinalMonotone)
      cj["direction"] = c.direction == Direction::SurvivalIncreasing ? "survival_increasing" : "survival_decreasing";
    j["covariates"].push_back(std::move(cj));
  }
  return j.dump(2);
}

DatasetSchema DatasetSchema::from_json(const std::string& text) {
  const auto j = parse_json(text, "schema");
  DatasetSchema s;
  try {
    s.id_column = j.at("id_column").get<std::string>();
    s.duration_column = j.at("duration_column").get<std::string>();
    s.event_column = j.at("event_column").get<std::string>();
    for (const auto& cj : j.at("covariates")) {
      CovariateSpec c;
      c.name = cj.at("name").get<std::string>();
      c.kind = parse_kind(cj.at("kind").get<std::string>());
      if (cj.contains("direction")) c.direction = parse_direction(cj.at("direction").get<std::string>());
      s.covariates.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

std::string NormalizationStats::to_json() const {
  ordered_json j;
  j["duration_factor"] = duration_factor;
  j["numeric"] = ordered_json::array();
  for (const auto& n : numeric) j["numeric"].push_back({{"name", n.name}, {"center", n.center}, {"scale", n.scale}});
  j["nominal"] = ordered_json::array();
  for (const auto& n : nominal) j["nominal"].push_back({{"name", n.name}, {"levels", n.levels}});
  return j.dump(2);
}

NormalizationStats NormalizationStats::from_json(const std::string& text) {
  const auto j = parse_json(text, "normalization");
  NormalizationStats s;
  try {
    s.duration_factor = j.at("duration_factor").get<double>();
    for (const auto& n : j.at("numeric"))
      s.numeric.push_back({n.at("name").get<std::string>(), n.at("center").get<double>(), n.at("scale").get<double>()});
    for (const auto& n : j.at("nominal"))
      s.nominal.push_back({n.at("name").get<std::string>(), n.at("levels").get<std::vector<std::string>>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("normalization: ") + e.what());
  }
  if (!(s.duration_factor > 0.0) || !std::isfinite(s.duration_factor))
    throw DataError("normalization: duration_factor must be positive");
  for (const auto& n : s.numeric)
    if (!(n.scale > 0.0)) throw DataError("normalization: scale of '" + n.name + "' must be positive");
  return s;
}

// ---------------------------------------------------------------------------
// CSV

CsvTable parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool any = false;
  auto end_record = [&] {
    fields.push_back(field);
    field.clear();
    if (!(fields.size() == 1 && fields[0].empty() && !any)) records.push_back(fields);
    fields.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
      any = true;
    } else if (c == '\n') {
      end_record();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (!field.empty() || !fields.empty() || any) end_record();
  if (records.empty()) throw DataError("csv: missing header row");
  CsvTable t;
  t.header = records.front();
  if (!t.header.empty() && t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0].erase(0, 3);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw DataError("csv: data row " + std::to_string(r) + " (line " + std::to_string(r + 1) + ") has " +
                      std::to_string(records[r].size()) + " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

// ---------------------------------------------------------------------------
// Encoding

CovariatePartition partition_for(const DatasetSchema& schema, const NormalizationStats& stats) {
  CovariatePartition p;
  std::size_t col = 0;
  std::size_t nom = 0;
  for (const auto& c : schema.covariates) {
    if (c.kind == CovariateKind::Nominal) {
      for (std::size_t k = 0; k < stats.nominal.at(nom).levels.size(); ++k) p.nom.push_back(col++);
      ++nom;
    } else {
      (c.kind == CovariateKind::OrdinalMonotone ? p.oa : p.ob).push_back(col++);
    }
  }
  p.d = col;
  return p;
}

LoadedData encode_table(const CsvTable& table, const DatasetSchema& schema,
                        const std::optional<NormalizationStats>& given) {
  schema.validate();
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < table.header.size(); ++k) index[table.header[k]] = k;
  auto column = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("csv: missing column '" + name + "'");
    return it->second;
  };
  const std::size_t n = table.rows.size();
  if (n == 0) throw DataError("csv: no data rows");
  const std::size_t c_id = column(schema.id_column);
  const std::size_t c_dur = column(schema.duration_column);
  const std::size_t c_evt = column(schema.event_column);

  LoadedData out;
  Dataset& d = out.data;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    double z = 0.0;
    if (!parse_double(row[c_dur], z)) throw DataError("csv: non-numeric duration at " + where(r, schema.duration_column));
    if (!(z > 0.0)) throw DataError("csv: non-positive duration at " + where(r, schema.duration_column));
    const std::string& e = row[c_evt];
    if (e != "0" && e != "1") throw DataError("csv: event flag must be 0 or 1 at " + where(r, schema.event_column));
    if (row[c_id].empty()) throw DataError("csv: empty id at " + where(r, schema.id_column));
    d.z.push_back(z);
    d.delta.push_back(e == "1" ? 1 : 0);
    d.vehicle.push_back(row[c_id]);
    out.source_rows.push_back(r);
  }

  // Raw covariate values; nominal levels collected as strings.
  std::vector<std::vector<double>> numeric;
  std::vector<std::vector<std::string>> nominal;
  for (const auto& c : schema.covariates) {
    const std::size_t k = column(c.name);
    if (c.kind == CovariateKind::Nominal) {
      std::vector<std::string> v;
      for (std::size_t r = 0; r < n; ++r) {
        if (table.rows[r][k].empty()) throw DataError("csv: empty category at " + where(r, c.name));
        v.push_back(table.rows[r][k]);
      }
      nominal.push_back(std::move(v));
    } else {
      std::vector<double> v(n);
      const double sign = c.kind == CovariateKind::OrdinalMonotone && c.direction == Direction::SurvivalIncreasing ? -1.0 : 1.0;
      for (std::size_t r = 0; r < n; ++r) {
        if (!parse_double(table.rows[r][k], v[r])) throw DataError("csv: non-numeric value at " + where(r, c.name));
        v[r] = sign * v[r];
      }
      numeric.push_back(std::move(v));
    }
  }

  if (given) {
    out.stats = *given;
    std::size_t n_num = 0;
    std::size_t n_nom = 0;
    for (const auto& c : schema.covariates) (c.kind == CovariateKind::Nominal ? n_nom : n_num) += 1;
    if (out.stats.numeric.size() != n_num || out.stats.nominal.size() != n_nom)
      throw DataError("normalization statistics do not match the schema");
  } else {
    NormalizationStats& s = out.stats;
    std::size_t inum = 0;
    std::size_t inom = 0;
    for (const auto& c : schema.covariates) {
      if (c.kind == CovariateKind::Nominal) {
        std::set<std::string> lv(nominal[inom].begin(), nominal[inom].end());
        s.nominal.push_back({c.name, std::vector<std::string>(lv.begin(), lv.end())});
        ++inom;
      } else {
        const auto& v = numeric[inum++];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double sd = std::sqrt(var / static_cast<double>(n));
        s.numeric.push_back({c.name, mean, sd > 0.0 ? sd : 1.0});
      }
    }
    s.duration_factor = 1.0 / *std::min_element(d.z.begin(), d.z.end());
  }

  for (double& z : d.z) z *= out.stats.duration_factor;
  out.partition = partition_for(schema, out.stats);
  d.X = Matrix(n, out.partition.d);
  std::size_t col = 0;
  std::size_t inum = 0;
  std::size_t inom = 0;
  for (const auto& c : schema.covariates) {
    if (c.kind == CovariateKind::Nominal) {
      const auto& lv = out.stats.nominal[inom];
      if (lv.name != c.name) throw DataError("normalization statistics do not match covariate '" + c.name + "'");
      for (std::size_t r = 0; r < n; ++r) {
        const auto it = std::lower_bound(lv.levels.begin(), lv.levels.end(), nominal[inom][r]);
        if (it == lv.levels.end() || *it != nominal[inom][r])
          throw DataError("csv: unknown category '" + nominal[inom][r] + "' at " + where(r, c.name));
        d.X(r, col + static_cast<std::size_t>(it - lv.levels.begin())) = 1.0;
      }
      for (const auto& l : lv.levels) d.columns.push_back(c.name + "=" + l);
      col += lv.levels.size();
      ++inom;
    } else {
      const auto& st = out.stats.numeric[inum];
      if (st.name != c.name) throw DataError("normalization statistics do not match covariate '" + c.name + "'");
      for (std::size_t r = 0; r < n; ++r) d.X(r, col) = (numeric[inum][r] - st.center) / st.scale;
      d.columns.push_back(c.name);
      ++col;
      ++inum;
    }
  }
  d.validate();
  return out;
}

LoadedData load_dataset(const std::filesystem::path& csv, const DatasetSchema& schema,
                        const std::optional<NormalizationStats>& stats) {
  return encode_table(read_csv(csv), schema, stats);
}

// ---------------------------------------------------------------------------
// Model serialisation

namespace {

ordered_json spec_json(const ArchSpec& s) {
  ordered_json j;
  j["widths"] = s.widths;
  j["d"] = s.d;
  j["partition"] = {{"oa", s.partition.oa}, {"ob", s.partition.ob}, {"nom", s.partition.nom}};
  j["eta_min"] = s.eta_min;
  j["beta_min"] = s.beta_min;
  j["beta_max"] = s.beta_max;
  j["head_style"] = s.head_style == HeadStyle::Linear ? "linear" : "mini_mlp";
  j["head_r"] = s.head_r;
  j["dropout_rate"] = s.dropout_rate;
  j["use_batch_norm"] = s.use_batch_norm;
  j["monotone_weights"] = s.monotone_weights;
  j["beta_threshold"] = s.beta_threshold;
  return j;
}

ArchSpec spec_of(const ordered_json& j) {
  ArchSpec s;
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.d = j.at("d").get<std::size_t>();
  s.partition.d = s.d;
  s.partition.oa = j.at("partition").at("oa").get<std::vector<std::size_t>>();
  s.partition.ob = j.at("partition").at("ob").get<std::vector<std::size_t>>();
  s.partition.nom = j.at("partition").at("nom").get<std::vector<std::size_t>>();
  s.eta_min = j.at("eta_min").get<double>();
  s.beta_min = j.at("beta_min").get<double>();
  s.beta_max = j.at("beta_max").get<double>();
  const auto style = j.at("head_style").get<std::string>();
  if (style != "linear" && style != "mini_mlp") throw DataError("model: unknown head_style '" + style + "'");
  s.head_style = style == "linear" ? HeadStyle::Linear : HeadStyle::MiniMlp;
  s.head_r = j.at("head_r").get<std::size_t>();
  s.dropout_rate = j.at("dropout_rate").get<double>();
  s.use_batch_norm = j.at("use_batch_norm").get<bool>();
  s.monotone_weights = j.at("monotone_weights").get<bool>();
  s.beta_threshold = j.at("beta_threshold").get<double>();
  return s;
}

const char* tensor_kind_name(TensorKind k) {
  return k == TensorKind::Weight ? "weight" : (k == TensorKind::Bias ? "bias" : "scale");
}

ordered_json params_json(const ParamSet& p) {
  ordered_json j;
  j["tensors"] = ordered_json::array();
  for (const auto& t : p.tensors) {
    std::vector<int> pos(t.positive.begin(), t.positive.end());
    j["tensors"].push_back({{"name", t.name},
                            {"kind", tensor_kind_name(t.kind)},
                            {"rows", t.rows},
                            {"cols", t.cols},
                            {"value", t.value},
                            {"positive", pos}});
  }
  j["bn_running"] = ordered_json::array();
  for (const auto& s : p.bn_running) j["bn_running"].push_back({{"mean", s.mean}, {"var", s.var}});
  return j;
}

ParamSet params_of(const ordered_json& j) {
  ParamSet p;
  for (const auto& tj : j.at("tensors")) {
    Tensor t;
    t.name = tj.at("name").get<std::string>();
    const auto kind = tj.at("kind").get<std::string>();
    if (kind == "weight") t.kind = TensorKind::Weight;
    else if (kind == "bias") t.kind = TensorKind::Bias;
    else if (kind == "scale") t.kind = TensorKind::Scale;
    else throw DataError("model: unknown tensor kind '" + kind + "'");
    t.rows = tj.at("rows").get<std::size_t>();
    t.cols = tj.at("cols").get<std::size_t>();
    t.value = tj.at("value").get<std::vector<double>>();
    for (int v : tj.at("positive").get<std::vector<int>>()) t.positive.push_back(v != 0 ? 1 : 0);
    if (t.value.size() != t.rows * t.cols || t.positive.size() != t.value.size())
      throw DataError("model: tensor '" + t.name + "' has inconsistent sizes");
    p.tensors.push_back(std::move(t));
  }
  for (const auto& sj : j.at("bn_running"))
    p.bn_running.push_back({sj.at("mean").get<std::vector<double>>(), sj.at("var").get<std::vector<double>>()});
  return p;
}

// Same names, shapes, positivity and batch-norm layout as make_param_layout(spec).
void check_layout(const ParamSet& p, const ArchSpec& spec) {
  const ParamSet ref = make_param_layout(spec);
  if (ref.tensors.size() != p.tensors.size()) throw DataError("model: parameter tensors do not match the architecture");
  for (std::size_t i = 0; i < ref.tensors.size(); ++i) {
    const auto& a = ref.tensors[i];
    const auto& b = p.tensors[i];
    if (a.name != b.name || a.kind != b.kind || a.rows != b.rows || a.cols != b.cols || a.positive != b.positive)
      throw DataError("model: tensor '" + b.name + "' does not match the architecture");
  }
  if (ref.bn_running.size() != p.bn_running.size()) throw DataError("model: batch-norm statistics do not match");
  for (std::size_t l = 0; l < ref.bn_running.size(); ++l)
    if (ref.bn_running[l].mean.size() != p.bn_running[l].mean.size() ||
        ref.bn_running[l].var.size() != p.bn_running[l].var.size())
      throw DataError("model: batch-norm statistics do not match");
}

}  // namespace

std::string spec_to_json(const ArchSpec& spec) { return spec_json(spec).dump(2); }

ArchSpec spec_from_json(const std::string& text) {
  try {
    ArchSpec s = spec_of(parse_json(text, "architecture"));
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("architecture: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("architecture: ") + e.what());
  }
}

std::string params_to_json(const ParamSet& params) { return params_json(params).dump(2); }

ParamSet params_from_json(const std::string& text) {
  try {
    return params_of(parse_json(text, "parameters"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("parameters: ") + e.what());
  }
}

std::string model_to_json(const FittedModel& m) {
  ordered_json j;
  j["format_version"] = kModelFormatVersion;
  j["arch"] = spec_json(m.spec);
  j["params"] = params_json(m.params);
  j["schema"] = ordered_json::parse(m.schema.to_json());
  j["normalization"] = ordered_json::parse(m.stats.to_json());
  j["train"] = {{"seed", m.meta.seed}, {"config_hash", m.meta.config_hash}, {"chosen_restart", m.meta.chosen_restart}};
  return j.dump(2) + "\n";
}

FittedModel model_from_json(const std::string& text) {
  const auto j = parse_json(text, "model");
  FittedModel m;
  try {
    if (!j.is_object() || !j.contains("format_version")) throw DataError("model: missing format_version");
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw DataError("model: unsupported format_version " + std::to_string(version) + " (expected " +
                      std::to_string(kModelFormatVersion) + ")");
    m.spec = spec_of(j.at("arch"));
    m.spec.validate();
    m.params = params_of(j.at("params"));
    check_layout(m.params, m.spec);
    m.schema = DatasetSchema::from_json(j.at("schema").dump());
    m.stats = NormalizationStats::from_json(j.at("normalization").dump());
    const auto& t = j.at("train");
    m.meta.seed = t.at("seed").get<std::uint64_t>();
    m.meta.config_hash = t.at("config_hash").get<std::string>();
    m.meta.chosen_restart = t.at("chosen_restart").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("model: ") + e.what());
  }
  return m;
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, model_to_json(model));
}

FittedModel load_model(const std::filesystem::path& path) { return model_from_json(read_file(path)); }

// ---------------------------------------------------------------------------
// Files

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw DataError("cannot write " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw DataError("cannot replace " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace wtnn
