#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <unistd.h>

#include "test_support.hpp"
#include "wtnn/dataio.hpp"
#include "wtnn/errors.hpp"

using namespace wtnn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wtnn_dataio_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetSchema fleet_schema() {
  DatasetSchema s;
  s.id_column = "vehicle";
  s.duration_column = "hours";
  s.event_column = "failed";
  s.covariates = {{"load", CovariateKind::OrdinalMonotone, Direction::SurvivalDecreasing},
                  {"maintenance", CovariateKind::OrdinalMonotone, Direction::SurvivalIncreasing},
                  {"age", CovariateKind::Ordinal, Direction::SurvivalDecreasing},
                  {"site", CovariateKind::Nominal, Direction::SurvivalDecreasing}};
  return s;
}

// Three vehicles, ten missions; the last mission of each vehicle is the test row.
const char* kFleet =
    "vehicle,hours,failed,load,maintenance,age,site\n"
    "A,12.5,1,3.0,1,2,north\n"
    "A,8,1,4.5,0,3,south\n"
    "A,20,0,1.0,2,4,east\n"
    "B,5,1,6.0,1,1,west\n"
    "B,15,1,2.0,3,2,\"north\"\n"
    "B,9.5,1,3.5,1,3,centre\n"
    "B,30,0,0.5,4,4,south\n"
    "C,2.5,1,7.0,0,1,east\n"
    "C,11,1,2.5,2,2,west\n"
    "C,6,1,4.0,1,3,centre\n";

}  // namespace

TEST_CASE("schema JSON round trip and validation") {
  const DatasetSchema s = fleet_schema();
  const DatasetSchema back = DatasetSchema::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());
  REQUIRE(back.covariates.size() == 4);
  CHECK(back.covariates[1].direction == Direction::SurvivalIncreasing);
  CHECK(back.covariates[3].kind == CovariateKind::Nominal);

  DatasetSchema dup = s;
  dup.covariates.push_back({"load", CovariateKind::Ordinal, Direction::SurvivalDecreasing});
  CHECK_THROWS_AS(dup.validate(), UsageError);
  CHECK_THROWS_AS(DatasetSchema::from_json(R"({"id_column":"a","duration_column":"b","event_column":"c",
      "covariates":[{"name":"x","kind":"fuzzy"}]})"),
                  UsageError);
}

TEST_CASE("CSV parsing handles quotes, CRLF and a byte order mark") {
  const CsvTable t = parse_csv("\xEF\xBB\xBFid,note\r\n1,\"a, \"\"b\"\"\"\r\n2,plain\r\n");
  REQUIRE(t.header.size() == 2);
  CHECK(t.header[0] == "id");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "a, \"b\"");
  CHECK(t.rows[1][1] == "plain");
  CHECK_THROWS_AS(parse_csv("a,b\n1,\"open\n"), DataError);
  CHECK_THROWS_AS(parse_csv(""), DataError);
}

TEST_CASE("encoding of a small fleet table") {
  const LoadedData ld = encode_table(parse_csv(kFleet), fleet_schema());
  const Dataset& d = ld.data;
  REQUIRE(d.size() == 10);
  // load, maintenance, age, then five site indicators.
  REQUIRE(d.X.cols == 8);
  CHECK(ld.partition.oa == std::vector<std::size_t>{0, 1});
  CHECK(ld.partition.ob == std::vector<std::size_t>{2});
  CHECK(ld.partition.nom == std::vector<std::size_t>{3, 4, 5, 6, 7});
  CHECK(d.columns[3] == "site=centre");
  CHECK(d.columns[7] == "site=west");

  // Each row has exactly one indicator set, at its sorted level position.
  const std::vector<std::string> site = {"north", "south", "east", "west", "north",
                                         "centre", "south", "east", "west", "centre"};
  const std::vector<std::string> levels = {"centre", "east", "north", "south", "west"};
  for (std::size_t i = 0; i < d.size(); ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      sum += d.X(i, 3 + k);
      CHECK(d.X(i, 3 + k) == (levels[k] == site[i] ? 1.0 : 0.0));
    }
    CHECK(sum == 1.0);
  }

  // Standardised numerics: zero mean, unit population variance.
  for (std::size_t k = 0; k < 3; ++k) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) m += d.X(i, k);
    m /= 10.0;
    for (std::size_t i = 0; i < d.size(); ++i) v += (d.X(i, k) - m) * (d.X(i, k) - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 10.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Survival-increasing maintenance is negated: more maintenance maps lower.
  CHECK(d.X(6, 1) < d.X(7, 1));
  // Durations are scaled so the shortest becomes 1.
  CHECK(ld.stats.duration_factor == doctest::Approx(1.0 / 2.5));
  CHECK(d.z[7] == doctest::Approx(1.0));
  CHECK(d.z[0] == doctest::Approx(5.0));
  CHECK(d.delta[2] == 0);
  CHECK(d.vehicles() == std::vector<std::string>{"A", "B", "C"});

  const Split sp = time_split(d);
  CHECK(sp.train.size() == 7);
  CHECK(sp.test.size() == 3);
  CHECK(sp.test.z[0] == doctest::Approx(20.0 / 2.5));
}

TEST_CASE("stored statistics replay the encoding exactly") {
  const CsvTable table = parse_csv(kFleet);
  const LoadedData first = encode_table(table, fleet_schema());
  const NormalizationStats replayed = NormalizationStats::from_json(first.stats.to_json());
  const LoadedData second = encode_table(table, fleet_schema(), replayed);
  CHECK(second.data.X.data == first.data.X.data);
  CHECK(second.data.z == first.data.z);
  CHECK(second.stats.to_json() == first.stats.to_json());
}

TEST_CASE("identity statistics leave a normalised export unchanged") {
  DatasetSchema s;
  s.id_column = "vehicle";
  s.duration_column = "hours";
  s.event_column = "failed";
  s.covariates = {{"load", CovariateKind::OrdinalMonotone, Direction::SurvivalDecreasing},
                  {"age", CovariateKind::Ordinal, Direction::SurvivalDecreasing}};
  const LoadedData first = encode_table(parse_csv(kFleet), s);
  const Dataset& d = first.data;

  std::string csv = "vehicle,hours,failed,load,age\n";
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i) {
    csv += d.vehicle[i];
    for (double v : {d.z[i], static_cast<double>(d.delta[i]), d.X(i, 0), d.X(i, 1)}) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      csv += buf;
    }
    csv += "\n";
  }
  NormalizationStats identity;
  identity.numeric = {{"load", 0.0, 1.0}, {"age", 0.0, 1.0}};
  const LoadedData again = encode_table(parse_csv(csv), s, identity);
  CHECK(again.data.X.data == d.X.data);
  CHECK(again.data.z == d.z);
  CHECK(again.data.delta == d.delta);
}

TEST_CASE("data errors name the row and column") {
  const DatasetSchema s = fleet_schema();
  auto message = [&](const std::string& csv, const std::optional<NormalizationStats>& st = std::nullopt) {
    try {
      encode_table(parse_csv(csv), s, st);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string head = "vehicle,hours,failed,load,maintenance,age,site\n";
  std::string m = message(head + "A,1,1,2,1,1,x\nA,-3,1,2,1,1,x\n");
  CHECK(m.find("data row 2") != std::string::npos);
  CHECK(m.find("'hours'") != std::string::npos);
  m = message(head + "A,1,1,abc,1,1,x\n");
  CHECK(m.find("data row 1") != std::string::npos);
  CHECK(m.find("'load'") != std::string::npos);
  m = message(head + "A,1,2,1,1,1,x\n");
  CHECK(m.find("'failed'") != std::string::npos);
  m = message("vehicle,hours,failed,load,maintenance,age\nA,1,1,1,1,1\n");
  CHECK(m.find("'site'") != std::string::npos);
  m = message(head + "A,1,1,1,1,1\n");
  CHECK(m.find("line 2") != std::string::npos);

  const NormalizationStats st = encode_table(parse_csv(kFleet), s).stats;
  m = message(head + "A,1,1,1,1,1,mars\n", st);
  CHECK(m.find("unknown category 'mars'") != std::string::npos);
  CHECK(m.find("'site'") != std::string::npos);
}

TEST_CASE("model round trip gives bit-identical predictions") {
  std::mt19937_64 rng(5);
  for (HeadStyle style : {HeadStyle::Linear, HeadStyle::MiniMlp}) {
    test::Instance inst = test::random_instance(rng, style);
    inst.spec.use_batch_norm = style == HeadStyle::MiniMlp;
    Rng r2(rng());
    inst.params = init_params(inst.spec, r2, {0.3, 0.5, true});
    FittedModel m{inst.spec, inst.params, fleet_schema(), NormalizationStats{}, {7, fnv1a_hex("cfg"), 2}};
    const std::string text = model_to_json(m);
    const FittedModel back = model_from_json(text);
    CHECK(model_to_json(back) == text);
    CHECK(back.meta.chosen_restart == 2);
    CHECK(back.meta.config_hash == fnv1a_hex("cfg"));
    for (int k = 0; k < 20; ++k) {
      std::vector<double> x(inst.spec.d);
      std::normal_distribution<double> nd;
      for (auto& v : x) v = nd(rng);
      const NetOutput a = forward(inst.params, inst.spec, x);
      const NetOutput b = forward(back.params, back.spec, x);
      CHECK(a.eta == b.eta);
      CHECK(a.beta == b.beta);
    }

    CHECK_THROWS_AS(model_from_json(text.substr(0, text.size() / 2)), DataError);
    std::string bumped = text;
    const auto pos = bumped.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    bumped.replace(pos, 19, "\"format_version\": 2");
    try {
      model_from_json(bumped);
      FAIL("bumped version accepted");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("format_version") != std::string::npos);
    }
  }
}

TEST_CASE("atomic writes replace whole files") {
  const fs::path dir = scratch_dir("atomic");
  const fs::path f = dir / "model.json";
  write_file_atomic(f, "first");
  write_file_atomic(f, "second");
  CHECK(read_file(f) == "second");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
  CHECK(entries == 1);
  CHECK_THROWS_AS(write_file_atomic(dir / "missing" / "x.json", "x"), DataError);
  CHECK_THROWS_AS(read_file(dir / "absent.json"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}
