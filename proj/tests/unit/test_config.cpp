#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "covloc/config.hpp"
#include "covloc/errors.hpp"

namespace covloc {
namespace {

using nlohmann::json;

json minimal() {
  return json::parse(R"({
    "scenario": {
      "carrier_frequency_hz": 6e9,
      "array": {"elements": 4, "aperture_m": 2.0, "seed": 3},
      "trajectory": {"centre_m": [0, 5000, 0], "virtual_aperture_m": 10000, "observing_points": 4},
      "emitters": [{"position_m": [10, 20, 0]}],
      "snr_db": 5
    },
    "solver": {"grid": {"x_min": 0, "x_max": 100, "y_min": 0, "y_max": 100, "spacing": 50}}
  })");
}

std::string where_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.where();
  }
  return "<no error>";
}

TEST(Config, MinimalDocumentUsesDefaults) {
  const RunConfig cfg = parse_config(minimal());
  EXPECT_FALSE(cfg.has_experiment);
  const ScenarioTemplate& t = cfg.experiment.base_scenario;
  EXPECT_EQ(t.elements, 4u);
  EXPECT_EQ(t.emitters.at(0).power, 1.0);
  EXPECT_EQ(t.propagation.speed_mps, kSpeedOfLight);
  EXPECT_FALSE(cfg.experiment.solver.lambda.has_value());
  EXPECT_FALSE(cfg.experiment.on_grid_spacing.has_value());
  EXPECT_EQ(cfg.experiment.sweep_values, std::vector<double>{5.0});
}

TEST(Config, EveryShippedConfigParses) {
  int count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(COVLOC_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++count;
  }
  EXPECT_GE(count, 6);
}

TEST(Config, UnknownFieldIsReportedByPointer) {
  json doc = minimal();
  doc["solver"]["lamda"] = 1.0;
  EXPECT_EQ(where_of(doc), "/solver/lamda");
  doc = minimal();
  doc["extra"] = 1;
  EXPECT_EQ(where_of(doc), "/extra");
}

TEST(Config, TypeAndRangeErrorsPointAtTheField) {
  json doc = minimal();
  doc["scenario"]["emitters"][0]["position_m"] = {1, 2};
  EXPECT_EQ(where_of(doc), "/scenario/emitters/0/position_m");
  doc = minimal();
  doc["scenario"]["array"]["elements"] = "four";
  EXPECT_EQ(where_of(doc), "/scenario/array/elements");
  doc = minimal();
  doc["scenario"]["array"]["elements"] = -2;
  EXPECT_EQ(where_of(doc), "/scenario/array/elements");
  doc = minimal();
  doc["solver"]["grid"].erase("spacing");
  EXPECT_EQ(where_of(doc), "/solver/grid/spacing");
  doc = minimal();
  doc["solver"]["lambda"] = -1.0;
  EXPECT_EQ(where_of(doc), "/solver");
  doc = minimal();
  doc["experiment"] = {{"sweep_axis", "colour"}, {"sweep_values", {1}}};
  EXPECT_EQ(where_of(doc), "/experiment/sweep_axis");
  doc = minimal();
  doc["experiment"] = {{"sweep_axis", "snr"}, {"sweep_values", {5, 1}}};
  EXPECT_EQ(where_of(doc), "/experiment");
}

TEST(Config, ExplicitLayoutsAndTrajectories) {
  json doc = minimal();
  doc["scenario"]["array"] = {{"offsets_m", {{0, 0, 0}, {0.5, 0, 0}}}};
  doc["scenario"]["trajectory"] = {{"reference_positions_m", {{0, 0, 0}, {100, 0, 0}, {200, 0, 0}}}};
  const RunConfig cfg = parse_config(doc);
  const Scenario s = cfg.experiment.base_scenario.instantiate(0);
  EXPECT_EQ(s.trajectory.num_antennas(), 2u);
  EXPECT_EQ(s.trajectory.num_instants(), 3u);
  EXPECT_EQ(s.trajectory.antennas(2)(0, 1), 200.5);

  doc["scenario"]["array"]["elements"] = 3;
  EXPECT_EQ(where_of(doc), "/scenario/array/offsets_m");
}

TEST(Config, SyntaxErrorsCarryLineAndColumn) {
  const auto path = std::filesystem::temp_directory_path() / "covloc_bad_config.json";
  {
    std::ofstream out(path);
    out << "{\n  \"scenario\": {\n    \"snr_db\": ,\n  }\n}\n";
  }
  try {
    load_config(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.where(), "line 3, column 15");
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_config("/nonexistent/covloc.json"), ConfigError);
}

}  // namespace
}  // namespace covloc
