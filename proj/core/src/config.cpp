#include "covloc/config.hpp"

#include <fstream>
#include <initializer_list>
#include <iterator>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "covloc/errors.hpp"

namespace covloc {

namespace {

using nlohmann::json;

// Typed access to one JSON object with pointer-qualified diagnostics.
class Section {
 public:
  Section(const json& node, std::string pointer, std::initializer_list<const char*> allowed)
      : node_(node), pointer_(std::move(pointer)) {
    if (!node_.is_object()) throw ConfigError(where(), "expected an object");
    const std::set<std::string> known(allowed.begin(), allowed.end());
    for (const auto& [key, value] : node_.items()) {
      if (!known.count(key)) throw ConfigError(where(key), "unknown field");
    }
  }

  std::string where(const std::string& key = {}) const { return key.empty() ? pointer_ : pointer_ + "/" + key; }
  bool has(const char* key) const { return node_.contains(key); }
  const json& raw(const char* key) const { return node_.at(key); }

  double number(const char* key) const {
    const json& v = require(key);
    if (!v.is_number()) throw ConfigError(where(key), "expected a number");
    return v.get<double>();
  }
  std::optional<double> optional_number(const char* key) const {
    if (!has(key)) return std::nullopt;
    return number(key);
  }
  double number_or(const char* key, double fallback) const { return optional_number(key).value_or(fallback); }

  std::uint64_t unsigned_integer(const char* key) const {
    const json& v = require(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0 && !v.is_number_unsigned())) {
      throw ConfigError(where(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  std::uint64_t unsigned_or(const char* key, std::uint64_t fallback) const {
    return has(key) ? unsigned_integer(key) : fallback;
  }

  std::string string(const char* key) const {
    const json& v = require(key);
    if (!v.is_string()) throw ConfigError(where(key), "expected a string");
    return v.get<std::string>();
  }

  Position vector3(const char* key) const { return to_vector3(require(key), where(key)); }

  static Position to_vector3(const json& v, const std::string& at) {
    if (!v.is_array() || v.size() != 3) throw ConfigError(at, "expected [x, y, z]");
    Position p;
    for (int i = 0; i < 3; ++i) {
      if (!v[static_cast<std::size_t>(i)].is_number()) throw ConfigError(at + "/" + std::to_string(i), "expected a number");
      p(i) = v[static_cast<std::size_t>(i)].get<double>();
    }
    return p;
  }

  std::vector<Position> vector3_list(const char* key) const {
    const json& v = require(key);
    if (!v.is_array()) throw ConfigError(where(key), "expected an array of [x, y, z]");
    std::vector<Position> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(to_vector3(v[i], where(key) + "/" + std::to_string(i)));
    return out;
  }

  Section child(const char* key, std::initializer_list<const char*> allowed) const {
    return Section(require(key), where(key), allowed);
  }

 private:
  const json& require(const char* key) const {
    if (!has(key)) throw ConfigError(where(key), "missing required field");
    return node_.at(key);
  }

  const json& node_;
  std::string pointer_;
};

// Runs a validate() and re-throws its message at `where`.
template <typename F>
void checked(const std::string& where, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where, e.what());
  }
}

ScenarioTemplate parse_scenario(const Section& s, std::uint64_t& seed) {
  ScenarioTemplate t;
  t.propagation.frequency_hz = s.number("carrier_frequency_hz");
  t.propagation.speed_mps = s.number_or("propagation_speed_mps", kSpeedOfLight);

  const Section array = s.child("array", {"elements", "aperture_m", "seed", "offsets_m"});
  if (array.has("offsets_m")) {
    if (array.has("elements") || array.has("aperture_m")) {
      throw ConfigError(array.where("offsets_m"), "give either offsets_m or elements/aperture_m, not both");
    }
    const auto offsets = array.vector3_list("offsets_m");
    Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(offsets.size()));
    for (std::size_t i = 0; i < offsets.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = offsets[i];
    t.element_offsets = m;
  } else {
    t.elements = array.unsigned_integer("elements");
    t.array_aperture_m = array.number("aperture_m");
    t.array_seed = array.unsigned_or("seed", 0);
  }

  const Section traj =
      s.child("trajectory", {"centre_m", "direction", "virtual_aperture_m", "observing_points", "reference_positions_m"});
  if (traj.has("reference_positions_m")) {
    if (traj.has("centre_m") || traj.has("observing_points") || traj.has("virtual_aperture_m")) {
      throw ConfigError(traj.where("reference_positions_m"),
                        "give either reference_positions_m or a generated pass, not both");
    }
    t.reference_positions = traj.vector3_list("reference_positions_m");
  } else {
    t.track_centre = traj.vector3("centre_m");
    if (traj.has("direction")) t.track_direction = traj.vector3("direction");
    t.virtual_aperture_m = traj.number("virtual_aperture_m");
    t.observing_points = traj.unsigned_integer("observing_points");
  }

  const json& emitters = s.raw("emitters");
  if (!emitters.is_array() || emitters.empty()) throw ConfigError(s.where("emitters"), "expected a non-empty array");
  for (std::size_t i = 0; i < emitters.size(); ++i) {
    const Section e(emitters[i], s.where("emitters") + "/" + std::to_string(i), {"position_m", "power"});
    t.emitters.push_back({e.vector3("position_m"), e.number_or("power", 1.0)});
  }
  if (s.has("active_emitters")) t.active_emitters = s.unsigned_integer("active_emitters");
  t.snr_db = s.number_or("snr_db", t.snr_db);
  t.noise_variance = s.optional_number("noise_variance");
  t.snapshots = s.unsigned_or("snapshots", t.snapshots);
  seed = s.unsigned_or("seed", 0);
  checked(s.where(), [&] { t.validate(); });
  return t;
}

SolverConfig parse_solver(const Section& s) {
  SolverConfig c;
  c.lambda = s.optional_number("lambda");
  c.delta = s.optional_number("delta");
  c.epsilon_stop = s.number_or("epsilon_stop", c.epsilon_stop);
  c.max_iterations = static_cast<int>(s.unsigned_or("max_iterations", static_cast<std::uint64_t>(c.max_iterations)));
  c.prune_threshold = s.optional_number("prune_threshold");
  c.rho_floor = s.number_or("rho_floor", c.rho_floor);
  c.merge_radius_m = s.optional_number("merge_radius_m");
  if (s.has("line_search")) {
    const Section ls = s.child("line_search", {"initial_step_m", "shrink", "max_halvings"});
    c.line_search.initial_step_m = ls.number_or("initial_step_m", c.line_search.initial_step_m);
    c.line_search.shrink = ls.number_or("shrink", c.line_search.shrink);
    c.line_search.max_halvings =
        static_cast<int>(ls.unsigned_or("max_halvings", static_cast<std::uint64_t>(c.line_search.max_halvings)));
  }
  const Section g = s.child("grid", {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max", "spacing"});
  c.grid.x_min = g.number("x_min");
  c.grid.x_max = g.number("x_max");
  c.grid.y_min = g.number("y_min");
  c.grid.y_max = g.number("y_max");
  c.grid.z_min = g.number_or("z_min", 0.0);
  c.grid.z_max = g.number_or("z_max", c.grid.z_min);
  c.grid.spacing = g.number("spacing");
  checked(s.where(), [&] { c.validate(); });
  return c;
}

void parse_on_grid(const Section& s, ExperimentSpec& spec) {
  OnGridConfig& c = spec.on_grid;
  spec.on_grid_spacing = s.number("spacing_m");
  c.lambda = s.optional_number("lambda");
  c.relative_threshold = s.number_or("relative_threshold", c.relative_threshold);
  c.max_iterations = static_cast<int>(s.unsigned_or("max_iterations", static_cast<std::uint64_t>(c.max_iterations)));
  c.tolerance = s.number_or("tolerance", c.tolerance);
  c.cluster_spacings = s.number_or("cluster_spacings", c.cluster_spacings);
  checked(s.where(), [&] {
    c.validate();
    if (!(*spec.on_grid_spacing > 0.0)) throw std::invalid_argument("spacing_m must be > 0");
  });
}

void parse_experiment(const Section& s, ExperimentSpec& spec) {
  checked(s.where("sweep_axis"), [&] { spec.sweep_axis = parse_sweep_axis(s.string("sweep_axis")); });
  const json& values = s.raw("sweep_values");
  if (!values.is_array()) throw ConfigError(s.where("sweep_values"), "expected an array of numbers");
  spec.sweep_values.clear();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].is_number()) throw ConfigError(s.where("sweep_values") + "/" + std::to_string(i), "expected a number");
    spec.sweep_values.push_back(values[i].get<double>());
  }
  spec.trials = s.unsigned_or("trials", 1);
  spec.base_seed = s.unsigned_or("base_seed", spec.base_seed);
  spec.crb_dims = static_cast<int>(s.unsigned_or("crb_dims", 2));
  spec.detection_radius_m = s.number_or("detection_radius_m", spec.detection_radius_m);
  spec.threads = static_cast<unsigned>(s.unsigned_or("threads", 1));
}

}  // namespace

RunConfig parse_config(const nlohmann::json& doc) {
  const Section root(doc, "", {"scenario", "solver", "on_grid", "experiment"});
  RunConfig cfg;
  ExperimentSpec& spec = cfg.experiment;
  spec.base_scenario = parse_scenario(
      root.child("scenario", {"carrier_frequency_hz", "propagation_speed_mps", "array", "trajectory", "emitters",
                              "active_emitters", "snr_db", "noise_variance", "snapshots", "seed"}),
      cfg.scenario_seed);
  spec.base_seed = cfg.scenario_seed;
  spec.solver = parse_solver(root.child("solver", {"lambda", "delta", "epsilon_stop", "max_iterations", "prune_threshold",
                                                   "rho_floor", "merge_radius_m", "line_search", "grid"}));
  if (root.has("on_grid")) {
    parse_on_grid(root.child("on_grid", {"spacing_m", "lambda", "relative_threshold", "max_iterations", "tolerance",
                                         "cluster_spacings"}),
                  spec);
  }
  if (root.has("experiment")) {
    cfg.has_experiment = true;
    parse_experiment(root.child("experiment", {"sweep_axis", "sweep_values", "trials", "base_seed", "crb_dims",
                                               "detection_radius_m", "threads"}),
                     spec);
    checked("/experiment", [&] { spec.validate(); });
  } else {
    spec.sweep_axis = SweepAxis::Snr;
    spec.sweep_values = {spec.base_scenario.snr_db};
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), "cannot open file");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    std::size_t column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(column), e.what());
  }
  return parse_config(doc);
}

}  // namespace covloc
