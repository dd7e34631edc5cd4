#pragma once

// Configuration, persistence and run manifests for the command-line pipeline.
// Needs the vendored toml++ and nlohmann/json headers and OpenSSL's libcrypto.

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "toml.hpp"

#include "koopdecomp/errors.hpp"
#include "koopdecomp/prototype.hpp"
#include "koopdecomp/state.hpp"

#define KOOPDECOMP_VERSION "0.1.0"

namespace koopdecomp::io {

using Json = nlohmann::ordered_json;

struct SystemConfig {
  int torus_dim = 1;
  std::vector<double> omega{1.0};
  double dt = kDefaultStep;
  std::string fiber = "none";
  Params fiber_params;
  std::string warp = "none";
  double warp_amplitude = 0.0;
  std::optional<int> dimension;
  std::optional<std::vector<bool>> angle_mask;
};

struct SimulateConfig {
  std::size_t rows = 1000;
  double dt_sample = 0.1;
  std::vector<double> initial;
};

struct EigenConfig {
  std::string source = "analytic";
  // Declared eigenfrequencies; empty means the system's own.
  std::vector<double> omega;
  std::string observable = "z_sum";
  std::size_t samples = 100;
  double max_time = 10.0;
  double duration = 2000.0;
  double dt_sample = 0.1;
  int bound = 20;
  double margin = 1e-6;
  double residual_bound = 1e-5;
};

struct DeconstructConfig {
  std::string frames = "adapted";
  double horizon = 12.0;
  std::string rule = "frequency";
  double fd_step = 1e-5;
  std::size_t grid = 10;
  double fiber_extent = 2.0;
  std::size_t leaf_samples = 20;
  double burn_in = 50.0;
  std::size_t round_trip_points = 100;
  double tangency_bound = 1e-4;
  double lie_bound = 1e-3;
  double leaf_bound = 1e-6;
  double dof09_bound = 1e-5;
  double round_trip_bound = 1e-5;
  std::vector<std::string> splitting_observables{"z1"};
  std::size_t splitting_samples = 100000;
  double splitting_spacing = 0.37;
  int splitting_bins = 32;
  std::size_t splitting_min_count = 30;
};

struct DiagnoseConfig {
  int stage = 0;
  std::size_t orbit_length = 1024;
  std::size_t lags = 100;
  int kmax = 2;
  bool fiber_moments = true;
  double noise_scale = 4.0;
  double slack = 0.01;
  double non_mixing = 0.1;
  std::size_t min_lags = 30;
};

struct PipelineConfig {
  SystemConfig system;
  SimulateConfig simulate;
  EigenConfig eigen;
  DeconstructConfig deconstruct;
  DiagnoseConfig diagnose;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::string source_text;
};

namespace detail {

inline void check_keys(const toml::table& t, std::string_view where, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, node] : t) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key.str() == a;
    if (!ok) throw InvalidArgument("unknown key '" + std::string(key.str()) + "' in [" + std::string(where) + "]");
  }
}

inline double number(const toml::node& n, std::string_view key) {
  if (auto v = n.value<double>()) return *v;
  throw InvalidArgument("'" + std::string(key) + "' must be a number");
}

template <class T>
void read(const toml::table& t, std::string_view key, T& out) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = n->value<std::string>()) out = *v;
    else throw InvalidArgument("'" + std::string(key) + "' must be a string");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = n->value<bool>()) out = *v;
    else throw InvalidArgument("'" + std::string(key) + "' must be a boolean");
  } else if constexpr (std::is_same_v<T, double>) {
    out = number(*n, key);
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    const toml::array* a = n->as_array();
    if (a == nullptr) throw InvalidArgument("'" + std::string(key) + "' must be an array of numbers");
    out.clear();
    for (const auto& e : *a) out.push_back(number(e, key));
  } else {
    static_assert(std::is_integral_v<T>);
    auto v = n->value<std::int64_t>();
    if (!v) throw InvalidArgument("'" + std::string(key) + "' must be an integer");
    if constexpr (std::is_unsigned_v<T>)
      if (*v < 0) throw InvalidArgument("'" + std::string(key) + "' must be nonnegative");
    out = static_cast<T>(*v);
  }
}

inline const toml::table* section(const toml::table& t, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return nullptr;
  if (!n->is_table()) throw InvalidArgument("'" + std::string(key) + "' must be a table");
  return n->as_table();
}

}  // namespace detail

inline PipelineConfig parse_config(std::string_view text, std::string_view source = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error: " << e.description() << " at " << e.source().begin;
    throw InvalidArgument(msg.str());
  }
  PipelineConfig cfg;
  cfg.source_text = std::string(text);
  detail::check_keys(root, "root", {"seed", "output_dir", "system", "simulate", "eigen", "deconstruct", "diagnose"});
  detail::read(root, "seed", cfg.seed);
  detail::read(root, "output_dir", cfg.output_dir);

  const toml::table* sys = detail::section(root, "system");
  if (sys == nullptr) throw InvalidArgument("config needs a [system] table");
  detail::check_keys(*sys, "system", {"torus_dim", "omega", "dt", "dimension", "angle_mask", "fiber", "warp"});
  SystemConfig& s = cfg.system;
  detail::read(*sys, "omega", s.omega);
  s.torus_dim = static_cast<int>(s.omega.size());
  detail::read(*sys, "torus_dim", s.torus_dim);
  detail::read(*sys, "dt", s.dt);
  if (sys->contains("dimension")) {
    int n = 0;
    detail::read(*sys, "dimension", n);
    s.dimension = n;
  }
  if (const toml::node* m = sys->get("angle_mask")) {
    const toml::array* a = m->as_array();
    if (a == nullptr) throw InvalidArgument("'angle_mask' must be an array of booleans");
    std::vector<bool> mask;
    for (const auto& e : *a) {
      auto b = e.value<bool>();
      if (!b) throw InvalidArgument("'angle_mask' must be an array of booleans");
      mask.push_back(*b);
    }
    s.angle_mask = mask;
  }
  if (const toml::table* f = detail::section(*sys, "fiber")) {
    for (const auto& [key, node] : *f) {
      if (key.str() == "name") detail::read(*f, "name", s.fiber);
      else s.fiber_params[std::string(key.str())] = detail::number(node, key.str());
    }
  }
  if (const toml::table* w = detail::section(*sys, "warp")) {
    detail::check_keys(*w, "system.warp", {"kind", "amplitude"});
    detail::read(*w, "kind", s.warp);
    detail::read(*w, "amplitude", s.warp_amplitude);
  }
  if (!(s.dt > 0.0)) throw InvalidArgument("system.dt must be positive");

  if (const toml::table* t = detail::section(root, "simulate")) {
    detail::check_keys(*t, "simulate", {"rows", "dt_sample", "initial"});
    detail::read(*t, "rows", cfg.simulate.rows);
    detail::read(*t, "dt_sample", cfg.simulate.dt_sample);
    detail::read(*t, "initial", cfg.simulate.initial);
    if (!(cfg.simulate.dt_sample > 0.0)) throw InvalidArgument("simulate.dt_sample must be positive");
  }
  if (const toml::table* t = detail::section(root, "eigen")) {
    detail::check_keys(*t, "eigen", {"source", "omega", "observable", "samples", "max_time", "duration", "dt_sample",
                                     "bound", "margin", "residual_bound"});
    EigenConfig& e = cfg.eigen;
    detail::read(*t, "source", e.source);
    detail::read(*t, "omega", e.omega);
    detail::read(*t, "observable", e.observable);
    detail::read(*t, "samples", e.samples);
    detail::read(*t, "max_time", e.max_time);
    detail::read(*t, "duration", e.duration);
    detail::read(*t, "dt_sample", e.dt_sample);
    detail::read(*t, "bound", e.bound);
    detail::read(*t, "margin", e.margin);
    detail::read(*t, "residual_bound", e.residual_bound);
    if (e.source != "analytic" && e.source != "estimated")
      throw InvalidArgument("eigen.source must be 'analytic' or 'estimated'");
  }
  if (const toml::table* t = detail::section(root, "deconstruct")) {
    detail::check_keys(*t, "deconstruct", {"frames", "horizon", "rule", "fd_step", "grid", "fiber_extent", "leaf_samples",
                                           "burn_in", "round_trip_points", "tangency_bound", "lie_bound", "leaf_bound",
                                           "dof09_bound", "round_trip_bound", "splitting_observables",
                                           "splitting_samples", "splitting_spacing", "splitting_bins",
                                           "splitting_min_count"});
    DeconstructConfig& d = cfg.deconstruct;
    detail::read(*t, "frames", d.frames);
    detail::read(*t, "horizon", d.horizon);
    detail::read(*t, "rule", d.rule);
    detail::read(*t, "fd_step", d.fd_step);
    detail::read(*t, "grid", d.grid);
    detail::read(*t, "fiber_extent", d.fiber_extent);
    detail::read(*t, "leaf_samples", d.leaf_samples);
    detail::read(*t, "burn_in", d.burn_in);
    detail::read(*t, "round_trip_points", d.round_trip_points);
    detail::read(*t, "tangency_bound", d.tangency_bound);
    detail::read(*t, "lie_bound", d.lie_bound);
    detail::read(*t, "leaf_bound", d.leaf_bound);
    detail::read(*t, "dof09_bound", d.dof09_bound);
    detail::read(*t, "round_trip_bound", d.round_trip_bound);
    detail::read(*t, "splitting_samples", d.splitting_samples);
    detail::read(*t, "splitting_spacing", d.splitting_spacing);
    detail::read(*t, "splitting_bins", d.splitting_bins);
    detail::read(*t, "splitting_min_count", d.splitting_min_count);
    if (const toml::node* n = t->get("splitting_observables")) {
      const toml::array* a = n->as_array();
      if (a == nullptr) throw InvalidArgument("'splitting_observables' must be an array of names");
      d.splitting_observables.clear();
      for (const auto& e : *a) {
        auto v = e.value<std::string>();
        if (!v) throw InvalidArgument("'splitting_observables' must be an array of names");
        d.splitting_observables.push_back(*v);
      }
    }
    if (d.frames != "adapted" && d.frames != "pointwise")
      throw InvalidArgument("deconstruct.frames must be 'adapted' or 'pointwise'");
    if (d.rule != "frequency" && d.rule != "inner_product")
      throw InvalidArgument("deconstruct.rule must be 'frequency' or 'inner_product'");
  }
  if (const toml::table* t = detail::section(root, "diagnose")) {
    detail::check_keys(*t, "diagnose", {"stage", "orbit_length", "lags", "kmax", "fiber_moments", "noise_scale", "slack",
                                        "non_mixing", "min_lags"});
    DiagnoseConfig& g = cfg.diagnose;
    detail::read(*t, "stage", g.stage);
    detail::read(*t, "orbit_length", g.orbit_length);
    detail::read(*t, "lags", g.lags);
    detail::read(*t, "kmax", g.kmax);
    detail::read(*t, "fiber_moments", g.fiber_moments);
    detail::read(*t, "noise_scale", g.noise_scale);
    detail::read(*t, "slack", g.slack);
    detail::read(*t, "non_mixing", g.non_mixing);
    detail::read(*t, "min_lags", g.min_lags);
  }
  return cfg;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoFailure("write failed for " + path.string());
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.string());
}

// Builds the prototype and checks the optional declared dimension and angle mask against it.
inline PrototypeQPD build_prototype(const SystemConfig& s) {
  if (s.torus_dim < 1) throw InvalidArgument("torus_dim must be at least 1");
  if (static_cast<int>(s.omega.size()) != s.torus_dim)
    throw InvalidArgument("omega has " + std::to_string(s.omega.size()) + " entries for torus_dim " +
                          std::to_string(s.torus_dim));
  PrototypeQPD p{s.torus_dim, s.omega, make_fiber(s.fiber, s.torus_dim, s.omega, s.fiber_params), std::nullopt};
  if (s.warp != "none") p.warp = make_warp(s.warp, s.torus_dim, p.fiber, s.warp_amplitude);
  if (s.dimension && *s.dimension != p.dim())
    throw InvalidArgument("declared dimension " + std::to_string(*s.dimension) + " but the system has " +
                          std::to_string(p.dim()));
  if (s.angle_mask && *s.angle_mask != p.angle_mask()) throw InvalidArgument("declared angle_mask does not match the system");
  return p;
}

// Shortest text that reads back to the same double (at most 17 significant digits).
inline std::string format_number(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row_strings(header); }

  void row(std::span<const double> values) {
    if (values.size() != columns_) throw InvalidArgument("csv row width does not match the header");
    for (std::size_t i = 0; i < values.size(); ++i) text_ << (i ? "," : "") << format_number(values[i]);
    text_ << '\n';
  }
  void row_strings(std::span<const std::string> values) {
    for (std::size_t i = 0; i < values.size(); ++i) text_ << (i ? "," : "") << values[i];
    text_ << '\n';
  }
  std::string str() const { return text_.str(); }

 private:
  std::size_t columns_;
  std::ostringstream text_;
};

// Rows of numbers under a header line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    return cells;
  };
  if (!std::getline(in, line)) throw MissingInput(path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    for (const auto& c : split(line)) {
      char* end = nullptr;
      r.push_back(std::strtod(c.c_str(), &end));
      if (end == c.c_str()) throw InvalidArgument("non-numeric cell '" + c + "' in " + path.string());
    }
    if (r.size() != t.header.size()) throw InvalidArgument("ragged row in " + path.string());
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw IoFailure("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// manifest.json in the output directory: config hash, versions, per-stage status and residual summaries,
// and every output file with its checksum. Commands merge into an existing manifest.
class RunManifest {
 public:
  RunManifest(std::filesystem::path dir, const PipelineConfig& cfg) : dir_(std::move(dir)) {
    const auto path = dir_ / "manifest.json";
    if (std::filesystem::exists(path)) {
      try {
        doc_ = Json::parse(read_text(path));
      } catch (const Json::exception&) {
        doc_ = Json::object();
      }
    }
    const std::string hash = sha256_hex(cfg.source_text);
    if (!doc_.is_object() || doc_.value("config_hash", "") != hash || doc_.value("seed", std::uint64_t{0}) != cfg.seed)
      doc_ = Json::object();
    doc_["config_hash"] = hash;
    doc_["seed"] = cfg.seed;
    doc_["versions"] = Json{{"koopdecomp", KOOPDECOMP_VERSION},
                            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                          "." + std::to_string(EIGEN_MINOR_VERSION)},
                            {"compiler", __VERSION__}};
    if (!doc_.contains("timestamps")) doc_["timestamps"] = Json::object();
    if (!doc_.contains("stages")) doc_["stages"] = Json::object();
    if (!doc_.contains("files")) doc_["files"] = Json::object();
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }
  const Json& document() const noexcept { return doc_; }

  void stage(const std::string& name, const std::string& status, Json summary = Json::object()) {
    Json entry{{"status", status}};
    for (auto& [k, v] : summary.items()) entry[k] = v;
    doc_["stages"][name] = std::move(entry);
    doc_["timestamps"][name] = utc_timestamp();
  }

  // Writes an output file and records its checksum.
  void write_file(const std::string& name, std::string_view content) {
    write_text(dir_ / name, content);
    doc_["files"][name] = Json{{"sha256", sha256_hex(content)}, {"bytes", content.size()}};
  }

  void save() const { write_text(dir_ / "manifest.json", doc_.dump(2) + "\n"); }

 private:
  std::filesystem::path dir_;
  Json doc_ = Json::object();
};

}  // namespace koopdecomp::io
