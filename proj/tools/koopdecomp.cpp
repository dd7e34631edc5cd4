// koopdecomp: config-driven pipeline runner.
//   simulate | eigen | deconstruct | diagnose | report
// Exit codes: 0 success, 2 validation failure, 3 numerical-stage failure, 4 I/O failure.

#include <array>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "koopdecomp/io.hpp"
#include "koopdecomp/koopdecomp.hpp"

namespace kd = koopdecomp;
namespace io = koopdecomp::io;
using io::Json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string stage = "all";
  double tolerance_scale = 1.0;
};

struct Context {
  io::PipelineConfig cfg;
  kd::PrototypeQPD proto;
  kd::FlowSystem sys;
  std::filesystem::path out;
  double scale = 1.0;
  std::string stage;
};

Context make_context(const Options& o) {
  Context c;
  c.cfg = io::load_config(o.config);
  if (o.seed) c.cfg.seed = *o.seed;
  c.out = o.out.empty() ? std::filesystem::path(c.cfg.output_dir) : std::filesystem::path(o.out);
  if (!(o.tolerance_scale > 0.0)) throw kd::InvalidArgument("--tolerance-scale must be positive");
  c.scale = o.tolerance_scale;
  c.stage = o.stage;
  c.proto = io::build_prototype(c.cfg.system);
  c.sys = kd::make_prototype(c.proto, c.cfg.system.dt);
  return c;
}

Json system_json(const io::SystemConfig& s) {
  Json params = Json::object();
  for (const auto& [k, v] : s.fiber_params) params[k] = v;
  return Json{{"torus_dim", s.torus_dim}, {"omega", s.omega},           {"dt", s.dt},
              {"fiber", s.fiber},         {"fiber_params", params},     {"warp", s.warp},
              {"warp_amplitude", s.warp_amplitude}};
}

kd::State random_state(const kd::Chart& chart, std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  kd::State x(chart.dim());
  for (int i = 0; i < chart.dim(); ++i) x[i] = chart.is_angle(i) ? kd::kTwoPi * u(rng) : extent * (2.0 * u(rng) - 1.0);
  return x;
}

std::vector<std::string> state_header(int n, bool with_time) {
  std::vector<std::string> h;
  if (with_time) h.push_back("t");
  for (int i = 1; i <= n; ++i) h.push_back("x" + std::to_string(i));
  return h;
}

// j for labels "z<j>" with 1 <= j <= d, else 0.
int eigen_index(const std::string& label, int d) {
  for (int j = 1; j <= d; ++j)
    if (label == "z" + std::to_string(j)) return j;
  return 0;
}

// Stage selection: "all" or a stage index.
std::optional<int> selected_stage(const std::string& s, int depth) {
  if (s == "all" || s.empty()) return std::nullopt;
  int k = 0;
  try {
    std::size_t used = 0;
    k = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw kd::InvalidArgument("--stage must be 'all' or a stage index, got '" + s + "'");
  }
  if (k < 0 || k > depth) throw kd::InvalidArgument("--stage " + s + " is outside 0.." + std::to_string(depth));
  return k;
}

int cmd_simulate(const Context& c) {
  io::RunManifest manifest(c.out, c.cfg);
  const auto& sc = c.cfg.simulate;
  std::mt19937_64 rng(c.cfg.seed);
  kd::State x = random_state(c.sys.chart(), rng, 1.0);
  if (!sc.initial.empty()) {
    if (static_cast<int>(sc.initial.size()) != c.sys.dim())
      throw kd::InvalidArgument("simulate.initial needs " + std::to_string(c.sys.dim()) + " entries");
    for (int i = 0; i < c.sys.dim(); ++i) x[i] = sc.initial[static_cast<std::size_t>(i)];
    x = c.sys.chart().wrapped(x);
  }
  io::CsvWriter csv(state_header(c.sys.dim(), true));
  std::vector<double> row(static_cast<std::size_t>(c.sys.dim()) + 1);
  std::size_t written = 0;
  Json summary{{"rows_requested", sc.rows}, {"dt_sample", sc.dt_sample}};
  try {
    for (std::size_t i = 0; i < sc.rows; ++i) {
      if (i > 0) x = c.sys.flow(x, sc.dt_sample);
      row[0] = static_cast<double>(i) * sc.dt_sample;
      for (int j = 0; j < c.sys.dim(); ++j) row[static_cast<std::size_t>(j) + 1] = x[j];
      csv.row(row);
      ++written;
    }
  } catch (const kd::IntegrationBlowup& e) {
    summary["rows_written"] = written;
    summary["error"] = e.what();
    manifest.write_file("trajectory.csv", csv.str());
    manifest.stage("simulate", "failed", summary);
    manifest.save();
    std::cerr << "simulate: " << e.what() << " (" << written << " rows kept)\n";
    return kExitNumerical;
  }
  summary["rows_written"] = written;
  manifest.write_file("trajectory.csv", csv.str());
  manifest.stage("simulate", "passed", summary);
  manifest.save();
  std::cout << "simulate: " << written << " rows -> " << (c.out / "trajectory.csv").string() << "\n";
  return kExitOk;
}

// Analytic phase functions carrying the frequencies recorded in an eigen report.
std::vector<kd::CircleEigenfunction> eigenfunctions_with(const kd::PrototypeQPD& p, const std::vector<double>& omegas) {
  auto zs = kd::analytic_eigenfunctions(p);
  if (omegas.size() != zs.size())
    throw kd::InvalidArgument("expected " + std::to_string(zs.size()) + " eigenfrequencies, got " + std::to_string(omegas.size()));
  for (std::size_t j = 0; j < zs.size(); ++j) zs[j].omega = omegas[j];
  return zs;
}

int cmd_eigen(const Context& c) {
  io::RunManifest manifest(c.out, c.cfg);
  const auto& ec = c.cfg.eigen;
  std::mt19937_64 rng(c.cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int d = c.proto.torus_dim;

  std::vector<double> omegas = ec.omega.empty() ? c.proto.omega : ec.omega;
  Json detection = nullptr;
  if (ec.source == "estimated") {
    const kd::NamedObservable f = kd::make_observable(ec.observable, c.proto);
    const kd::State x0 = random_state(c.sys.chart(), rng, 1.0);
    std::vector<double> found = kd::detect_frequencies(c.sys, f.f, x0, ec.duration, ec.dt_sample, static_cast<std::size_t>(d));
    if (static_cast<int>(found.size()) < d)
      throw kd::InsufficientRecurrence(found.size(), static_cast<std::size_t>(d));
    // Pair each analytic phase function with the nearest detected frequency.
    std::vector<double> assigned(static_cast<std::size_t>(d));
    std::vector<bool> used(found.size(), false);
    for (int j = 0; j < d; ++j) {
      std::size_t best = 0;
      double gap = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < found.size(); ++i) {
        const double g = std::abs(found[i] - omegas[static_cast<std::size_t>(j)]);
        if (!used[i] && g < gap) {
          gap = g;
          best = i;
        }
      }
      used[best] = true;
      assigned[static_cast<std::size_t>(j)] = found[best];
    }
    detection = Json{{"observable", f.label}, {"duration", ec.duration}, {"dt_sample", ec.dt_sample}, {"detected", found}};
    omegas = assigned;
  }

  const auto zs = eigenfunctions_with(c.proto, omegas);
  std::vector<std::pair<kd::State, double>> samples;
  for (std::size_t i = 0; i < ec.samples; ++i) samples.emplace_back(random_state(c.sys.chart(), rng, 2.0), ec.max_time * u(rng));
  const double bound = ec.residual_bound * c.scale;
  Json eig = Json::array();
  double worst = 0.0;
  for (const auto& z : zs) {
    const double r = kd::eigenfunction_residual(c.sys, z, samples);
    worst = std::max(worst, r);
    eig.push_back(Json{{"label", z.label},
                       {"omega", z.omega},
                       {"residual_max", r},
                       {"bound", bound},
                       {"T_used", ec.source == "estimated" ? ec.duration : ec.max_time}});
  }

  Json indep{{"bound", ec.bound}, {"margin", ec.margin}};
  int code = kExitOk;
  try {
    kd::check_independence(omegas, ec.bound, ec.margin);
    indep["independent"] = true;
  } catch (const kd::DependentFrequencies& e) {
    indep["independent"] = false;
    indep["relation"] = e.relation();
    indep["wraps"] = e.wraps();
    code = kExitValidation;
  }
  if (code == kExitOk && worst > bound) code = kExitNumerical;
  const std::string status = code == kExitOk ? "passed" : "failed";

  Json report{{"system", system_json(c.cfg.system)},
              {"source", ec.source},
              {"seed", c.cfg.seed},
              {"omegas", omegas},
              {"detection", detection},
              {"eigenfunctions", eig},
              {"residual_samples", ec.samples},
              {"max_time", ec.max_time},
              {"independence", indep},
              {"status", status}};
  manifest.write_file("eigen_report.json", report.dump(2) + "\n");
  manifest.stage("eigen", status, Json{{"max_residual", worst}, {"bound", bound}, {"independent", indep["independent"]}});
  manifest.save();
  std::cout << "eigen: max residual " << io::format_number(worst) << " (bound " << io::format_number(bound)
            << "), independent " << (indep["independent"].get<bool>() ? "yes" : "no") << "\n";
  if (code == kExitValidation) std::cerr << "eigen: dependent frequencies, relation " << indep["relation"].dump() << "\n";
  return code;
}

std::vector<double> report_omegas(const std::filesystem::path& out) {
  const auto path = out / "eigen_report.json";
  if (!std::filesystem::exists(path)) throw kd::MissingInput("no eigen report at " + path.string() + "; run 'eigen' first");
  Json r;
  try {
    r = Json::parse(io::read_text(path));
    return r.at("omegas").get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw kd::MissingInput("unreadable eigen report " + path.string() + ": " + e.what());
  }
}

kd::LaminarFlows make_flows(const Context& c) {
  const auto& dc = c.cfg.deconstruct;
  kd::DeconstructionOptions opt;
  opt.frames = dc.frames == "adapted" ? kd::FramePolicy::adapted : kd::FramePolicy::pointwise;
  opt.horizon = dc.horizon;
  opt.rule = dc.rule == "frequency" ? kd::ProjectionRule::frequency : kd::ProjectionRule::inner_product;
  opt.fd_step = dc.fd_step;
  return kd::LaminarFlows(c.sys, eigenfunctions_with(c.proto, report_omegas(c.out)), opt);
}

// Regular grid over the chart (angles over the circle, lines over [-extent, extent]), grid^n points.
std::vector<kd::State> chart_grid(const kd::Chart& chart, std::size_t per_axis, double extent) {
  const int n = chart.dim();
  std::vector<kd::State> pts;
  std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
  for (;;) {
    kd::State x(n);
    for (int i = 0; i < n; ++i) {
      const double u = (static_cast<double>(idx[static_cast<std::size_t>(i)]) + 0.5) / static_cast<double>(per_axis);
      x[i] = chart.is_angle(i) ? kd::kTwoPi * u : extent * (2.0 * u - 1.0);
    }
    pts.push_back(x);
    int i = 0;
    while (i < n && ++idx[static_cast<std::size_t>(i)] == per_axis) idx[static_cast<std::size_t>(i++)] = 0;
    if (i == n) break;
  }
  return pts;
}

Json check(double value, double bound) { return Json{{"max", value}, {"bound", bound}, {"passed", value <= bound}}; }

int cmd_deconstruct(const Context& c) {
  io::RunManifest manifest(c.out, c.cfg);
  const auto& dc = c.cfg.deconstruct;
  const kd::LaminarFlows lf = make_flows(c);
  const int d = lf.depth();
  const std::optional<int> only = selected_stage(c.stage, d);
  std::mt19937_64 rng(c.cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = dc.fd_step;

  if (std::pow(static_cast<double>(dc.grid), c.sys.dim()) > 1e6) throw kd::InvalidArgument("deconstruct.grid too fine for this dimension");
  const std::vector<kd::State> grid = chart_grid(c.sys.chart(), dc.grid, dc.fiber_extent);
  std::vector<kd::State> starts;
  for (int i = 0; i < 4; ++i) starts.push_back(random_state(c.sys.chart(), rng, 1.0));

  Json stages = Json::array();
  bool all_passed = true;
  for (int k = 0; k <= d; ++k) {
    if (only && *only != k) continue;
    Json st{{"stage", k}};
    bool passed = true;
    try {
      // Tangency |V_k z_j| for j <= k and eigen-residual |V_k z_j - i omega_j z_j| for j > k, on the grid.
      io::CsvWriter table([&] {
        auto hd = state_header(c.sys.dim(), false);
        hd.push_back("residual_name");
        hd.push_back("residual_value");
        return hd;
      }());
      double tang = 0.0, lie = 0.0;
      for (const kd::State& x : grid) {
        const kd::State v = lf.field(k, x);
        double pt = 0.0, pl = 0.0;
        for (int j = 1; j <= d; ++j) {
          const auto& z = lf.z(j);
          const kd::cplx vz = kd::lie_derivative(v, z.eval, x, h);
          if (j <= k) pt = std::max(pt, std::abs(vz));
          else pl = std::max(pl, std::abs(vz - kd::cplx(0.0, z.omega) * z(x)));
        }
        tang = std::max(tang, pt);
        lie = std::max(lie, pl);
        std::vector<std::string> cells;
        for (int i = 0; i < x.size(); ++i) cells.push_back(io::format_number(x[i]));
        auto emit = [&](const char* name, double value) {
          auto row = cells;
          row.push_back(name);
          row.push_back(io::format_number(value));
          table.row_strings(row);
        };
        if (k >= 1) emit("tangency", pt);
        if (k < d) emit("lie_residual", pl);
      }
      manifest.write_file("stage" + std::to_string(k) + "_residuals.csv", table.str());
      if (k >= 1) {
        st["tangency"] = check(tang, dc.tangency_bound * c.scale);
        passed = passed && tang <= dc.tangency_bound * c.scale;
      }
      if (k < d) {
        st["lie_residual"] = check(lie, dc.lie_bound * c.scale);
        passed = passed && lie <= dc.lie_bound * c.scale;
      }

      if (k >= 1) {
        kd::LeafSampling ls{dc.leaf_samples, dc.burn_in, 3};
        const kd::LeafSampleMeasure leaf = kd::sample_leaf(lf, kd::LeafSpec{k, {}, 1e-8}, starts, ls);
        io::CsvWriter samples([&] {
          auto hd = state_header(c.sys.dim(), false);
          hd.insert(hd.begin(), "level");
          return hd;
        }());
        for (const auto& y : leaf.samples) {
          std::vector<double> row{static_cast<double>(k)};
          row.insert(row.end(), y.data(), y.data() + y.size());
          samples.row(row);
        }
        const std::string leaf_name = "leaf_stage" + std::to_string(k);
        manifest.write_file(leaf_name + ".csv", samples.str());
        Json start_rows = Json::array();
        for (const auto& x : starts) start_rows.push_back(std::vector<double>(x.data(), x.data() + x.size()));
        manifest.write_file(leaf_name + ".json", Json{{"level", k},
                                                      {"seed", c.cfg.seed},
                                                      {"samples", leaf.samples.size()},
                                                      {"burn_in", ls.burn_in},
                                                      {"gap", ls.gap},
                                                      {"tolerance", leaf.leaf.tolerance},
                                                      {"starts", start_rows}}
                                                     .dump(2) + "\n");
        const kd::ReturnMap R(lf, k);
        double inv = 0.0;
        for (const auto& y : leaf.samples) inv = std::max(inv, R.invariance_residual(y));
        st["leaf_invariance"] = check(inv, dc.leaf_bound * c.scale);
        passed = passed && inv <= dc.leaf_bound * c.scale;

        // Phases of Psi^(k) against the cumulative angles; Xi o Psi round trip on the deepest stage.
        const kd::TowerMap tm(lf);
        double dof = 0.0, trip = 0.0;
        for (std::size_t i = 0; i < dc.round_trip_points; ++i) {
          kd::TowerCoordinates tc{leaf.samples[i % leaf.samples.size()], {}};
          for (int j = 0; j < k; ++j) tc.thetas.push_back(u(rng));
          const kd::State x = tm.psi(tc);
          const auto phi = kd::cumulative_angles(tc.thetas);
          for (int j = 1; j <= k; ++j)
            dof = std::max(dof, kd::unit_circle_distance(lf.z(j).phase(x) / kd::kTwoPi, phi[static_cast<std::size_t>(j - 1)]));
          if (k == d) trip = std::max(trip, kd::tower_distance(tm, tc, tm.xi(x)));
        }
        st["dof09"] = check(dof, dc.dof09_bound * c.scale);
        passed = passed && dof <= dc.dof09_bound * c.scale;
        if (k == d) {
          st["round_trip"] = check(trip, dc.round_trip_bound * c.scale);
          passed = passed && trip <= dc.round_trip_bound * c.scale;
        }
      }
    } catch (const kd::Error& e) {
      if (e.kind() != kd::ErrorKind::numerical) throw;
      st["error"] = e.what();
      passed = false;
    }
    st["status"] = passed ? "passed" : "failed";
    all_passed = all_passed && passed;
    manifest.stage("deconstruct_stage" + std::to_string(k), st["status"], st);
    std::cout << "deconstruct: stage " << k << " " << st["status"].get<std::string>() << "\n";
    stages.push_back(std::move(st));
  }
  // Discrete/continuous splitting of registry observables through the extracted angles.
  Json splitting = Json::array();
  if (!only || *only == d) {
    Json summary = Json::object();
    bool split_ok = true;
    try {
      const kd::TowerMap tm(lf);
      std::vector<kd::NamedObservable> fs;
      for (const auto& name : dc.splitting_observables) fs.push_back(kd::make_observable(name, c.proto));
      // Three consecutive segments of one trajectory: the projection, an independent check projection, held-out data.
      std::vector<std::array<std::vector<kd::cplx>, 3>> vals(fs.size());
      std::array<std::vector<std::vector<double>>, 3> angs;
      kd::State x = c.sys.flow(random_state(c.sys.chart(), rng, 1.0), dc.burn_in);
      for (std::size_t seg = 0; seg < 3; ++seg) {
        for (std::size_t i = 0; i < dc.splitting_samples; ++i) {
          x = c.sys.flow(x, dc.splitting_spacing);
          angs[seg].push_back(tm.angles(x));
          for (std::size_t f = 0; f < fs.size(); ++f) vals[f][seg].push_back(fs[f].f(x));
        }
      }
      io::CsvWriter bins([&] {
        std::vector<std::string> hd{"observable_index", "cell"};
        for (int j = 1; j <= d; ++j) hd.push_back("theta" + std::to_string(j));
        for (int j = 1; j <= d; ++j) hd.push_back("phi" + std::to_string(j));
        hd.insert(hd.end(), {"mean_re", "mean_im", "count"});
        return hd;
      }());
      for (std::size_t f = 0; f < fs.size(); ++f) {
        const kd::SplittingProjector proj =
            kd::project_discrete(vals[f][0], angs[0], dc.splitting_bins, dc.splitting_min_count);
        const kd::SplittingProjector check =
            kd::project_discrete(vals[f][1], angs[1], dc.splitting_bins, dc.splitting_min_count);
        const kd::SplittingReport r = kd::splitting_report(fs[f].label, proj, check, vals[f][2], angs[2]);
        // Without a generating assumption this is the projection onto functions of the tower angles,
        // which may be a proper subspace of the discrete part.
        Json entry{{"observable", r.observable},
                   {"projected_onto", "functions of the tower angles"},
                   {"norm_total", r.norm_total},
                   {"norm_discrete", r.norm_discrete},
                   {"norm_continuous", r.norm_continuous},
                   {"orthogonality_z", r.orthogonality_z},
                   {"orthogonality_bound", 3.0}};
        split_ok = split_ok && r.orthogonality_z <= 3.0;
        // Circle eigenfunctions have a known projection: exp(i 2 pi phi_j) at the cell center.
        if (const int j = eigen_index(fs[f].label, d); j > 0) {
          const double err = kd::projection_error(proj, [j](const std::vector<double>& theta) {
            return std::polar(1.0, kd::kTwoPi * kd::cumulative_angles(theta)[static_cast<std::size_t>(j - 1)]);
          });
          const double bound = 0.05 * c.scale;
          entry["discrete_error"] = err;
          entry["discrete_error_bound"] = bound;
          split_ok = split_ok && err <= bound;
        }
        splitting.push_back(entry);
        for (std::size_t cell = 0; cell < proj.cells(); ++cell) {
          const auto theta = proj.center(cell);
          const auto phi = kd::cumulative_angles(theta);
          std::vector<double> row{static_cast<double>(f), static_cast<double>(cell)};
          row.insert(row.end(), theta.begin(), theta.end());
          row.insert(row.end(), phi.begin(), phi.end());
          row.push_back(proj.means()[cell].real());
          row.push_back(proj.means()[cell].imag());
          row.push_back(static_cast<double>(proj.counts()[cell]));
          bins.row(row);
        }
      }
      manifest.write_file("splitting_report.json", splitting.dump(2) + "\n");
      manifest.write_file("splitting_bins.csv", bins.str());
    } catch (const kd::Error& e) {
      if (e.kind() != kd::ErrorKind::numerical) throw;
      summary["error"] = e.what();
      split_ok = false;
    }
    summary["observables"] = splitting;
    manifest.stage("splitting", split_ok ? "passed" : "failed", summary);
    all_passed = all_passed && split_ok;
    std::cout << "deconstruct: splitting " << (split_ok ? "passed" : "failed") << "\n";
  }

  Json report{{"system", system_json(c.cfg.system)},
              {"frames", dc.frames},
              {"horizon", dc.horizon},
              {"rule", dc.rule},
              {"tolerance_scale", c.scale},
              {"stages", stages},
              {"splitting", splitting}};
  manifest.write_file("deconstruct_report.json", report.dump(2) + "\n");
  manifest.save();
  return all_passed ? kExitOk : kExitNumerical;
}

Json fit_json(const kd::DecayFit& f) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"model", f.model}, {"rate", num(f.rate)}, {"r2", num(f.r2)},
              {"r2_exponential", num(f.exponential_r2)}, {"r2_power", num(f.power_r2)}, {"points", f.points}, {"floor", f.floor}};
}

int cmd_diagnose(const Context& c) {
  io::RunManifest manifest(c.out, c.cfg);
  const auto& gc = c.cfg.diagnose;
  const kd::LaminarFlows lf = make_flows(c);
  const int d = lf.depth();
  int k = gc.stage > 0 ? gc.stage : d;
  if (auto s = selected_stage(c.stage, d)) k = *s;
  if (k < 1 || k > d) throw kd::InvalidArgument("diagnose needs a return-map stage in 1.." + std::to_string(d));

  const auto leaf_path = c.out / ("leaf_stage" + std::to_string(k) + ".csv");
  if (!std::filesystem::exists(leaf_path))
    throw kd::MissingInput("no leaf samples at " + leaf_path.string() + "; run 'deconstruct' first");
  const io::CsvTable leaf = io::read_csv(leaf_path);
  if (leaf.rows.empty()) throw kd::MissingInput("leaf sample file " + leaf_path.string() + " has no samples");
  if (static_cast<int>(leaf.header.size()) != c.sys.dim() + 1 || leaf.header.front() != "level")
    throw kd::InvalidArgument("leaf samples do not match the system dimension");

  const kd::ReturnMap R(lf, k);
  std::vector<std::vector<kd::State>> orbits;
  for (const auto& r : leaf.rows) {
    kd::State y(c.sys.dim());
    for (int i = 0; i < c.sys.dim(); ++i) y[i] = r[static_cast<std::size_t>(i) + 1];
    orbits.push_back(R.orbit(y, gc.orbit_length - 1));
  }
  const auto basis = kd::fourier_basis(c.sys.chart(), gc.kmax, gc.fiber_moments);
  kd::WeakMixingThresholds th;
  th.noise_scale = gc.noise_scale;
  th.slack = gc.slack;
  th.non_mixing = gc.non_mixing;
  kd::RateFitOptions fo;
  fo.min_lags = gc.min_lags;

  const std::span<const std::vector<kd::State>> os(orbits);
  const kd::BasisScan scan = kd::basis_mixing_scan<kd::State>(os, basis, gc.lags, false, th, fo);
  const kd::ProbeTable probe = kd::return_map_spectrum_probe<kd::State>(os, basis, c.cfg.seed);

  Json pairs = Json::array();
  io::CsvWriter corr({"f_index", "g_index", "lag", "abs_c"});
  for (std::size_t i = 0; i < basis.size(); ++i) {
    for (std::size_t j = 0; j < basis.size(); ++j) {
      const auto& v = scan.pairs[i][j];
      pairs.push_back(Json{{"f", basis[i].label},
                           {"g", basis[j].label},
                           {"W", v.statistic},
                           {"mixing_threshold", v.mixing_threshold},
                           {"non_mixing_threshold", v.non_mixing_threshold},
                           {"verdict", kd::to_string(v.verdict)},
                           {"fit", fit_json(v.fit)}});
    }
  }
  // Plot data: |C(n)| for the diagonal pairs.
  for (std::size_t i = 0; i < basis.size(); ++i) {
    kd::CorrelationAccumulator acc(gc.lags);
    for (const auto& o : orbits) {
      const auto s = kd::evaluate_series<kd::State>(basis[i].f, std::span<const kd::State>(o));
      acc.add_orbit(s, s);
    }
    const auto seq = acc.result();
    for (std::size_t n = 0; n < seq.values.size(); ++n)
      corr.row(std::vector<double>{static_cast<double>(i), static_cast<double>(i), static_cast<double>(n), std::abs(seq.values[n])});
  }
  Json table = Json::array();
  io::CsvWriter probe_csv({"beta", "value", "null_value"});
  for (std::size_t b = 0; b < probe.beta.size(); ++b) {
    table.push_back(Json{{"beta", probe.beta[b]}, {"value", probe.value[b]}});
    probe_csv.row(std::vector<double>{probe.beta[b], probe.value[b], probe.null_value[b]});
  }
  Json report{{"system", system_json(c.cfg.system)},
              {"stage", k},
              {"orbits", orbits.size()},
              {"orbit_length", gc.orbit_length},
              {"lags", gc.lags},
              {"overall", kd::to_string(scan.overall)},
              {"pairs", pairs},
              {"thresholds", Json{{"noise_scale", th.noise_scale}, {"slack", th.slack}, {"non_mixing", th.non_mixing},
                                  {"min_lags", fo.min_lags}, {"probe", probe.threshold}}},
              {"probe_summary", Json{{"max", probe.max_value()},
                                     {"threshold", probe.threshold},
                                     {"null_max", probe.max_null()},
                                     {"peaks", probe.peaks}}},
              {"probe", table}};
  manifest.write_file("diagnose_report.json", report.dump(2) + "\n");
  manifest.write_file("correlations.csv", corr.str());
  manifest.write_file("probe.csv", probe_csv.str());
  manifest.stage("diagnose", "passed",
                 Json{{"stage", k}, {"overall", kd::to_string(scan.overall)}, {"probe_max", probe.max_value()},
                      {"probe_threshold", probe.threshold}, {"peaks", probe.peaks.size()}});
  manifest.save();
  std::cout << "diagnose: R" << k << " " << kd::to_string(scan.overall) << ", probe max "
            << io::format_number(probe.max_value()) << " (threshold " << io::format_number(probe.threshold) << "), "
            << probe.peaks.size() << " peaks\n";
  return kExitOk;
}

int cmd_report(const Context& c) {
  const auto path = c.out / "manifest.json";
  if (!std::filesystem::exists(path)) throw kd::MissingInput("no manifest at " + path.string());
  Json m;
  try {
    m = Json::parse(io::read_text(path));
  } catch (const Json::exception& e) {
    throw kd::MissingInput("unreadable manifest " + path.string() + ": " + e.what());
  }
  Json summary{{"config_hash", m.value("config_hash", "")}, {"seed", m.value("seed", std::uint64_t{0})}, {"stages", Json::object()}};
  bool ok = true;
  for (auto& [name, st] : m["stages"].items()) {
    const std::string status = st.value("status", "unknown");
    ok = ok && status == "passed";
    summary["stages"][name] = status;
    std::cout << name << ": " << status << "\n";
  }
  summary["files"] = m["files"];
  summary["all_passed"] = ok;
  io::write_text(c.out / "report.json", summary.dump(2) + "\n");
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral deconstruction pipeline for flows with smooth Koopman eigenfunctions"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "pipeline config (TOML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "random seed (overrides the config)");
    sub->add_option("--stage", o.stage, "stage index, or 'all'");
    sub->add_option("--tolerance-scale", o.tolerance_scale, "multiplier for every residual bound");
  };
  struct Sub {
    CLI::App* app;
    int (*run)(const Context&);
  };
  std::vector<Sub> subs{{app.add_subcommand("simulate", "integrate a trajectory to CSV"), cmd_simulate},
                        {app.add_subcommand("eigen", "eigenfunction residuals and independence certificate"), cmd_eigen},
                        {app.add_subcommand("deconstruct", "stage fields, leaves and tower residual tables"), cmd_deconstruct},
                        {app.add_subcommand("diagnose", "mixing tests and spectrum probe of a return map"), cmd_diagnose},
                        {app.add_subcommand("report", "summarize the run manifest"), cmd_report}};
  for (auto& s : subs) add_common(s.app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }
  std::optional<Context> ctx;
  std::string command;
  // Failures after the config loaded are recorded against the stage in the run manifest.
  auto record = [&](const std::string& what) {
    if (!ctx || command == "report") return;
    try {
      io::RunManifest manifest(ctx->out, ctx->cfg);
      manifest.stage(command, "error", Json{{"message", what}});
      manifest.save();
    } catch (const std::exception&) {
    }
  };
  try {
    for (const auto& s : subs) {
      if (!s.app->parsed()) continue;
      command = s.app->get_name();
      ctx = make_context(o);
      return s.run(*ctx);
    }
  } catch (const kd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.kind() != kd::ErrorKind::io) record(e.what());
    switch (e.kind()) {
      case kd::ErrorKind::validation: return kExitValidation;
      case kd::ErrorKind::numerical: return kExitNumerical;
      case kd::ErrorKind::io: return kExitIo;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    record(e.what());
    return kExitNumerical;
  }
  return kExitOk;
}
