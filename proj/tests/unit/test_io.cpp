#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "koopdecomp/io.hpp"

using namespace koopdecomp;
namespace fs = std::filesystem;

namespace {

constexpr const char* kMinimal = R"(
[system]
omega = [1.0, 1.4142135623730951]
dt = 0.01

[system.fiber]
name = "linear_damped"
lambda = 2.0
)";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("koopdecomp_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Config, MinimalDefaults) {
  const io::PipelineConfig cfg = io::parse_config(kMinimal);
  EXPECT_EQ(cfg.system.torus_dim, 2);
  EXPECT_EQ(cfg.system.fiber, "linear_damped");
  EXPECT_DOUBLE_EQ(cfg.system.fiber_params.at("lambda"), 2.0);
  EXPECT_EQ(cfg.eigen.source, "analytic");
  EXPECT_EQ(cfg.deconstruct.frames, "adapted");
  EXPECT_EQ(cfg.seed, 0u);
  const PrototypeQPD p = io::build_prototype(cfg.system);
  EXPECT_EQ(p.dim(), 3);
}

TEST(Config, FullSections) {
  const io::PipelineConfig cfg = io::parse_config(std::string(kMinimal) + R"(
[system.warp]
kind = "twist"
amplitude = 0.5

[simulate]
rows = 5
initial = [0.0, 0.0, 0.1]

[eigen]
source = "estimated"
omega = [1.0, 1.5]

[deconstruct]
frames = "pointwise"
splitting_observables = ["z1", "cos_fiber"]
splitting_bins = 8

[diagnose]
stage = 2
fiber_moments = false
)");
  EXPECT_EQ(cfg.system.warp, "twist");
  EXPECT_DOUBLE_EQ(cfg.system.warp_amplitude, 0.5);
  EXPECT_EQ(cfg.simulate.rows, 5u);
  EXPECT_EQ(cfg.eigen.omega, (std::vector<double>{1.0, 1.5}));
  EXPECT_EQ(cfg.deconstruct.splitting_observables.size(), 2u);
  EXPECT_EQ(cfg.deconstruct.splitting_bins, 8);
  EXPECT_EQ(cfg.diagnose.stage, 2);
  EXPECT_FALSE(cfg.diagnose.fiber_moments);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(io::parse_config("colour = 3\n" + std::string(kMinimal)), InvalidArgument);
  EXPECT_THROW(io::parse_config(std::string(kMinimal) + "[simulate]\nrowz = 3\n"), InvalidArgument);
  EXPECT_THROW(io::parse_config("seed = 1\n"), InvalidArgument);
  EXPECT_THROW(io::parse_config("[system\nomega = 1"), InvalidArgument);
  EXPECT_THROW(io::parse_config("[system]\nomega = [1.0]\ndt = -1.0\n"), InvalidArgument);
  EXPECT_THROW(io::parse_config("[system]\nomega = [\"fast\"]\n"), InvalidArgument);
  EXPECT_THROW(io::parse_config(std::string(kMinimal) + "[eigen]\nsource = \"guess\"\n"), InvalidArgument);
  EXPECT_THROW(io::parse_config(std::string(kMinimal) + "[deconstruct]\nframes = \"lagged\"\n"), InvalidArgument);
  EXPECT_THROW(io::parse_config(std::string(kMinimal) + "[system.warp]\nkind = \"shear\"\nscale = 1.0\n"), InvalidArgument);
}

TEST(Config, DeclaredShapeMustMatch) {
  io::PipelineConfig cfg = io::parse_config(kMinimal);
  cfg.system.dimension = 4;
  EXPECT_THROW(io::build_prototype(cfg.system), InvalidArgument);
  cfg.system.dimension = 3;
  cfg.system.angle_mask = std::vector<bool>{true, false, false};
  EXPECT_THROW(io::build_prototype(cfg.system), InvalidArgument);
  cfg.system.angle_mask = std::vector<bool>{true, true, false};
  EXPECT_NO_THROW(io::build_prototype(cfg.system));
  cfg.system.torus_dim = 3;
  EXPECT_THROW(io::build_prototype(cfg.system), InvalidArgument);
}

TEST(FormatNumber, RoundTrips) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<double>(i % 40 - 20));
    EXPECT_EQ(std::strtod(io::format_number(v).c_str(), nullptr), v);
  }
  EXPECT_EQ(io::format_number(0.1), "0.1");
  EXPECT_EQ(io::format_number(std::nextafter(0.1, 1.0)), "0.10000000000000002");
}

TEST(Csv, WriteThenRead) {
  const fs::path dir = scratch("csv");
  io::CsvWriter csv({"t", "x1"});
  const std::vector<double> a{0.0, kTwoPi}, b{0.1, -1e-300};
  csv.row(a);
  csv.row(b);
  EXPECT_THROW(csv.row(std::vector<double>{1.0}), InvalidArgument);
  io::write_text(dir / "t.csv", csv.str());
  const io::CsvTable t = io::read_csv(dir / "t.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"t", "x1"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], kTwoPi);
  EXPECT_EQ(t.rows[1][1], -1e-300);

  io::write_text(dir / "bad.csv", "a,b\n1,2\n3\n");
  EXPECT_THROW(io::read_csv(dir / "bad.csv"), InvalidArgument);
  io::write_text(dir / "word.csv", "a\nabc\n");
  EXPECT_THROW(io::read_csv(dir / "word.csv"), InvalidArgument);
  EXPECT_THROW(io::read_csv(dir / "missing.csv"), Error);
  fs::remove_all(dir);
}

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, MergesAndResets) {
  const fs::path dir = scratch("manifest");
  const io::PipelineConfig cfg = io::parse_config(kMinimal);
  {
    io::RunManifest m(dir, cfg);
    m.write_file("a.txt", "hello");
    m.stage("simulate", "passed", io::Json{{"rows", 3}});
    m.save();
  }
  {
    io::RunManifest m(dir, cfg);
    EXPECT_TRUE(m.document()["stages"].contains("simulate"));
    EXPECT_EQ(m.document()["files"]["a.txt"]["sha256"], io::sha256_hex("hello"));
    m.stage("eigen", "failed");
    m.save();
  }
  const io::Json doc = io::Json::parse(io::read_text(dir / "manifest.json"));
  EXPECT_EQ(doc["stages"]["simulate"]["rows"], 3);
  EXPECT_EQ(doc["stages"]["eigen"]["status"], "failed");
  EXPECT_EQ(doc["config_hash"], io::sha256_hex(cfg.source_text));
  EXPECT_TRUE(doc["versions"].contains("eigen"));

  io::PipelineConfig other = io::parse_config(std::string(kMinimal) + "\n# changed\n");
  io::RunManifest fresh(dir, other);
  EXPECT_FALSE(fresh.document()["stages"].contains("simulate"));

  io::PipelineConfig reseeded = cfg;
  reseeded.seed = 5;
  EXPECT_FALSE(io::RunManifest(dir, reseeded).document()["stages"].contains("simulate"));
  fs::remove_all(dir);
}
