#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ptychoforge/cli.hpp"
#include "ptychoforge/config.hpp"
#include "ptychoforge/pgm.hpp"
#include "ptychoforge/stitch_metrics.hpp"
#include "ptychoforge/tensor_io.hpp"

using namespace ptychoforge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kSmallConfig = R"({
  "seed": 11,
  "simulation": {
    "geometry": {"frame_size": 16},
    "object": {"height": 0, "width": 0, "blur_px": 1, "feature_min_px": 2, "feature_max_px": 6},
    "probe": {"fwhm_px": 3},
    "scan": {"rows": 10, "cols": 8, "step_px": 2, "margin_px": 3}
  },
  "epie": {"iterations": 10},
  "dataset": {"train_fraction": 0.6},
  "model": {"input_size": 16, "encoder_channels": [2, 4], "decoder_channels": [4, 2]},
  "train": {"batch_size": 8, "max_epochs": 2},
  "sweep": {"sparsity_factors": [1, 2, 3], "train_sizes": ["full", "full/2"]},
  "bench": {"batch": 4, "repeats": 2}
})";

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ptychoforge_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ptychoforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = ptychoforge::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n - 1;
}

}  // namespace

TEST_CASE("config: unknown keys and bad values are reported by path") {
  auto doc = json::parse(kSmallConfig);
  doc["simulation"]["scan"]["bogus"] = 1;
  try {
    config_from_json(doc);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "/simulation/scan/bogus");
  }
  doc = json::parse(kSmallConfig);
  doc["epie"]["alpha"] = "fast";
  try {
    config_from_json(doc);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "/epie/alpha");
  }
  doc = json::parse(kSmallConfig);
  doc["dataset"]["label_source"] = "oracle";
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
}

TEST_CASE("config: seeds are derived, explicit and round-trippable") {
  const auto doc = json::parse(kSmallConfig);
  const auto a = config_from_json(doc);
  CHECK(a.sim.object_seed == derive_seed(11, 1));
  CHECK(a.epie.shuffle_seed == derive_seed(11, 3));
  const auto resolved = config_to_json(a);
  CHECK(resolved["simulation"]["object"]["seed"] == a.sim.object_seed);
  CHECK(config_to_json(config_from_json(resolved)) == resolved);

  const auto b = config_from_json(doc, 12);
  CHECK(b.seed == 12);
  CHECK(b.sim.object_seed == derive_seed(12, 1));

  auto pinned = doc;
  pinned["simulation"]["object"]["seed"] = 99;
  CHECK(config_from_json(pinned, 12).sim.object_seed == 99);
}

TEST_CASE("cli: exit codes") {
  const auto dir = fresh_dir("codes");
  const auto cfg = write_text(dir / "c.json", kSmallConfig);

  CHECK(run_cli({}).code == ptychoforge::cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == ptychoforge::cli::kExitUsage);
  CHECK(run_cli({"simulate"}).code == ptychoforge::cli::kExitUsage);

  auto bad = json::parse(kSmallConfig);
  bad["train"]["epochs"] = 3;
  const auto bad_cfg = write_text(dir / "bad.json", bad.dump());
  const auto r1 = run_cli({"simulate", "--config", bad_cfg.string(), "--out", dir.string()});
  CHECK(r1.code == ptychoforge::cli::kExitUsage);
  CHECK(r1.err.find("/train/epochs") != std::string::npos);

  write_text(dir / "broken.json", "{ \"seed\": ");
  CHECK(run_cli({"simulate", "--config", (dir / "broken.json").string()}).code == ptychoforge::cli::kExitUsage);

  const auto r2 = run_cli({"simulate", "--config", (dir / "absent.json").string()});
  CHECK(r2.code == ptychoforge::cli::kExitMissingInput);
  CHECK(r2.err.find("absent.json") != std::string::npos);

  const auto r3 = run_cli({"epie", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r3.code == ptychoforge::cli::kExitMissingInput);
  INFO(r3.err);
  CHECK(r3.err.find(".ptyt") != std::string::npos);

  REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", dir.string()}).code == 0);
  auto bytes = read_file_bytes(dir / "stack.ptyt");
  bytes[0] = 'Q';
  write_file_bytes(dir / "stack.ptyt", bytes);
  CHECK(run_cli({"epie", "--config", cfg.string(), "--out", dir.string()}).code == ptychoforge::cli::kExitFailure);
  write_text(dir / "grid.csv", "nonsense\n");
  CHECK(run_cli({"epie", "--config", cfg.string(), "--out", dir.string()}).code == ptychoforge::cli::kExitFailure);
}

TEST_CASE("cli: full pipeline, single-frame predict and sweep row counts") {
  const auto dir = fresh_dir("pipeline");
  const auto cfg = write_text(dir / "c.json", kSmallConfig);
  const auto base = std::vector<std::string>{"--config", cfg.string(), "--out", dir.string(), "--deterministic"};
  auto stage = [&](std::vector<std::string> args) {
    args.insert(args.end(), base.begin(), base.end());
    const auto r = run_cli(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    return r;
  };

  const auto sim = stage({"simulate"});
  CHECK(sim.out.find("80 frames") != std::string::npos);
  stage({"epie", "--region", "train"});
  stage({"dataset"});
  stage({"train"});
  const auto one = stage({"predict", "--frame", "3"});
  CHECK(one.out.find("pred_amp.pgm") != std::string::npos);
  CHECK(one.out.find("pred_phase.pgm") != std::string::npos);
  CHECK(one.out.find("ms/frame") != std::string::npos);
  CHECK(fs::exists(dir / "pred_amp.pgm"));
  stage({"predict", "--region", "test"});
  stage({"stitch"});
  CHECK(csv_rows(dir / "stitch_metrics.csv") == 1);
  stage({"sweep", "--factors", "1,2"});
  CHECK(csv_rows(dir / "sweep_metrics.csv") == 4);
  const auto rows = read_metrics_csv(dir / "sweep_metrics.csv");
  CHECK(rows[2].factor == 2);
  stage({"bench"});
  CHECK(csv_rows(dir / "timing.csv") == 4);

  for (const char* s : {"simulate", "epie", "dataset", "train", "predict", "stitch", "sweep", "bench"}) {
    CAPTURE(s);
    const auto manifest = json::parse(slurp(dir / (std::string("manifest_") + s + ".json")));
    CHECK(manifest["stage"] == s);
    CHECK(manifest["deterministic"] == true);
    CHECK(manifest.contains("config"));
    CHECK(manifest["outputs"].size() > 0);
  }
  const auto m = json::parse(slurp(dir / "manifest_dataset.json"));
  CHECK(m["inputs"].size() >= 2);
  CHECK(m["inputs"][0]["sha256"].get<std::string>().size() == 64);
}

TEST_CASE("cli: deterministic reruns are byte-identical") {
  const auto a = fresh_dir("rerun_a");
  const auto b = fresh_dir("rerun_b");
  const auto cfg = write_text(a / "c.json", kSmallConfig);
  for (const auto& dir : {a, b}) {
    for (std::vector<std::string> st : {std::vector<std::string>{"simulate"}, {"epie", "--region", "train"}, {"dataset"},
                                        {"train"}, {"predict", "--region", "test"}, {"stitch"}}) {
      st.insert(st.end(), {"--config", cfg.string(), "--out", dir.string(), "--deterministic"});
      REQUIRE(run_cli(st).code == 0);
    }
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(b)) {
    const auto name = entry.path().filename();
    if (name == "c.json") continue;
    CAPTURE(name.string());
    std::string left = slurp(a / name);
    std::string right = slurp(entry.path());
    if (name.string().starts_with("manifest_")) {
      // Manifests name their own output directory; compare the rest.
      auto la = json::parse(left);
      auto rb = json::parse(right);
      la.erase("out_dir");
      rb.erase("out_dir");
      CHECK(la == rb);
    } else {
      CHECK(left == right);
    }
    ++compared;
  }
  CHECK(compared >= 20);
}

TEST_CASE("cli: --seed replaces the master seed") {
  const auto a = fresh_dir("seed_a");
  const auto cfg = write_text(a / "c.json", kSmallConfig);
  REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", a.string()}).code == 0);
  const auto first = slurp(a / "object.ptyt");
  REQUIRE(run_cli({"simulate", "--config", cfg.string(), "--out", a.string(), "--seed", "12"}).code == 0);
  CHECK(slurp(a / "object.ptyt") != first);
  const auto manifest = json::parse(slurp(a / "manifest_simulate.json"));
  CHECK(manifest["config"]["seed"] == 12);
}

TEST_CASE("PGM export") {
  const auto dir = fresh_dir("pgm");
  RealImage2D img(3, 5);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) / 14.0;
  img[0] = -1.0;
  img[1] = 2.0;
  export_pgm(img, dir / "a.pgm", 0.0, 1.0);
  const auto raw = slurp(dir / "a.pgm");
  CHECK(raw.rfind("P5\n5 3\n65535\n", 0) == 0);
  CHECK(raw.size() == std::string("P5\n5 3\n65535\n").size() + 30);
  const auto back = read_pgm16(dir / "a.pgm");
  CHECK(back[0] == 0);
  CHECK(back[1] == 65535);
  for (std::size_t i = 2; i < img.size(); ++i) CHECK(std::abs(back[i] / 65535.0 - img[i]) <= 0.5 / 65535.0);
  // Big-endian: the high byte of sample 1 (65535) comes first.
  const auto header = std::string("P5\n5 3\n65535\n").size();
  CHECK(static_cast<unsigned char>(raw[header + 2]) == 0xFF);

  export_pgm(RealImage2D(2, 2, 0.5), dir / "lo.pgm", 0.5, 1.0);
  const auto lo = read_pgm16(dir / "lo.pgm");
  for (auto v : lo.values()) CHECK(v == 0);
  export_pgm(RealImage2D(2, 2, 1.0), dir / "hi.pgm", 0.5, 1.0);
  const auto hi = read_pgm16(dir / "hi.pgm");
  for (auto v : hi.values()) CHECK(v == 65535);
  CHECK_THROWS_AS(export_pgm(img, dir / "x.pgm", 1.0, 1.0), ArgumentError);
}
