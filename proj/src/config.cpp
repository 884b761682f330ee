#include "ptychoforge/config.hpp"

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ptychoforge/errors.hpp"
#include "ptychoforge/numerics.hpp"

namespace ptychoforge {

namespace {

using nlohmann::json;

enum SeedTag : std::uint64_t { kObject = 1, kNoise, kShuffle, kEpieInit, kSplit, kInit, kTrain };

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return doc_.contains(key);
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(doc_.contains(key) ? doc_.at(key) : empty, at(key));
  }

  void read(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const auto& v = doc_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(at(key), "expected a nonnegative integer");
    out = v.get<std::size_t>();
  }

  void read(const std::string& key, std::uint64_t& out, bool& given) {
    given = has(key);
    if (!given) return;
    const auto& v = doc_.at(key);
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
    } else if (v.is_number_integer() && v.get<long long>() >= 0) {
      out = static_cast<std::uint64_t>(v.get<long long>());
    } else {
      throw ConfigError(at(key), "expected a nonnegative integer seed");
    }
  }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = doc_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    out = v.get<double>();
  }

  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = doc_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    out = v.get<bool>();
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = doc_.at(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    out = v.get<std::string>();
  }

  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (!has(key)) return;
    const auto& v = doc_.at(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of nonnegative integers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer() || v[i].get<long long>() < 0) {
        throw ConfigError(at(key) + "/" + std::to_string(i), "expected a nonnegative integer");
      }
      out.push_back(v[i].get<std::size_t>());
    }
  }

  // Items are strings ("full", "full/4") or integers.
  void read_sizes(const std::string& key, std::vector<std::string>& out) {
    if (!has(key)) return;
    const auto& v = doc_.at(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].is_string()) {
        out.push_back(v[i].get<std::string>());
      } else if (v[i].is_number_integer() && v[i].get<long long>() > 0) {
        out.push_back(std::to_string(v[i].get<long long>()));
      } else {
        throw ConfigError(at(key) + "/" + std::to_string(i), "expected \"full\", \"full/k\" or a positive integer");
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.contains(key)) throw ConfigError(at(key), "unknown key");
    }
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

void seed_or_derive(Section& s, const std::string& key, std::uint64_t& out, std::uint64_t master, SeedTag tag) {
  bool given = false;
  s.read(key, out, given);
  if (!given) out = derive_seed(master, tag);
}

}  // namespace

ExperimentConfig config_from_json(const json& doc, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig c;
  Section root(doc, "");
  bool given = false;
  root.read("seed", c.seed, given);
  if (seed_override) c.seed = *seed_override;
  std::string out_dir = c.output_dir.string();
  root.read("output_dir", out_dir);
  c.output_dir = out_dir;

  {
    auto sim = root.child("simulation");
    {
      auto g = sim.child("geometry");
      g.read("wavelength_m", c.sim.geometry.wavelength);
      g.read("detector_distance_m", c.sim.geometry.detector_distance);
      g.read("detector_pixel_m", c.sim.geometry.detector_pixel);
      g.read("frame_size", c.sim.geometry.frame_size);
      g.finish();
    }
    {
      auto o = sim.child("object");
      o.read("height", c.sim.object_height);
      o.read("width", c.sim.object_width);
      o.read("a_min", c.sim.object.a_min);
      o.read("phi_max", c.sim.object.phi_max);
      o.read("blur_px", c.sim.object.blur_px);
      o.read("fill_fraction", c.sim.object.fill_fraction);
      o.read("feature_min_px", c.sim.object.feature_min_px);
      o.read("feature_max_px", c.sim.object.feature_max_px);
      seed_or_derive(o, "seed", c.sim.object_seed, c.seed, kObject);
      o.finish();
    }
    {
      auto p = sim.child("probe");
      p.read("fwhm_px", c.sim.probe_fwhm_px);
      p.finish();
    }
    {
      auto s = sim.child("scan");
      s.read("rows", c.sim.scan_rows);
      s.read("cols", c.sim.scan_cols);
      s.read("step_px", c.sim.step_px);
      s.read("margin_px", c.sim.margin_px);
      s.finish();
    }
    {
      auto n = sim.child("noise");
      if (n.has("photon_budget") && !doc.at("simulation").at("noise").at("photon_budget").is_null()) {
        double budget = 0.0;
        n.read("photon_budget", budget);
        c.sim.photon_budget = budget;
      }
      seed_or_derive(n, "seed", c.sim.noise_seed, c.seed, kNoise);
      n.finish();
    }
    sim.finish();
  }
  {
    auto e = root.child("epie");
    e.read("iterations", c.epie.iterations);
    e.read("alpha", c.epie.alpha);
    e.read("beta", c.epie.beta);
    e.read("probe_update_start", c.epie.probe_update_start);
    e.read("init_noise", c.init_noise);
    seed_or_derive(e, "shuffle_seed", c.epie.shuffle_seed, c.seed, kShuffle);
    seed_or_derive(e, "init_seed", c.epie_init_seed, c.seed, kEpieInit);
    e.finish();
  }
  {
    auto d = root.child("dataset");
    d.read("train_fraction", c.train_fraction);
    std::string source = c.label_source == LabelSource::Epie ? "epie" : "truth";
    d.read("label_source", source);
    if (source == "epie") {
      c.label_source = LabelSource::Epie;
    } else if (source == "truth") {
      c.label_source = LabelSource::Truth;
    } else {
      throw ConfigError("/dataset/label_source", "expected \"epie\" or \"truth\"");
    }
    seed_or_derive(d, "split_seed", c.split_seed, c.seed, kSplit);
    d.finish();
  }
  {
    auto m = root.child("model");
    m.read("input_size", c.arch.input_size);
    m.read("encoder_channels", c.arch.encoder_channels);
    m.read("convs_per_block", c.arch.convs_per_block);
    m.read("decoder_channels", c.arch.decoder_channels);
    m.read("kernel", c.arch.kernel);
    seed_or_derive(m, "init_seed", c.init_seed, c.seed, kInit);
    m.finish();
  }
  {
    auto t = root.child("train");
    t.read("batch_size", c.train.batch_size);
    t.read("max_epochs", c.train.max_epochs);
    t.read("plateau_patience", c.train.plateau_patience);
    t.read("lr_factor", c.train.lr_factor);
    t.read("lr", c.train.lr);
    t.read("min_lr", c.train.min_lr);
    seed_or_derive(t, "seed", c.train.seed, c.seed, kTrain);
    t.finish();
  }
  {
    auto s = root.child("stitch");
    s.read("probe_weighted", c.probe_weighted_stitch);
    s.read("mask_threshold", c.mask_threshold);
    s.finish();
  }
  {
    auto s = root.child("sweep");
    s.read("sparsity_factors", c.sparsity_factors);
    s.read_sizes("train_sizes", c.train_sizes);
    s.finish();
  }
  {
    auto b = root.child("bench");
    b.read("batch", c.bench_batch);
    b.read("repeats", c.bench_repeats);
    b.finish();
  }
  root.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json sizes = json::array();
  for (const auto& s : c.train_sizes) {
    const bool numeric = !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
    sizes.push_back(numeric ? json(std::stoull(s)) : json(s));
  }
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"simulation",
       {{"geometry",
         {{"wavelength_m", c.sim.geometry.wavelength},
          {"detector_distance_m", c.sim.geometry.detector_distance},
          {"detector_pixel_m", c.sim.geometry.detector_pixel},
          {"frame_size", c.sim.geometry.frame_size}}},
        {"object",
         {{"height", c.sim.object_height},
          {"width", c.sim.object_width},
          {"a_min", c.sim.object.a_min},
          {"phi_max", c.sim.object.phi_max},
          {"blur_px", c.sim.object.blur_px},
          {"fill_fraction", c.sim.object.fill_fraction},
          {"feature_min_px", c.sim.object.feature_min_px},
          {"feature_max_px", c.sim.object.feature_max_px},
          {"seed", c.sim.object_seed}}},
        {"probe", {{"fwhm_px", c.sim.probe_fwhm_px}}},
        {"scan",
         {{"rows", c.sim.scan_rows},
          {"cols", c.sim.scan_cols},
          {"step_px", c.sim.step_px},
          {"margin_px", c.sim.margin_px}}},
        {"noise",
         {{"photon_budget", c.sim.photon_budget ? json(*c.sim.photon_budget) : json(nullptr)},
          {"seed", c.sim.noise_seed}}}}},
      {"epie",
       {{"iterations", c.epie.iterations},
        {"alpha", c.epie.alpha},
        {"beta", c.epie.beta},
        {"probe_update_start", c.epie.probe_update_start},
        {"init_noise", c.init_noise},
        {"shuffle_seed", c.epie.shuffle_seed},
        {"init_seed", c.epie_init_seed}}},
      {"dataset",
       {{"train_fraction", c.train_fraction},
        {"label_source", c.label_source == LabelSource::Epie ? "epie" : "truth"},
        {"split_seed", c.split_seed}}},
      {"model",
       {{"input_size", c.arch.input_size},
        {"encoder_channels", c.arch.encoder_channels},
        {"convs_per_block", c.arch.convs_per_block},
        {"decoder_channels", c.arch.decoder_channels},
        {"kernel", c.arch.kernel},
        {"init_seed", c.init_seed}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"plateau_patience", c.train.plateau_patience},
        {"lr_factor", c.train.lr_factor},
        {"lr", c.train.lr},
        {"min_lr", c.train.min_lr},
        {"seed", c.train.seed}}},
      {"stitch", {{"probe_weighted", c.probe_weighted_stitch}, {"mask_threshold", c.mask_threshold}}},
      {"sweep", {{"sparsity_factors", c.sparsity_factors}, {"train_sizes", sizes}}},
      {"bench", {{"batch", c.bench_batch}, {"repeats", c.bench_repeats}}},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(doc, seed_override);
}

}  // namespace ptychoforge
