#include "efficomm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "efficomm/param_file.hpp"
#include "efficomm/random.hpp"
#include "efficomm/report.hpp"

namespace efficomm {

std::string_view to_string(GatingMode mode) { return mode == GatingMode::PerFrame ? "per_frame" : "per_cell"; }
std::string_view to_string(StMode mode) { return mode == StMode::Inference ? "inference" : "training"; }

void CliConfig::set_seed(std::uint64_t s) {
  seed = s;
  scenario.seed = s;
  pipeline.st.seed = s;
}

void CliConfig::validate() const {
  if (frames < 1) throw ConfigError("frames", "must be >= 1, got " + std::to_string(frames));
  if (scenario.seed != seed || pipeline.st.seed != seed) throw ConfigError("run.seed", "derived seeds out of sync");
  scenario.validate();
  pipeline.validate();
  agr_arch.validate();
  moe_arch.validate();
  if (moe_arch.model_dim != scenario.grid.channels)
    throw ConfigError("moe.model_dim", "must equal scenario.channels");
  if (pipeline.scales == 2 && (scenario.grid.height % 2 != 0 || scenario.grid.width % 2 != 0))
    throw ConfigError("moe.scales", "two scales need an even grid height and width");
  if (!moe_weights.empty() && moe_weights.size() != static_cast<std::size_t>(pipeline.scales))
    throw ConfigError("moe.weights", "expected one file per scale (" + std::to_string(pipeline.scales) + ")");
}

namespace {

using Setter = std::function<void(CliConfig&, const std::string&)>;

[[noreturn]] void bad(const std::string& field, const std::string& value, const char* what) {
  throw ConfigError(field, "expected " + std::string(what) + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& field, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty())
    bad(field, v, std::is_integral_v<T> ? "an integer" : "a number");
  return out;
}

bool parse_bool(const std::string& field, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad(field, v, "true or false");
}

std::vector<std::filesystem::path> parse_paths(const std::string& v, const std::filesystem::path& base) {
  std::vector<std::filesystem::path> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    std::filesystem::path p = item.substr(b, e - b + 1);
    out.push_back(p.is_relative() && !base.empty() ? base / p : p);
  }
  return out;
}

std::map<std::string, Setter> setters(const std::filesystem::path& base) {
  std::map<std::string, Setter> s;
  s["run.seed"] = [](CliConfig& c, const std::string& v) { c.set_seed(parse_number<std::uint64_t>("run.seed", v)); };
  s["run.frames"] = [](CliConfig& c, const std::string& v) { c.frames = parse_number<std::int64_t>("frames", v); };

  s["scenario.vehicles"] = [](CliConfig& c, const std::string& v) { c.scenario.vehicles = parse_number<int>("scenario.vehicles", v); };
  s["scenario.objects"] = [](CliConfig& c, const std::string& v) { c.scenario.objects = parse_number<int>("scenario.objects", v); };
  s["scenario.classes"] = [](CliConfig& c, const std::string& v) { c.scenario.classes = parse_number<int>("scenario.classes", v); };
  s["scenario.channels"] = [](CliConfig& c, const std::string& v) {
    c.scenario.grid.channels = parse_number<int>("scenario.channels", v);
    c.moe_arch.model_dim = c.scenario.grid.channels;
  };
  s["scenario.height"] = [](CliConfig& c, const std::string& v) { c.scenario.grid.height = parse_number<int>("scenario.height", v); };
  s["scenario.width"] = [](CliConfig& c, const std::string& v) { c.scenario.grid.width = parse_number<int>("scenario.width", v); };
  s["scenario.sensing_radius"] = [](CliConfig& c, const std::string& v) { c.scenario.sensing_radius = parse_number<double>("scenario.sensing_radius", v); };
  s["scenario.occlusion"] = [](CliConfig& c, const std::string& v) { c.scenario.occlusion = parse_bool("scenario.occlusion", v); };
  s["scenario.noise_scale"] = [](CliConfig& c, const std::string& v) { c.scenario.noise_scale = parse_number<double>("scenario.noise_scale", v); };
  s["scenario.peak_logit"] = [](CliConfig& c, const std::string& v) { c.scenario.peak_logit = parse_number<double>("scenario.peak_logit", v); };
  s["scenario.floor_logit"] = [](CliConfig& c, const std::string& v) { c.scenario.floor_logit = parse_number<double>("scenario.floor_logit", v); };
  s["scenario.decay"] = [](CliConfig& c, const std::string& v) { c.scenario.decay = parse_number<double>("scenario.decay", v); };
  s["scenario.feature_noise"] = [](CliConfig& c, const std::string& v) { c.scenario.feature_noise = parse_number<double>("scenario.feature_noise", v); };
  s["scenario.max_retries"] = [](CliConfig& c, const std::string& v) { c.scenario.max_retries = parse_number<int>("scenario.max_retries", v); };

  s["st.threshold"] = [](CliConfig& c, const std::string& v) { c.pipeline.st.threshold = parse_number<double>("st.threshold", v); };
  s["st.mode"] = [](CliConfig& c, const std::string& v) {
    if (v == "inference") c.pipeline.st.mode = StMode::Inference;
    else if (v == "training") c.pipeline.st.mode = StMode::Training;
    else bad("st.mode", v, "inference or training");
  };

  s["agr.k_ego"] = [](CliConfig& c, const std::string& v) { c.pipeline.bases.ego = parse_number<double>("agr.k_ego", v); };
  s["agr.k_remote"] = [](CliConfig& c, const std::string& v) { c.pipeline.bases.remote = parse_number<double>("agr.k_remote", v); };
  s["agr.clamp_min"] = [](CliConfig& c, const std::string& v) { c.pipeline.clamp.lo = parse_number<double>("agr.clamp_min", v); };
  s["agr.clamp_max"] = [](CliConfig& c, const std::string& v) { c.pipeline.clamp.hi = parse_number<double>("agr.clamp_max", v); };
  s["agr.congestion"] = [](CliConfig& c, const std::string& v) {
    if (v.empty()) c.pipeline.congestion.reset();
    else c.pipeline.congestion = parse_number<double>("agr.congestion", v);
  };
  s["agr.weights"] = [base](CliConfig& c, const std::string& v) {
    const auto p = parse_paths(v, base);
    if (p.size() > 1) bad("agr.weights", v, "a single path");
    c.agr_weights = p.empty() ? std::filesystem::path{} : p.front();
  };

  s["moe.experts"] = [](CliConfig& c, const std::string& v) { c.moe_arch.experts = parse_number<int>("moe.experts", v); };
  s["moe.key_dim"] = [](CliConfig& c, const std::string& v) { c.moe_arch.key_dim = parse_number<int>("moe.key_dim", v); };
  s["moe.router_hidden"] = [](CliConfig& c, const std::string& v) { c.moe_arch.router_hidden = parse_number<int>("moe.router_hidden", v); };
  s["moe.gating"] = [](CliConfig& c, const std::string& v) {
    if (v == "per_frame") c.pipeline.gating = GatingMode::PerFrame;
    else if (v == "per_cell") c.pipeline.gating = GatingMode::PerCell;
    else bad("moe.gating", v, "per_frame or per_cell");
  };
  s["moe.scales"] = [](CliConfig& c, const std::string& v) { c.pipeline.scales = parse_number<int>("moe.scales", v); };
  s["moe.weights"] = [base](CliConfig& c, const std::string& v) { c.moe_weights = parse_paths(v, base); };

  s["loss.lambda_bandwidth"] = [](CliConfig& c, const std::string& v) { c.pipeline.loss.bandwidth = parse_number<double>("loss.lambda_bandwidth", v); };
  s["loss.mu_entropy"] = [](CliConfig& c, const std::string& v) { c.pipeline.loss.entropy = parse_number<double>("loss.mu_entropy", v); };

  s["metrics.comm_times_bytes"] = [](CliConfig& c, const std::string& v) { c.pipeline.comm_times_bytes = parse_bool("metrics.comm_times_bytes", v); };
  s["metrics.recall_threshold"] = [](CliConfig& c, const std::string& v) { c.pipeline.recall_threshold = parse_number<double>("metrics.recall_threshold", v); };

  s["output.dir"] = [base](CliConfig& c, const std::string& v) {
    const auto p = parse_paths(v, base);
    if (p.size() > 1) bad("output.dir", v, "a single path");
    c.output_dir = p.empty() ? std::filesystem::path{} : p.front();
  };
  s["output.dump_payloads"] = [](CliConfig& c, const std::string& v) { c.dump_payloads = parse_bool("output.dump_payloads", v); };
  s["output.trace"] = [](CliConfig& c, const std::string& v) { c.trace = parse_bool("output.trace", v); };
  return s;
}

}  // namespace

CliConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  const auto table = setters(base_dir);
  CliConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "key outside any section");
    for (const auto& [key, value] : body) {
      const std::string field = section + "." + key;
      const auto it = table.find(field);
      if (it == table.end()) throw ConfigError(field, "unknown key");
      it->second(cfg, value.get_value<std::string>());
    }
  }
  cfg.validate();
  return cfg;
}

CliConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string CliConfig::canonical_text() const {
  std::ostringstream o;
  auto d = [](double v) { return format_double(v); };
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[agr]\n"
    << "clamp_max = " << d(pipeline.clamp.hi) << "\nclamp_min = " << d(pipeline.clamp.lo)
    << "\ncongestion = " << (pipeline.congestion ? d(*pipeline.congestion) : std::string())
    << "\nk_ego = " << d(pipeline.bases.ego) << "\nk_remote = " << d(pipeline.bases.remote)
    << "\nweights = " << agr_weights.generic_string() << "\n";
  o << "[loss]\nlambda_bandwidth = " << d(pipeline.loss.bandwidth) << "\nmu_entropy = " << d(pipeline.loss.entropy)
    << "\n";
  o << "[metrics]\ncomm_times_bytes = " << b(pipeline.comm_times_bytes)
    << "\nrecall_threshold = " << d(pipeline.recall_threshold) << "\n";
  o << "[moe]\nexperts = " << moe_arch.experts << "\ngating = " << to_string(pipeline.gating)
    << "\nkey_dim = " << moe_arch.key_dim << "\nrouter_hidden = " << moe_arch.router_hidden
    << "\nscales = " << pipeline.scales << "\nweights = ";
  for (std::size_t i = 0; i < moe_weights.size(); ++i) o << (i ? "," : "") << moe_weights[i].generic_string();
  o << "\n";
  o << "[run]\nframes = " << frames << "\nseed = " << seed << "\n";
  o << "[scenario]\nchannels = " << scenario.grid.channels << "\nclasses = " << scenario.classes
    << "\ndecay = " << d(scenario.decay) << "\nfeature_noise = " << d(scenario.feature_noise)
    << "\nfloor_logit = " << d(scenario.floor_logit) << "\nheight = " << scenario.grid.height
    << "\nmax_retries = " << scenario.max_retries << "\nnoise_scale = " << d(scenario.noise_scale)
    << "\nobjects = " << scenario.objects << "\nocclusion = " << b(scenario.occlusion)
    << "\npeak_logit = " << d(scenario.peak_logit) << "\nsensing_radius = " << d(scenario.sensing_radius)
    << "\nvehicles = " << scenario.vehicles << "\nwidth = " << scenario.grid.width << "\n";
  o << "[st]\nmode = " << to_string(pipeline.st.mode) << "\nthreshold = " << d(pipeline.st.threshold) << "\n";
  return o.str();
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p, const char* field) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError(field, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

ModelWeights CliConfig::load_weights() const {
  ModelWeights w = ModelWeights::random(agr_arch, moe_arch, pipeline.scales, seed);
  if (!agr_weights.empty()) w.agr = load_agr_weights(read_bytes(agr_weights, "agr.weights"), agr_arch);
  for (std::size_t s = 0; s < moe_weights.size(); ++s)
    w.moe[s] = load_moe_weights(read_bytes(moe_weights[s], "moe.weights"), moe_arch);
  return w;
}

std::string run_fingerprint(const CliConfig& cfg, const ModelWeights& weights) {
  std::uint64_t h = fnv1a64(cfg.canonical_text());
  auto mix = [&h](const std::vector<std::uint8_t>& bytes) {
    for (auto b : bytes) {
      h ^= b;
      h *= 0x100000001b3ull;
    }
  };
  mix(save_agr_weights(weights.agr));
  for (const auto& m : weights.moe) mix(save_moe_weights(m));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace efficomm
