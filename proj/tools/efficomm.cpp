// efficomm command-line tool: run, codec, inspect, report.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "efficomm/config.hpp"
#include "efficomm/report.hpp"
#include "efficomm/runner.hpp"
#include "efficomm/wire_codec.hpp"

namespace fs = std::filesystem;
using namespace efficomm;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct RunArgs {
  std::string config;
  std::string out;
  std::optional<std::int64_t> frames;
  std::optional<std::uint64_t> seed;
  bool dump_payloads = false;
};

int cmd_run(const RunArgs& a) {
  CliConfig cfg = load_config(a.config);
  if (a.frames) cfg.frames = *a.frames;
  if (a.seed) cfg.set_seed(*a.seed);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.dump_payloads) cfg.dump_payloads = true;
  cfg.validate();
  const RunOutcome r = run_simulation(cfg);
  std::cout << "frames: " << r.report.frames << "\n"
            << "bandwidth MB/frame: mean " << fixed(r.report.bandwidth.mean, 4) << " std "
            << fixed(r.report.bandwidth.std, 4) << "\n"
            << "mean L_bw: " << fixed(r.report.mean_l_bw, 4) << "\n"
            << "mean comm log2: " << fixed(r.report.mean_comm_log2, 4) << "\n"
            << "mean recall: " << fixed(r.report.mean_recall, 4) << "\n"
            << "fingerprint: " << r.report.fingerprint << "\n"
            << "output: " << cfg.output_dir.string() << "\n";
  return kOk;
}

/// Dense tensor dump: {"channels", "height", "width", "vehicle_id", "scale",
/// "values"}; values are listed cell by cell (row-major cells), channels fastest.
nlohmann::json dense_json(const FeatureTensor& f, const PayloadMeta& meta) {
  nlohmann::json j;
  j["channels"] = f.channels();
  j["height"] = f.height();
  j["width"] = f.width();
  j["vehicle_id"] = meta.vehicle_id;
  j["scale"] = meta.scale;
  j["values"] = std::vector<double>(f.values().data(), f.values().data() + f.values().size());
  return j;
}

int cmd_encode(const std::string& in, const std::string& out) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("input", std::string("not a dense tensor JSON document: ") + e.what());
  }
  GridShape s;
  PayloadMeta meta;
  std::vector<double> values;
  try {
    s = {j.at("channels").get<int>(), j.at("height").get<int>(), j.at("width").get<int>()};
    meta.vehicle_id = j.value("vehicle_id", 0u);
    meta.scale = j.value("scale", std::uint8_t{1});
    values = j.at("values").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("input", e.what());
  }
  if (!s.valid()) throw ConfigError("input", "grid " + to_string(s) + " has a zero dimension");
  if (static_cast<Index>(values.size()) != s.size())
    throw ConfigError("values", "expected " + std::to_string(s.size()) + " values, got " + std::to_string(values.size()));
  FeatureTensor f(s, Eigen::Map<const MatrixXr>(values.data(), s.channels, s.cells()));
  const auto bytes = encode_sparse(f, meta);
  write_file_atomic(out, bytes);
  std::cout << "encoded " << bytes.size() << " bytes\n";
  return kOk;
}

int cmd_decode(const std::string& in, const std::string& out) {
  const std::string raw = read_text(in);
  const auto decoded = decode_sparse(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
  write_file_atomic(out, dense_json(decoded.features, decoded.meta).dump() + "\n");
  std::cout << "decoded " << decoded.cell_count << " cells of " << to_string(decoded.features.shape()) << "\n";
  return kOk;
}

int cmd_inspect(std::int64_t frame_id, const std::string& run_dir) {
  const fs::path trace = fs::path(run_dir) / "trace.json";
  if (!fs::exists(trace)) throw std::runtime_error("no trace.json in " + run_dir + " (run with output.trace = true)");
  const auto j = nlohmann::json::parse(read_text(trace));
  for (const auto& f : j.at("frames")) {
    if (f.at("frame_id").get<std::int64_t>() != frame_id) continue;
    std::cout << "frame " << frame_id << "\n";
    std::cout << "tau: " << fixed(f.at("tau").get<double>(), 6) << "\n";
    std::cout << "gating: " << f.at("gating").get<std::string>() << " (" << f.at("gate_records").get<std::size_t>()
              << (f.at("gate_records").get<std::size_t>() == 1 ? " record" : " records, mean shown") << ")\n";
    std::cout << "gate weights:";
    for (const auto& g : f.at("mean_gate")) std::cout << " " << fixed(g.get<double>(), 4);
    std::cout << "\n";
    for (const auto& v : f.at("vehicles")) {
      std::cout << "vehicle " << v.at("vehicle_id").get<std::uint32_t>() << " " << v.at("role").get<std::string>()
                << ": tau " << fixed(v.at("st_rate").get<double>(), 4) << " alpha "
                << fixed(v.at("alpha").get<double>(), 4) << " k_raw " << fixed(v.at("k_raw").get<double>(), 4)
                << " k_clamped " << fixed(v.at("k_clamped").get<double>(), 4) << " K_v "
                << v.at("K_v").get<std::int64_t>() << " transmitted: " << v.at("payload_bytes").get<std::size_t>()
                << " bytes\n";
    }
    return kOk;
  }
  throw ConfigError("frame", "frame " + std::to_string(frame_id) + " not found in " + trace.string());
}

RunReport load_report(const fs::path& p) {
  const fs::path file = fs::is_directory(p) ? p / "report.json" : p;
  return report_from_json(nlohmann::json::parse(read_text(file)));
}

int cmd_compare(const std::string& a, const std::string& b) {
  const auto rows = compare_runs(load_report(a), load_report(b));
  std::cout << "metric,a,b,abs_delta,rel_delta\n";
  for (const auto& r : rows)
    std::cout << r.metric << "," << format_double(r.a) << "," << format_double(r.b) << ","
              << format_double(r.abs_delta) << "," << (r.rel_delta ? format_double(*r.rel_delta) : "null") << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"EffiComm bandwidth-efficient cooperative perception simulator"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Simulate frames and write metrics, report and trace");
  run_cmd->add_option("config", run.config, "INI config file")->required();
  run_cmd->add_option("--out", run.out, "Output directory (overrides output.dir)");
  run_cmd->add_option("--frames", run.frames, "Number of frames (overrides run.frames)");
  run_cmd->add_option("--seed", run.seed, "Master seed (overrides run.seed)");
  run_cmd->add_flag("--dump-payloads", run.dump_payloads, "Write every encoded payload under payloads/");

  std::string codec_in, codec_out;
  auto* codec = app.add_subcommand("codec", "Convert between dense tensor JSON and sparse payloads");
  codec->require_subcommand(1);
  auto* enc = codec->add_subcommand("encode", "Dense tensor JSON to payload");
  enc->add_option("in", codec_in)->required();
  enc->add_option("out", codec_out)->required();
  auto* dec = codec->add_subcommand("decode", "Payload to dense tensor JSON");
  dec->add_option("in", codec_in)->required();
  dec->add_option("out", codec_out)->required();

  std::int64_t frame_id = 0;
  std::string run_dir;
  auto* inspect = app.add_subcommand("inspect", "Print the decision trace of one frame");
  inspect->add_option("--frame", frame_id, "Frame id")->required();
  inspect->add_option("run_dir", run_dir, "Directory written by `run`")->required();

  std::string rep_a, rep_b;
  auto* report = app.add_subcommand("report", "Report utilities");
  report->require_subcommand(1);
  auto* compare = report->add_subcommand("compare", "Per-metric deltas between two runs");
  compare->add_option("a", rep_a, "Run directory or report.json")->required();
  compare->add_option("b", rep_b, "Run directory or report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run);
    if (enc->parsed()) return cmd_encode(codec_in, codec_out);
    if (dec->parsed()) return cmd_decode(codec_in, codec_out);
    if (inspect->parsed()) return cmd_inspect(frame_id, run_dir);
    if (compare->parsed()) return cmd_compare(rep_a, rep_b);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DecodeError& e) {
    std::cerr << "decode error at " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kRuntimeError;
}
