#include "efficomm/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace efficomm {

namespace {

bool same_vector(const VectorXr& a, const VectorXr& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace

bool FrameSummary::operator==(const FrameSummary& o) const {
  return frame_id == o.frame_id && grid == o.grid && tau == o.tau && payload_bytes == o.payload_bytes &&
         nonzero_elements == o.nonzero_elements && comm_log2 == o.comm_log2 && recall == o.recall &&
         gating_entropy == o.gating_entropy && l_bw == o.l_bw && l_reg == o.l_reg && l_partial == o.l_partial &&
         max_remote_cell_fraction == o.max_remote_cell_fraction && same_vector(mean_gate, o.mean_gate) &&
         same_vector(utilization, o.utilization) && decisions == o.decisions;
}

bool RunReport::operator==(const RunReport& o) const {
  return frames == o.frames && grid == o.grid && decisions == o.decisions && bandwidth.mean == o.bandwidth.mean &&
         bandwidth.std == o.bandwidth.std && bandwidth.max == o.bandwidth.max && bandwidth.min == o.bandwidth.min &&
         mean_comm_log2 == o.mean_comm_log2 && keep_ratio == o.keep_ratio &&
         remote_keep_ratio_mean == o.remote_keep_ratio_mean && same_vector(expert_utilization, o.expert_utilization) &&
         same_vector(mean_gate, o.mean_gate) && mean_gating_entropy == o.mean_gating_entropy &&
         mean_recall == o.mean_recall && mean_l_bw == o.mean_l_bw &&
         max_remote_cell_fraction == o.max_remote_cell_fraction && mean_l_partial == o.mean_l_partial &&
         fingerprint == o.fingerprint;
}

FrameSummary summarize(const FrameMetrics& m) {
  FrameSummary s;
  s.frame_id = m.frame_id;
  s.grid = m.grid;
  s.tau = m.tau;
  s.payload_bytes = m.payload_bytes;
  s.nonzero_elements = m.nonzero_elements;
  s.comm_log2 = m.comm_log2;
  s.recall = m.recall;
  s.gating_entropy = m.gating_entropy;
  s.l_bw = m.l_bw;
  s.l_reg = m.l_reg;
  s.l_partial = m.l_partial;
  s.mean_gate = m.mean_gate;
  s.utilization = m.utilization;
  const double cells = double(m.grid.cells());
  for (const auto& v : m.vehicles) {
    DecisionRow d;
    d.frame_id = m.frame_id;
    d.vehicle_id = v.vehicle_id;
    d.role = v.role;
    d.tau = m.tau;
    d.alpha = v.decision.alpha;
    d.k_raw = v.decision.k_raw;
    d.k_clamped = v.decision.k_clamped;
    d.cells = v.decision.cells;
    d.payload_bytes = v.payload_bytes;
    d.comm_log2 = comm_log2(v.nonzero_elements, false);
    d.recall = m.recall;
    d.l_bw = m.l_bw;
    d.l_reg = m.l_reg;
    s.decisions.push_back(d);
    if (v.role == VehicleRole::Remote)
      s.max_remote_cell_fraction = std::max(s.max_remote_cell_fraction, double(v.transmitted_cells) / cells);
  }
  return s;
}

int KeepRatioHistogram::bin_of(double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw RangeError("keep ratio " + format_double(k) + " outside [0, 1]");
  return std::min(kBins - 1, static_cast<int>(std::floor(k * kBins)));
}

RunReport aggregate(std::span<const FrameSummary> frames, std::string fingerprint) {
  if (frames.empty()) throw ReportError("aggregate over an empty frame list");
  std::vector<const FrameSummary*> order;
  for (const auto& f : frames) order.push_back(&f);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->frame_id < b->frame_id; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->frame_id == order[i - 1]->frame_id)
      throw ReportError("duplicate frame id " + std::to_string(order[i]->frame_id));

  const FrameSummary& first = *order.front();
  const Index experts = first.utilization.size();
  RunReport r;
  r.frames = order.size();
  r.grid = first.grid;
  r.fingerprint = std::move(fingerprint);
  r.expert_utilization = VectorXr::Zero(experts);
  r.mean_gate = VectorXr::Zero(experts);

  std::vector<double> bytes;
  double comm = 0.0, entropy = 0.0, recall = 0.0, l_bw = 0.0, l_partial = 0.0;
  double k_sum = 0.0, remote_sum = 0.0;
  std::size_t remotes = 0;
  std::vector<double> ks;
  for (const auto* f : order) {
    if (!(f->grid == r.grid)) throw ReportError("frame " + std::to_string(f->frame_id) + " has a different grid");
    if (f->utilization.size() != experts || f->mean_gate.size() != experts)
      throw ReportError("frame " + std::to_string(f->frame_id) + " has a different expert count");
    bytes.push_back(double(f->payload_bytes));
    comm += f->comm_log2;
    entropy += f->gating_entropy;
    recall += f->recall;
    l_bw += f->l_bw;
    l_partial += f->l_partial;
    r.expert_utilization += f->utilization;
    r.mean_gate += f->mean_gate;
    r.max_remote_cell_fraction = std::max(r.max_remote_cell_fraction, f->max_remote_cell_fraction);
    for (const auto& d : f->decisions) {
      ++r.keep_ratio.counts[static_cast<std::size_t>(KeepRatioHistogram::bin_of(d.k_clamped))];
      k_sum += d.k_clamped;
      ks.push_back(d.k_clamped);
      if (d.role == VehicleRole::Remote) {
        remote_sum += d.k_clamped;
        ++remotes;
      }
    }
  }
  const double n = double(order.size());
  r.bandwidth = bandwidth_stats(bytes);
  r.mean_comm_log2 = comm / n;
  r.mean_gating_entropy = entropy / n;
  r.mean_recall = recall / n;
  r.mean_l_bw = l_bw / n;
  r.mean_l_partial = l_partial / n;
  r.expert_utilization /= n;
  r.mean_gate /= n;
  r.decisions = ks.size();
  r.keep_ratio.total = ks.size();
  if (!ks.empty()) {
    r.keep_ratio.mean = k_sum / double(ks.size());
    double sq = 0.0;
    for (double k : ks) sq += (k - r.keep_ratio.mean) * (k - r.keep_ratio.mean);
    r.keep_ratio.std = std::sqrt(sq / double(ks.size()));
  }
  r.remote_keep_ratio_mean = remotes ? remote_sum / double(remotes) : 0.0;
  return r;
}

RunReport aggregate(std::span<const FrameMetrics> frames, std::string fingerprint) {
  std::vector<FrameSummary> s;
  s.reserve(frames.size());
  for (const auto& m : frames) s.push_back(summarize(m));
  return aggregate(std::span<const FrameSummary>(s), std::move(fingerprint));
}

std::vector<MetricDelta> compare_runs(const RunReport& a, const RunReport& b) {
  if (!(a.grid == b.grid))
    throw ReportError("runs use different grids: " + to_string(a.grid) + " vs " + to_string(b.grid));
  if (a.frames != b.frames)
    throw ReportError("runs cover different frame counts: " + std::to_string(a.frames) + " vs " +
                      std::to_string(b.frames));
  if (a.expert_utilization.size() != b.expert_utilization.size())
    throw ReportError("runs use different expert counts");

  std::vector<MetricDelta> out;
  auto add = [&](std::string name, double x, double y) {
    MetricDelta d{std::move(name), x, y, y - x, std::nullopt};
    if (x != 0.0) d.rel_delta = (y - x) / x;
    out.push_back(std::move(d));
  };
  add("bandwidth_mean_mb", a.bandwidth.mean, b.bandwidth.mean);
  add("bandwidth_std_mb", a.bandwidth.std, b.bandwidth.std);
  add("bandwidth_max_mb", a.bandwidth.max, b.bandwidth.max);
  add("bandwidth_min_mb", a.bandwidth.min, b.bandwidth.min);
  add("mean_comm_log2", a.mean_comm_log2, b.mean_comm_log2);
  add("keep_ratio_mean", a.keep_ratio.mean, b.keep_ratio.mean);
  add("keep_ratio_std", a.keep_ratio.std, b.keep_ratio.std);
  add("remote_keep_ratio_mean", a.remote_keep_ratio_mean, b.remote_keep_ratio_mean);
  add("mean_gating_entropy", a.mean_gating_entropy, b.mean_gating_entropy);
  add("mean_recall", a.mean_recall, b.mean_recall);
  add("mean_l_bw", a.mean_l_bw, b.mean_l_bw);
  add("max_remote_cell_fraction", a.max_remote_cell_fraction, b.max_remote_cell_fraction);
  add("mean_l_partial", a.mean_l_partial, b.mean_l_partial);
  for (Index i = 0; i < a.expert_utilization.size(); ++i)
    add("expert_utilization_" + std::to_string(i), a.expert_utilization(i), b.expert_utilization(i));
  for (Index i = 0; i < a.mean_gate.size(); ++i)
    add("mean_gate_" + std::to_string(i), a.mean_gate(i), b.mean_gate(i));
  return out;
}

namespace {

nlohmann::json vec_json(const VectorXr& v) {
  auto j = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

VectorXr vec_from(const nlohmann::json& j) {
  VectorXr v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(Index(i)) = j[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["frames"] = r.frames;
  j["grid"] = {{"channels", r.grid.channels}, {"height", r.grid.height}, {"width", r.grid.width}};
  j["decisions"] = r.decisions;
  j["bandwidth_mb"] = {{"mean", r.bandwidth.mean}, {"std", r.bandwidth.std}, {"max", r.bandwidth.max},
                       {"min", r.bandwidth.min}};
  j["mean_comm_log2"] = r.mean_comm_log2;
  j["keep_ratio_histogram"] = {{"bin_width", KeepRatioHistogram::kBinWidth},
                               {"counts", r.keep_ratio.counts},
                               {"total", r.keep_ratio.total},
                               {"mean", r.keep_ratio.mean},
                               {"std", r.keep_ratio.std}};
  j["remote_keep_ratio_mean"] = r.remote_keep_ratio_mean;
  j["expert_utilization"] = vec_json(r.expert_utilization);
  j["mean_gate"] = vec_json(r.mean_gate);
  j["mean_gating_entropy"] = r.mean_gating_entropy;
  j["mean_recall"] = r.mean_recall;
  j["mean_l_bw"] = r.mean_l_bw;
  j["max_remote_cell_fraction"] = r.max_remote_cell_fraction;
  j["mean_l_partial"] = r.mean_l_partial;
  j["fingerprint"] = r.fingerprint;
  return j;
}

RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport r;
    r.frames = j.at("frames").get<std::size_t>();
    const auto& g = j.at("grid");
    r.grid = {g.at("channels").get<int>(), g.at("height").get<int>(), g.at("width").get<int>()};
    r.decisions = j.at("decisions").get<std::size_t>();
    const auto& bw = j.at("bandwidth_mb");
    r.bandwidth = {bw.at("mean").get<double>(), bw.at("std").get<double>(), bw.at("max").get<double>(),
                   bw.at("min").get<double>()};
    r.mean_comm_log2 = j.at("mean_comm_log2").get<double>();
    const auto& h = j.at("keep_ratio_histogram");
    r.keep_ratio.counts = h.at("counts").get<std::vector<std::uint64_t>>();
    if (r.keep_ratio.counts.size() != std::size_t(KeepRatioHistogram::kBins))
      throw ReportError("keep_ratio_histogram.counts must hold " + std::to_string(KeepRatioHistogram::kBins) +
                        " bins");
    r.keep_ratio.total = h.at("total").get<std::uint64_t>();
    r.keep_ratio.mean = h.at("mean").get<double>();
    r.keep_ratio.std = h.at("std").get<double>();
    r.remote_keep_ratio_mean = j.at("remote_keep_ratio_mean").get<double>();
    r.expert_utilization = vec_from(j.at("expert_utilization"));
    r.mean_gate = vec_from(j.at("mean_gate"));
    r.mean_gating_entropy = j.at("mean_gating_entropy").get<double>();
    r.mean_recall = j.at("mean_recall").get<double>();
    r.mean_l_bw = j.at("mean_l_bw").get<double>();
    r.max_remote_cell_fraction = j.at("max_remote_cell_fraction").get<double>();
    r.mean_l_partial = j.at("mean_l_partial").get<double>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed report: ") + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> metrics_csv_header() {
  return {"frame_id", "vehicle_id", "role", "tau", "alpha", "k_raw", "k_clamped",
          "K_v", "payload_bytes", "comm_log2", "recall", "l_bw", "l_reg"};
}

std::vector<std::string> frames_csv_header(int experts) {
  std::vector<std::string> h{"frame_id", "channels", "height", "width", "vehicles", "tau", "payload_bytes",
                             "nonzero_elements", "comm_log2", "recall", "gating_entropy", "l_bw", "l_reg",
                             "l_partial", "max_remote_cell_fraction"};
  for (int i = 0; i < experts; ++i) h.push_back("gate_" + std::to_string(i));
  for (int i = 0; i < experts; ++i) h.push_back("utilization_" + std::to_string(i));
  return h;
}

namespace {

std::string join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  return line + '\n';
}

std::vector<const FrameSummary*> by_frame_id(std::span<const FrameSummary> frames) {
  std::vector<const FrameSummary*> order;
  for (const auto& f : frames) order.push_back(&f);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->frame_id < b->frame_id; });
  return order;
}

}  // namespace

std::string metrics_csv(std::span<const FrameSummary> frames) {
  std::string out = join(metrics_csv_header());
  for (const auto* f : by_frame_id(frames))
    for (const auto& d : f->decisions)
      out += join({std::to_string(d.frame_id), std::to_string(d.vehicle_id), std::string(to_string(d.role)),
                   format_double(d.tau), format_double(d.alpha), format_double(d.k_raw), format_double(d.k_clamped),
                   std::to_string(d.cells), std::to_string(d.payload_bytes), format_double(d.comm_log2),
                   format_double(d.recall), format_double(d.l_bw), format_double(d.l_reg)});
  return out;
}

std::string frames_csv(std::span<const FrameSummary> frames) {
  if (frames.empty()) return join(frames_csv_header(0));
  const int experts = int(frames.front().utilization.size());
  std::string out = join(frames_csv_header(experts));
  for (const auto* f : by_frame_id(frames)) {
    std::vector<std::string> row{std::to_string(f->frame_id),
                                 std::to_string(f->grid.channels),
                                 std::to_string(f->grid.height),
                                 std::to_string(f->grid.width),
                                 std::to_string(f->decisions.size()),
                                 format_double(f->tau),
                                 std::to_string(f->payload_bytes),
                                 std::to_string(f->nonzero_elements),
                                 format_double(f->comm_log2),
                                 format_double(f->recall),
                                 format_double(f->gating_entropy),
                                 format_double(f->l_bw),
                                 format_double(f->l_reg),
                                 format_double(f->l_partial),
                                 format_double(f->max_remote_cell_fraction)};
    for (Index i = 0; i < f->mean_gate.size(); ++i) row.push_back(format_double(f->mean_gate(i)));
    for (Index i = 0; i < f->utilization.size(); ++i) row.push_back(format_double(f->utilization(i)));
    out += join(row);
  }
  return out;
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
};

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

CsvTable parse_csv(std::string_view text, const char* name) {
  CsvTable t;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ReportError(std::string(name) + " line " + std::to_string(line_no) + ": expected " +
                        std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line_no);
  }
  if (t.header.empty()) throw ReportError(std::string(name) + ": missing header");
  return t;
}

template <typename T>
T parse_field(const std::string& s, const char* file, std::size_t line, const std::string& column) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ReportError(std::string(file) + " line " + std::to_string(line) + ": bad " + column + " value '" + s + "'");
  return v;
}

}  // namespace

std::vector<FrameSummary> summaries_from_csv(std::string_view metrics, std::string_view frames) {
  const CsvTable mt = parse_csv(metrics, "metrics.csv");
  if (mt.header != metrics_csv_header()) throw ReportError("metrics.csv: unexpected header");
  const CsvTable ft = parse_csv(frames, "frames.csv");
  if (ft.header.size() < 15 || (ft.header.size() - 15) % 2 != 0) throw ReportError("frames.csv: unexpected header");
  const int experts = int((ft.header.size() - 15) / 2);
  if (ft.header != frames_csv_header(experts)) throw ReportError("frames.csv: unexpected header");

  std::vector<FrameSummary> out;
  std::map<std::int64_t, std::size_t> index;
  for (std::size_t r = 0; r < ft.rows.size(); ++r) {
    const auto& row = ft.rows[r];
    const std::size_t line = ft.lines[r];
    auto get = [&](std::size_t col) -> const std::string& { return row[col]; };
    auto d = [&](std::size_t col) { return parse_field<double>(get(col), "frames.csv", line, ft.header[col]); };
    auto u = [&](std::size_t col) { return parse_field<std::uint64_t>(get(col), "frames.csv", line, ft.header[col]); };
    FrameSummary f;
    f.frame_id = parse_field<std::int64_t>(get(0), "frames.csv", line, "frame_id");
    f.grid = {int(u(1)), int(u(2)), int(u(3))};
    f.tau = d(5);
    f.payload_bytes = u(6);
    f.nonzero_elements = u(7);
    f.comm_log2 = d(8);
    f.recall = d(9);
    f.gating_entropy = d(10);
    f.l_bw = d(11);
    f.l_reg = d(12);
    f.l_partial = d(13);
    f.max_remote_cell_fraction = d(14);
    f.mean_gate.resize(experts);
    f.utilization.resize(experts);
    for (int i = 0; i < experts; ++i) {
      f.mean_gate(i) = d(15 + std::size_t(i));
      f.utilization(i) = d(15 + std::size_t(experts + i));
    }
    if (!index.emplace(f.frame_id, out.size()).second)
      throw ReportError("frames.csv line " + std::to_string(line) + ": duplicate frame " + std::to_string(f.frame_id));
    out.push_back(std::move(f));
  }

  for (std::size_t r = 0; r < mt.rows.size(); ++r) {
    const auto& row = mt.rows[r];
    const std::size_t line = mt.lines[r];
    auto d = [&](std::size_t col) { return parse_field<double>(row[col], "metrics.csv", line, mt.header[col]); };
    DecisionRow dr;
    dr.frame_id = parse_field<std::int64_t>(row[0], "metrics.csv", line, "frame_id");
    dr.vehicle_id = parse_field<std::uint32_t>(row[1], "metrics.csv", line, "vehicle_id");
    if (row[2] == "ego")
      dr.role = VehicleRole::Ego;
    else if (row[2] == "remote")
      dr.role = VehicleRole::Remote;
    else
      throw ReportError("metrics.csv line " + std::to_string(line) + ": bad role '" + row[2] + "'");
    dr.tau = d(3);
    dr.alpha = d(4);
    dr.k_raw = d(5);
    dr.k_clamped = d(6);
    dr.cells = parse_field<Index>(row[7], "metrics.csv", line, "K_v");
    dr.payload_bytes = parse_field<std::size_t>(row[8], "metrics.csv", line, "payload_bytes");
    dr.comm_log2 = d(9);
    dr.recall = d(10);
    dr.l_bw = d(11);
    dr.l_reg = d(12);
    const auto it = index.find(dr.frame_id);
    if (it == index.end())
      throw ReportError("metrics.csv line " + std::to_string(line) + ": frame " + std::to_string(dr.frame_id) +
                        " missing from frames.csv");
    out[it->second].decisions.push_back(dr);
  }
  return out;
}

namespace {

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ReportError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

RunReport report_from_csv(const std::filesystem::path& run_dir, std::string fingerprint) {
  const auto s = summaries_from_csv(read_text(run_dir / "metrics.csv"), read_text(run_dir / "frames.csv"));
  return aggregate(std::span<const FrameSummary>(s), std::move(fingerprint));
}

}  // namespace efficomm
