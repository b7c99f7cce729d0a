// Drives the built `efficomm` binary end to end.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(EFFICOMM_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("efficomm_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

const std::string kConfig = EFFICOMM_SOURCE_DIR "/configs/default.ini";

}  // namespace

TEST_CASE("run") {
  const auto dir = scratch("run");
  const auto a = run("run " + kConfig + " --frames 10 --out " + (dir / "a").string());
  INFO(a.output);
  REQUIRE(a.code == 0);
  CHECK(lines(slurp(dir / "a" / "frames.csv")) == 11);
  CHECK(lines(slurp(dir / "a" / "metrics.csv")) == 1 + 10 * 4);
  const auto report = nlohmann::json::parse(slurp(dir / "a" / "report.json"));
  CHECK(report.at("frames") == 10);

  const auto b = run("run " + kConfig + " --frames 10 --out " + (dir / "b").string());
  REQUIRE(b.code == 0);
  for (const char* f : {"metrics.csv", "frames.csv", "report.json", "config.ini", "trace.json"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

  const auto zero = run("run " + kConfig + " --frames 0 --out " + (dir / "c").string());
  CHECK(zero.code == 1);
  CHECK(zero.output.find("frames") != std::string::npos);

  CHECK(run("run " + (dir / "nope.ini").string()).code == 1);
  CHECK(run("frobnicate").code == 1);
}

TEST_CASE("codec") {
  const auto dir = scratch("codec");
  nlohmann::json dense{{"channels", 2}, {"height", 2}, {"width", 3}, {"vehicle_id", 4}, {"scale", 1}};
  dense["values"] = std::vector<double>(12, 0.0);
  std::ofstream(dir / "zero.json") << dense.dump();
  REQUIRE(run("codec encode " + (dir / "zero.json").string() + " " + (dir / "zero.bin").string()).code == 0);
  CHECK(fs::file_size(dir / "zero.bin") == 17);

  dense["values"] = std::vector<double>{0.0, 0.0, 1.5, -2.25, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 3.0, 0.0};
  std::ofstream(dir / "x.json") << dense.dump();
  REQUIRE(run("codec encode " + (dir / "x.json").string() + " " + (dir / "x.bin").string()).code == 0);
  CHECK(fs::file_size(dir / "x.bin") == 17 + 3 * (4 + 8));
  REQUIRE(run("codec decode " + (dir / "x.bin").string() + " " + (dir / "y.json").string()).code == 0);
  const auto back = nlohmann::json::parse(slurp(dir / "y.json"));
  const auto vals = back.at("values").get<std::vector<double>>();
  const auto want = dense["values"].get<std::vector<double>>();
  REQUIRE(vals.size() == want.size());
  for (std::size_t i = 0; i < vals.size(); ++i) CHECK(vals[i] == double(float(want[i])));
  CHECK(back.at("vehicle_id") == 4);

  const std::string bytes = slurp(dir / "x.bin");
  std::ofstream(dir / "cut.bin", std::ios::binary) << bytes.substr(0, 23);
  const auto cut = run("codec decode " + (dir / "cut.bin").string() + " " + (dir / "cut.json").string());
  CHECK(cut.code == 2);
  CHECK(std::regex_search(cut.output, std::regex("offset [0-9]+")));
  CHECK_FALSE(fs::exists(dir / "cut.json"));

  dense["values"] = std::vector<double>(5, 0.0);
  std::ofstream(dir / "short.json") << dense.dump();
  CHECK(run("codec encode " + (dir / "short.json").string() + " " + (dir / "s.bin").string()).code == 1);
}

TEST_CASE("inspect") {
  const auto dir = scratch("inspect");
  REQUIRE(run("run " + kConfig + " --frames 4 --out " + dir.string()).code == 0);
  const auto r = run("inspect --frame 2 " + dir.string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  CHECK(r.output.find("vehicle 0 ego:") != std::string::npos);
  CHECK(std::regex_search(r.output, std::regex("vehicle 0 ego: .* transmitted: 0 bytes")));

  const std::regex remote("remote: .* k_clamped ([0-9.]+) ");
  int remotes = 0;
  for (auto it = std::sregex_iterator(r.output.begin(), r.output.end(), remote); it != std::sregex_iterator(); ++it) {
    const double k = std::stod((*it)[1]);
    CHECK(k >= 0.1);
    CHECK(k <= 0.95);
    ++remotes;
  }
  CHECK(remotes == 3);

  std::smatch gates;
  REQUIRE(std::regex_search(r.output, gates, std::regex("gate weights:([ 0-9.]+)\n")));
  std::istringstream in(gates[1].str());
  double sum = 0.0, g;
  while (in >> g) sum += g;
  CHECK(std::abs(sum - 1.0) <= 0.001 + 1e-12);

  CHECK(run("inspect --frame 99 " + dir.string()).code == 1);
}

TEST_CASE("report compare") {
  const auto dir = scratch("compare");
  REQUIRE(run("run " + kConfig + " --frames 3 --out " + (dir / "a").string()).code == 0);
  REQUIRE(run("run " + kConfig + " --frames 3 --seed 5 --out " + (dir / "b").string()).code == 0);
  const auto same = run("report compare " + (dir / "a").string() + " " + (dir / "a").string());
  REQUIRE(same.code == 0);
  CHECK(same.output.rfind("metric,a,b,abs_delta,rel_delta\n", 0) == 0);
  CHECK(same.output.find("bandwidth_mean_mb,") != std::string::npos);
  const auto diff = run("report compare " + (dir / "a").string() + " " + (dir / "b" / "report.json").string());
  CHECK(diff.code == 0);
}
