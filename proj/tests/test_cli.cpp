#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using Catch::Approx;
using json = nlohmann::json;

namespace {

std::string cli() {
  const char* p = std::getenv("RATETIP_CLI");
  REQUIRE(p != nullptr);
  return p;
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("ratetip_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path operator/(const std::string& s) const { return dir / s; }
};

int run(const std::string& args, const fs::path& log, const std::string& env = "") {
  const std::string cmd = env + " '" + cli() + "' " + args + " >'" + log.string() + "' 2>&1";
  const int st = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(st));
  return WEXITSTATUS(st);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

json manifest(const fs::path& out) { return json::parse(slurp(out / "manifest.json")); }

std::vector<fs::path> files_in(const fs::path& d) {
  std::vector<fs::path> v;
  if (fs::exists(d))
    for (const auto& e : fs::directory_iterator(d)) v.push_back(e.path());
  return v;
}

}  // namespace

TEST_CASE("critical-rate with defaults") {
  Scratch s("crit");
  REQUIRE(run("critical-rate --out '" + (s / "out").string() + "'", s / "log") == 0);
  const auto m = manifest(s / "out");
  CHECK(m["command"] == "critical-rate");
  CHECK(m["results"]["epsilon_c"].get<double>() == Approx(4.0 / 3.0).margin(1e-4));
  REQUIRE(m["outputs"].size() == 1);
  const auto name = m["outputs"][0].get<std::string>();
  CHECK(name == "critical-rate_" + m["config_hash"].get<std::string>() + ".csv");
  CHECK(fs::exists(s / "out" / name));
  CHECK(slurp(s / "log").find("epsilon_c = 1.333") != std::string::npos);
}

TEST_CASE("critical-rate with a tighter tolerance") {
  Scratch s("crit_tol");
  REQUIRE(run("critical-rate --tol 1e-6 --out '" + (s / "out").string() + "'", s / "log") == 0);
  CHECK(manifest(s / "out")["results"]["epsilon_c"].get<double>() == Approx(4.0 / 3.0).margin(1e-6));
}

TEST_CASE("critical-rate with a bracket that does not contain the root") {
  Scratch s("crit_bad");
  CHECK(run("critical-rate --bracket 1.4 1.5 --out '" + (s / "out").string() + "'", s / "log") == 2);
  CHECK(files_in(s / "out").empty());
  CHECK(slurp(s / "log").find("numerical failure") != std::string::npos);
}

TEST_CASE("configuration errors exit 3 and write nothing") {
  Scratch s("cfg");
  const std::string out = " --out '" + (s / "out").string() + "'";
  write(s / "bad.json", "{\"model\": {\"D\": 0.01,");
  CHECK(run("critical-rate --config '" + (s / "bad.json").string() + "'" + out, s / "log") == 3);
  write(s / "unknown.json", R"({"model": {"noise": 0.01}})");
  CHECK(run("critical-rate --config '" + (s / "unknown.json").string() + "'" + out, s / "log") == 3);
  CHECK(slurp(s / "log").find("model.noise") != std::string::npos);
  write(s / "type.json", R"({"grid": {"n_cells": "many"}})");
  CHECK(run("critical-rate --config '" + (s / "type.json").string() + "'" + out, s / "log") == 3);
  write(s / "neg.json", R"({"model": {"D": -1.0}})");
  CHECK(run("fpe --config '" + (s / "neg.json").string() + "'" + out, s / "log") == 3);
  CHECK(run("critical-rate --format xml" + out, s / "log") == 3);
  CHECK(run("critical-rate" + out, s / "log", "RATETIP_LOG=loud") == 3);
  CHECK(run("no-such-command" + out, s / "log") == 3);
  CHECK(files_in(s / "out").empty());
}

TEST_CASE("indicators: the t = -3 row") {
  Scratch s("ind");
  write(s / "c.json", R"({"indicators": {"t_end": -2.9}})");
  REQUIRE(run("indicators --config '" + (s / "c.json").string() + "' --out '" + (s / "out").string() + "'",
              s / "log") == 0);
  const auto m = manifest(s / "out");
  std::ifstream f(s / "out" / m["outputs"][0].get<std::string>());
  std::string line;
  std::getline(f, line);
  CHECK(line.rfind("# ", 0) == 0);
  std::getline(f, line);
  CHECK(line == "t,autocorrelation,variance,decay_rate,mean,survival");
  bool found = false;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string t, a, v;
    std::getline(ss, t, ',');
    std::getline(ss, a, ',');
    std::getline(ss, v, ',');
    if (std::abs(std::stod(t) + 3.0) < 1e-9) {
      found = true;
      CHECK(std::stod(a) == Approx(0.98).margin(0.005));
      CHECK(std::stod(v) == Approx(0.004).epsilon(0.10));
    }
  }
  CHECK(found);
}

TEST_CASE("path at the reference point") {
  Scratch s("path");
  write(s / "c.json", R"({"path": {"n_intervals": 100, "stop_at_first_root": true}})");
  REQUIRE(run("path --epsilon 1.25 --D 0.05 --config '" + (s / "c.json").string() + "' --out '" +
                  (s / "out").string() + "'",
              s / "log") == 0);
  const auto m = manifest(s / "out");
  CHECK(m["results"]["T_end"].get<double>() == Approx(1.43).margin(0.05));
  CHECK(std::abs(m["results"]["reference_root_m"].get<double>()) < 1e-8);
  CHECK(m["outputs"].size() == 2);
  for (const auto& n : m["outputs"]) CHECK(fs::exists(s / "out" / n.get<std::string>()));
}

TEST_CASE("path outside the validated range") {
  Scratch s("path_bad");
  CHECK(run("path --epsilon 1.4 --out '" + (s / "out").string() + "'", s / "log") == 3);
  CHECK(files_in(s / "out").empty());
}

TEST_CASE("re-running gives identical files") {
  Scratch s("rerun");
  const std::string mc = "mc --paths 200 --seed 7 --t0 -2 --jobs 2 --out ";
  REQUIRE(run(mc + "'" + (s / "a").string() + "'", s / "log") == 0);
  REQUIRE(run(mc + "'" + (s / "b").string() + "'", s / "log") == 0);
  const auto ma = manifest(s / "a"), mb = manifest(s / "b");
  REQUIRE(ma["outputs"] == mb["outputs"]);
  for (const auto& n : ma["outputs"])
    CHECK(slurp(s / "a" / n.get<std::string>()) == slurp(s / "b" / n.get<std::string>()));
  CHECK(ma["results"]["seed"] == 7);
  // a different seed is a different config
  REQUIRE(run("mc --paths 200 --seed 8 --t0 -2 --out '" + (s / "c").string() + "'", s / "log") == 0);
  const auto mc2 = manifest(s / "c");
  CHECK(mc2["config_hash"] != ma["config_hash"]);
  CHECK(slurp(s / "c" / mc2["outputs"][0].get<std::string>()) != slurp(s / "a" / ma["outputs"][0].get<std::string>()));
}

TEST_CASE("json output format") {
  Scratch s("json");
  REQUIRE(run("critical-rate --format json --out '" + (s / "out").string() + "'", s / "log") == 0);
  const auto m = manifest(s / "out");
  const auto name = m["outputs"][0].get<std::string>();
  CHECK(fs::path(name).extension() == ".json");
  const auto doc = json::parse(slurp(s / "out" / name));
  CHECK(doc["columns"] == json{"epsilon", "tips"});
  CHECK(doc["meta"]["epsilon_c"].get<double>() == Approx(4.0 / 3.0).margin(1e-4));
  CHECK(doc["rows"].size() == m["results"]["probes"].get<std::size_t>());
}
