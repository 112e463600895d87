#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string output;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CBS_CLI_PATH + "\" " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

fs::path scratch(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("usage errors exit with status 2") {
  CHECK(cli("").status == 2);
  CHECK(cli("frobnicate").status == 2);
  CHECK(cli("gen-data --out x --bogus 1").status == 2);
  const Run missing = cli("gen-data");
  CHECK(missing.status == 2);
  CHECK(missing.output.find("Usage") != std::string::npos);
  CHECK(cli("bench --frames /tmp --mode warp").status == 2);
  CHECK(cli("--help").status == 0);
}

TEST_CASE("runtime failures print one diagnostic line") {
  const fs::path dir = scratch("cbs-cli-fail");
  {
    std::ofstream(dir / "run.json") << R"({"schema":1,"seg_model":"stub:quadrants","styles":{},"input_frames":"nowhere",
                                            "output_dir":"out"})";
  }
  const Run r = cli("run --config \"" + (dir / "run.json").string() + "\"");
  CHECK(r.status == 1);
  CHECK(count_lines(r.output) == 1);
  CHECK(r.output.rfind("cbs: error:", 0) == 0);

  { std::ofstream(dir / "bad.json") << R"({"schema":1,"seg_model":"stub:quadrants","assignment":[{"class_id":1,"style_id":"x"}]})"; }
  const Run bad = cli("run --config \"" + (dir / "bad.json").string() + "\"");
  CHECK(bad.status == 1);
  CHECK(count_lines(bad.output) == 1);
  fs::remove_all(dir);
}

TEST_CASE("gen-data, run and bench end to end with stubs") {
  const fs::path dir = scratch("cbs-cli-e2e");
  const std::string d = "\"" + dir.string() + "\"";
  REQUIRE(cli("gen-data --n 5 --seed 7 --size 32 --out " + d + "/ds").status == 0);
  const auto index = nlohmann::json::parse(cbs::testing::read_bytes(dir / "ds" / "index.json"));
  CHECK(index["n"] == 5);
  CHECK(index["seed"] == 7);
  CHECK(index["size"] == 32);
  CHECK(fs::exists(dir / "ds" / "images" / "000004.png"));

  REQUIRE(cli("gen-data --n 10 --seed 3 --size 32 --as-frames --out " + d + "/frames").status == 0);
  {
    std::ofstream(dir / "run.json") << R"({"schema":1,"seg_model":"stub:quadrants",
      "styles":{"a":"stub:constant:1,0,0"},"input_frames":"frames","output_dir":"out",
      "assignment":[{"class_id":0,"style_id":"a"}]})";
  }
  REQUIRE(cli("run --config " + d + "/run.json").status == 0);
  CHECK(fs::exists(dir / "out" / "frame_000009.png"));

  REQUIRE(cli("bench --frames " + d + "/frames --stub-seg-ms 2 --stub-style-ms 2 --mode parallel --report " + d +
              "/r.json")
              .status == 0);
  const auto report = nlohmann::json::parse(cbs::testing::read_bytes(dir / "r.json"));
  CHECK(report["frames"] == 10);
  CHECK(report["mode"] == "parallel");
  fs::remove_all(dir);
}
