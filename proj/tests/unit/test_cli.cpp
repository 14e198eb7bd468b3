#include "dsm/cli.hpp"
#include "dsm/config.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

using namespace dsm;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "dsmlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsm_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run({"distill", "--config", "/nonexistent/config.json"}) == kExitConfig);
  CHECK(run({"distill", "--config", "no_such_builtin"}) == kExitConfig);
  CHECK(run({"frobnicate"}) == kExitConfig);
  CHECK(run({"degrade"}) == kExitConfig);

  const fs::path dir = scratch("bad");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"kappa": -1})";
  CHECK(run({"distill", "--config", (dir / "c.json").string()}) == kExitConfig);
  std::ofstream(dir / "u.json") << R"({"kapa": 1})";
  CHECK(run({"distill", "--config", (dir / "u.json").string()}) == kExitConfig);
  CHECK(run({"degrade", "--config", "patch_restore", "--input", (dir / "missing.pgm").string(), "--output",
             (dir / "o.pgm").string()}) == kExitValidation);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck passes") {
  const fs::path out = scratch("grad");
  CHECK(run({"gradcheck", "--config", "oracle_2d", "--out", out.string()}) == kExitOk);
  CHECK(fs::exists(out / "result.json"));
  fs::remove_all(out);
}

TEST_CASE("gradient verification output is reproducible") {
  const fs::path a = scratch("gradchk_a"), b = scratch("gradchk_b");
  CHECK(run({"verify-eq5", "--samples", "20000", "--seed", "3", "--out", a.string()}) == kExitOk);
  CHECK(run({"verify-eq5", "--samples", "20000", "--seed", "3", "--out", b.string()}) == kExitOk);
  CHECK(slurp(a / "result.json") == slurp(b / "result.json"));
  CHECK_FALSE(slurp(a / "result.json").empty());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("executable runs") {
  const std::string cmd = std::string(DSMLAB_EXE) + " distill --config /nonexistent.json 2>/dev/null";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == kExitConfig);
}
