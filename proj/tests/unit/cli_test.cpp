#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "contravirt_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(CONTRAVIRT_CLI) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_config(const std::string& name, const std::string& body) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / name;
  std::ofstream(p) << body;
  return p;
}

std::string tiny_config(const std::string& out, const std::string& extra = "", int epochs = 2) {
  return R"({
  "data": {"synthetic": {"grid": {"lat_min": 51.0, "lat_max": 52.0, "lon_min": 4.0, "lon_max": 5.5, "rows": 2, "cols": 3},
                         "n_real": 5, "n_withheld": 1, "steps": 300, "latent_sources": 4, "seed": 3}},
  "grid": {"lat_min": 51.0, "lat_max": 52.0, "lon_min": 4.0, "lon_max": 5.5, "rows": 2, "cols": 3},
  "windows": {"t_in": 6, "t_out": 3, "train_stride": 3, "eval_stride": 6},
  "model": {"embed_dim": 8, "type_dim": 2},
  "contrastive": {"offset": 2},
  "train": {"max_epochs": )" + std::to_string(epochs) + R"(, "batch_size": 8)" +
         extra + R"(},
  "output_dir": ")" + (kRoot / out).string() +
         "\"\n}\n";
}

}  // namespace

TEST_CASE("end-to-end commands and artifacts") {
  fs::remove_all(kRoot);
  const fs::path cfg = write_config("tiny.json", tiny_config("run"));
  const fs::path dir = kRoot / "run";

  CHECK(run("synth -c " + cfg.string()) == 0);
  CHECK(fs::exists(dir / "stations.csv"));
  CHECK(fs::exists(dir / "config.json"));

  CHECK(run("build-graph -c " + cfg.string()) == 0);
  for (const char* f : {"nodes.csv", "edges.csv", "influence.csv"}) CHECK(fs::exists(dir / f));

  CHECK(run("train -q --evaluate --strategy augmented -c " + cfg.string()) == 0);
  CHECK(fs::exists(dir / "norm_stats.json"));
  bool found = false;
  for (const auto& e : fs::directory_iterator(dir)) found |= e.path().filename().string().rfind("checkpoint_", 0) == 0;
  CHECK(found);
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("checkpoint_", 0) == 0) {
      CHECK(run("evaluate -c " + cfg.string() + " --checkpoint " + e.path().string()) == 0);
    }
  }

  CHECK(run("baseline idw -c " + cfg.string()) == 0);
  CHECK(run("evaluate --baseline ar -c " + cfg.string()) == 0);
  CHECK(fs::exists(dir / "baseline_ar.json"));

  CHECK(run("report " + dir.string()) == 0);
  const std::string first = slurp(dir / "comparison.csv");
  CHECK(first.find("IDW") != std::string::npos);
  CHECK(first.find("AR") != std::string::npos);
  CHECK(run("report " + dir.string()) == 0);
  CHECK(slurp(dir / "comparison.csv") == first);
  CHECK(slurp(dir / "comparison.json").size() > 0);
}

TEST_CASE("exit codes") {
  fs::create_directories(kRoot);
  // Usage errors and configuration errors.
  CHECK(run("") == 1);
  CHECK(run("train") == 1);
  CHECK(run("train -c /nonexistent.json") == 1);
  CHECK(run("train -c " + write_config("bad_key.json", tiny_config("bad", ", \"epochz\": 3")).string()) == 1);
  CHECK(run("train -c " + write_config("bad_json.json", "{ not json").string()) == 1);
  CHECK(run("baseline xyz -c " + write_config("ok.json", tiny_config("ok")).string()) == 1);

  // Data errors.
  const fs::path missing_csv = write_config(
      "missing_csv.json", R"({"data": {"csv": ")" + (kRoot / "absent.csv").string() + R"("},
        "grid": {"lat_min": 51.0, "lat_max": 52.0, "lon_min": 4.0, "lon_max": 5.5, "rows": 2, "cols": 3},
        "split": {"withheld_count": 1}, "output_dir": ")" +
                             (kRoot / "missing").string() + "\"}");
  CHECK(run("build-graph -c " + missing_csv.string()) == 2);

  // Divergence: three consecutive non-finite epochs.
  CHECK(run("train -q -c " + write_config("diverge.json", tiny_config("diverge", ", \"lr\": 1e300", 6)).string()) == 3);
}
