#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string g_cli;   // path to the eikfield binary, from argv[1]
std::string g_dir;   // scratch directory for this run

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  std::string cmd = "\"" + g_cli + "\" " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

// Pulls `"key":<number>` out of a JSON line; wall time is the one field a
// rerun cannot reproduce, so comparisons go key by key.
std::string json_field(const std::string& line, const std::string& key) {
  std::regex re("\"" + key + "\":([^,}]*)");
  std::smatch m;
  REQUIRE(std::regex_search(line, m, re));
  return m[1].str();
}

std::string p(const std::string& rel) { return g_dir + "/" + rel; }

// Runs before doctest starts, so plain error handling only here.
void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  if (!out.good()) {
    std::fprintf(stderr, "cannot write %s\n", path.c_str());
    std::exit(1);
  }
  out << body;
}

void prepare_workspace() {
  fs::remove_all(g_dir);
  fs::create_directories(g_dir);
  write_file(p("empty.json"), R"({
  "id": 0,
  "dims": 2,
  "bounds": [[-1.0, 1.0], [-1.0, 1.0]],
  "obstacles": [],
  "d_min": 0.1,
  "d_max": 1.0,
  "s_const": 1.0,
  "fourier_seed": 17,
  "fourier_h": 8,
  "fourier_sigma": 1.0
}
)");
  write_file(p("sphere.json"), R"({
  "id": 1,
  "dims": 2,
  "bounds": [[-1.0, 1.0], [-1.0, 1.0]],
  "obstacles": [{"type": "sphere", "center": [0.0, 0.0], "radius": 0.4}],
  "d_min": 0.1,
  "d_max": 1.0,
  "s_const": 1.0,
  "fourier_seed": 18,
  "fourier_h": 8,
  "fourier_sigma": 1.0
}
)");
  write_file(p("junk.json"), "this is not json\n");
}

const std::string kTrainArgs =
    " --epochs 3 --hidden 8 --blocks 1 --batch 16 --seed 3"
    " --alpha-init 0 --alpha-final 0 --warmup 0 --ramp1 0 --ramp2 0 --switch-epoch 0"
    " --epsilon 0.01 --lr 1e-3 --wd 0.1";

}  // namespace

TEST_CASE("usage errors exit with code one") {
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("plan --no-such-flag").code == 1);
  CHECK(run("gen-data --out " + p("nowhere")).code == 1);  // --env is required
  CHECK(run("train --env " + p("empty.json")).code == 1);  // --dataset/--out missing
}

TEST_CASE("help exits zero") {
  RunResult top = run("--help");
  CHECK(top.code == 0);
  CHECK(top.output.find("gen-data") != std::string::npos);
  CHECK(top.output.find("train") != std::string::npos);
  CHECK(run("train --help").code == 0);
  CHECK(run("plan --help").code == 0);
}

TEST_CASE("gen-data writes a dataset and a manifest and reruns byte-identically") {
  RunResult r1 = run("gen-data --env " + p("empty.json") + " --out " + p("d1") +
                     " --seed 5 --pairs 40");
  CHECK(r1.code == 0);
  CHECK(r1.output.find("40 pairs") != std::string::npos);
  CHECK(fs::exists(p("d1/empty.epds")));
  CHECK(fs::exists(p("d1/manifest.json")));

  RunResult r2 = run("gen-data --env " + p("empty.json") + " --out " + p("d2") +
                     " --seed 5 --pairs 40");
  CHECK(r2.code == 0);
  CHECK(slurp(p("d1/empty.epds")) == slurp(p("d2/empty.epds")));

  RunResult r3 = run("gen-data --env " + p("empty.json") + " --out " + p("d3") +
                     " --seed 6 --pairs 40");
  CHECK(r3.code == 0);
  CHECK(slurp(p("d1/empty.epds")) != slurp(p("d3/empty.epds")));
}

TEST_CASE("gen-data rejects broken environment files") {
  CHECK(run("gen-data --env " + p("junk.json") + " --out " + p("dx") + " --pairs 4").code == 1);
  CHECK(run("gen-data --env " + p("missing.json") + " --out " + p("dx") + " --pairs 4").code == 1);
}

TEST_CASE("train writes checkpoint, log, and manifest") {
  RunResult r = run("train --env " + p("empty.json") + " --dataset " + p("d1/empty.epds") +
                    " --out " + p("t1") + kTrainArgs);
  CHECK(r.code == 0);
  CHECK(r.output.find("epoch 3") != std::string::npos);
  CHECK(fs::exists(p("t1/checkpoint.epnn")));
  CHECK(fs::exists(p("t1/manifest.json")));
  REQUIRE(fs::exists(p("t1/train_log.jsonl")));

  std::vector<std::string> log = lines_of(slurp(p("t1/train_log.jsonl")));
  REQUIRE(log.size() == 3);
  CHECK(json_field(log[0], "epoch") == "1");
  CHECK(json_field(log[2], "epoch") == "3");
  CHECK(json_field(log[0], "reshuffles") == "0");

  std::string manifest = slurp(p("t1/manifest.json"));
  CHECK(manifest.find("\"command\": \"train\"") != std::string::npos);
  CHECK(manifest.find("\"seed\": 3") != std::string::npos);
}

TEST_CASE("a manifest file replays the run and explicit flags win over it") {
  RunResult r = run("train --manifest " + p("t1/manifest.json") + " --out " + p("t2"));
  CHECK(r.code == 0);
  std::vector<std::string> a = lines_of(slurp(p("t1/train_log.jsonl")));
  std::vector<std::string> b = lines_of(slurp(p("t2/train_log.jsonl")));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(json_field(a[i], "loss") == json_field(b[i], "loss"));
    CHECK(json_field(a[i], "alpha") == json_field(b[i], "alpha"));
  }
  CHECK(slurp(p("t1/checkpoint.epnn")) == slurp(p("t2/checkpoint.epnn")));

  RunResult shorter = run("train --manifest " + p("t1/manifest.json") + " --out " + p("t3") +
                          " --epochs 2");
  CHECK(shorter.code == 0);
  std::vector<std::string> c = lines_of(slurp(p("t3/train_log.jsonl")));
  REQUIRE(c.size() == 2);  // the explicit flag overrode the manifest's 3
  CHECK(json_field(c[0], "loss") == json_field(a[0], "loss"));
}

TEST_CASE("train exits two when the run diverges and still saves a checkpoint") {
  RunResult r = run("train --env " + p("empty.json") + " --dataset " + p("d1/empty.epds") +
                    " --out " + p("tdiv") +
                    " --epochs 3 --hidden 8 --blocks 1 --batch 16 --seed 3"
                    " --alpha-init 0 --alpha-final 0 --warmup 0 --ramp1 0 --ramp2 0"
                    " --switch-epoch 0 --epsilon 0.01 --wd 0.1 --lr 1e6");
  CHECK(r.code == 2);
  CHECK(r.output.find("diverged") != std::string::npos);
  CHECK(fs::exists(p("tdiv/checkpoint.epnn")));
}

TEST_CASE("plan prints the metrics line and writes waypoints") {
  RunResult r = run("plan --env " + p("empty.json") + " --checkpoint " + p("t1/checkpoint.epnn") +
                    " --start=-0.5,0 --goal=0.5,0 --beta 0.02 --dgoal 0.06 --out " + p("p1"));
  CHECK(r.code == 0);
  CHECK(r.output.find("success=1") != std::string::npos);
  CHECK(r.output.find("time=") != std::string::npos);
  CHECK(r.output.find("length=") != std::string::npos);
  CHECK(r.output.find("margin=") != std::string::npos);
  REQUIRE(fs::exists(p("p1/waypoints.csv")));
  CHECK(fs::exists(p("p1/manifest.json")));
  CHECK(lines_of(slurp(p("p1/waypoints.csv"))).size() > 2);
}

TEST_CASE("plan maps numerical domain errors to exit code two") {
  RunResult r = run("plan --env " + p("empty.json") + " --checkpoint " + p("t1/checkpoint.epnn") +
                    " --start=1.5,0 --goal=0.5,0");
  CHECK(r.code == 2);
}

TEST_CASE("plan rejects a checkpoint trained for a different environment") {
  RunResult r = run("plan --env " + p("sphere.json") + " --checkpoint " + p("t1/checkpoint.epnn") +
                    " --start=-0.8,0 --goal=0.8,0");
  CHECK(r.code == 1);
  CHECK(r.output.find("no code for env id") != std::string::npos);
}

TEST_CASE("plan rejects malformed coordinates") {
  CHECK(run("plan --env " + p("empty.json") + " --checkpoint " + p("t1/checkpoint.epnn") +
            " --start=zebra,0 --goal=0.5,0")
            .code == 1);
}

TEST_CASE("eval writes metrics and the optional grid baseline") {
  RunResult r = run("eval --env " + p("empty.json") + " --checkpoint " + p("t1/checkpoint.epnn") +
                    " --dataset " + p("d1/empty.epds") + " --out " + p("e1") +
                    " --beta 0.02 --dgoal 0.08");
  CHECK(r.code == 0);
  CHECK(r.output.find("success_rate=") != std::string::npos);
  REQUIRE(fs::exists(p("e1/metrics.csv")));
  std::vector<std::string> rows = lines_of(slurp(p("e1/metrics.csv")));
  CHECK(rows.size() == 41);  // header + one row per pair
  CHECK(rows[0] == "time,length,margin,success");

  RunResult rb = run("eval --env " + p("empty.json") + " --checkpoint " + p("t1/checkpoint.epnn") +
                     " --dataset " + p("d1/empty.epds") + " --out " + p("e2") +
                     " --beta 0.02 --dgoal 0.08 --fmm --resolution 33");
  CHECK(rb.code == 0);
  CHECK(rb.output.find("fmm baseline:") != std::string::npos);
  CHECK(fs::exists(p("e2/fmm_metrics.csv")));
}

TEST_CASE("field-export renders csv, pgm, and grid files in both modes") {
  RunResult grid = run("field-export --env " + p("empty.json") + " --fmm --source=0,0" +
                       " --resolution 17 --out " + p("f1"));
  CHECK(grid.code == 0);
  CHECK(fs::exists(p("f1/field.csv")));
  CHECK(fs::exists(p("f1/field.pgm")));
  CHECK(fs::exists(p("f1/field.eptg")));
  CHECK(slurp(p("f1/field.pgm")).substr(0, 2) == "P2");

  RunResult net = run("field-export --env " + p("empty.json") + " --checkpoint " +
                      p("t1/checkpoint.epnn") + " --source=0,0 --resolution 17 --out " + p("f2"));
  CHECK(net.code == 0);
  CHECK(fs::exists(p("f2/field.csv")));

  RunResult both = run("field-export --env " + p("empty.json") + " --checkpoint " +
                       p("t1/checkpoint.epnn") + " --fmm --source=0,0 --resolution 17 --out " +
                       p("f3"));
  CHECK(both.code == 1);

  RunResult neither = run("field-export --env " + p("empty.json") + " --source=0,0" +
                          " --resolution 17 --out " + p("f4"));
  CHECK(neither.code == 1);
}

TEST_CASE("fmm-compare prints pooled stats and writes the report") {
  RunResult r = run("fmm-compare --env " + p("empty.json") + " --checkpoint " +
                    p("t1/checkpoint.epnn") + " --sources 1 --resolution 17 --seed 2 --out " +
                    p("c1"));
  CHECK(r.code == 0);
  CHECK(r.output.find("pooled:") != std::string::npos);
  CHECK(r.output.find("median=") != std::string::npos);
  REQUIRE(fs::exists(p("c1/fmm_compare.json")));
  std::string report = slurp(p("c1/fmm_compare.json"));
  CHECK(report.find("median") != std::string::npos);
  CHECK(report.find("per_source") != std::string::npos);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_tests <path-to-eikfield-binary> [doctest args]\n");
    return 1;
  }
  g_cli = argv[1];
  g_dir = "/tmp/eikfield_cli_scratch";
  prepare_workspace();

  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv + 1);
  return ctx.run();
}
