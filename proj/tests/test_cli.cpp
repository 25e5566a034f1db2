#include <cstdlib>
#include <iostream>
#include <sstream>

#include <sys/wait.h>

#include <doctest.h>
#include <json.hpp>

#include "cli.hpp"
#include "finta/io.hpp"
#include "support.hpp"

using namespace finta;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = cli::run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(FINTA_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const std::string& path) { return json::parse(io::read_file(path)); }

const std::vector<std::string> kSubcommands{"phantom", "train",  "threshold",      "filter",
                                            "bundle",  "baseline", "evaluate",     "interpolate",
                                            "export-latents", "bench", "replay"};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help exits zero for every subcommand") {
  for (const auto& sub : kSubcommands) {
    CAPTURE(sub);
    const Outcome o = run_cli({sub, "--help"});
    CHECK(o.code == 0);
    CHECK(o.out.find("--") != std::string::npos);
    CHECK(run_binary(sub + " --help") == 0);
  }
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("user errors are one line with a code") {
  const Outcome missing = run_cli({"filter", "--model", "/nonexistent/m.model", "--reference-tracks",
                                   "a.tck", "--reference-labels", "a.json", "--threshold", "t.json",
                                   "--tracks", "b.tck", "--out-prefix", "/tmp/finta-never"});
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("error: file-not-found: ", 0) == 0);
  CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);
  CHECK(run_binary("train --tracks /nonexistent.tck --labels /nonexistent.json --out-prefix x") == 1);

  const Outcome unknown = run_cli({"phantom", "--bogus"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.rfind("error: invalid-arguments: ", 0) == 0);
  CHECK(run_cli({}).code == 1);

  const Outcome no_prefix = run_cli({"phantom"});
  CHECK(no_prefix.code == 1);
}

TEST_CASE("small end-to-end pipeline with manifests and replay") {
  test::TempDir dir("cli");
  const std::string ph = dir / "ph";
  const std::string m = dir / "m";
  REQUIRE(run_cli({"phantom", "--seed", "4", "--bundles", "3", "--per-bundle", "30",
                   "--out-prefix", ph}).code == 0);
  CHECK(std::filesystem::exists(ph + ".tck"));
  CHECK(std::filesystem::exists(ph + ".labels.json"));
  CHECK(std::filesystem::exists(ph + ".mask"));
  const json pm = read_json(ph + ".manifest.json");
  CHECK(pm["subcommand"] == "phantom");
  CHECK(pm["parameters"]["bundles"] == "3");
  CHECK(pm["seeds"]["phantom"] == 4);
  CHECK(pm["outputs"].size() == 3);

  REQUIRE(run_cli({"train", "--tracks", ph + ".tck", "--labels", ph + ".labels.json",
                   "--out-prefix", m, "--points", "16", "--features", "4,8", "--latent", "4",
                   "--epochs", "2", "--batch", "16"}).code == 0);
  const json tm = read_json(m + ".manifest.json");
  CHECK(tm["parameters"]["epochs"] == "2");
  CHECK(tm["parameters"]["lr"] == "0.000668");
  CHECK(tm["parameters"]["threads"] == 1);
  CHECK(tm["timings"].contains("train_s"));
  CHECK(tm["notes"]["preprocessing"].get<std::string>().find("then align") != std::string::npos);

  REQUIRE(run_cli({"threshold", "--model", m + ".model", "--tracks", m + ".train.tck", "--labels",
                   m + ".train.labels.json", "--out", dir / "th.json"}).code == 0);
  REQUIRE(run_cli({"filter", "--model", m + ".model", "--reference-tracks", m + ".train.tck",
                   "--reference-labels", m + ".train.labels.json", "--threshold", dir / "th.json",
                   "--tracks", m + ".test.tck", "--labels", m + ".test.labels.json",
                   "--out-prefix", dir / "f"}).code == 0);
  const auto decisions = io::decode_decisions(io::read_file(dir / "f.decisions.csv"));
  const auto test_tracks = io::read_tracks(m + ".test.tck");
  const auto pos = io::read_tracks(dir / "f.positive.tck");
  const auto neg = io::read_tracks(dir / "f.negative.tck");
  CHECK(decisions.size() == test_tracks.size());
  CHECK(pos.size() + neg.size() == test_tracks.size());

  // A command-line value overrides the file; without either, filter refuses.
  REQUIRE(run_cli({"filter", "--model", m + ".model", "--reference-tracks", m + ".train.tck",
                   "--reference-labels", m + ".train.labels.json", "--threshold", dir / "th.json",
                   "--threshold-value", "1e9", "--tracks", m + ".test.tck", "--out-prefix",
                   dir / "all"}).code == 0);
  CHECK(io::read_tracks(dir / "all.positive.tck").size() == test_tracks.size());
  CHECK(read_json(dir / "all.manifest.json")["notes"]["threshold_source"] == "command line");
  const Outcome none = run_cli({"filter", "--model", m + ".model", "--reference-tracks",
                                m + ".train.tck", "--reference-labels", m + ".train.labels.json",
                                "--tracks", m + ".test.tck", "--out-prefix", dir / "none"});
  CHECK(none.code == 1);
  CHECK(none.err.rfind("error: invalid-arguments: ", 0) == 0);

  const Outcome ev = run_cli({"evaluate", "--decisions", dir / "f.decisions.csv", "--labels",
                              m + ".test.labels.json", "--out-prefix", dir / "ev"});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("accuracy_macro: ") != std::string::npos);
  CHECK(ev.out.find("success_rate_weighted: ") != std::string::npos);
  CHECK(ev.out.find("group_sensitivity.bundle_0: ") != std::string::npos);

  REQUIRE(run_cli({"baseline", "--tracks", ph + ".tck", "--labels", ph + ".labels.json", "--mask",
                   ph + ".mask", "--stages", "length,no_loops,no_end_in_csf,end_in_atlas",
                   "--out-prefix", dir / "bl"}).code == 0);
  CHECK(run_cli({"evaluate", "--decisions", dir / "bl.decisions.csv", "--labels",
                 ph + ".labels.json", "--out-prefix", dir / "blev"}).code == 0);
  CHECK(run_cli({"baseline", "--tracks", ph + ".tck", "--stages", "length,nope", "--out-prefix",
                 dir / "x"}).code == 1);

  REQUIRE(run_cli({"bundle", "--model", m + ".model", "--reference-tracks", m + ".train.tck",
                   "--reference-labels", m + ".train.labels.json", "--tracks", m + ".test.tck",
                   "--labels", m + ".test.labels.json", "--out-prefix", dir / "b"}).code == 0);
  CHECK(io::read_file(dir / "b.bundle-summary.txt").find("fraction: ") != std::string::npos);

  REQUIRE(run_cli({"interpolate", "--model", m + ".model", "--tracks", m + ".test.tck", "--from",
                   "0", "--to", "1", "--steps", "6", "--out", dir / "ip.tck"}).code == 0);
  CHECK(io::read_tracks(dir / "ip.tck").size() == 6);
  CHECK(run_cli({"interpolate", "--model", m + ".model", "--tracks", m + ".test.tck", "--from",
                 "100000", "--out", dir / "ip2.tck"}).code == 1);

  ::setenv("FINTA_THREADS", "2", 1);
  const Outcome ex = run_cli({"export-latents", "--model", m + ".model", "--tracks", m + ".test.tck",
                              "--out", dir / "z.csv"});
  ::unsetenv("FINTA_THREADS");
  REQUIRE(ex.code == 0);
  CHECK(read_json(dir / "z.csv.manifest.json")["parameters"]["threads"] == 2);
  CHECK(io::read_latents(dir / "z.csv").latents.size() == test_tracks.size());

  REQUIRE(run_cli({"bench", "--model", m + ".model", "--reference-tracks", m + ".train.tck",
                   "--reference-labels", m + ".train.labels.json", "--tracks", m + ".test.tck",
                   "--sizes", "50,100", "--out-prefix", dir / "bn"}).code == 0);
  CHECK(std::filesystem::exists(dir / "bn.bench.svg"));
  CHECK(run_cli({"bench", "--model", m + ".model", "--reference-tracks", m + ".train.tck",
                 "--reference-labels", m + ".train.labels.json", "--tracks", m + ".test.tck",
                 "--sizes", "50,100", "--repetitions", "2", "--out-prefix", dir / "bn2"}).code == 1);

  // Replaying the training manifest reproduces every output byte for byte.
  const Outcome replay = run_cli({"replay", m + ".manifest.json"});
  CHECK(replay.code == 0);
  CHECK(replay.out.find("DIFFERENT") == std::string::npos);
  const Outcome replay_filter = run_cli({"replay", dir / "f.manifest.json"});
  CHECK(replay_filter.code == 0);

  // A tampered output is caught.
  io::write_file(dir / "f.decisions.csv", "index,verdict\n");
  json tampered = read_json(dir / "f.manifest.json");
  tampered["outputs"][0]["fnv1a64"] = "0000000000000000";
  io::write_file(dir / "f2.manifest.json", tampered.dump());
  const Outcome mismatch = run_cli({"replay", dir / "f2.manifest.json"});
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("error: replay-mismatch") != std::string::npos);
}

}  // TEST_SUITE
