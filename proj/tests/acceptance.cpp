// End-to-end acceptance run: drives the finta binary on the default phantom
// and checks the library against independent oracles. One PASS/FAIL line per
// criterion; exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "finta/autoencoder.hpp"
#include "finta/baselines.hpp"
#include "finta/io.hpp"
#include "finta/latent_index.hpp"
#include "finta/metrics.hpp"
#include "finta/phantom.hpp"
#include "finta/random.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace finta;

namespace {

struct Env {
  std::string finta;
  fs::path work;
  bool reuse = true;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

json read_json(const fs::path& p) { return json::parse(io::read_file(p)); }

std::string hash_of(const fs::path& p) { return io::hex64(io::fnv1a64(io::read_file(p))); }

// A stage is reused when its manifest was written by this very binary with
// the same arguments, and every recorded input and output still hashes to the
// recorded value.
bool up_to_date(const Env& env, const fs::path& manifest, const std::vector<std::string>& args) {
  if (!fs::exists(manifest)) return false;
  try {
    const json m = read_json(manifest);
    if (m.at("argv").get<std::vector<std::string>>() != args) return false;
    if (m.at("tool").at("fnv1a64").get<std::string>() != hash_of(env.finta)) return false;
    for (const char* key : {"inputs", "outputs"}) {
      for (const auto& f : m.at(key)) {
        const std::string path = f.at("path");
        if (!fs::exists(path)) return false;
        if (hash_of(path) != f.at("fnv1a64").get<std::string>()) return false;
      }
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

// Runs `finta <args>`, logging to <work>/<name>.log. Returns the exit status.
int stage(const Env& env, const std::string& name, const fs::path& manifest,
          const std::vector<std::string>& args) {
  if (env.reuse && up_to_date(env, manifest, args)) {
    std::cout << "  stage " << name << ": reused (manifest hashes match)\n" << std::flush;
    return 0;
  }
  std::string cmd = quote(env.finta);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " > " + quote((env.work / (name + ".log")).string()) + " 2>&1";
  const auto t0 = std::chrono::steady_clock::now();
  const int status = std::system(cmd.c_str());
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::cout << "  stage " << name << ": exit " << code << " in " << s << " s\n" << std::flush;
  return code;
}

std::map<std::string, double> read_key_values(const fs::path& p) {
  std::map<std::string, double> out;
  std::istringstream in(io::read_file(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    try {
      out[line.substr(0, colon)] = std::stod(line.substr(colon + 2));
    } catch (const std::exception&) {
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// --- pipeline on the default phantom ---------------------------------------

struct Paths {
  fs::path ph, model, th, filt, ev, bundle, bench;
  std::string p(const fs::path& base, const char* suffix) const { return base.string() + suffix; }
};

Paths paths(const Env& env) {
  return {env.work / "phantom", env.work / "model", env.work / "threshold.json",
          env.work / "filter",  env.work / "eval",  env.work / "bundle",
          env.work / "bench"};
}

bool run_pipeline(const Env& env, const Paths& p) {
  const std::string tracks = p.p(p.ph, ".tck"), labels = p.p(p.ph, ".labels.json");
  const std::string train_t = p.p(p.model, ".train.tck"), train_l = p.p(p.model, ".train.labels.json");
  const std::string test_t = p.p(p.model, ".test.tck"), test_l = p.p(p.model, ".test.labels.json");
  const std::string model = p.p(p.model, ".model");
  const std::vector<std::pair<std::string, std::vector<std::string>>> stages{
      {"phantom", {"phantom", "--seed", "1", "--out-prefix", p.ph.string()}},
      {"train", {"train", "--tracks", tracks, "--labels", labels, "--out-prefix", p.model.string()}},
      {"threshold", {"threshold", "--model", model, "--tracks", train_t, "--labels", train_l,
                     "--out", p.th.string()}},
      {"filter", {"filter", "--model", model, "--reference-tracks", train_t, "--reference-labels",
                  train_l, "--threshold", p.th.string(), "--tracks", test_t, "--labels", test_l,
                  "--out-prefix", p.filt.string()}},
      {"evaluate", {"evaluate", "--decisions", p.p(p.filt, ".decisions.csv"), "--labels", test_l,
                    "--out-prefix", p.ev.string()}},
      {"bundle", {"bundle", "--model", model, "--reference-tracks", train_t, "--reference-labels",
                  train_l, "--tracks", test_t, "--labels", test_l, "--out-prefix",
                  p.bundle.string()}},
  };
  const std::map<std::string, fs::path> manifests{
      {"phantom", p.p(p.ph, ".manifest.json")},  {"train", p.p(p.model, ".manifest.json")},
      {"threshold", p.p(p.th, ".manifest.json")}, {"filter", p.p(p.filt, ".manifest.json")},
      {"evaluate", p.p(p.ev, ".manifest.json")},  {"bundle", p.p(p.bundle, ".manifest.json")}};
  for (const auto& [name, args] : stages) {
    if (stage(env, name, manifests.at(name), args) != 0) return false;
  }
  return true;
}

Outcome filtering(const Paths& p, bool ok) {
  if (!ok) return {false, "pipeline failed, see stage logs"};
  auto kv = read_key_values(p.p(p.ev, ".eval.txt"));
  const double acc = kv["accuracy_macro"], f1 = kv["f1_macro"], sens = kv["sensitivity_macro"],
               prec = kv["precision_macro"];
  const bool pass = acc >= 0.95 && f1 >= 0.93 && sens >= 0.93 && prec >= 0.93;
  return {pass, "accuracy=" + fmt(acc) + " f1=" + fmt(f1) + " sensitivity=" + fmt(sens) +
                    " precision=" + fmt(prec) + " (need 0.95/0.93/0.93/0.93)"};
}

Outcome bundling(const Paths& p, bool ok) {
  if (!ok) return {false, "pipeline failed, see stage logs"};
  auto kv = read_key_values(p.p(p.bundle, ".bundle-summary.txt"));
  const double f = kv["fraction"];
  return {f >= 0.90, "plausible assigned to true bundle=" + fmt(f) + " of " +
                         fmt(kv["plausible"]) + " (need 0.90)"};
}

Outcome linearity(const Env& env, const Paths& p, bool ok) {
  if (!ok) return {false, "pipeline failed, see stage logs"};
  const std::string model = p.p(p.model, ".model");
  const int code = stage(env, "bench", p.p(p.bench, ".manifest.json"),
                         {"bench", "--model", model, "--reference-tracks",
                          p.p(p.model, ".train.tck"), "--reference-labels",
                          p.p(p.model, ".train.labels.json"), "--threshold", p.th.string(),
                          "--tracks", p.p(p.ph, ".tck"), "--out-prefix", p.bench.string()});
  if (code != 0) return {false, "bench stage failed"};
  const json b = read_json(p.p(p.bench, ".bench.json"));
  const double r2 = b["fit"]["r_squared"];
  bool ratios_ok = true;
  std::string ratios;
  for (double r : b["doubling_ratios"]) {
    ratios += (ratios.empty() ? "" : ",") + fmt(r);
    ratios_ok = ratios_ok && r >= 1.6 && r <= 2.4;
  }
  return {r2 >= 0.98 && ratios_ok && !b["doubling_ratios"].empty(),
          "R2=" + fmt(r2) + " doubling ratios=[" + ratios + "] (need R2>=0.98, ratios in [1.6,2.4])"};
}

// --- in-process oracle checks -------------------------------------------

Outcome gradient_check() {
  ModelConfig c;
  c.input_points = 16;
  c.encoder_features = {4, 8};
  c.latent_dim = 4;
  c.seed = 11;
  auto m = init_model(c).cast<double>();
  Rng rng(12);
  for (double& v : m.parameters()) v += rng.uniform(-0.05, 0.05);
  const int batch = 4;
  ConvAutoencoder<double>::Matrix x(c.input_channels, batch * c.input_points);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  AlignedVector<double> grad;
  m.loss_and_gradient(x, batch, grad);

  const double h = 1e-4;
  double worst = 0;
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = m.loss_normalized(x, batch);
    params[i] = saved - h;
    const double down = m.loss_normalized(x, batch);
    params[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - grad[i]) / scale);
  }
  return {params.size() >= 200 && worst <= 1e-3,
          std::to_string(params.size()) + " parameters, worst relative error " + fmt(worst)};
}

Outcome oracle_equivalences() {
  Rng rng(21);
  std::size_t nn_mismatch = 0;
  for (std::size_t size : {100u, 1000u, 10000u}) {
    auto draw = [&](std::size_t n) {
      std::vector<LatentVector> out(n, LatentVector(32));
      for (auto& v : out) {
        for (auto& x : v) x = static_cast<float>(rng.normal());
      }
      return out;
    };
    const auto ref_latents = draw(size);
    const ReferenceSet ref(ref_latents, std::vector<std::string>(size, kPlausible));
    for (const auto& q : draw(100)) {
      const auto [index, dist] = oracle::brute_force(ref_latents, q);
      const Neighbor nb = nearest(ref, q);
      nn_mismatch += nb.index != index || nb.distance != dist;
    }
  }

  std::size_t th_mismatch = 0;
  for (int fixture = 0; fixture < 20; ++fixture) {
    const std::size_t np = 1 + rng.below(fixture < 10 ? 30 : 1000);
    const std::size_t nn = 1 + rng.below(fixture < 10 ? 30 : 1000);
    const bool coarse = fixture % 2 == 0;
    auto draw = [&](double mean) {
      const double v = std::abs(rng.normal(mean, 1.0));
      return coarse ? std::round(v * 4) / 4 : v;
    };
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < np; ++i) pos.push_back(draw(1.0));
    for (std::size_t i = 0; i < nn; ++i) neg.push_back(draw(2.5));
    const Threshold th = select_threshold(pos, neg);
    const auto o = oracle::exhaustive_threshold(pos, neg);
    th_mismatch += th.value != o.value || th.tpr != o.tpr || th.fpr != o.fpr;
  }

  const PhantomOutput ph = generate(PhantomConfig{});
  const Tractogram& t = ph.tractogram;
  const auto len = length_filter(t, 20, 200);
  const auto loop = loop_filter(t, 330);
  const auto csf = endpoint_mask_filter(t, ph.mask, EndpointMode::kRejectCsfEndpoint).verdicts;
  const auto atlas = endpoint_mask_filter(t, ph.mask, EndpointMode::kRequireAtlasEndpoint).verdicts;
  const PipelineResult r =
      pipeline(t, {LengthStage{}, LoopStage{}, EndpointStage{&ph.mask, EndpointMode::kRejectCsfEndpoint},
                   EndpointStage{&ph.mask, EndpointMode::kRequireAtlasEndpoint}});
  std::size_t pipe_mismatch = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    pipe_mismatch += r.verdicts[i] != (len[i] && loop[i] && csf[i] && atlas[i]);
  }
  return {nn_mismatch == 0 && th_mismatch == 0 && pipe_mismatch == 0,
          "nearest-neighbour mismatches " + std::to_string(nn_mismatch) + "/300, threshold " +
              std::to_string(th_mismatch) + "/20, pipeline " + std::to_string(pipe_mismatch) + "/" +
              std::to_string(t.size())};
}

Outcome metric_fixtures() {
  const char* truth = "11111111000000000000";
  const char* pred = "11111100111000000000";
  std::vector<bool> tv, pv;
  for (int i = 0; i < 20; ++i) {
    tv.push_back(truth[i] == '1');
    pv.push_back(pred[i] == '1');
  }
  const std::vector<std::string> groups{"g0", "g0", "g1", "g1", "g2", "g3", "g4", "g4", "x", "x",
                                        "x",  "y",  "y",  "y",  "y",  "y",  "y",  "y",  "y", "z"};
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  const auto c = confusion(pv, tv);
  const auto macro = classification_measures(c, Averaging::kMacro);
  const auto weighted = classification_measures(c, Averaging::kWeighted);
  const double vgw = vgw_rate(pv, tv, groups);
  bool ok = c == ConfusionCounts{6, 3, 9, 2} && near(macro.accuracy, 0.75) &&
            near(macro.sensitivity, 0.75) && near(macro.precision, 49.0 / 66) &&
            near(macro.f1, 291.0 / 391) && near(weighted.precision, 25.0 / 33) &&
            near(weighted.f1, 294.0 / 391) && vgw == 0.8 &&
            near(success_rate(macro, vgw), (0.75 + 0.75 + 49.0 / 66 + 291.0 / 391 + 0.8) / 5);
  // Published row values are rounded to two decimals, so the mean of the
  // unrounded values lies within 0.005 of this mean; the reported score adds
  // its own 0.005.
  const double sr = success_rate(0.91, 0.91, 0.78, 0.83, 0.80);
  ok = ok && std::abs(sr - 0.84) <= 0.01;
  return {ok, "fixture values exact, SR(0.91,0.91,0.78,0.83,0.80)=" + fmt(sr) + " vs 0.84"};
}

Outcome interpolation(const Paths& p, bool ok) {
  if (!ok) return {false, "pipeline failed, see stage logs"};
  const AutoencoderModel model = io::read_model(p.p(p.model, ".model"));
  Tractogram t = io::read_tracks(p.p(p.model, ".test.tck"));
  io::attach_labels(t, io::read_labels(p.p(p.model, ".test.labels.json")));
  std::map<std::string, std::vector<std::size_t>> by_bundle;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if ((*t.labels)[i] == kPlausible) by_bundle[(*t.group_ids)[i]].push_back(i);
  }
  std::vector<std::string> bundles;
  for (const auto& [g, v] : by_bundle) bundles.push_back(g);
  if (bundles.size() < 2) return {false, "fewer than two bundles in the test split"};

  const Tractogram prepared = prepare_input(model, t);
  Rng rng(31);
  int failures = 0;
  double worst_ratio = 0;
  for (int pair = 0; pair < 20; ++pair) {
    const bool same = pair < 10;
    const std::string& ga = bundles[rng.below(bundles.size())];
    std::string gb = ga;
    while (!same && gb == ga) gb = bundles[rng.below(bundles.size())];
    const auto& va = by_bundle[ga];
    const auto& vb = by_bundle[gb];
    const std::size_t a = va[rng.below(va.size())];
    std::size_t b = vb[rng.below(vb.size())];
    while (same && b == a && va.size() > 1) b = vb[rng.below(vb.size())];
    const auto path = interpolate(model, encode(model, prepared.streamlines[a]),
                                  encode(model, prepared.streamlines[b]), 10);
    double max_step = 0;
    for (std::size_t k = 1; k < path.size(); ++k) {
      max_step = std::max(max_step, mdf_distance(path[k - 1], path[k]));
    }
    const double ends = mdf_distance(path.front(), path.back());
    failures += max_step > ends;
    if (ends > 0) worst_ratio = std::max(worst_ratio, max_step / ends);
  }
  return {failures == 0, std::to_string(20 - failures) +
                             "/20 pairs smooth, worst max-step/endpoint mdf ratio " + fmt(worst_ratio)};
}

Outcome round_trips_and_determinism(const Env& env, const Paths& p, bool pipeline_ok) {
  std::vector<std::string> broken;
  PhantomConfig pc;
  pc.n_bundles = 3;
  pc.streamlines_per_bundle = 20;
  const PhantomOutput ph = generate(pc);
  const fs::path rt = env.work / "roundtrip";
  fs::create_directories(rt);

  io::write_tracks(ph.tractogram, rt / "t.tck");
  const Tractogram back = io::read_tracks(rt / "t.tck");
  bool tracks_ok = back.size() == ph.tractogram.size();
  for (std::size_t i = 0; tracks_ok && i < back.size(); ++i) {
    const auto& a = back.streamlines[i];
    const auto& b = ph.tractogram.streamlines[i];
    tracks_ok = a.size() == b.size();
    // Track files store float32 coordinates.
    for (std::size_t k = 0; tracks_ok && k < a.size(); ++k) {
      tracks_ok = a[k].x == static_cast<float>(b[k].x) && a[k].y == static_cast<float>(b[k].y) &&
                  a[k].z == static_cast<float>(b[k].z);
    }
  }
  if (!tracks_ok) broken.push_back("tracks");

  io::write_labels(ph.tractogram, rt / "t.labels.json");
  const auto labels = io::read_labels(rt / "t.labels.json");
  if (labels.labels != *ph.tractogram.labels || labels.group_ids != *ph.tractogram.group_ids) {
    broken.push_back("labels");
  }

  ModelConfig mc;
  mc.input_points = 16;
  mc.encoder_features = {4, 8};
  mc.latent_dim = 4;
  AutoencoderModel model = init_model(mc);
  model.anchor = Point3{1.5, -2.25, 3};
  io::write_model(model, rt / "m.model");
  if (!(io::read_model(rt / "m.model") == model)) broken.push_back("model");

  io::write_mask(ph.mask, rt / "m.mask");
  if (!(io::read_mask(rt / "m.mask") == ph.mask)) broken.push_back("mask");

  const LatentTable table = export_latents(model, prepare_input(model, ph.tractogram));
  io::write_latents(table, rt / "z.csv");
  const LatentTable zt = io::read_latents(rt / "z.csv");
  if (zt.ids != table.ids || zt.labels != table.labels || zt.latents != table.latents) {
    broken.push_back("latents");
  }

  // Small pipeline, then every manifest is replayed and its outputs compared.
  const fs::path d = env.work / "determinism";
  fs::remove_all(d);
  fs::create_directories(d);
  const std::string ph_p = (d / "ph").string(), m_p = (d / "m").string();
  const std::vector<std::vector<std::string>> runs{
      {"phantom", "--seed", "3", "--bundles", "3", "--per-bundle", "40", "--out-prefix", ph_p},
      {"train", "--tracks", ph_p + ".tck", "--labels", ph_p + ".labels.json", "--out-prefix", m_p,
       "--points", "32", "--features", "8,16,32", "--latent", "8", "--epochs", "3", "--batch", "32"},
      {"threshold", "--model", m_p + ".model", "--tracks", m_p + ".train.tck", "--labels",
       m_p + ".train.labels.json", "--out", (d / "th.json").string()},
      {"filter", "--model", m_p + ".model", "--reference-tracks", m_p + ".train.tck",
       "--reference-labels", m_p + ".train.labels.json", "--threshold", (d / "th.json").string(),
       "--tracks", m_p + ".test.tck", "--labels", m_p + ".test.labels.json", "--out-prefix",
       (d / "f").string()},
      {"evaluate", "--decisions", (d / "f").string() + ".decisions.csv", "--labels",
       m_p + ".test.labels.json", "--out-prefix", (d / "ev").string()},
  };
  const std::vector<std::string> manifests{ph_p + ".manifest.json", m_p + ".manifest.json",
                                           (d / "th.json").string() + ".manifest.json",
                                           (d / "f").string() + ".manifest.json",
                                           (d / "ev").string() + ".manifest.json"};
  Env fresh = env;
  fresh.reuse = false;
  int replay_failures = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (stage(fresh, "det-" + runs[i][0], manifests[i], runs[i]) != 0) {
      return {false, "determinism pipeline stage " + runs[i][0] + " failed"};
    }
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    replay_failures += stage(fresh, "replay-" + runs[i][0], {}, {"replay", manifests[i]}) != 0;
  }
  // The default-phantom stages are replayed as well, except training, whose
  // replay the small pipeline above already covers at a fraction of the cost.
  int golden_failures = 0;
  std::size_t golden = 0;
  if (pipeline_ok) {
    for (const auto& [name, manifest] :
         std::vector<std::pair<std::string, std::string>>{
             {"phantom", p.p(p.ph, ".manifest.json")},
             {"threshold", p.p(p.th, ".manifest.json")},
             {"filter", p.p(p.filt, ".manifest.json")},
             {"evaluate", p.p(p.ev, ".manifest.json")},
             {"bundle", p.p(p.bundle, ".manifest.json")}}) {
      ++golden;
      golden_failures += stage(fresh, "replay-default-" + name, {}, {"replay", manifest}) != 0;
    }
  }
  std::string detail = "round trips: ";
  detail += broken.empty() ? "tracks, labels, model, mask, latents ok" : "broken";
  for (const auto& b : broken) detail += " " + b;
  detail += "; small pipeline replays identical " +
            std::to_string(runs.size() - replay_failures) + "/" + std::to_string(runs.size());
  detail += pipeline_ok ? "; default phantom replays identical " +
                              std::to_string(golden - golden_failures) + "/" + std::to_string(golden)
                        : "; default phantom pipeline unavailable";
  return {broken.empty() && replay_failures == 0 && pipeline_ok && golden_failures == 0, detail};
}

Outcome training_sanity(const Paths& p, bool ok) {
  if (!ok) return {false, "pipeline failed, see stage logs"};
  const json report = read_json(p.p(p.model, ".train-report.json"));
  const auto& epochs = report["epochs"];
  const double first = epochs.front()["val_loss"];
  const double last = epochs.back()["val_loss"];
  // Training returns the best-validation parameters, so that is the final model's loss.
  const double final_loss = report["best_val_loss"];
  const bool mse_ok = final_loss < 0.1 * first;

  const AutoencoderModel model = io::read_model(p.p(p.model, ".model"));
  Tractogram t = io::read_tracks(p.p(p.model, ".test.tck"));
  io::attach_labels(t, io::read_labels(p.p(p.model, ".test.labels.json")));
  std::vector<std::size_t> plausible;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if ((*t.labels)[i] == kPlausible) plausible.push_back(i);
  }
  const Tractogram input = prepare_input(model, t.subset(plausible));
  const auto decoded = decode_batch(model, encode_batch(model, input.streamlines));
  double in_w = 0, out_w = 0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    in_w += total_winding_deg(input.streamlines[i]);
    out_w += total_winding_deg(decoded[i]);
  }
  const double n = static_cast<double>(input.size());
  const bool wind_ok = out_w / n <= 1.1 * (in_w / n);
  return {mse_ok && wind_ok,
          "val MSE epoch 1 " + fmt(first) + " -> final model " + fmt(final_loss) +
              " (epoch " + std::to_string(report["best_epoch"].get<int>()) + ", ratio " +
              fmt(final_loss / first) + ", need < 0.1; last epoch " + fmt(last) + ", " +
              std::to_string(epochs.size()) + " epochs); mean winding input " + fmt(in_w / n) + " deg, decoded " + fmt(out_w / n) +
              " deg (need <= +10%)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FINTA acceptance suite"};
  Env env;
  std::string work = "acceptance";
  std::vector<int> only;
  bool no_reuse = false;
  app.add_option("--finta", env.finta, "Path to the finta binary")->required();
  app.add_option("--workdir", work, "Working directory for pipeline artifacts");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_flag("--no-reuse", no_reuse, "Rerun every stage even when its manifest is current");
  CLI11_PARSE(app, argc, argv);
  env.reuse = !no_reuse;
  env.work = fs::absolute(work);
  fs::create_directories(env.work);

  auto wanted = [&](int id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  const Paths p = paths(env);
  const std::set<int> needs_pipeline{1, 2, 3, 7, 8, 9};
  bool pipeline_ok = false;
  if (std::any_of(needs_pipeline.begin(), needs_pipeline.end(), wanted)) {
    std::cout << "pipeline on the default phantom in " << env.work << "\n" << std::flush;
    pipeline_ok = run_pipeline(env, p);
  }

  const std::vector<std::pair<int, std::string>> names{
      {1, "phantom filtering"},          {2, "multi-class bundling"},
      {3, "linear scaling"},             {4, "gradient correctness"},
      {5, "oracle equivalences"},        {6, "metric fixtures"},
      {7, "interpolation smoothness"},   {8, "round trips and determinism"},
      {9, "training sanity"}};
  int failures = 0;
  std::vector<std::string> lines;
  for (const auto& [id, name] : names) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      switch (id) {
        case 1: o = filtering(p, pipeline_ok); break;
        case 2: o = bundling(p, pipeline_ok); break;
        case 3: o = linearity(env, p, pipeline_ok); break;
        case 4: o = gradient_check(); break;
        case 5: o = oracle_equivalences(); break;
        case 6: o = metric_fixtures(); break;
        case 7: o = interpolation(p, pipeline_ok); break;
        case 8: o = round_trips_and_determinism(env, p, pipeline_ok); break;
        case 9: o = training_sanity(p, pipeline_ok); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " criterion " +
                             std::to_string(id) + " (" + name + "): " + o.detail;
    std::cout << line << "\n" << std::flush;
    lines.push_back(line);
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l.substr(0, l.find(':')) << "\n";
  std::cout << failures << " of " << lines.size() << " criteria failed\n";
  return failures == 0 ? 0 : 1;
}
