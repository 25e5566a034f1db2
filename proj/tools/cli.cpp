#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "finta/autoencoder.hpp"
#include "finta/baselines.hpp"
#include "finta/bench.hpp"
#include "finta/error.hpp"
#include "finta/io.hpp"
#include "finta/latent_index.hpp"
#include "finta/metrics.hpp"
#include "finta/phantom.hpp"
#include "manifest.hpp"

namespace finta::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Failure that is the user's fault but has no library error code.
struct UsageError : std::runtime_error {
  UsageError(std::string code, const std::string& message)
      : std::runtime_error(message), code(std::move(code)) {}
  std::string code;
};

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("FINTA_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring FINTA_THREADS='" << env << "'\n";
  }
  return 1;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

fs::path with_suffix(const std::string& prefix, const std::string& suffix) {
  return fs::path(prefix + suffix);
}

Tractogram load_tracks(const std::string& tracks, const std::string& labels, RunManifest& m) {
  std::vector<std::string> warnings;
  Tractogram t = io::read_tracks(tracks, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << tracks << ": " << w << "\n";
  m.add_input(tracks);
  if (!labels.empty()) {
    io::attach_labels(t, io::read_labels(labels));
    m.add_input(labels);
  }
  return t;
}

AutoencoderModel load_model(const std::string& path, RunManifest& m) {
  AutoencoderModel model = io::read_model(path);
  m.add_input(path);
  return model;
}

void require_labels(const Tractogram& t, const std::string& what) {
  if (!t.labels) throw Error(ErrorCode::kInvalidConfig, what + " needs class labels (--labels)");
}

void require_groups(const Tractogram& t, const std::string& what) {
  if (!t.group_ids) throw Error(ErrorCode::kInvalidConfig, what + " needs group ids in the labels");
}

std::vector<std::size_t> indices_with_label(const Tractogram& t, const std::string& label,
                                            bool equal) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (((*t.labels)[i] == label) == equal) out.push_back(i);
  }
  return out;
}

struct PlausibleReference {
  std::vector<std::size_t> indices;  // into the reference tractogram
  std::vector<LatentVector> latents;
  ReferenceSet set;
};

// Reference set from the plausible streamlines of a labelled tractogram,
// tagged with their class label or, for bundling, their group id.
PlausibleReference plausible_reference(const AutoencoderModel& model, const Tractogram& prepared,
                                       bool by_group, const std::string& provenance, int threads) {
  require_labels(prepared, "a reference");
  if (by_group) require_groups(prepared, "bundling");
  auto idx = indices_with_label(prepared, kPlausible, true);
  const Tractogram sub = prepared.subset(idx);
  auto latents = encode_batch(model, sub.streamlines, 256, threads);
  std::vector<std::string> tags = by_group ? *sub.group_ids : *sub.labels;
  ReferenceSet set(latents, std::move(tags), provenance);
  return {std::move(idx), std::move(latents), std::move(set)};
}

void write_split(const Tractogram& t, const std::string& prefix, RunManifest& m) {
  const auto tracks = with_suffix(prefix, ".tck");
  io::write_tracks(t, tracks);
  m.add_output(tracks);
  if (t.labels || t.group_ids) {
    const auto labels = with_suffix(prefix, ".labels.json");
    io::write_labels(t, labels);
    m.add_output(labels);
  }
}

void write_output(const fs::path& path, std::string_view bytes, RunManifest& m) {
  io::write_file(path, bytes);
  m.add_output(path);
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("invalid-arguments", "bad " + what + " entry '" + item + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Reads any decision table with `index` and `verdict` columns.
std::vector<bool> read_verdicts(const std::string& path, RunManifest& m) {
  const std::string text = io::read_file(path);
  m.add_input(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    if (nl > start) lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.empty()) throw CorruptFileError("empty decisions file", 0);
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::size_t b = 0;
    for (;;) {
      const auto c = s.find(',', b);
      f.push_back(s.substr(b, c == std::string::npos ? std::string::npos : c - b));
      if (c == std::string::npos) return f;
      b = c + 1;
    }
  };
  const auto header = split(lines[0]);
  const auto index_col = std::find(header.begin(), header.end(), "index") - header.begin();
  const auto verdict_col = std::find(header.begin(), header.end(), "verdict") - header.begin();
  if (index_col == static_cast<std::ptrdiff_t>(header.size()) ||
      verdict_col == static_cast<std::ptrdiff_t>(header.size())) {
    throw CorruptFileError("decisions file needs 'index' and 'verdict' columns", 0);
  }
  std::vector<bool> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i]);
    if (f.size() != header.size()) {
      throw CorruptFileError("decisions row " + std::to_string(i) + " has the wrong field count");
    }
    if (f[static_cast<std::size_t>(index_col)] != std::to_string(i - 1)) {
      throw CorruptFileError("decisions row " + std::to_string(i) + " is out of order");
    }
    const auto& v = f[static_cast<std::size_t>(verdict_col)];
    if (v != kPositive && v != kNegative) {
      throw CorruptFileError("verdict '" + v + "' is neither positive nor negative");
    }
    out.push_back(v == kPositive);
  }
  return out;
}

// Records every option of a subcommand with its effective value.
void echo_parameters(const CLI::App& app, RunManifest& m) {
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "manifest") continue;
    if (opt->get_type_size_max() == 0) {
      m.set_parameter(name, opt->count() > 0);
      continue;
    }
    if (opt->count() > 0) {
      const auto& res = opt->results();
      if (res.size() == 1) {
        m.set_parameter(name, res.front());
      } else {
        m.set_parameter(name, res);
      }
    } else {
      m.set_parameter(name, opt->get_default_str());
    }
  }
}

// ---------------------------------------------------------------------------
// Subcommands

struct PhantomOpts {
  std::uint64_t seed = 1;
  int bundles = 7;
  int per_bundle = 1119;
  double implausible_fraction = 0.79;
  double noise = 0.6;
  std::string out_prefix;
};

void run_phantom(const PhantomOpts& o, RunManifest& m) {
  PhantomConfig c;
  c.seed = o.seed;
  c.n_bundles = o.bundles;
  c.streamlines_per_bundle = o.per_bundle;
  c.implausible_fraction = o.implausible_fraction;
  c.noise_sigma_mm = o.noise;
  m.set_seed("phantom", c.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const PhantomOutput ph = generate(c);
  m.set_timing("generate_s", seconds_since(t0));
  write_split(ph.tractogram, o.out_prefix, m);
  const auto mask = with_suffix(o.out_prefix, ".mask");
  io::write_mask(ph.mask, mask);
  m.add_output(mask);
  m.set_note("plausible", c.plausible_count());
  m.set_note("implausible", c.implausible_count());
  std::cout << "wrote " << ph.tractogram.size() << " streamlines (" << c.plausible_count()
            << " plausible, " << c.implausible_count() << " implausible) to " << o.out_prefix
            << ".tck\n";
}

struct TrainOpts {
  std::string tracks;
  std::string labels;
  std::string out_prefix;
  double lr = 6.68e-4;
  double weight_decay = 0.13;
  bool coupled_weight_decay = false;
  int latent = 32;
  int points = 256;
  std::string features = "32,64,128,256,512,1024";
  std::string interpretation = "input-size";
  int epochs = 100;
  int patience = 5;
  int batch = 128;
  std::uint64_t seed = 1;
  double test_fraction = 0.2;
  double val_fraction = 0.1;
};

void run_train(const TrainOpts& o, RunManifest& m) {
  Tractogram t = load_tracks(o.tracks, o.labels, m);
  require_labels(t, "train");
  if (!(o.test_fraction > 0.0 && o.test_fraction < 1.0) ||
      !(o.val_fraction > 0.0 && o.val_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "split fractions must lie in (0, 1)");
  }
  const std::uint64_t split_seed = o.seed;
  const std::uint64_t val_seed = o.seed + 1;
  m.set_seed("model_init", o.seed);
  m.set_seed("test_split", split_seed);
  m.set_seed("validation_split", val_seed);
  m.set_seed("batch_order", o.seed);

  const SplitIndices outer = split_indices(t, 1.0 - o.test_fraction, split_seed);
  const Tractogram train_raw = t.subset(outer.first);
  const Tractogram test_raw = t.subset(outer.second);
  write_split(train_raw, o.out_prefix + ".train", m);
  write_split(test_raw, o.out_prefix + ".test", m);

  ModelConfig mc;
  mc.input_points = o.points;
  mc.latent_dim = o.latent;
  mc.encoder_features = parse_int_list(o.features, "--features");
  mc.seed = o.seed;
  mc.table_interpretation = o.interpretation == "output-size" ? TableInterpretation::kOutputSize
                                                              : TableInterpretation::kInputSize;
  AutoencoderModel model = init_model(mc);

  for (const auto& s : train_raw.streamlines) validate(s);
  Tractogram prepared = resample(train_raw, static_cast<std::size_t>(o.points));
  model.anchor = first_endpoint_centroid(prepared);
  prepared = align_endpoints(prepared, *model.anchor);
  m.set_note("preprocessing", "resample to " + std::to_string(o.points) +
                                  " points, then align endpoints to the training anchor");
  const SplitIndices inner = split_indices(prepared, 1.0 - o.val_fraction, val_seed);
  const Tractogram fit = prepared.subset(inner.first);
  const Tractogram val = prepared.subset(inner.second);

  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.weight_decay = o.weight_decay;
  tc.decoupled_weight_decay = !o.coupled_weight_decay;
  tc.batch_size = o.batch;
  tc.max_epochs = o.epochs;
  tc.patience = o.patience;
  tc.seed = o.seed;
  std::cerr << "training on " << fit.size() << " streamlines, validating on " << val.size()
            << ", " << model.parameter_count() << " parameters\n";
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train(model, fit, val, tc, [&](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << "/" << tc.max_epochs << " train " << e.train_loss
              << " val " << e.val_loss << " (" << e.seconds << " s)\n";
    m.set_timing("epoch_" + std::to_string(e.epoch) + "_s", e.seconds);
  });
  m.set_timing("train_s", seconds_since(t0));

  const auto model_path = with_suffix(o.out_prefix, ".model");
  io::write_model(result.model, model_path);
  m.add_output(model_path);
  write_output(with_suffix(o.out_prefix, ".train-report.json"),
               io::encode_train_report(result.report, mc), m);
  m.set_note("best_epoch", result.report.best_epoch);
  m.set_note("best_val_loss", result.report.best_val_loss);
  m.set_note("stop_reason", result.report.stop_reason);
  std::cout << "best epoch " << result.report.best_epoch << " val loss "
            << result.report.best_val_loss << " (initial " << result.report.initial_val_loss
            << ", " << result.report.stop_reason << ")\n";
}

struct ThresholdOpts {
  std::string model;
  std::string tracks;
  std::string labels;
  std::string out;
  std::string roc;
};

void run_threshold(const ThresholdOpts& o, int threads, RunManifest& m) {
  const AutoencoderModel model = load_model(o.model, m);
  const Tractogram t = prepare_input(model, load_tracks(o.tracks, o.labels, m));
  require_labels(t, "threshold");
  const auto t0 = std::chrono::steady_clock::now();
  const PlausibleReference ref = plausible_reference(model, t, false, o.tracks, threads);
  std::vector<double> pos(ref.latents.size());
  for (std::size_t i = 0; i < ref.latents.size(); ++i) {
    if (ref.latents.size() < 2) break;
    pos[i] = nearest(ref.set, ref.latents[i], i).distance;
  }
  if (ref.latents.size() < 2) {
    throw Error(ErrorCode::kDegenerateROC, "need at least two plausible streamlines");
  }
  const Tractogram negatives = t.subset(indices_with_label(t, kPlausible, false));
  const auto neg_latents = encode_batch(model, negatives.streamlines, 256, threads);
  std::vector<double> neg;
  for (const auto& nb : nearest_all(ref.set, neg_latents, threads)) neg.push_back(nb.distance);
  const Threshold th = select_threshold(pos, neg);
  m.set_timing("threshold_s", seconds_since(t0));
  write_output(o.out, io::encode_threshold(th, pos.size(), neg.size()), m);
  write_output(o.roc.empty() ? fs::path(o.out + ".roc.csv") : fs::path(o.roc), io::encode_roc(th), m);
  std::cout << "threshold " << th.value << " (tpr " << th.tpr << ", fpr " << th.fpr << ", "
            << pos.size() << " positives, " << neg.size() << " negatives)\n";
}

struct FilterOpts {
  std::string model;
  std::string reference_tracks;
  std::string reference_labels;
  std::string threshold;
  std::optional<double> threshold_value;
  std::string tracks;
  std::string labels;
  std::string out_prefix;
};

// A value given on the command line overrides the threshold file.
std::optional<Threshold> resolve_threshold(const std::string& path, std::optional<double> value,
                                           RunManifest& m) {
  if (value) {
    if (!std::isfinite(*value) || *value < 0.0) {
      throw UsageError("invalid-arguments", "--threshold-value must be a finite distance >= 0");
    }
    Threshold th;
    th.value = *value;
    m.set_note("threshold_source", "command line");
    return th;
  }
  if (path.empty()) return std::nullopt;
  Threshold th = io::decode_threshold(io::read_file(path));
  m.add_input(path);
  m.set_note("threshold_source", path);
  return th;
}

void run_filter(const FilterOpts& o, int threads, RunManifest& m) {
  const AutoencoderModel model = load_model(o.model, m);
  const Tractogram ref_t =
      prepare_input(model, load_tracks(o.reference_tracks, o.reference_labels, m));
  const auto resolved = resolve_threshold(o.threshold, o.threshold_value, m);
  if (!resolved) throw UsageError("invalid-arguments", "filter needs --threshold or --threshold-value");
  const Threshold& th = *resolved;
  const Tractogram raw = load_tracks(o.tracks, o.labels, m);
  const Tractogram t = prepare_input(model, raw);

  const auto t0 = std::chrono::steady_clock::now();
  const PlausibleReference ref = plausible_reference(model, ref_t, false, o.reference_tracks, threads);
  const auto decisions = filter(model, ref.set, t, th, threads);
  m.set_timing("filter_s", seconds_since(t0));

  write_output(with_suffix(o.out_prefix, ".decisions.csv"), io::encode_decisions(decisions), m);
  std::vector<std::size_t> pos, neg;
  for (const auto& d : decisions) (d.verdict == kPositive ? pos : neg).push_back(d.index);
  write_split(raw.subset(pos), o.out_prefix + ".positive", m);
  write_split(raw.subset(neg), o.out_prefix + ".negative", m);
  std::cout << pos.size() << " positive, " << neg.size() << " negative at threshold " << th.value
            << "\n";
}

struct BundleOpts {
  std::string model;
  std::string reference_tracks;
  std::string reference_labels;
  std::string threshold;
  std::optional<double> threshold_value;
  std::string tracks;
  std::string labels;
  std::string out_prefix;
};

void run_bundle(const BundleOpts& o, int threads, RunManifest& m) {
  const AutoencoderModel model = load_model(o.model, m);
  const Tractogram ref_t =
      prepare_input(model, load_tracks(o.reference_tracks, o.reference_labels, m));
  const std::optional<Threshold> th = resolve_threshold(o.threshold, o.threshold_value, m);
  const Tractogram t = prepare_input(model, load_tracks(o.tracks, o.labels, m));
  const auto t0 = std::chrono::steady_clock::now();
  const PlausibleReference ref = plausible_reference(model, ref_t, true, o.reference_tracks, threads);
  const auto decisions = classify(model, ref.set, t, th, threads);
  m.set_timing("bundle_s", seconds_since(t0));
  write_output(with_suffix(o.out_prefix, ".bundles.csv"), io::encode_decisions(decisions), m);

  if (t.labels && t.group_ids) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> per;  // hits, total
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if ((*t.labels)[i] != kPlausible) continue;
      const bool hit = decisions[i].verdict == (*t.group_ids)[i];
      auto& [h, n] = per[(*t.group_ids)[i]];
      ++n;
      ++total;
      if (hit) {
        ++h;
        ++hits;
      }
    }
    const double fraction = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    std::string summary = "plausible: " + std::to_string(total) +
                          "\nassigned_to_true_bundle: " + std::to_string(hits) +
                          "\nfraction: " + io::format_double(fraction) + "\n";
    for (const auto& [g, c] : per) {
      summary += "fraction." + g + ": " +
                 io::format_double(static_cast<double>(c.first) / static_cast<double>(c.second)) +
                 "\n";
    }
    write_output(with_suffix(o.out_prefix, ".bundle-summary.txt"), summary, m);
    std::cout << "assigned " << hits << "/" << total << " plausible streamlines to their bundle ("
              << fraction << ")\n";
  } else {
    std::cout << "classified " << decisions.size() << " streamlines into "
              << ref.set.classes().size() << " classes\n";
  }
}

struct BaselineOpts {
  std::string tracks;
  std::string labels;
  std::string mask;
  std::string stages = "length,no_loops,no_end_in_csf";
  double min_length = 20.0;
  double max_length = 200.0;
  double max_winding = 330.0;
  std::string out_prefix;
};

void run_baseline(const BaselineOpts& o, RunManifest& m) {
  const Tractogram t = load_tracks(o.tracks, o.labels, m);
  std::optional<MaskVolume> mask;
  std::vector<FilterStage> stages;
  std::size_t start = 0;
  while (start <= o.stages.size()) {
    const auto comma = o.stages.find(',', start);
    const std::string name = o.stages.substr(start, comma == std::string::npos ? std::string::npos
                                                                               : comma - start);
    if (name == "length") {
      stages.emplace_back(LengthStage{o.min_length, o.max_length});
    } else if (name == "no_loops") {
      stages.emplace_back(LoopStage{o.max_winding});
    } else if (name == "no_end_in_csf" || name == "end_in_atlas") {
      if (o.mask.empty()) throw UsageError("invalid-arguments", "stage " + name + " needs --mask");
      if (!mask) {
        mask = io::read_mask(o.mask);
        m.add_input(o.mask);
      }
      stages.emplace_back(EndpointStage{&*mask, name == "no_end_in_csf"
                                                    ? EndpointMode::kRejectCsfEndpoint
                                                    : EndpointMode::kRequireAtlasEndpoint});
    } else {
      throw UsageError("invalid-arguments", "unknown stage '" + name + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineResult r = pipeline(t, stages);
  m.set_timing("pipeline_s", seconds_since(t0));

  std::string table = "index,verdict,rejected_by\n";
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < t.size(); ++i) {
    table += std::to_string(i) + "," + (r.verdicts[i] ? kPositive : kNegative) + "," +
             (r.rejected_by[i] < 0 ? std::string() : r.stages[static_cast<std::size_t>(r.rejected_by[i])].name) +
             "\n";
    if (r.verdicts[i]) kept.push_back(i);
  }
  write_output(with_suffix(o.out_prefix, ".decisions.csv"), table, m);
  std::string report;
  for (std::size_t k = 0; k < r.stages.size(); ++k) {
    const auto& s = r.stages[k];
    report += "stage " + std::to_string(k) + ": " + s.name + " input=" +
              std::to_string(s.input_count) + " kept=" + std::to_string(s.positive_count) +
              " endpoints_outside=" + std::to_string(s.endpoints_outside) + "\n";
  }
  write_output(with_suffix(o.out_prefix, ".stages.txt"), report, m);
  write_split(t.subset(kept), o.out_prefix + ".positive", m);
  std::cout << report << kept.size() << " of " << t.size() << " streamlines kept\n";
}

struct EvaluateOpts {
  std::string decisions;
  std::string labels;
  std::string out_prefix;
};

void run_evaluate(const EvaluateOpts& o, RunManifest& m) {
  const std::vector<bool> pred = read_verdicts(o.decisions, m);
  const io::LabelSidecar truth_labels = io::read_labels(o.labels);
  m.add_input(o.labels);
  if (!truth_labels.labels) throw Error(ErrorCode::kInvalidConfig, "truth file has no labels");
  if (!truth_labels.group_ids) throw Error(ErrorCode::kInvalidConfig, "truth file has no group ids");
  std::vector<bool> truth;
  for (const auto& l : *truth_labels.labels) truth.push_back(l == kPlausible);
  const EvalReport report = evaluate(pred, truth, *truth_labels.group_ids);
  const std::string text = io::encode_eval_report(report);
  write_output(with_suffix(o.out_prefix, ".eval.txt"), text, m);
  write_output(with_suffix(o.out_prefix, ".eval.csv"), io::encode_eval_table(report), m);
  std::cout << text;
}

struct InterpolateOpts {
  std::string model;
  std::string tracks;
  std::size_t from = 0;
  std::size_t to = 1;
  int steps = 10;
  std::string out;
};

void run_interpolate(const InterpolateOpts& o, RunManifest& m) {
  const AutoencoderModel model = load_model(o.model, m);
  const Tractogram t = prepare_input(model, load_tracks(o.tracks, "", m));
  if (o.from >= t.size() || o.to >= t.size()) {
    throw Error(ErrorCode::kInvalidConfig, "streamline index out of range (tractogram has " +
                                               std::to_string(t.size()) + ")");
  }
  const LatentVector za = encode(model, t.streamlines[o.from]);
  const LatentVector zb = encode(model, t.streamlines[o.to]);
  Tractogram path;
  path.streamlines = interpolate(model, za, zb, o.steps);
  io::write_tracks(path, o.out);
  m.add_output(o.out);
  double worst = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    worst = std::max(worst, mdf_distance(path.streamlines[i - 1], path.streamlines[i]));
  }
  const double ends = mdf_distance(path.streamlines.front(), path.streamlines.back());
  m.set_note("max_step_mdf_mm", worst);
  m.set_note("endpoint_mdf_mm", ends);
  std::cout << "wrote " << path.size() << " interpolants; largest step " << worst
            << " mm, endpoints " << ends << " mm apart\n";
}

struct ExportOpts {
  std::string model;
  std::string tracks;
  std::string labels;
  std::string out;
};

void run_export(const ExportOpts& o, int threads, RunManifest& m) {
  const AutoencoderModel model = load_model(o.model, m);
  const Tractogram t = prepare_input(model, load_tracks(o.tracks, o.labels, m));
  write_output(o.out, io::encode_latents(export_latents(model, t, threads)), m);
  std::cout << "wrote " << t.size() << " latent vectors to " << o.out << "\n";
}

struct BenchOpts {
  std::string model;
  std::string reference_tracks;
  std::string reference_labels;
  std::string threshold;
  std::string tracks;
  std::vector<std::size_t> sizes;
  bool full = false;
  int repetitions = 3;
  std::string out_prefix;
};

void run_bench(const BenchOpts& o, int threads, RunManifest& m) {
  const AutoencoderModel model = load_model(o.model, m);
  const Tractogram ref_t =
      prepare_input(model, load_tracks(o.reference_tracks, o.reference_labels, m));
  const Tractogram pool = prepare_input(model, load_tracks(o.tracks, "", m));
  ScalingConfig c;
  c.sizes = !o.sizes.empty() ? o.sizes : (o.full ? kFullScalingSizes : kDefaultScalingSizes);
  c.repetitions = o.repetitions;
  c.threads = threads;
  if (!o.threshold.empty()) {
    c.threshold = io::decode_threshold(io::read_file(o.threshold)).value;
    m.add_input(o.threshold);
  }
  m.set_parameter("resolved_sizes", c.sizes);
  const PlausibleReference ref = plausible_reference(model, ref_t, false, o.reference_tracks, threads);
  const BenchResult r = run_scaling(model, ref.set, pool.streamlines, c);
  write_output(with_suffix(o.out_prefix, ".bench.csv"), encode_bench_csv(r), m);
  write_output(with_suffix(o.out_prefix, ".bench.svg"), render_bench_svg(r), m);
  json detail;
  detail["repetitions"] = r.repetitions;
  detail["threads"] = r.threads;
  detail["warmup"] = r.warmup;
  detail["reference_size"] = r.reference_size;
  detail["points"] = json::array();
  for (const auto& p : r.points) {
    detail["points"].push_back(
        {{"count", p.count}, {"seconds", p.seconds}, {"mean_s", p.mean_s}, {"std_s", p.std_s}});
  }
  detail["fit"] = {{"slope", r.fit.slope},
                   {"intercept", r.fit.intercept},
                   {"r_squared", r.fit.r_squared},
                   {"max_relative_residual", r.fit.max_relative_residual}};
  detail["doubling_ratios"] = r.doubling_ratios;
  detail["warnings"] = r.warnings;
  write_output(with_suffix(o.out_prefix, ".bench.json"), detail.dump(2) + "\n", m);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << encode_bench_csv(r) << "slope " << r.fit.slope << " s/streamline, R^2 "
            << r.fit.r_squared << "\n";
}

void add_threads(CLI::App* app, int& threads) {
  app->add_option("--threads", threads,
                  "Worker threads (falls back to FINTA_THREADS, then 1)");
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Streamline filtering in a learned latent space"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string manifest_path;
  int threads = 0;

  auto with_manifest = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest_path, "Where to write the run manifest");
  };

  PhantomOpts ph;
  auto* c_ph = app.add_subcommand("phantom", "Generate a labelled synthetic phantom and mask");
  c_ph->add_option("--seed", ph.seed, "Generator seed");
  c_ph->add_option("--bundles", ph.bundles, "Number of bundles (1-7)");
  c_ph->add_option("--per-bundle", ph.per_bundle, "Plausible streamlines per bundle");
  c_ph->add_option("--implausible-fraction", ph.implausible_fraction,
                   "Fraction of implausible streamlines");
  c_ph->add_option("--noise", ph.noise, "Trajectory noise (mm)");
  c_ph->add_option("--out-prefix", ph.out_prefix, "Output prefix")->required();
  with_manifest(c_ph);

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "Split, resample, align and train the autoencoder");
  c_tr->add_option("--tracks", tr.tracks, "Input track file")->required();
  c_tr->add_option("--labels", tr.labels, "Label sidecar")->required();
  c_tr->add_option("--out-prefix", tr.out_prefix, "Output prefix")->required();
  c_tr->add_option("--lr", tr.lr, "Learning rate");
  c_tr->add_option("--weight-decay", tr.weight_decay, "Weight decay");
  c_tr->add_flag("--coupled-weight-decay", tr.coupled_weight_decay,
                 "Add weight decay to the gradient (L2) instead of decoupling it");
  c_tr->add_option("--latent", tr.latent, "Latent dimension");
  c_tr->add_option("--points", tr.points, "Points per resampled streamline");
  c_tr->add_option("--features", tr.features, "Encoder feature ladder, comma separated");
  c_tr->add_option("--table-interpretation", tr.interpretation, "Layer size reading")
      ->check(CLI::IsMember({"input-size", "output-size"}));
  c_tr->add_option("--epochs", tr.epochs, "Maximum epochs");
  c_tr->add_option("--patience", tr.patience, "Early-stopping patience (epochs)");
  c_tr->add_option("--batch", tr.batch, "Mini-batch size");
  c_tr->add_option("--seed", tr.seed, "Seed for initialization, splits and batch order");
  c_tr->add_option("--test-fraction", tr.test_fraction, "Held-out test fraction");
  c_tr->add_option("--val-fraction", tr.val_fraction,
                   "Validation fraction carved from the training part");
  add_threads(c_tr, threads);
  with_manifest(c_tr);

  ThresholdOpts th;
  auto* c_th = app.add_subcommand("threshold", "Select the latent distance threshold");
  c_th->add_option("--model", th.model, "Model file")->required();
  c_th->add_option("--tracks", th.tracks, "Training-split track file")->required();
  c_th->add_option("--labels", th.labels, "Training-split labels")->required();
  c_th->add_option("--out", th.out, "Threshold file (JSON)")->required();
  c_th->add_option("--roc", th.roc, "ROC curve CSV (default: <out>.roc.csv)");
  add_threads(c_th, threads);
  with_manifest(c_th);

  FilterOpts fi;
  auto* c_fi = app.add_subcommand("filter", "Label streamlines by latent nearest-neighbour distance");
  c_fi->add_option("--model", fi.model, "Model file")->required();
  c_fi->add_option("--reference-tracks", fi.reference_tracks, "Reference track file")->required();
  c_fi->add_option("--reference-labels", fi.reference_labels, "Reference labels")->required();
  c_fi->add_option("--threshold", fi.threshold, "Threshold file");
  c_fi->add_option("--threshold-value", fi.threshold_value,
                   "Latent distance threshold, overriding --threshold");
  c_fi->add_option("--tracks", fi.tracks, "Tracks to filter")->required();
  c_fi->add_option("--labels", fi.labels, "Optional labels, carried into the outputs");
  c_fi->add_option("--out-prefix", fi.out_prefix, "Output prefix")->required();
  add_threads(c_fi, threads);
  with_manifest(c_fi);

  BundleOpts bu;
  auto* c_bu = app.add_subcommand("bundle", "Assign streamlines to reference bundles");
  c_bu->add_option("--model", bu.model, "Model file")->required();
  c_bu->add_option("--reference-tracks", bu.reference_tracks, "Reference track file")->required();
  c_bu->add_option("--reference-labels", bu.reference_labels,
                   "Reference labels with group ids")->required();
  c_bu->add_option("--threshold", bu.threshold, "Optional rejection threshold file");
  c_bu->add_option("--threshold-value", bu.threshold_value,
                   "Rejection distance, overriding --threshold");
  c_bu->add_option("--tracks", bu.tracks, "Tracks to classify")->required();
  c_bu->add_option("--labels", bu.labels, "Optional truth labels for a summary");
  c_bu->add_option("--out-prefix", bu.out_prefix, "Output prefix")->required();
  add_threads(c_bu, threads);
  with_manifest(c_bu);

  BaselineOpts ba;
  auto* c_ba = app.add_subcommand("baseline", "Run anatomy-style filter stages in order");
  c_ba->add_option("--tracks", ba.tracks, "Input track file")->required();
  c_ba->add_option("--labels", ba.labels, "Optional labels, carried into the outputs");
  c_ba->add_option("--mask", ba.mask, "Tissue mask (needed by endpoint stages)");
  c_ba->add_option("--stages", ba.stages,
                   "Comma-separated stages: length, no_loops, no_end_in_csf, end_in_atlas");
  c_ba->add_option("--min-length", ba.min_length, "Minimum length (mm)");
  c_ba->add_option("--max-length", ba.max_length, "Maximum length (mm)");
  c_ba->add_option("--max-winding", ba.max_winding, "Loop cutoff (degrees)");
  c_ba->add_option("--out-prefix", ba.out_prefix, "Output prefix")->required();
  with_manifest(c_ba);

  EvaluateOpts ev;
  auto* c_ev = app.add_subcommand("evaluate", "Score decisions against truth labels");
  c_ev->add_option("--decisions", ev.decisions, "Decision table (CSV)")->required();
  c_ev->add_option("--labels", ev.labels, "Truth labels with group ids")->required();
  c_ev->add_option("--out-prefix", ev.out_prefix, "Output prefix")->required();
  with_manifest(c_ev);

  InterpolateOpts in;
  auto* c_in = app.add_subcommand("interpolate", "Decode a latent path between two streamlines");
  c_in->add_option("--model", in.model, "Model file")->required();
  c_in->add_option("--tracks", in.tracks, "Track file holding both streamlines")->required();
  c_in->add_option("--from", in.from, "Index of the first streamline");
  c_in->add_option("--to", in.to, "Index of the second streamline");
  c_in->add_option("--steps", in.steps, "Number of interpolants, endpoints included");
  c_in->add_option("--out", in.out, "Output track file")->required();
  with_manifest(c_in);

  ExportOpts ex;
  auto* c_ex = app.add_subcommand("export-latents", "Dump latent vectors as CSV");
  c_ex->add_option("--model", ex.model, "Model file")->required();
  c_ex->add_option("--tracks", ex.tracks, "Track file")->required();
  c_ex->add_option("--labels", ex.labels, "Optional labels");
  c_ex->add_option("--out", ex.out, "Output CSV")->required();
  add_threads(c_ex, threads);
  with_manifest(c_ex);

  BenchOpts be;
  auto* c_be = app.add_subcommand("bench", "Time filtering against streamline count");
  c_be->add_option("--model", be.model, "Model file")->required();
  c_be->add_option("--reference-tracks", be.reference_tracks, "Reference track file")->required();
  c_be->add_option("--reference-labels", be.reference_labels, "Reference labels")->required();
  c_be->add_option("--threshold", be.threshold, "Optional threshold file");
  c_be->add_option("--tracks", be.tracks, "Pool the timed tractograms are tiled from")->required();
  c_be->add_option("--sizes", be.sizes, "Streamline counts (default 5k..100k)")->delimiter(',');
  c_be->add_flag("--full", be.full, "Use the large sizes (20k..1M)");
  c_be->add_option("--repetitions", be.repetitions, "Timed repetitions per size");
  c_be->add_option("--out-prefix", be.out_prefix, "Output prefix")->required();
  add_threads(c_be, threads);
  with_manifest(c_be);

  std::string replay_path;
  auto* c_re = app.add_subcommand("replay", "Re-run a manifest and compare output hashes");
  c_re->add_option("manifest", replay_path, "Manifest to replay")->required();

  auto fail = [](const std::string& code, const std::string& message, int exit_code) {
    std::cerr << "error: " << code << ": " << message << "\n";
    return exit_code;
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("invalid-arguments", e.what(), 1);
  }

  try {
    if (c_re->parsed()) {
      const json old = json::parse(io::read_file(replay_path));
      if (old.value("format", "") != kManifestFormat) {
        throw CorruptFileError("not a run manifest: " + replay_path);
      }
      std::vector<std::string> again = old.at("argv").get<std::vector<std::string>>();
      const std::string replay_manifest = replay_path + ".replay.json";
      again.push_back("--manifest");
      again.push_back(replay_manifest);
      std::cerr << "replaying " << old.at("subcommand").get<std::string>() << "\n";
      const int code = run(again);
      if (code != 0) return code;
      const json fresh = json::parse(io::read_file(replay_manifest));
      std::map<std::string, std::string> now;
      for (const auto& o : fresh.at("outputs")) now[o.at("path")] = o.at("fnv1a64");
      std::size_t mismatches = 0;
      for (const auto& o : old.at("outputs")) {
        const std::string path = o.at("path");
        const bool same = now.count(path) && now[path] == o.at("fnv1a64").get<std::string>();
        std::cout << (same ? "identical " : "DIFFERENT ") << path << "\n";
        if (!same) ++mismatches;
      }
      if (mismatches) {
        return fail("replay-mismatch", std::to_string(mismatches) + " output(s) differ", 1);
      }
      return 0;
    }

    const CLI::App* sub = app.get_subcommands().front();
    // Recorded argv leaves out --manifest so a replay can redirect it.
    std::vector<std::string> recorded;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--manifest") {
        ++i;
        continue;
      }
      if (args[i].rfind("--manifest=", 0) == 0) continue;
      recorded.push_back(args[i]);
    }
    RunManifest m(sub->get_name(), recorded);
    echo_parameters(*sub, m);
    const int workers = resolve_threads(threads);
    m.set_parameter("threads", workers);
    m.set_note("finta_version", kVersion);

    std::string base;
    if (sub == c_ph) {
      run_phantom(ph, m);
      base = ph.out_prefix;
    } else if (sub == c_tr) {
      run_train(tr, m);
      base = tr.out_prefix;
    } else if (sub == c_th) {
      run_threshold(th, workers, m);
      base = th.out;
    } else if (sub == c_fi) {
      run_filter(fi, workers, m);
      base = fi.out_prefix;
    } else if (sub == c_bu) {
      run_bundle(bu, workers, m);
      base = bu.out_prefix;
    } else if (sub == c_ba) {
      run_baseline(ba, m);
      base = ba.out_prefix;
    } else if (sub == c_ev) {
      run_evaluate(ev, m);
      base = ev.out_prefix;
    } else if (sub == c_in) {
      run_interpolate(in, m);
      base = in.out;
    } else if (sub == c_ex) {
      run_export(ex, workers, m);
      base = ex.out;
    } else if (sub == c_be) {
      run_bench(be, workers, m);
      base = be.out_prefix;
    }
    m.write(manifest_path.empty() ? fs::path(base + ".manifest.json") : fs::path(manifest_path));
    return 0;
  } catch (const Error& e) {
    return fail(std::string(error_code_name(e.code())), e.what(), 1);
  } catch (const UsageError& e) {
    return fail(e.code, e.what(), 1);
  } catch (const json::exception& e) {
    return fail("corrupt-file", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 2);
  }
}

}  // namespace finta::cli
