#include "cli.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "run_config.hpp"
#include "stemgan/error.hpp"
#include "stemgan/evalkit.hpp"
#include "stemgan/scoring.hpp"

namespace stemgan::cli {

namespace fs = std::filesystem;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// "--section.key=value" or "--section.key value"; anything else is a usage error.
Overrides parse_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos) {
      throw ConfigError("unexpected argument '" + a + "' (overrides look like --section.key=value)");
    }
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      out.emplace_back(body, extras[++i]);
    } else {
      throw ConfigError("override '" + a + "' has no value");
    }
  }
  return out;
}

void warn_about_device() {
  const char* dev = std::getenv("STEMGAN_DEVICE");
  if (!dev || !*dev) return;
  std::string d = dev;
  std::transform(d.begin(), d.end(), d.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (d != "cpu") spdlog::warn("STEMGAN_DEVICE={} is not available in this build; falling back to CPU", dev);
}

DatasetManifest load_manifest(const RunConfig& rc) {
  const fs::path file = rc.manifest_path();
  if (!fs::exists(file)) {
    throw ConfigError("manifest '" + file.string() + "' not found; run `prepare` or `synth` first, or set dataset.manifest");
  }
  DatasetManifest m = read_manifest_csv(file);
  m.validate();
  return m;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

// ------------------------------------------------------------ commands

void cmd_synth(const RunConfig& rc) {
  const fs::path root = rc.data_root();
  DatasetManifest m = write_synthetic(rc.synth(), root);
  ensure_dir(rc.manifest_path().parent_path().empty() ? fs::path(".") : rc.manifest_path().parent_path());
  write_manifest_csv(m, rc.manifest_path());
  spdlog::info("synthetic dataset: {} train and {} test clips in {}; manifest {}", m.clips_in(Split::Train).size(),
               m.clips_in(Split::Test).size(), root.string(), rc.manifest_path().string());
}

void cmd_prepare(const RunConfig& rc) {
  if (rc.get("dataset.root").empty()) throw ConfigError("prepare needs dataset.root");
  const std::string preset = rc.get("dataset.preset");
  DatasetSpec spec = preset == "custom" ? DatasetSpec{} : DatasetSpec::preset(preset);
  if (rc.real("dataset.fps") > 0.0) spec.fps = rc.real("dataset.fps");
  DatasetManifest m = build_manifest(rc.data_root(), spec);
  m.validate();
  if (m.clips.empty()) throw ConfigError("no clips found under '" + rc.data_root().string() + "'");
  const bool materialize = rc.flag("dataset.materialize");
  std::size_t frames = 0;
  for (ClipEntry& c : m.clips) {
    std::size_t n = 0;
    if (materialize && c.source == ClipSource::Video) {
      const fs::path dir = rc.output_dir() / "frames" / to_string(c.split) / c.clip_id;
      ensure_dir(dir);
      const auto images = extract_frames(c.path, c.fps);
      for (std::size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.png", i);
        write_image(images[i], dir / name);
      }
      c.path = dir;
      c.source = ClipSource::FramesDir;
      n = images.size();
    } else {
      n = clip_frame_count(c);
    }
    if (c.label_path) load_labels(*c.label_path, n, c.clip_id);  // length check
    frames += n;
  }
  ensure_dir(rc.manifest_path().parent_path().empty() ? fs::path(".") : rc.manifest_path().parent_path());
  write_manifest_csv(m, rc.manifest_path());
  spdlog::info("{}: {} clips, {} frames; manifest {}", m.dataset_name, m.clips.size(), frames,
               rc.manifest_path().string());
}

void cmd_train(const RunConfig& rc) {
  const DatasetManifest m = load_manifest(rc);
  std::optional<Trainer> trainer;
  const std::string base = rc.get("transfer.from");
  if (!base.empty()) {
    const Trainer from = Trainer::load(base);
    trainer.emplace(
        Trainer::transfer_init(from, rc.model(), rc.train(), rc.loss(), rc.real("transfer.learning_rate")));
    spdlog::info("warm start from {} (learning rate {})", base, trainer->learning_rate());
  } else {
    trainer.emplace(rc.model(), rc.train(), rc.loss());
  }
  FitOptions opts;
  opts.loader = rc.loader();
  opts.output_dir = rc.train_dir();
  const FitResult r = trainer->fit(m, opts);
  spdlog::info("training stopped ({}) after {} epochs: {} critic / {} generator steps", to_string(r.reason),
               r.history.size(), r.total_d_steps, r.total_g_steps);
}

void cmd_score(const RunConfig& rc) {
  const DatasetManifest m = load_manifest(rc);
  const auto tests = m.clips_in(Split::Test);
  if (tests.empty()) throw ConfigError("manifest has no test clips to score");
  Trainer tr = Trainer::load(rc.checkpoint_dir());
  ensure_dir(rc.scores_dir());
  for (const ClipEntry* c : tests) {
    const auto frames = load_preprocessed(*c, tr.model_config().frame_size);
    const LabelTrack labels = load_labels(*c->label_path, frames.size(), c->clip_id);
    const ScoreSeries s = score_clip(tr.generator(), tr.discriminator(), frames, c->clip_id, labels, rc.lambda_d(),
                                     rc.count("score.batch_size"));
    write_score_csv(s, rc.scores_dir() / (c->clip_id + ".csv"));
    spdlog::info("scored {} ({} frames)", c->clip_id, s.size());
  }
}

void cmd_evaluate(const RunConfig& rc) {
  const DatasetManifest m = load_manifest(rc);
  std::vector<ScoreSeries> series;
  for (const ClipEntry* c : m.clips_in(Split::Test)) {
    const fs::path file = rc.scores_dir() / (c->clip_id + ".csv");
    if (!fs::exists(file)) throw IoError("no scores for clip '" + c->clip_id + "' (" + file.string() + "); run `score`");
    series.push_back(read_score_csv(file, c->clip_id));
  }
  if (series.empty()) throw ConfigError("manifest has no test clips to evaluate");
  const MetricsReport r = build_report(series, rc.report_dir(), {m.dataset_name, rc.hash_hex(), rc.flag("report.plots")});

  // Threshold sweep over the concatenated evidence, for operating-point choice.
  std::vector<double> evidence;
  LabelTrack labels{"aggregate", {}};
  for (const ScoreSeries& s : series) {
    evidence.insert(evidence.end(), s.evidence.begin(), s.evidence.end());
    labels.labels.insert(labels.labels.end(), s.labels->labels.begin(), s.labels->labels.end());
  }
  const auto sweep = threshold_sweep(evidence, labels, rc.count("score.num_thresholds"));
  std::ofstream os(rc.report_dir() / "threshold_sweep.csv");
  if (!os) throw IoError("cannot write threshold_sweep.csv");
  os << "threshold,tpr,fpr,flagged\n";
  for (const SweepPoint& p : sweep) {
    os << format_real(p.threshold) << ',' << format_real(p.tpr) << ',' << format_real(p.fpr) << ',' << p.flagged
       << '\n';
  }
  std::printf("AUROC %.4f  EER %.4f  score gap %.4f  (%zu clips, %zu frames)\n", *r.aggregate.auroc,
              *r.aggregate.eer, *r.aggregate.score_gap, r.clips.size(), r.aggregate.n_frames);
}

void cmd_report(const RunConfig& rc) {
  cmd_score(rc);
  cmd_evaluate(rc);
}

void cmd_bench_io(const RunConfig& rc) {
  const DatasetManifest m = load_manifest(rc);
  const LoaderConfig base = rc.loader();
  std::vector<std::array<bool, 3>> combos;
  if (rc.get("io.sweep") == "all") {
    for (int mask = 0; mask < 8; ++mask) combos.push_back({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0});
  } else {
    combos = {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};
  }
  const std::size_t runs = rc.count("io.runs");
  const double duration = rc.real("io.duration");
  std::vector<BenchmarkRow> rows;
  for (const auto& [cache, prefetch, parallel] : combos) {
    LoaderConfig lc = base;
    lc.caching = cache;
    lc.prefetching = prefetch;
    lc.parallelizing = parallel;
    std::vector<double> fps;
    for (std::size_t r = 0; r < runs; ++r) fps.push_back(throughput_benchmark(m, lc, duration));
    std::sort(fps.begin(), fps.end());
    const double median = fps.size() % 2 ? fps[fps.size() / 2] : 0.5 * (fps[fps.size() / 2 - 1] + fps[fps.size() / 2]);
    rows.push_back({cache, prefetch, parallel, median});
    std::printf("cache=%d prefetch=%d parallel=%d  %.1f windows/s\n", cache, prefetch, parallel, median);
  }
  ensure_dir(rc.output_dir());
  write_benchmark_csv(rows, rc.output_dir() / "bench_io.csv");
}

using Command = void (*)(const RunConfig&);

struct CommandInfo {
  const char* name;
  const char* help;
  Command fn;
};

const std::vector<CommandInfo>& commands() {
  static const std::vector<CommandInfo> list{
      {"prepare", "index a dataset directory into a manifest", cmd_prepare},
      {"train", "train generator and critic on the manifest's train split", cmd_train},
      {"score", "score every test clip with a checkpoint", cmd_score},
      {"evaluate", "ROC/AUROC/EER report from existing scores", cmd_evaluate},
      {"bench-io", "measure data-loader throughput per optimisation", cmd_bench_io},
      {"synth", "generate the synthetic moving-object dataset", cmd_synth},
      {"report", "score, then evaluate", cmd_report},
  };
  return list;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"stemgan: future-frame prediction GAN for video anomaly detection"};
  app.require_subcommand(1);
  std::string config_file;
  bool quiet = false, verbose = false;
  std::vector<CLI::App*> subs;
  for (const CommandInfo& c : commands()) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("-c,--config", config_file, "YAML config file")->check(CLI::ExistingFile);
    sub->add_flag("-q,--quiet", quiet, "warnings and errors only");
    sub->add_flag("-v,--verbose", verbose, "debug logging");
    sub->allow_extras();
    sub->footer("Any config key can be overridden as --section.key=value, e.g. --train.max_epochs=10.");
    subs.push_back(sub);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const CommandInfo* chosen = nullptr;
  CLI::App* sub = nullptr;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i]->parsed()) {
      chosen = &commands()[i];
      sub = subs[i];
    }
  }
  spdlog::set_level(quiet ? spdlog::level::warn : verbose ? spdlog::level::debug : spdlog::level::info);

  std::optional<RunConfig> rc;
  try {
    const Overrides overrides = parse_overrides(sub->remaining());
    rc = RunConfig::resolve(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), overrides);
  } catch (const Error& e) {
    std::cerr << "stemgan " << chosen->name << ": " << e.what() << "\n";
    return kExitUsage;
  }

  warn_about_device();
  try {
    ensure_dir(rc->output_dir());
    rc->write_resolved(rc->output_dir() / "resolved_config.txt");
    chosen->fn(*rc);
  } catch (const ConfigError& e) {
    std::cerr << "stemgan " << chosen->name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "stemgan " << chosen->name << ": " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace stemgan::cli
