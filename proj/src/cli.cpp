#include "pdcycon/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "pdcycon/config.hpp"
#include "pdcycon/preprocess.hpp"
#include "pdcycon/signal_io.hpp"
#include "pdcycon/synth.hpp"
#include "pdcycon/training.hpp"

namespace pdcycon::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::InputTooSmall:
    case ErrorCode::WindowTooLarge:
    case ErrorCode::ClassTooSmall:
    case ErrorCode::PeakAxisMismatch:
      return kExitConfig;
    case ErrorCode::MissingFile:
    case ErrorCode::MalformedRow:
    case ErrorCode::DuplicateId:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::NonFiniteSample:
    case ErrorCode::DimMismatch:
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::IoError:
      return kExitIo;
    case ErrorCode::NoZeroCrossing:
    case ErrorCode::LengthMismatch:
    case ErrorCode::NumericFailure:
      return kExitNumeric;
  }
  return 1;
}

namespace {

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_file, "key=value configuration file");
  cmd->add_option("--set", opts.overrides, "override one key (key=value); repeatable");
}

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig cfg = opts.config_file.empty() ? RunConfig{} : RunConfig::from_file(opts.config_file);
  for (const auto& o : opts.overrides) cfg.apply(o);
  cfg.validate();
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

void echo_config(const fs::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << cfg.to_text();
}

std::size_t worker_count(std::size_t requested, std::size_t tasks) {
  if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
  return std::clamp<std::size_t>(requested, 1, std::max<std::size_t>(tasks, 1));
}

/// Accepts a feature manifest (features.csv) or a directory holding one.
std::vector<MeasurementFeatures> load_feature_set(const fs::path& where) {
  const fs::path manifest_path = fs::is_directory(where) ? where / "features.csv" : where;
  const auto manifest = load_manifest(manifest_path);
  std::vector<MeasurementFeatures> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    auto f = read_features(e.path);
    f.id = e.id;
    if (f.label != e.label) {
      throw Error(ErrorCode::MalformedRow, e.id + ": manifest label " + std::to_string(e.label) +
                                               " disagrees with feature file label " + std::to_string(f.label));
    }
    out.push_back(std::move(f));
  }
  if (out.empty()) throw Error(ErrorCode::MalformedRow, manifest_path.string() + " lists no measurements");
  return out;
}

void check_feature_dims(const std::vector<MeasurementFeatures>& data, const model::ModelConfig& mc) {
  for (const auto& f : data) {
    if (f.n_peaks() != mc.n_peaks || f.window_t() != mc.window_t || f.freq_bins() != mc.freq_bins) {
      throw Error(ErrorCode::ShapeMismatch,
                  f.id + ": features are " + std::to_string(f.n_peaks()) + " peaks x " + std::to_string(f.window_t()) +
                      " / " + std::to_string(f.freq_bins()) + " but the configuration expects " +
                      std::to_string(mc.n_peaks) + " x " + std::to_string(mc.window_t) + " / " +
                      std::to_string(mc.freq_bins));
    }
  }
}

std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(a)) {
        if (entry.path().extension() == ".pdck") found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw Error(ErrorCode::MissingCheckpoint, "no .pdck files in " + a);
      out.insert(out.end(), found.begin(), found.end());
    } else {
      if (!fs::exists(a)) throw Error(ErrorCode::MissingCheckpoint, a);
      out.emplace_back(a);
    }
  }
  if (out.empty()) throw Error(ErrorCode::MissingCheckpoint, "no checkpoints given");
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOptions& common, const std::string& out, std::size_t n, double fraction,
              std::optional<std::uint64_t> seed) {
  RunConfig cfg = resolve_config(common);
  if (seed) cfg.synth.seed = *seed;
  const auto manifest = synth::gen_dataset(n, fraction, cfg.synth, out);
  echo_config(fs::path(out) / "config.txt", cfg);
  std::cerr << "wrote " << manifest.entries.size() << " measurements (" << manifest.class_counts.at(1)
            << " PD, " << manifest.class_counts.at(0) << " clean) to " << out << "\n";
  return kExitOk;
}

int cmd_preprocess(const CommonOptions& common, const std::string& manifest_path, const std::string& out,
                   std::size_t jobs) {
  const RunConfig cfg = resolve_config(common);
  const auto manifest = load_manifest(manifest_path);
  ensure_dir(out);
  echo_config(fs::path(out) / "config.txt", cfg);

  struct Outcome {
    bool ok = false;
    std::size_t n_pos = 0, n_neg = 0;
    fs::path path;
    std::string message;
    int exit_code = kExitOk;
  };
  const auto& entries = manifest.entries;
  std::vector<Outcome> outcomes(entries.size());
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      auto& o = outcomes[i];
      const auto& e = entries[i];
      try {
        const auto raw = read_measurement(e.path, e);
        const auto features = preprocess::preprocess_measurement(raw, cfg.preprocess);
        o.path = fs::path(out) / (e.id + ".pdcf");
        write_features(o.path, features);
        o.ok = true;
        o.n_pos = features.n_real_pos;
        o.n_neg = features.n_real_neg;
      } catch (const Error& err) {
        o.message = err.what();
        o.exit_code = exit_code_for(err.code());
      } catch (const std::exception& err) {
        o.message = err.what();
        o.exit_code = 1;
      }
      const std::size_t count = ++done;
      std::lock_guard lock(log_mutex);
      std::cerr << "[" << count << "/" << entries.size() << "] " << e.id << (o.ok ? " ok" : " FAILED: " + o.message)
                << "\n";
    }
  };
  const std::size_t n_threads = worker_count(jobs, entries.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::ofstream log(fs::path(out) / "preprocess_log.csv", std::ios::trunc);
  if (!log) throw Error(ErrorCode::IoError, "cannot write preprocess_log.csv");
  log << "id,status,n_real_pos,n_real_neg,message\n";
  Manifest features;
  features.class_counts = {{0, 0}, {1, 0}};
  int status = kExitOk;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& o = outcomes[i];
    std::string msg = o.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    log << entries[i].id << ',' << (o.ok ? "ok" : "failed") << ',' << o.n_pos << ',' << o.n_neg << ',' << msg << '\n';
    if (o.ok) {
      features.entries.push_back({entries[i].id, o.path, entries[i].label});
      ++features.class_counts[entries[i].label];
    } else {
      ++failed;
      if (status == kExitOk) status = o.exit_code;
    }
  }
  write_manifest(fs::path(out) / "features.csv", features);
  std::cerr << features.entries.size() << " feature files written, " << failed << " failed\n";
  return status;
}

int cmd_train(const CommonOptions& common, const std::string& features_path, const std::string& out, std::size_t jobs) {
  const RunConfig cfg = resolve_config(common);
  const auto mc = cfg.model();
  model::compute_geometry(mc);
  const auto data = load_feature_set(features_path);
  check_feature_dims(data, mc);
  ensure_dir(out);
  echo_config(fs::path(out) / "config.txt", cfg);

  std::mutex log_mutex;
  auto on_epoch = [&](const training::FoldResult& fold, const training::EpochRecord& r) {
    std::lock_guard lock(log_mutex);
    std::fprintf(stderr, "fold %u epoch %zu/%zu  L_total %.6f  L_cls %.6f  L_c %.6f  val MCC %.4f\n", fold.fold,
                 r.epoch, cfg.train.epochs, r.l_total, r.l_cls, r.l_ct + r.l_cf, r.val_mcc);
  };
  const auto results = training::train_cross_validation(data, mc, cfg.train, out, cfg.to_text(),
                                                        worker_count(jobs, cfg.train.folds), on_epoch);
  for (const auto& r : results) {
    std::printf("fold %u: best val MCC %.4f at epoch %zu -> %s\n", r.fold, r.best_val_mcc, r.best_epoch,
                r.best_checkpoint.string().c_str());
  }
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& checkpoint_args, const std::string& features_path,
             const std::string& report_path, std::optional<double> threshold, const std::string& embeddings) {
  const auto checkpoints = expand_checkpoints(checkpoint_args);
  nn::Checkpoint first;
  training::load_model(checkpoints.front(), &first);
  RunConfig cfg = RunConfig::from_text(first.config_text);
  if (threshold) cfg.train.threshold = *threshold;
  if (!(cfg.train.threshold >= 0.0 && cfg.train.threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "threshold must lie in [0, 1]");
  }

  const auto data = load_feature_set(features_path);
  check_feature_dims(data, cfg.model());
  const auto report = training::evaluate(checkpoints, data, cfg.train.threshold);

  const fs::path report_file(report_path);
  if (report_file.has_parent_path()) ensure_dir(report_file.parent_path());
  {
    std::ofstream out(report_file, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + report_path);
    out << training::report_json(report);
  }
  auto echo = report_file;
  echo.replace_extension(".config.txt");
  echo_config(echo, cfg);

  if (!embeddings.empty()) {
    auto net = training::load_model(checkpoints.front());
    training::export_embeddings(net, data, embeddings);
  }
  const auto& e = report.ensemble;
  std::printf("MCC %.4f  TP %llu TN %llu FP %llu FN %llu  (%zu checkpoint(s), %zu measurements)\n", e.mcc,
              static_cast<unsigned long long>(e.counts.tp), static_cast<unsigned long long>(e.counts.tn),
              static_cast<unsigned long long>(e.counts.fp), static_cast<unsigned long long>(e.counts.fn),
              checkpoints.size(), data.size());
  return kExitOk;
}

int cmd_predict(const std::vector<std::string>& checkpoint_args, const std::string& measurement) {
  const auto checkpoints = expand_checkpoints(checkpoint_args);
  const fs::path path(measurement);
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, measurement);

  std::array<double, 6> heads{};
  std::array<int, 6> head_counts{};
  double p_final = 0.0;
  std::optional<MeasurementFeatures> features;
  for (const auto& c : checkpoints) {
    nn::Checkpoint meta;
    auto net = training::load_model(c, &meta);
    if (!features) {
      if (path.extension() == ".pdcf") {
        features = read_features(path);
      } else {
        const auto cfg = RunConfig::from_text(meta.config_text);
        ManifestEntry entry{path.stem().string(), path, 0};
        features = preprocess::preprocess_measurement(read_measurement(path, entry), cfg.preprocess);
      }
    }
    const auto h = training::predict_heads(net, std::span(&*features, 1)).front();
    const std::optional<double>* values[] = {&h.jp, &h.jn, &h.tp, &h.tn, &h.fp, &h.fn};
    for (std::size_t k = 0; k < 6; ++k) {
      if (*values[k]) {
        heads[k] += **values[k];
        ++head_counts[k];
      }
    }
    p_final += model::predict(h);
  }
  const char* names[] = {"p_jp", "p_jn", "p_tp", "p_tn", "p_fp", "p_fn"};
  for (std::size_t k = 0; k < 6; ++k) {
    if (head_counts[k] > 0) std::printf("%s %.6f\n", names[k], heads[k] / head_counts[k]);
    else std::printf("%s n/a\n", names[k]);
  }
  std::printf("p_final %.6f\n", p_final / static_cast<double>(checkpoints.size()));
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Partial-discharge detection with a dual-domain cycle-consistent network"};
  app.require_subcommand(1);

  CommonOptions synth_opts, pre_opts, train_opts;

  auto* synth_cmd = app.add_subcommand("synth", "generate a labelled synthetic dataset");
  std::string synth_out;
  std::size_t synth_n = 32;
  double synth_fraction = 0.5;
  std::optional<std::uint64_t> synth_seed;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--n", synth_n, "number of measurements");
  synth_cmd->add_option("--pd-fraction", synth_fraction, "fraction of PD measurements");
  synth_cmd->add_option("--seed", synth_seed, "dataset seed (overrides synth_seed)");
  add_config_options(synth_cmd, synth_opts);

  auto* pre_cmd = app.add_subcommand("preprocess", "turn raw measurements into feature files");
  std::string pre_manifest, pre_out;
  std::size_t pre_jobs = 1;
  pre_cmd->add_option("--manifest", pre_manifest, "measurement manifest (id,path,label)")->required();
  pre_cmd->add_option("--out", pre_out, "output directory")->required();
  pre_cmd->add_option("--jobs", pre_jobs, "worker threads (0 = all cores)");
  add_config_options(pre_cmd, pre_opts);

  auto* train_cmd = app.add_subcommand("train", "stratified k-fold training");
  std::string train_features, train_out;
  std::size_t train_jobs = 1;
  train_cmd->add_option("--features", train_features, "features.csv or the directory holding it")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--jobs", train_jobs, "folds trained concurrently (0 = all cores)");
  add_config_options(train_cmd, train_opts);

  auto* eval_cmd = app.add_subcommand("eval", "score fold-averaged predictions");
  std::vector<std::string> eval_ckpts;
  std::string eval_features, eval_report, eval_embeddings;
  std::optional<double> eval_threshold;
  eval_cmd->add_option("--checkpoints", eval_ckpts, "checkpoint files or directories")->required();
  eval_cmd->add_option("--features", eval_features, "features.csv or the directory holding it")->required();
  eval_cmd->add_option("--report", eval_report, "JSON report path")->required();
  eval_cmd->add_option("--threshold", eval_threshold, "decision threshold (default from checkpoint config)");
  eval_cmd->add_option("--embeddings", eval_embeddings, "also write pooled feature vectors of the first checkpoint");

  auto* predict_cmd = app.add_subcommand("predict", "classify one measurement or feature file");
  std::vector<std::string> predict_ckpts;
  std::string predict_measurement;
  predict_cmd->add_option("--checkpoints", predict_ckpts, "checkpoint files or directories")->required();
  predict_cmd->add_option("--measurement", predict_measurement, ".pdms, .csv or .pdcf file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth_opts, synth_out, synth_n, synth_fraction, synth_seed);
    if (*pre_cmd) return cmd_preprocess(pre_opts, pre_manifest, pre_out, pre_jobs);
    if (*train_cmd) return cmd_train(train_opts, train_features, train_out, train_jobs);
    if (*eval_cmd) return cmd_eval(eval_ckpts, eval_features, eval_report, eval_threshold, eval_embeddings);
    if (*predict_cmd) return cmd_predict(predict_ckpts, predict_measurement);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace pdcycon::cli
