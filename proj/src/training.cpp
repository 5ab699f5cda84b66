#include "pdcycon/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pdcycon/config.hpp"
#include "pdcycon/error.hpp"
#include "pdcycon/seed.hpp"

namespace pdcycon::training {

namespace {

// Stream indices for derive_seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStream = 1;

std::vector<const MeasurementFeatures*> gather(std::span<const MeasurementFeatures> data,
                                               std::span<const std::size_t> idx) {
  std::vector<const MeasurementFeatures*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&data[i]);
  return out;
}

double score_mcc(model::DualCyconNet& net, std::span<const MeasurementFeatures> data,
                 std::span<const std::size_t> idx, double threshold) {
  std::vector<MeasurementFeatures> subset;
  subset.reserve(idx.size());
  std::vector<int> labels;
  for (auto i : idx) {
    subset.push_back(data[i]);
    labels.push_back(data[i].label);
  }
  const auto probs = predict_probabilities(net, subset);
  return metrics::mcc(metrics::confusion(probs, labels, threshold));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json scores_json(const metrics::ClassScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

nlohmann::json report_to_json(const metrics::ClassificationReport& r) {
  return {{"confusion", {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}},
          {"mcc", r.mcc},
          {"pd", scores_json(r.pd)},
          {"non_pd", scores_json(r.non_pd)},
          {"overall", scores_json(r.overall)}};
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (folds < 2) fail("folds must be at least 2");
  if (!(lambda >= 0.0)) fail("lambda must be non-negative");
  if (!(threshold >= 0.0 && threshold <= 1.0)) fail("threshold must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  if (lr_schedule == LrSchedule::Constant) return lr;
  const double progress = static_cast<double>(epoch) / static_cast<double>(epochs);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidConfig, "k must be at least 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] != 0 ? pos : neg).push_back(i);
  if (pos.size() < k || neg.size() < k) {
    throw Error(ErrorCode::ClassTooSmall, std::to_string(pos.size()) + " positive and " + std::to_string(neg.size()) +
                                              " negative samples cannot fill " + std::to_string(k) + " folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);

  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < pos.size(); ++i) folds[i % k].push_back(pos[i]);
  const std::size_t offset = pos.size() % k;
  for (std::size_t i = 0; i < neg.size(); ++i) folds[(offset + i) % k].push_back(neg[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

Trainer::Trainer(const model::ModelConfig& mc, const TrainConfig& tc, std::uint64_t init_seed) : net_(mc), tc_(tc) {
  tc_.validate();
  net_.init(init_seed);
}

model::LossBreakdown Trainer::step(std::span<const MeasurementFeatures* const> batch, double lr) {
  const auto input = model::make_input(batch, net_.config());
  const auto out = net_.forward(input, true);
  auto losses = model::compute_losses(out, input.labels, tc_.lambda);
  if (!std::isfinite(losses.l_total)) {
    throw Error(ErrorCode::NumericFailure, "non-finite loss (L_cls " + fmt(losses.l_cls) + ", L_c " + fmt(losses.l_c) + ")");
  }
  auto params = net_.parameters();
  nn::zero_grads(params);
  losses.total.backward();
  for (const auto* p : params) {
    for (double g : p->value.grad()) {
      if (!std::isfinite(g)) throw Error(ErrorCode::NumericFailure, "non-finite gradient in " + p->name);
    }
  }
  nn::adam_step(params, {lr, tc_.beta1, tc_.beta2, tc_.adam_eps});
  return losses;
}

FoldResult train_fold(std::span<const MeasurementFeatures> data, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> val_idx, const model::ModelConfig& mc, const TrainConfig& tc,
                      const FoldSetup& setup) {
  tc.validate();
  if (train_idx.empty()) throw Error(ErrorCode::InvalidConfig, "fold has no training samples");
  {
    std::set<std::size_t> train_set(train_idx.begin(), train_idx.end());
    for (auto i : val_idx) {
      if (train_set.count(i)) {
        throw Error(ErrorCode::InvalidConfig, "sample " + std::to_string(i) + " is in both train and validation sets");
      }
    }
    for (auto i : train_set) {
      if (i >= data.size()) throw Error(ErrorCode::InvalidConfig, "sample index out of range");
    }
    for (auto i : val_idx) {
      if (i >= data.size()) throw Error(ErrorCode::InvalidConfig, "sample index out of range");
    }
  }

  FoldResult result;
  result.fold = setup.fold;
  const bool write = !setup.out_dir.empty();
  if (write) {
    std::error_code ec;
    std::filesystem::create_directories(setup.out_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + setup.out_dir.string() + ": " + ec.message());
    result.best_checkpoint = setup.out_dir / ("fold_" + std::to_string(setup.fold) + ".pdck");
    result.history_csv = setup.out_dir / ("history_fold_" + std::to_string(setup.fold) + ".csv");
  }

  Trainer trainer(mc, tc, derive_seed(derive_seed(tc.seed, setup.fold), kInitStream));
  std::mt19937_64 rng(derive_seed(derive_seed(tc.seed, setup.fold), kShuffleStream));
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  const std::span<const std::size_t> score_idx = val_idx.empty() ? train_idx : val_idx;
  double best = -std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = tc.lr_at(epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t len = std::min(tc.batch_size, order.size() - start);
      const auto batch = gather(data, std::span(order).subspan(start, len));
      model::LossBreakdown lb;
      try {
        lb = trainer.step(batch, lr);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NumericFailure) throw;
        throw Error(ErrorCode::NumericFailure, "fold " + std::to_string(setup.fold) + " epoch " +
                                                   std::to_string(epoch + 1) + ": " + e.what());
      }
      const double w = static_cast<double>(len);
      rec.l_cls += w * lb.l_cls;
      rec.l_ct += w * lb.l_ct;
      rec.l_cf += w * lb.l_cf;
      rec.l_total += w * lb.l_total;
    }
    const double n = static_cast<double>(order.size());
    rec.l_cls /= n;
    rec.l_ct /= n;
    rec.l_cf /= n;
    rec.l_total /= n;
    rec.val_mcc = score_mcc(trainer.net(), data, score_idx, tc.threshold);
    result.history.push_back(rec);

    if (rec.val_mcc > best) {
      best = rec.val_mcc;
      result.best_val_mcc = rec.val_mcc;
      result.best_epoch = rec.epoch;
      if (write) {
        nn::write_checkpoint(result.best_checkpoint,
                             make_checkpoint(trainer.net(), setup.fold, tc.seed, static_cast<std::uint32_t>(rec.epoch),
                                             rec.val_mcc, setup.config_text));
      }
    }
    if (write) write_history_csv(result.history_csv, result.history);
    if (setup.on_epoch) setup.on_epoch(result, rec);
    if (setup.should_stop && setup.should_stop(rec)) break;
  }
  if (!setup.final_checkpoint.empty() && !result.history.empty()) {
    const auto& last = result.history.back();
    nn::write_checkpoint(setup.final_checkpoint,
                         make_checkpoint(trainer.net(), setup.fold, tc.seed, static_cast<std::uint32_t>(last.epoch),
                                         last.val_mcc, setup.config_text));
  }
  return result;
}

std::vector<FoldResult> train_cross_validation(std::span<const MeasurementFeatures> data,
                                               const model::ModelConfig& mc, const TrainConfig& tc,
                                               const std::filesystem::path& out_dir, const std::string& config_text,
                                               std::size_t jobs,
                                               std::function<void(const FoldResult&, const EpochRecord&)> on_epoch) {
  tc.validate();
  std::vector<int> labels;
  for (const auto& d : data) labels.push_back(d.label);
  const auto folds = stratified_kfold(labels, tc.folds, tc.seed);

  {
    std::ofstream out(out_dir / "folds.csv");
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (out_dir / "folds.csv").string());
    out << "id,fold\n";
    for (std::size_t f = 0; f < folds.size(); ++f) {
      for (auto i : folds[f]) out << data[i].id << ',' << f << '\n';
    }
  }

  std::vector<FoldResult> results(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < folds.size(); f = next++) {
      try {
        std::vector<std::size_t> train_idx;
        for (std::size_t g = 0; g < folds.size(); ++g) {
          if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
        }
        std::sort(train_idx.begin(), train_idx.end());
        FoldSetup setup;
        setup.fold = static_cast<std::uint32_t>(f);
        setup.out_dir = out_dir;
        setup.config_text = config_text;
        setup.on_epoch = on_epoch;
        results[f] = train_fold(data, train_idx, folds[f], mc, tc, setup);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, folds.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "epoch,l_cls,l_ct,l_cf,l_total,val_mcc\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << fmt(r.l_cls) << ',' << fmt(r.l_ct) << ',' << fmt(r.l_cf) << ',' << fmt(r.l_total) << ','
        << fmt(r.val_mcc) << '\n';
  }
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,l_cls,l_ct,l_cf,l_total,val_mcc") throw Error(ErrorCode::MalformedRow, path.string() + ": header");
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char comma;
    std::istringstream ss(line);
    if (!(ss >> r.epoch >> comma >> r.l_cls >> comma >> r.l_ct >> comma >> r.l_cf >> comma >> r.l_total >> comma >>
          r.val_mcc)) {
      throw Error(ErrorCode::MalformedRow, path.string() + ": " + line);
    }
    out.push_back(r);
  }
  return out;
}

nn::Checkpoint make_checkpoint(const model::DualCyconNet& net, std::uint32_t fold, std::uint64_t seed,
                               std::uint32_t epoch, double metric, const std::string& config_text) {
  nn::Checkpoint c;
  c.fold = fold;
  c.seed = seed;
  c.epoch = epoch;
  c.metric = metric;
  c.config_text = config_text;
  for (const auto& p : net.params()) {
    nn::TensorBlob b;
    b.name = p.name;
    b.shape = p.value.shape();
    b.data.assign(p.value.data().begin(), p.value.data().end());
    b.m = p.m;
    b.v = p.v;
    b.step = p.step;
    c.blobs.push_back(std::move(b));
  }
  for (const auto& [name, state] : net.bn_states()) {
    const std::size_t ch = state.running_mean.size();
    c.blobs.push_back({name + ".running_mean", {ch}, state.running_mean, {}, {}, 0});
    c.blobs.push_back({name + ".running_var", {ch}, state.running_var, {}, {}, 0});
  }
  return c;
}

void restore(model::DualCyconNet& net, const nn::Checkpoint& ckpt) {
  auto fetch = [&](const std::string& name, std::size_t size) -> const nn::TensorBlob& {
    const auto* b = ckpt.find(name);
    if (!b) throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks " + name);
    if (b->data.size() != size) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint blob " + name + " has shape " + nn::shape_string(b->shape));
    }
    return *b;
  };
  for (auto& p : net.params()) {
    const auto& b = fetch(p.name, p.value.size());
    if (b.shape != p.value.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint blob " + p.name + " has shape " + nn::shape_string(b.shape) +
                                                ", model expects " + nn::shape_string(p.value.shape()));
    }
    std::copy(b.data.begin(), b.data.end(), p.value.data().begin());
    if (b.has_optimizer_state()) {
      p.m = b.m;
      p.v = b.v;
      p.step = b.step;
    }
    p.value.zero_grad();
  }
  for (auto& [name, state] : net.bn_states()) {
    const std::size_t ch = state.running_mean.size();
    state.running_mean = fetch(name + ".running_mean", ch).data;
    state.running_var = fetch(name + ".running_var", ch).data;
  }
}

model::DualCyconNet load_model(const std::filesystem::path& path, nn::Checkpoint* meta) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingCheckpoint, path.string());
  auto ckpt = nn::read_checkpoint(path);
  const auto cfg = RunConfig::from_text(ckpt.config_text);
  model::DualCyconNet net(cfg.model());
  restore(net, ckpt);
  if (meta) *meta = std::move(ckpt);
  return net;
}

std::vector<model::HeadProbabilities> predict_heads(model::DualCyconNet& net, std::span<const MeasurementFeatures> data,
                                                    std::size_t batch_size) {
  nn::NoGradGuard no_grad;
  std::vector<model::HeadProbabilities> out;
  out.reserve(data.size());
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, data.size() - start);
    std::vector<const MeasurementFeatures*> batch;
    for (std::size_t i = 0; i < len; ++i) batch.push_back(&data[start + i]);
    const auto fwd = net.forward(model::make_input(batch, net.config()), false);
    for (std::size_t b = 0; b < len; ++b) out.push_back(fwd.probabilities(b));
  }
  return out;
}

std::vector<double> predict_probabilities(model::DualCyconNet& net, std::span<const MeasurementFeatures> data,
                                          std::size_t batch_size) {
  std::vector<double> out;
  for (const auto& h : predict_heads(net, data, batch_size)) out.push_back(model::predict(h));
  return out;
}

EvalReport evaluate(std::span<const std::filesystem::path> checkpoints, std::span<const MeasurementFeatures> data,
                    double threshold) {
  if (checkpoints.empty()) throw Error(ErrorCode::MissingCheckpoint, "no checkpoints given");
  for (const auto& c : checkpoints) {
    if (!std::filesystem::exists(c)) throw Error(ErrorCode::MissingCheckpoint, c.string());
  }
  EvalReport report;
  report.threshold = threshold;
  for (const auto& d : data) {
    report.ids.push_back(d.id);
    report.labels.push_back(d.label);
  }
  std::vector<double> sum(data.size(), 0.0);
  for (const auto& c : checkpoints) {
    auto net = load_model(c);
    const auto probs = predict_probabilities(net, data);
    for (std::size_t i = 0; i < probs.size(); ++i) sum[i] += probs[i];
    report.checkpoints.push_back(c.string());
    report.per_checkpoint.push_back(metrics::classification_report(metrics::confusion(probs, report.labels, threshold)));
  }
  for (auto& s : sum) s /= static_cast<double>(checkpoints.size());
  report.probabilities = std::move(sum);
  report.ensemble = metrics::classification_report(metrics::confusion(report.probabilities, report.labels, threshold));
  return report;
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j = report_to_json(report.ensemble);
  j["threshold"] = report.threshold;
  j["n_measurements"] = report.ids.size();
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t i = 0; i < report.checkpoints.size(); ++i) {
    auto f = report_to_json(report.per_checkpoint[i]);
    f["checkpoint"] = report.checkpoints[i];
    folds.push_back(std::move(f));
  }
  j["folds"] = std::move(folds);
  nlohmann::json preds = nlohmann::json::array();
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    preds.push_back({{"id", report.ids[i]}, {"label", report.labels[i]}, {"p_final", report.probabilities[i]}});
  }
  j["predictions"] = std::move(preds);
  return j.dump(2) + "\n";
}

void export_embeddings(model::DualCyconNet& net, std::span<const MeasurementFeatures> data,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "id,label,vector,values...\n";
  nn::NoGradGuard no_grad;
  for (const auto& d : data) {
    const MeasurementFeatures* one[] = {&d};
    const auto fwd = net.forward(model::make_input(one, net.config()), false);
    const std::pair<const char*, const nn::Tensor*> vectors[] = {{"d_tp", &fwd.d_tp}, {"d_tn", &fwd.d_tn},
                                                                 {"d_fp", &fwd.d_fp}, {"d_fn", &fwd.d_fn},
                                                                 {"d_jp", &fwd.d_jp}, {"d_jn", &fwd.d_jn}};
    for (const auto& [name, t] : vectors) {
      if (!t->defined()) continue;
      out << d.id << ',' << d.label << ',' << name;
      for (double v : t->data()) out << ',' << fmt(v);
      out << '\n';
    }
  }
}

std::string to_string(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "cosine") return LrSchedule::Cosine;
  throw Error(ErrorCode::InvalidConfig, "lr_schedule must be constant or cosine (got '" + std::string(s) + "')");
}

}  // namespace pdcycon::training
