#include "pdcycon/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pdcycon/error.hpp"

namespace pdcycon::model {

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, const char* what) {
  if (in < k) {
    throw Error(ErrorCode::InputTooSmall, std::string(what) + ": extent " + std::to_string(in) +
                                              " is below kernel size " + std::to_string(k));
  }
  return (in - k) / s + 1;
}

std::array<std::size_t, 2> branch_out(std::size_t h, std::size_t w, const ModelConfig& cfg, const char* name) {
  for (int b = 0; b < 3; ++b) {
    const std::string what = std::string(name) + " block-" + std::to_string(b + 1);
    h = conv_out(h, cfg.kernel, cfg.stride, what.c_str());
    w = conv_out(w, cfg.kernel, cfg.stride, what.c_str());
  }
  return {h, w};
}

std::string block_prefix(bool time_domain, int block) {
  return std::string(time_domain ? "td" : "fd") + ".block" + std::to_string(block + 1);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (n_peaks == 0 || window_t == 0 || freq_bins == 0) fail("input dimensions must be positive");
  for (auto f : filters) {
    if (f == 0) fail("filter counts must be positive");
  }
  if (joint_filters == 0) fail("joint_filters must be positive");
  if (kernel == 0 || stride == 0 || joint_kernel == 0 || joint_stride == 0) fail("kernel and stride must be positive");
  if (!(se_ratio > 0.0) || se_ratio > 1.0) fail("se_ratio must lie in (0, 1]");
}

ModelGeometry compute_geometry(const ModelConfig& cfg) {
  cfg.validate();
  ModelGeometry g;
  const std::size_t c = cfg.filters[2];
  std::array<std::size_t, 2> td{0, 0}, fd{0, 0};
  if (cfg.uses_time()) {
    td = branch_out(cfg.window_t, cfg.n_peaks, cfg, "time branch");
    g.td_block3 = {c, td[0], td[1]};
  }
  if (cfg.uses_freq()) {
    fd = branch_out(cfg.freq_bins, cfg.n_peaks, cfg, "frequency branch");
    g.fd_block3 = {c, fd[0], fd[1]};
  }
  if (!cfg.uses_joint()) return g;

  const std::size_t n = td[1];
  const std::size_t z = td[0] + fd[0];
  g.joint_input = {c, z, n};
  g.joint_out = {cfg.joint_filters, conv_out(z, cfg.joint_kernel, cfg.joint_stride, "joint conv"),
                 conv_out(n, cfg.joint_kernel, cfg.joint_stride, "joint conv")};

  auto bottleneck = [&](std::size_t width) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(width) * cfg.se_ratio)));
  };
  switch (cfg.attention) {
    case AttentionAxis::None:
      break;
    case AttentionAxis::Peak:
      g.se_input = 2 * n;
      g.se_output = n;
      g.se_hidden = bottleneck(n);
      break;
    case AttentionAxis::Channel:
      g.se_input = 2 * c;
      g.se_output = c;
      g.se_hidden = bottleneck(c);
      break;
    case AttentionAxis::Feature:
      g.se_input = z;
      g.se_output = z;
      g.se_hidden = bottleneck(z);
      break;
  }
  return g;
}

ModelInput make_input(std::span<const MeasurementFeatures* const> batch, const ModelConfig& cfg) {
  if (batch.empty()) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  const std::size_t b_count = batch.size();
  const std::size_t np = cfg.n_peaks, wt = cfg.window_t, fb = cfg.freq_bins;
  ModelInput in;
  in.batch = b_count;
  std::vector<double> td(2 * b_count * wt * np), fd(2 * b_count * fb * np);

  // Features are stored peak-major (N_p x H); the network sees H x N_p.
  auto place = [np](std::vector<double>& dst, std::size_t item, std::size_t h_extent, const Matrix<float>& m) {
    double* out = dst.data() + item * h_extent * np;
    for (std::size_t n = 0; n < np; ++n) {
      for (std::size_t h = 0; h < h_extent; ++h) out[h * np + n] = m(n, h);
    }
  };

  for (std::size_t b = 0; b < b_count; ++b) {
    const auto& f = *batch[b];
    auto check = [&](const Matrix<float>& m, std::size_t cols, const char* name) {
      if (m.rows != np || m.cols != cols) {
        throw Error(ErrorCode::ShapeMismatch, f.id + ": " + name + " is " + std::to_string(m.rows) + "x" +
                                                  std::to_string(m.cols) + ", model expects " + std::to_string(np) +
                                                  "x" + std::to_string(cols));
      }
    };
    check(f.td_pos, wt, "td_pos");
    check(f.td_neg, wt, "td_neg");
    check(f.fd_pos, fb, "fd_pos");
    check(f.fd_neg, fb, "fd_neg");
    place(td, b, wt, f.td_pos);
    place(td, b_count + b, wt, f.td_neg);
    place(fd, b, fb, f.fd_pos);
    place(fd, b_count + b, fb, f.fd_neg);
    in.labels.push_back(static_cast<double>(f.label));
  }
  in.td = Tensor::from({2 * b_count, 1, wt, np}, std::move(td));
  in.fd = Tensor::from({2 * b_count, 1, fb, np}, std::move(fd));
  return in;
}

double predict(const HeadProbabilities& p) {
  // Pairs are summed first so that exchanging the half-cycles cannot change
  // the result through rounding.
  double total = 0.0;
  int count = 0;
  auto pair = [&](const std::optional<double>& a, const std::optional<double>& b) {
    if (a && b) {
      total += *a + *b;
      count += 2;
    } else if (a || b) {
      total += a ? *a : *b;
      count += 1;
    }
  };
  pair(p.jp, p.jn);
  pair(p.tp, p.tn);
  pair(p.fp, p.fn);
  if (count == 0) throw Error(ErrorCode::ShapeMismatch, "no head probabilities available");
  return total / count;
}

HeadProbabilities ForwardOutputs::probabilities(std::size_t b) const {
  auto prob = [b](const Tensor& logit) -> std::optional<double> {
    if (!logit.defined()) return std::nullopt;
    return 1.0 / (1.0 + std::exp(-logit.data()[b]));
  };
  return {prob(logit_jp), prob(logit_jn), prob(logit_tp), prob(logit_tn), prob(logit_fp), prob(logit_fn)};
}

LossBreakdown compute_losses(const ForwardOutputs& out, std::span<const double> labels, double lambda) {
  if (labels.size() != out.batch) {
    throw Error(ErrorCode::LengthMismatch, "label count " + std::to_string(labels.size()) + " vs batch " +
                                               std::to_string(out.batch));
  }
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be non-negative");

  LossBreakdown lb;
  lb.lambda = lambda;
  Tensor cls;
  for (const Tensor* logit : {&out.logit_jp, &out.logit_jn, &out.logit_tp, &out.logit_tn, &out.logit_fp, &out.logit_fn}) {
    if (!logit->defined()) continue;
    Tensor term = nn::bce_with_logits(*logit, labels);
    cls = cls.defined() ? nn::add(cls, term) : term;
  }
  lb.l_cls = cls.item();

  Tensor consistency;
  if (out.x_tpg.defined()) {
    Tensor ct = nn::bidirectional_kl(nn::sigmoid(out.x_tpg), nn::sigmoid(out.x_tng));
    lb.l_ct = ct.item();
    consistency = ct;
  }
  if (out.x_fpg.defined()) {
    Tensor cf = nn::bidirectional_kl(nn::sigmoid(out.x_fpg), nn::sigmoid(out.x_fng));
    lb.l_cf = cf.item();
    consistency = consistency.defined() ? nn::add(consistency, cf) : cf;
  }
  lb.l_c = lb.l_ct + lb.l_cf;

  if (lambda == 0.0 || !consistency.defined()) {
    lb.total = cls;
  } else {
    lb.total = nn::add(cls, nn::mul_scalar(consistency, lambda));
  }
  lb.l_total = lb.total.item();
  return lb;
}

DualCyconNet::DualCyconNet(ModelConfig cfg) : cfg_(std::move(cfg)), geometry_(compute_geometry(cfg_)) {
  const auto& f = cfg_.filters;
  const std::size_t k = cfg_.kernel;
  for (bool time_domain : {true, false}) {
    if (time_domain ? !cfg_.uses_time() : !cfg_.uses_freq()) continue;
    std::size_t in_ch = 1;
    for (int b = 0; b < 3; ++b) {
      const std::string pre = block_prefix(time_domain, b);
      add_param(pre + ".conv.weight", {f[b], in_ch, k, k});
      add_param(pre + ".conv.bias", {f[b]});
      add_param(pre + ".bn.gamma", {f[b]});
      add_param(pre + ".bn.beta", {f[b]});
      bn_.emplace_back(pre + ".bn", nn::BatchNormState(f[b]));
      in_ch = f[b];
    }
    const std::string head = time_domain ? "head_td" : "head_fd";
    add_param(head + ".weight", {1, f[2]});
    add_param(head + ".bias", {1});
  }
  if (cfg_.uses_joint()) {
    const auto& g = geometry_;
    if (cfg_.attention != AttentionAxis::None) {
      add_param("ddam.fc1.weight", {g.se_hidden, g.se_input});
      add_param("ddam.fc1.bias", {g.se_hidden});
      add_param("ddam.fc2.weight", {g.se_output, g.se_hidden});
      add_param("ddam.fc2.bias", {g.se_output});
    }
    add_param("ddam.joint_conv.weight", {cfg_.joint_filters, f[2], cfg_.joint_kernel, cfg_.joint_kernel});
    add_param("ddam.joint_conv.bias", {cfg_.joint_filters});
    add_param("ddam.joint_fc.weight", {1, cfg_.joint_filters});
    add_param("ddam.joint_fc.bias", {1});
  }
  init(0);
}

void DualCyconNet::add_param(const std::string& name, Shape shape) {
  index_.emplace(name, params_.size());
  params_.emplace_back(name, Tensor::zeros(std::move(shape), true));
}

nn::Param& DualCyconNet::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::ShapeMismatch, "unknown parameter " + name);
  return params_[it->second];
}

const nn::Param& DualCyconNet::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::ShapeMismatch, "unknown parameter " + name);
  return params_[it->second];
}

nn::BatchNormState& DualCyconNet::bn(const std::string& name) {
  for (auto& [n, state] : bn_) {
    if (n == name) return state;
  }
  throw Error(ErrorCode::ShapeMismatch, "unknown batch-norm layer " + name);
}

std::vector<nn::Param*> DualCyconNet::parameters() {
  std::vector<nn::Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

void DualCyconNet::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& p : params_) {
    auto data = p.value.data();
    if (ends_with(p.name, ".weight")) {
      const auto& shape = p.value.shape();
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : data) v = dist(rng);
    } else if (ends_with(p.name, ".gamma")) {
      std::fill(data.begin(), data.end(), 1.0);
    } else {
      std::fill(data.begin(), data.end(), 0.0);
    }
    p.value.zero_grad();
    std::fill(p.m.begin(), p.m.end(), 0.0);
    std::fill(p.v.begin(), p.v.end(), 0.0);
    p.step = 0;
  }
  for (auto& [name, state] : bn_) state = nn::BatchNormState(state.running_mean.size());
}

Tensor DualCyconNet::branch_forward(bool time_domain, const Tensor& x, bool train) {
  const std::size_t expected_h = time_domain ? cfg_.window_t : cfg_.freq_bins;
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != expected_h || x.dim(3) != cfg_.n_peaks) {
    throw Error(ErrorCode::ShapeMismatch, std::string(time_domain ? "time" : "frequency") + " branch input " +
                                              nn::shape_string(x.shape()));
  }
  Tensor h = x;
  for (int b = 0; b < 3; ++b) {
    const std::string pre = block_prefix(time_domain, b);
    h = nn::conv2d(h, p(pre + ".conv.weight"), p(pre + ".conv.bias"), cfg_.stride);
    auto& state = bn(pre + ".bn");
    if (cfg_.block_order == BlockOrder::ConvReluBn) {
      h = nn::relu(h);
      h = nn::batchnorm2d(h, p(pre + ".bn.gamma"), p(pre + ".bn.beta"), state, train);
    } else {
      h = nn::batchnorm2d(h, p(pre + ".bn.gamma"), p(pre + ".bn.beta"), state, train);
      h = nn::relu(h);
    }
  }
  return h;
}

JointOutputs DualCyconNet::ddam_forward(const Tensor& x_t, const Tensor& x_f) {
  if (!cfg_.uses_joint()) throw Error(ErrorCode::InvalidConfig, "architecture has no joint module");
  if (x_t.rank() != 4 || x_f.rank() != 4 || x_t.dim(0) != x_f.dim(0) || x_t.dim(1) != x_f.dim(1)) {
    throw Error(ErrorCode::ShapeMismatch, "joint inputs " + nn::shape_string(x_t.shape()) + " and " +
                                              nn::shape_string(x_f.shape()));
  }
  if (x_t.dim(3) != x_f.dim(3)) {
    throw Error(ErrorCode::PeakAxisMismatch, "time maps have " + std::to_string(x_t.dim(3)) +
                                                 " peaks, frequency maps " + std::to_string(x_f.dim(3)));
  }

  JointOutputs out;
  Tensor a_t = x_t, a_f = x_f;
  if (cfg_.attention != AttentionAxis::None) {
    // Squeeze: average over the two axes other than the attended one.
    std::vector<std::size_t> squeeze_axes;
    std::size_t axis = 3;
    switch (cfg_.attention) {
      case AttentionAxis::Peak: squeeze_axes = {1, 2}; axis = 3; break;
      case AttentionAxis::Channel: squeeze_axes = {2, 3}; axis = 1; break;
      case AttentionAxis::Feature: squeeze_axes = {1, 3}; axis = 2; break;
      case AttentionAxis::None: break;
    }
    Tensor z = nn::concat({nn::global_avg_pool(x_t, squeeze_axes), nn::global_avg_pool(x_f, squeeze_axes)}, 1);
    Tensor h = nn::relu(nn::fully_connected(z, p("ddam.fc1.weight"), p("ddam.fc1.bias")));
    Tensor u = nn::sigmoid(nn::fully_connected(h, p("ddam.fc2.weight"), p("ddam.fc2.bias")));
    out.u = u;
    if (cfg_.attention == AttentionAxis::Feature) {
      const std::size_t zt = x_t.dim(2), zf = x_f.dim(2);
      a_t = nn::scale_along_axis(x_t, nn::narrow(u, 1, 0, zt), axis);
      a_f = nn::scale_along_axis(x_f, nn::narrow(u, 1, zt, zf), axis);
    } else {
      a_t = nn::scale_along_axis(x_t, u, axis);
      a_f = nn::scale_along_axis(x_f, u, axis);
    }
  }
  Tensor joint = nn::concat({a_t, a_f}, 2);
  out.joint = nn::conv2d(joint, p("ddam.joint_conv.weight"), p("ddam.joint_conv.bias"), cfg_.joint_stride);
  out.pooled = nn::global_avg_pool(out.joint, {2, 3});
  out.logits = nn::fully_connected(out.pooled, p("ddam.joint_fc.weight"), p("ddam.joint_fc.bias"));
  return out;
}

ForwardOutputs DualCyconNet::forward(const ModelInput& input, bool train) {
  const std::size_t b = input.batch;
  ForwardOutputs out;
  out.batch = b;

  auto split = [b](const Tensor& t, Tensor& pos, Tensor& neg) {
    pos = nn::narrow(t, 0, 0, b);
    neg = nn::narrow(t, 0, b, b);
  };

  Tensor td_maps, fd_maps;
  if (cfg_.uses_time()) {
    td_maps = branch_forward(true, input.td, train);
    split(td_maps, out.x_tpg, out.x_tng);
    Tensor d = nn::global_avg_pool(td_maps, {2, 3});
    split(d, out.d_tp, out.d_tn);
    split(nn::fully_connected(d, p("head_td.weight"), p("head_td.bias")), out.logit_tp, out.logit_tn);
  }
  if (cfg_.uses_freq()) {
    fd_maps = branch_forward(false, input.fd, train);
    split(fd_maps, out.x_fpg, out.x_fng);
    Tensor d = nn::global_avg_pool(fd_maps, {2, 3});
    split(d, out.d_fp, out.d_fn);
    split(nn::fully_connected(d, p("head_fd.weight"), p("head_fd.bias")), out.logit_fp, out.logit_fn);
  }
  if (cfg_.uses_joint()) {
    // The joint module has no batch statistics, so both half-cycles can share
    // one pass.
    JointOutputs j = ddam_forward(td_maps, fd_maps);
    split(j.logits, out.logit_jp, out.logit_jn);
    split(j.pooled, out.d_jp, out.d_jn);
    if (j.u.defined()) split(j.u, out.u_pos, out.u_neg);
  }
  return out;
}

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::Dual: return "dual";
    case Architecture::TimeOnly: return "td";
    case Architecture::FreqOnly: return "fd";
  }
  return "?";
}

std::string to_string(AttentionAxis a) {
  switch (a) {
    case AttentionAxis::None: return "none";
    case AttentionAxis::Channel: return "channel";
    case AttentionAxis::Feature: return "feature";
    case AttentionAxis::Peak: return "peak";
  }
  return "?";
}

std::string to_string(BlockOrder o) {
  return o == BlockOrder::ConvReluBn ? "conv_relu_bn" : "conv_bn_relu";
}

Architecture parse_architecture(std::string_view s) {
  if (s == "dual") return Architecture::Dual;
  if (s == "td") return Architecture::TimeOnly;
  if (s == "fd") return Architecture::FreqOnly;
  throw Error(ErrorCode::InvalidConfig, "architecture must be dual, td or fd (got '" + std::string(s) + "')");
}

AttentionAxis parse_attention(std::string_view s) {
  if (s == "none") return AttentionAxis::None;
  if (s == "channel") return AttentionAxis::Channel;
  if (s == "feature") return AttentionAxis::Feature;
  if (s == "peak") return AttentionAxis::Peak;
  throw Error(ErrorCode::InvalidConfig, "attention must be none, channel, feature or peak (got '" +
                                            std::string(s) + "')");
}

BlockOrder parse_block_order(std::string_view s) {
  if (s == "conv_relu_bn") return BlockOrder::ConvReluBn;
  if (s == "conv_bn_relu") return BlockOrder::ConvBnRelu;
  throw Error(ErrorCode::InvalidConfig, "block_order must be conv_relu_bn or conv_bn_relu (got '" +
                                            std::string(s) + "')");
}

}  // namespace pdcycon::model
