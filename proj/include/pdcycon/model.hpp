#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdcycon/optim.hpp"
#include "pdcycon/signal_io.hpp"
#include "pdcycon/tensor.hpp"

namespace pdcycon::model {

using nn::Shape;
using nn::Tensor;

/// Which branches take part. TimeOnly / FreqOnly drop the other branch and
/// the attention module; predictions then come from that branch's two heads.
enum class Architecture { Dual, TimeOnly, FreqOnly };

/// Axis the squeeze-and-excitation attention acts on inside the joint module.
enum class AttentionAxis { None, Channel, Feature, Peak };

enum class BlockOrder { ConvReluBn, ConvBnRelu };

struct ModelConfig {
  // Input geometry.
  std::size_t n_peaks = 257;
  std::size_t window_t = 128;
  std::size_t freq_bins = 257;

  std::array<std::size_t, 3> filters{8, 16, 32};
  std::size_t joint_filters = 64;  // D
  std::size_t kernel = 7;
  std::size_t stride = 2;
  std::size_t joint_kernel = 7;
  std::size_t joint_stride = 2;
  double se_ratio = 0.25;

  Architecture architecture = Architecture::Dual;
  AttentionAxis attention = AttentionAxis::Peak;
  BlockOrder block_order = BlockOrder::ConvReluBn;

  void validate() const;
  bool uses_time() const { return architecture != Architecture::FreqOnly; }
  bool uses_freq() const { return architecture != Architecture::TimeOnly; }
  bool uses_joint() const { return architecture == Architecture::Dual; }
};

/// Per-sample tensor shapes implied by a config; computed (and checked) when
/// the model is built.
struct ModelGeometry {
  Shape td_block3;  // [C, Z_t, N]
  Shape fd_block3;  // [C, Z_f, N]
  Shape joint_input;  // [C, Z_t + Z_f, N]
  Shape joint_out;  // [D, h, w]
  std::size_t se_input = 0;
  std::size_t se_hidden = 0;
  std::size_t se_output = 0;
};

/// Throws InputTooSmall when any block would see a spatial extent below its
/// kernel size.
ModelGeometry compute_geometry(const ModelConfig& cfg);

/// A batch of B measurements laid out for the shared branches: the first B
/// items are positive half-cycles, the next B negative ones.
struct ModelInput {
  std::size_t batch = 0;
  Tensor td;  // [2B, 1, w_t, N_p]
  Tensor fd;  // [2B, 1, F, N_p]
  std::vector<double> labels;
};

ModelInput make_input(std::span<const MeasurementFeatures* const> batch, const ModelConfig& cfg);

/// Six head probabilities of one measurement; heads that the architecture
/// does not have are empty.
struct HeadProbabilities {
  std::optional<double> jp, jn, tp, tn, fp, fn;
};

/// Mean of the available head probabilities.
double predict(const HeadProbabilities& p);

struct ForwardOutputs {
  std::size_t batch = 0;
  // Logits [B, 1]; undefined for heads the architecture lacks.
  Tensor logit_jp, logit_jn, logit_tp, logit_tn, logit_fp, logit_fn;
  // Block-3 maps [B, C, Z, N].
  Tensor x_tpg, x_tng, x_fpg, x_fng;
  // Pooled vectors feeding the heads ([B, C]) and the joint FC ([B, D]).
  Tensor d_tp, d_tn, d_fp, d_fn, d_jp, d_jn;
  // Attention vectors of the joint module, [B, n_axis].
  Tensor u_pos, u_neg;

  HeadProbabilities probabilities(std::size_t b) const;
};

struct LossBreakdown {
  Tensor total;  // differentiable L_total
  double l_cls = 0.0;
  double l_ct = 0.0;
  double l_cf = 0.0;
  double l_c = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
};

/// L_cls = sum of the per-head binary cross-entropies (each averaged over the
/// batch), L_c = L_ct + L_cf from the bidirectional KL between sigmoid block-3
/// maps of the two half-cycles, L_total = L_cls + lambda L_c.
LossBreakdown compute_losses(const ForwardOutputs& out, std::span<const double> labels, double lambda);

/// Result of the joint attention module for a batch.
struct JointOutputs {
  Tensor logits;  // [B, 1]
  Tensor pooled;  // [B, D]
  Tensor u;       // attention vector(s), [B, n]; undefined for AttentionAxis::None
  Tensor joint;   // joint conv output [B, D, h, w]
};

class DualCyconNet {
 public:
  explicit DualCyconNet(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const ModelGeometry& geometry() const { return geometry_; }

  /// Uniform +-sqrt(6 / fan_in) for conv and FC weights, zero biases,
  /// gamma = 1, beta = 0. Running statistics reset.
  void init(std::uint64_t seed);

  /// x [B, 1, H, N_p] -> block-3 map [B, C, Z, N].
  Tensor branch_forward(bool time_domain, const Tensor& x, bool train);
  JointOutputs ddam_forward(const Tensor& x_t, const Tensor& x_f);
  ForwardOutputs forward(const ModelInput& input, bool train);

  std::vector<nn::Param*> parameters();
  nn::Param& param(const std::string& name);
  const nn::Param& param(const std::string& name) const;
  std::vector<nn::Param>& params() { return params_; }
  const std::vector<nn::Param>& params() const { return params_; }

  std::vector<std::pair<std::string, nn::BatchNormState>>& bn_states() { return bn_; }
  const std::vector<std::pair<std::string, nn::BatchNormState>>& bn_states() const { return bn_; }

 private:
  void add_param(const std::string& name, Shape shape);
  nn::BatchNormState& bn(const std::string& name);
  Tensor& p(const std::string& name) { return param(name).value; }

  ModelConfig cfg_;
  ModelGeometry geometry_;
  std::vector<nn::Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, nn::BatchNormState>> bn_;
};

std::string to_string(Architecture a);
std::string to_string(AttentionAxis a);
std::string to_string(BlockOrder o);
Architecture parse_architecture(std::string_view s);
AttentionAxis parse_attention(std::string_view s);
BlockOrder parse_block_order(std::string_view s);

}  // namespace pdcycon::model
