#include "pdcycon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pdcycon/error.hpp"

namespace pdcycon::nn {

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + detail);
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
bool inside_clamp(double p) { return p > kProbClamp && p < 1.0 - kProbClamp; }

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

}  // namespace

std::size_t shape_size(const Shape& shape) { return prod(shape, 0, shape.size()); }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    shape_error("Tensor::from", shape_string(shape) + " with " + std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->data.size(), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) shape_error("item", "tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->data[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool track = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const Tensor& p) { return p.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() {
  if (size() != 1) shape_error("backward", "root must be a scalar, got " + shape_string(shape()));
  if (!requires_grad()) return;

  // Post-order DFS gives parents before children.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) n->adjoint.assign(n->data.size(), 0.0);
  node_->adjoint[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  for (auto* n : order) {
    if (n->is_leaf()) {
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->adjoint[i];
    }
    std::vector<double>().swap(n->adjoint);
  }
}

// ---------------------------------------------------------------------------

namespace {

// Adjoint buffer of parent i, or nullptr when it needs no gradient.
double* parent_adjoint(detail::Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.adjoint.data() : nullptr;
}

const std::vector<double>& parent_data(detail::Node& self, std::size_t i) { return self.parents[i]->data; }

// Row (c, kh, kw) of the result holds the input samples that kernel tap
// meets at every output position.
void im2col(const double* in, std::size_t C, std::size_t H, std::size_t W, std::size_t K, std::size_t stride,
            std::size_t OH, std::size_t OW, double* col) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t kh = 0; kh < K; ++kh) {
      for (std::size_t kw = 0; kw < K; ++kw) {
        double* dst = col + ((c * K + kh) * K + kw) * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const double* src = in + (c * H + oh * stride + kh) * W + kw;
          for (std::size_t ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = src[ow * stride];
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t C, std::size_t H, std::size_t W, std::size_t K, std::size_t stride,
                std::size_t OH, std::size_t OW, double* out) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t kh = 0; kh < K; ++kh) {
      for (std::size_t kw = 0; kw < K; ++kw) {
        const double* src = col + ((c * K + kh) * K + kw) * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          double* dst = out + (c * H + oh * stride + kh) * W + kw;
          for (std::size_t ow = 0; ow < OW; ++ow) dst[ow * stride] += src[oh * OW + ow];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
    shape_error("conv2d", "expected x [B,C,H,W], weight [O,C,K,K], bias [O]");
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != C || weight.dim(3) != K || bias.dim(0) != O) {
    shape_error("conv2d", "x " + shape_string(x.shape()) + ", weight " + shape_string(weight.shape()) +
                              ", bias " + shape_string(bias.shape()));
  }
  if (stride < 1) shape_error("conv2d", "stride must be >= 1");
  if (H < K || W < K) {
    throw Error(ErrorCode::InputTooSmall, "conv2d input " + shape_string(x.shape()) + " smaller than kernel " +
                                              std::to_string(K) + "x" + std::to_string(K));
  }
  const std::size_t OH = (H - K) / stride + 1;
  const std::size_t OW = (W - K) / stride + 1;

  const std::size_t R = C * K * K;  // rows of the unrolled input
  const std::size_t P = OH * OW;    // output positions

  std::vector<double> out(B * O * P);
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  std::vector<double> col(R * P);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(xd.data() + b * C * H * W, C, H, W, K, stride, OH, OW, col.data());
    for (std::size_t o = 0; o < O; ++o) {
      double* plane = out.data() + (b * O + o) * P;
      std::fill(plane, plane + P, bd[o]);
      const double* wrow = wd.data() + o * R;
      for (std::size_t r = 0; r < R; ++r) {
        const double wv = wrow[r];
        const double* crow = col.data() + r * P;
        for (std::size_t i = 0; i < P; ++i) plane[i] += wv * crow[i];
      }
    }
  }

  return Tensor::make_result(
      {B, O, OH, OW}, std::move(out), {x, weight, bias},
      [=](detail::Node& self) {
        const auto& xv = parent_data(self, 0);
        const auto& wv = parent_data(self, 1);
        double* dx = parent_adjoint(self, 0);
        double* dw = parent_adjoint(self, 1);
        double* db = parent_adjoint(self, 2);
        const double* dy = self.adjoint.data();
        std::vector<double> cols(dw ? R * P : 0);
        std::vector<double> dcol(dx ? R * P : 0);
        for (std::size_t b = 0; b < B; ++b) {
          const double* gy = dy + b * O * P;
          if (db) {
            for (std::size_t o = 0; o < O; ++o) {
              double acc = 0.0;
              for (std::size_t i = 0; i < P; ++i) acc += gy[o * P + i];
              db[o] += acc;
            }
          }
          if (dw) {
            im2col(xv.data() + b * C * H * W, C, H, W, K, stride, OH, OW, cols.data());
            for (std::size_t o = 0; o < O; ++o) {
              const double* g = gy + o * P;
              double* dwrow = dw + o * R;
              for (std::size_t r = 0; r < R; ++r) {
                const double* crow = cols.data() + r * P;
                double acc = 0.0;
                for (std::size_t i = 0; i < P; ++i) acc += g[i] * crow[i];
                dwrow[r] += acc;
              }
            }
          }
          if (dx) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            for (std::size_t o = 0; o < O; ++o) {
              const double* g = gy + o * P;
              const double* wrow = wv.data() + o * R;
              for (std::size_t r = 0; r < R; ++r) {
                const double wval = wrow[r];
                double* drow = dcol.data() + r * P;
                for (std::size_t i = 0; i < P; ++i) drow[i] += wval * g[i];
              }
            }
            col2im_add(dcol.data(), C, H, W, K, stride, OH, OW, dx + b * C * H * W);
          }
        }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train) {
  if (x.rank() != 4) shape_error("batchnorm2d", "expected [B,C,H,W], got " + shape_string(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C || state.running_mean.size() != C) {
    shape_error("batchnorm2d", "parameter size does not match " + std::to_string(C) + " channels");
  }
  const std::size_t n = B * HW;
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();

  std::vector<double> inv_std(C);
  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (train) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xd.data() + (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xd.data() + (b * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      var = ss / static_cast<double>(n);
      const double unbiased = n > 1 ? ss / static_cast<double>(n - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + state.eps);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double h = (xd[off + i] - mu) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gd[c] * h + bd[c];
      }
    }
  }

  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [B, C, HW, n, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::Node& self) {
        const auto& gv = parent_data(self, 1);
        double* dx = parent_adjoint(self, 0);
        double* dgamma = parent_adjoint(self, 1);
        double* dbeta = parent_adjoint(self, 2);
        const double* dy = self.adjoint.data();
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += dy[off + i] * xhat[off + i];
            }
          }
          if (dgamma) dgamma[c] += sum_dy_xhat;
          if (dbeta) dbeta[c] += sum_dy;
          if (!dx) continue;
          const double scale = gv[c] * inv_std[c];
          const double mean_dy = sum_dy / static_cast<double>(n);
          const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(n);
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              dx[off + i] += train ? scale * (dy[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat)
                                   : scale * dy[off + i];
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& xv = parent_data(self, 0);
    double* dx = parent_adjoint(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += self.adjoint[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xd[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    double* dx = parent_adjoint(self, 0);
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      const double s = self.data[i];
      dx[i] += self.adjoint[i] * s * (1.0 - s);
    }
  });
}

Tensor global_avg_pool(const Tensor& x, std::vector<std::size_t> axes) {
  const auto& shape = x.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (auto a : axes) {
    if (a >= shape.size()) shape_error("global_avg_pool", "axis out of range for " + shape_string(shape));
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) count *= shape[i];
    else out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Flat input index -> flat output index.
  std::vector<std::size_t> target(x.size());
  {
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < shape.size(); ++d) {
        if (!reduced[d]) o = o * shape[d] + idx[d];
      }
      target[flat] = o;
      for (std::size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  }

  std::vector<double> out(shape_size(out_shape), 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) out[target[i]] += xd[i];
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& v : out) v *= inv;

  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [target = std::move(target), inv](detail::Node& self) {
                               double* dx = parent_adjoint(self, 0);
                               for (std::size_t i = 0; i < target.size(); ++i) dx[i] += self.adjoint[target[i]] * inv;
                             });
}

Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    shape_error("fully_connected", "x " + shape_string(x.shape()) + ", weight " + shape_string(weight.shape()) +
                                       ", bias " + shape_string(bias.shape()));
  }
  const std::size_t B = x.dim(0), In = x.dim(1), Out = weight.dim(0);
  std::vector<double> out(B * Out);
  const auto xd = x.data();
  const auto wd = weight.data();
  const auto bd = bias.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < Out; ++o) {
      double acc = bd[o];
      for (std::size_t i = 0; i < In; ++i) acc += wd[o * In + i] * xd[b * In + i];
      out[b * Out + o] = acc;
    }
  }
  return Tensor::make_result({B, Out}, std::move(out), {x, weight, bias}, [B, In, Out](detail::Node& self) {
    const auto& xv = parent_data(self, 0);
    const auto& wv = parent_data(self, 1);
    double* dx = parent_adjoint(self, 0);
    double* dw = parent_adjoint(self, 1);
    double* db = parent_adjoint(self, 2);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < Out; ++o) {
        const double g = self.adjoint[b * Out + o];
        if (db) db[o] += g;
        for (std::size_t i = 0; i < In; ++i) {
          if (dw) dw[o * In + i] += g * xv[b * In + i];
          if (dx) dx[b * In + i] += g * wv[o * In + i];
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) shape_error("concat", "no inputs");
  const auto& first = xs.front().shape();
  if (axis >= first.size()) shape_error("concat", "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& t : xs) {
    const auto& s = t.shape();
    if (s.size() != first.size()) shape_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        shape_error("concat", shape_string(s) + " vs " + shape_string(first) + " along axis " + std::to_string(axis));
      }
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = prod(first, 0, axis);
  const std::size_t inner = prod(first, axis + 1, first.size());
  const std::size_t total = out_shape[axis];

  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto src = xs[k].data();
    const std::size_t block = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * block, block, out.data() + (o * total + offset) * inner);
    }
    offset += extents[k];
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), xs,
                             [extents, outer, inner, total](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < extents.size(); ++k) {
                                 double* dx = parent_adjoint(self, k);
                                 const std::size_t block = extents[k] * inner;
                                 if (dx) {
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     const double* g = self.adjoint.data() + (o * total + off) * inner;
                                     double* d = dx + o * block;
                                     for (std::size_t i = 0; i < block; ++i) d[i] += g[i];
                                   }
                                 }
                                 off += extents[k];
                               }
                             });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = x.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    shape_error("narrow", "range [" + std::to_string(start) + "," + std::to_string(start + length) +
                              ") on axis " + std::to_string(axis) + " of " + shape_string(s));
  }
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t extent = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(shape_size(out_shape));
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xd.data() + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x},
                             [outer, inner, extent, start, length](detail::Node& self) {
                               double* dx = parent_adjoint(self, 0);
                               for (std::size_t o = 0; o < outer; ++o) {
                                 const double* g = self.adjoint.data() + o * length * inner;
                                 double* d = dx + (o * extent + start) * inner;
                                 for (std::size_t i = 0; i < length * inner; ++i) d[i] += g[i];
                               }
                             });
}

Tensor scale_along_axis(const Tensor& x, const Tensor& u, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) shape_error("scale_along_axis", "axis out of range");
  const std::size_t n = s[axis];
  const bool batched = u.rank() == 2;
  if (batched) {
    if (axis == 0 || u.dim(0) != s[0] || u.dim(1) != n) {
      shape_error("scale_along_axis", "u " + shape_string(u.shape()) + " for x " + shape_string(s) + " axis " +
                                          std::to_string(axis));
    }
  } else if (u.rank() != 1 || u.dim(0) != n) {
    shape_error("scale_along_axis",
                "u " + shape_string(u.shape()) + " for x " + shape_string(s) + " axis " + std::to_string(axis));
  }
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t per_batch = batched ? outer / s[0] : outer;

  auto u_index = [=](std::size_t o, std::size_t k) { return batched ? (o / per_batch) * n + k : k; };

  std::vector<double> out(x.size());
  const auto xd = x.data();
  const auto ud = u.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double f = ud[u_index(o, k)];
      const std::size_t off = (o * n + k) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[off + i] = xd[off + i] * f;
    }
  }
  return Tensor::make_result(s, std::move(out), {x, u}, [=](detail::Node& self) {
    const auto& xv = parent_data(self, 0);
    const auto& uv = parent_data(self, 1);
    double* dx = parent_adjoint(self, 0);
    double* du = parent_adjoint(self, 1);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t ui = u_index(o, k);
        const std::size_t off = (o * n + k) * inner;
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) {
          const double g = self.adjoint[off + i];
          if (dx) dx[off + i] += g * uv[ui];
          acc += g * xv[off + i];
        }
        if (du) du[ui] += acc;
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    shape_error("reshape", shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    double* dx = parent_adjoint(self, 0);
    for (std::size_t i = 0; i < self.adjoint.size(); ++i) dx[i] += self.adjoint[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* d = parent_adjoint(self, k)) {
        for (std::size_t i = 0; i < self.adjoint.size(); ++i) d[i] += self.adjoint[i];
      }
    }
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    double* d = parent_adjoint(self, 0);
    for (std::size_t i = 0; i < self.adjoint.size(); ++i) d[i] += self.adjoint[i] * s;
  });
}

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  const double total = std::accumulate(xd.begin(), xd.end(), 0.0);
  return Tensor::make_result({1}, {total}, {x}, [](detail::Node& self) {
    double* d = parent_adjoint(self, 0);
    const double g = self.adjoint[0];
    for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) d[i] += g;
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor dot_const(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.size()) shape_error("dot_const", "weight count does not match tensor size");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x.data()[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_result({1}, {total}, {x}, [w = std::move(w)](detail::Node& self) {
    double* d = parent_adjoint(self, 0);
    for (std::size_t i = 0; i < w.size(); ++i) d[i] += self.adjoint[0] * w[i];
  });
}

Tensor bce_loss(const Tensor& p, std::span<const double> y) {
  if (y.size() != p.size()) shape_error("bce_loss", "label count does not match probabilities");
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = clamp_prob(p.data()[i]);
    total -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  std::vector<double> labels(y.begin(), y.end());
  return Tensor::make_result({1}, {total / n}, {p}, [labels = std::move(labels), n](detail::Node& self) {
    const auto& pv = parent_data(self, 0);
    double* d = parent_adjoint(self, 0);
    const double g = self.adjoint[0] / n;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (!inside_clamp(pv[i])) continue;
      d[i] += g * (-labels[i] / pv[i] + (1.0 - labels[i]) / (1.0 - pv[i]));
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> y) {
  if (y.size() != logits.size()) shape_error("bce_with_logits", "label count does not match logits");
  const double n = static_cast<double>(logits.size());
  const double log_lo = std::log(kProbClamp);
  const double log_hi = std::log1p(-kProbClamp);
  double total = 0.0;
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    const double p = sigmoid_scalar(z);
    probs[i] = p;
    double log_p, log_1mp;
    if (p <= kProbClamp) {
      log_p = log_lo;
      log_1mp = log_hi;
    } else if (p >= 1.0 - kProbClamp) {
      log_p = log_hi;
      log_1mp = log_lo;
    } else {
      log_p = -softplus(-z);
      log_1mp = -softplus(z);
    }
    total -= y[i] * log_p + (1.0 - y[i]) * log_1mp;
  }
  std::vector<double> labels(y.begin(), y.end());
  return Tensor::make_result({1}, {total / n}, {logits},
                             [labels = std::move(labels), probs = std::move(probs), n](detail::Node& self) {
                               double* d = parent_adjoint(self, 0);
                               const double g = self.adjoint[0] / n;
                               for (std::size_t i = 0; i < probs.size(); ++i) {
                                 if (inside_clamp(probs[i])) d[i] += g * (probs[i] - labels[i]);
                               }
                             });
}

Tensor bidirectional_kl(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) {
    shape_error("bidirectional_kl", shape_string(p.shape()) + " vs " + shape_string(q.shape()));
  }
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = clamp_prob(p.data()[i]);
    const double qc = clamp_prob(q.data()[i]);
    // p log(p/q) + q log(q/p) = (p - q)(log p - log q)
    total += (pc - qc) * (std::log(pc) - std::log(qc));
  }
  return Tensor::make_result({1}, {total / n}, {p, q}, [n](detail::Node& self) {
    const auto& pv = parent_data(self, 0);
    const auto& qv = parent_data(self, 1);
    double* dp = parent_adjoint(self, 0);
    double* dq = parent_adjoint(self, 1);
    const double g = self.adjoint[0] / n;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double pc = clamp_prob(pv[i]);
      const double qc = clamp_prob(qv[i]);
      const double log_ratio = std::log(pc) - std::log(qc);
      if (dp && inside_clamp(pv[i])) dp[i] += g * (log_ratio + (pc - qc) / pc);
      if (dq && inside_clamp(qv[i])) dq[i] += g * (-log_ratio - (pc - qc) / qc);
    }
  });
}

}  // namespace pdcycon::nn
