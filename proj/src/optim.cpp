#include "pdcycon/optim.hpp"

#include <cmath>

namespace pdcycon::nn {

Param::Param(std::string n, Tensor t)
    : name(std::move(n)), value(std::move(t)), m(value.size(), 0.0), v(value.size(), 0.0) {}

void adam_step(std::span<Param*> params, const AdamConfig& cfg) {
  for (Param* p : params) {
    ++p->step;
    const double t = static_cast<double>(p->step);
    const double correct1 = 1.0 - std::pow(cfg.beta1, t);
    const double correct2 = 1.0 - std::pow(cfg.beta2, t);
    auto w = p->value.data();
    const auto g = p->value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g[i];
      p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = p->m[i] / correct1;
      const double v_hat = p->v[i] / correct2;
      w[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void zero_grads(std::span<Param*> params) {
  for (Param* p : params) p->value.zero_grad();
}

}  // namespace pdcycon::nn
