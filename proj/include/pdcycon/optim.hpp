#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pdcycon/tensor.hpp"

namespace pdcycon::nn {

/// A trainable tensor together with its Adam moments.
struct Param {
  std::string name;
  Tensor value;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  std::uint64_t step = 0;

  Param() = default;
  Param(std::string n, Tensor t);
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// One bias-corrected Adam update from each parameter's accumulated gradient.
void adam_step(std::span<Param*> params, const AdamConfig& cfg);

void zero_grads(std::span<Param*> params);

}  // namespace pdcycon::nn
