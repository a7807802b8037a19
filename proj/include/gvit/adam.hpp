#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gvit/tensor.hpp"

namespace gvit {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one per parameter, plus the step counter.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update applied in place to `params`.
///
/// State buffers are created lazily on the first step and must shape-match
/// the parameters afterwards. Throws DimensionError on mismatch and
/// DomainError for a non-positive learning rate.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
               AdamState& state, const AdamConfig& config);

/// Global L2 norm over all gradient buffers.
double global_grad_norm(std::span<const std::vector<double>> grads);

/// Rescales grads so their global norm does not exceed max_norm. Returns the
/// norm measured before clipping.
double clip_grad_norm(std::span<std::vector<double>> grads, double max_norm);

}  // namespace gvit
