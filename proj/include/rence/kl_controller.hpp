// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace rence {

// Adaptive KL-coefficient state. kl_coef stays strictly positive because the
// update is multiplicative with a clipped proportional error.
struct KlControllerState {
  double kl_coef = 0.001;
  double target_kl = 0.01;
  std::int64_t horizon = 25600;  // in training samples (rollouts)
  double clip_width = 0.2;
};

// e = clip(observed/target - 1, -clip_width, +clip_width);
// kl_coef <- kl_coef * (1 + e * n_samples / horizon)
KlControllerState update_kl_coef(const KlControllerState& state, double observed_kl,
                                 std::int64_t n_samples);

}  // namespace rence
