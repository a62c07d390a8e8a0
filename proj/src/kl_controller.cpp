// SPDX-License-Identifier: Apache-2.0
#include "rence/kl_controller.hpp"

#include <algorithm>
#include <stdexcept>

namespace rence {

KlControllerState update_kl_coef(const KlControllerState& state, double observed_kl,
                                 std::int64_t n_samples) {
  if (n_samples <= 0) throw std::invalid_argument("update_kl_coef: n_samples must be positive");
  if (observed_kl < 0.0) throw std::invalid_argument("update_kl_coef: observed_kl must be nonnegative");
  if (!(state.kl_coef > 0.0 && state.target_kl > 0.0 && state.horizon > 0)) {
    throw std::invalid_argument("update_kl_coef: invalid controller state");
  }
  const double step = static_cast<double>(n_samples) / static_cast<double>(state.horizon);
  if (state.clip_width * step >= 1.0) {
    throw std::invalid_argument("update_kl_coef: n_samples too large for horizon");
  }
  const double e =
      std::clamp(observed_kl / state.target_kl - 1.0, -state.clip_width, state.clip_width);
  KlControllerState next = state;
  next.kl_coef = state.kl_coef * (1.0 + e * step);
  return next;
}

}  // namespace rence
