#pragma once

#include "cellbloom/nn/ops.hpp"

namespace cellbloom::transfer {

// Least-squares GAN objective: mean over the score map of (score - t)^2 with
// t = 1 for a real target and 0 for a fake one.
template <typename T>
nn::Var<T> adversarial_loss(const nn::Var<T>& scores, bool target_real) {
    return nn::mse_to_constant(scores, target_real ? 1.0 : 0.0);
}

// Mean absolute difference; throws nn::ShapeError on mismatch.
template <typename T>
nn::Var<T> cycle_loss(const nn::Var<T>& original, const nn::Var<T>& reconstructed) {
    return nn::l1_loss(reconstructed, original);
}

}  // namespace cellbloom::transfer
