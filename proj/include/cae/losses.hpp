#pragma once

#include <cmath>
#include <vector>

#include "cae/critics.hpp"

namespace cae {

// Total (summed, not averaged) absolute RGB error between two faces.
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  return sum_abs_diff(a, b);
}

template <typename T>
T l1_loss(const FaceImage<T>& a, const FaceImage<T>& b) {
  return l1_loss(a.as_batch(), b.as_batch()).value()[0];
}

// -log C(f)[identity]
template <typename T>
Var<T> classifier_loss(const CriticOutput<T>& out, std::size_t identity) {
  return cross_entropy(out.c_logits, std::vector<std::size_t>{identity});
}

template <typename T>
T classifier_loss(const FaceImage<T>& f, std::size_t identity, const Critic<T>& critic) {
  if (identity >= critic.identities())
    throw InvalidInput("identity " + std::to_string(identity) + " out of range for " +
                       std::to_string(critic.identities()) + " identities");
  return classifier_loss(critic(f.as_batch()), identity).value()[0];
}

// -[y log D(f) + (1 - y) log(1 - D(f))], evaluated from the logit.
template <typename T>
Var<T> discriminator_loss(const CriticOutput<T>& out, int label) {
  if (label != 0 && label != 1) throw InvalidInput("discriminator label must be 0 or 1");
  return bce_with_logits(out.d_logit, static_cast<T>(label));
}

template <typename T>
T discriminator_loss(const FaceImage<T>& f, int label, const Critic<T>& critic) {
  return discriminator_loss(critic(f.as_batch()), label).value()[0];
}

}  // namespace cae
