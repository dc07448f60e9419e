#include "fp/nd/adam.hpp"

#include <cmath>

#include "fp/common/error.hpp"

namespace fp::nd {

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (auto& [name, p] : params) {
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, Array(p.shape)).first;
      state.v.emplace(name, Array(p.shape));
    }
    Array& m = mit->second;
    Array& v = state.v.at(name);
    if (!m.same_shape(p))
      throw ShapeError("adam_step: moment shape drifted for parameter '" + name + "'");

    const auto git = grads.find(name);
    const Array* g = git == grads.end() ? nullptr : &git->second;
    if (g != nullptr) {
      require_same_shape(*g, p, "adam_step");
      if (!g->all_finite())
        throw NumericError("adam_step: non-finite gradient for parameter '" + name +
                           "' at step " + std::to_string(state.step));
    }

    const size_t n = p.data.size();
    for (size_t i = 0; i < n; ++i) {
      const double gi = g != nullptr ? g->data[i] : 0.0;
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace fp::nd
