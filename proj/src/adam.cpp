#include "gassip/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace gassip {

AdamState make_adam_state(const Param& p, double lr) {
  AdamState s;
  s.m = Matrix::Zero(p.value.rows(), p.value.cols());
  s.v = Matrix::Zero(p.value.rows(), p.value.cols());
  s.lr = lr;
  return s;
}

void adam_step(Param& param, AdamState& state) {
  if (state.m.rows() != param.value.rows() || state.m.cols() != param.value.cols()) {
    throw std::invalid_argument("adam_step: state shape does not match param " + param.name);
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * param.grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * param.grad.cwiseProduct(param.grad);
  for (Eigen::Index i = 0; i < param.value.size(); ++i) {
    const double mhat = state.m.data()[i] / bc1;
    const double vhat = state.v.data()[i] / bc2;
    param.value.data()[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
  param.zero_grad();
}

Adam::Adam(std::vector<Param*> params, double lr) : params_(std::move(params)) {
  states_.reserve(params_.size());
  for (const Param* p : params_) states_.push_back(make_adam_state(*p, lr));
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(*params_[i], states_[i]);
}

}  // namespace gassip
