#pragma once

// Adam and Rectified Adam over a ParamStore. State is kept per parameter in
// registration order; steps are deterministic given the gradient stream.
// RAdam falls back to the unrectified momentum update while the variance
// rectification term rho_t is still <= 4, per the published update rule.

#include <cmath>
#include <string>
#include <vector>

#include "amorgp/errors.hpp"
#include "amorgp/tensor.hpp"

namespace amorgp {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

template <class S>
struct MomentState {
  Mat<S> m;
  Mat<S> v;
};

template <class S>
void check_finite_grads(const ParamStore<S>& params) {
  for (auto* p : params.nodes())
    if (p->grad_ready && !p->grad.allFinite()) throw NonFiniteGradient(p->name);
}

}  // namespace detail

template <class S>
class Adam {
 public:
  explicit Adam(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  void reset() {
    t_ = 0;
    state_.clear();
  }

  /// One update from the gradients currently held in the store. Parameters
  /// with no accumulated gradient are treated as zero-gradient.
  void step(ParamStore<S>& params) {
    detail::check_finite_grads(params);
    ensure_state(params);
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S bc1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, t_));
    const S bc2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, t_));
    const S lr = static_cast<S>(cfg_.lr), eps = static_cast<S>(cfg_.eps);
    const auto& nodes = params.nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      auto* p = nodes[i];
      auto& st = state_[i];
      if (p->grad_ready) {
        st.m = b1 * st.m + (S(1) - b1) * p->grad;
        st.v = (b2 * st.v.array() +
                (S(1) - b2) * p->grad.array().square())
                   .matrix();
      } else {
        st.m *= b1;
        st.v *= b2;
      }
      const auto mhat = st.m.array() / bc1;
      const auto vhat = st.v.array() / bc2;
      p->val.array() -= lr * mhat / (vhat.sqrt() + eps);
    }
  }

  // State access for checkpointing.
  std::vector<detail::MomentState<S>>& state() { return state_; }
  const std::vector<detail::MomentState<S>>& state() const { return state_; }
  void set_step_count(long t) { t_ = t; }

 protected:
  void ensure_state(const ParamStore<S>& params) {
    const auto& nodes = params.nodes();
    if (state_.size() == nodes.size()) return;
    if (!state_.empty())
      throw std::logic_error("optimizer bound to a different parameter set");
    state_.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      state_[i].m = Mat<S>::Zero(nodes[i]->val.rows(), nodes[i]->val.cols());
      state_[i].v = Mat<S>::Zero(nodes[i]->val.rows(), nodes[i]->val.cols());
    }
  }

  OptimizerConfig cfg_;
  long t_ = 0;
  std::vector<detail::MomentState<S>> state_;
};

template <class S>
class RAdam : public Adam<S> {
 public:
  explicit RAdam(OptimizerConfig cfg = {}) : Adam<S>(cfg) {}

  void step(ParamStore<S>& params) {
    detail::check_finite_grads(params);
    this->ensure_state(params);
    ++this->t_;
    const long t = this->t_;
    const auto& cfg = this->cfg_;
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    const double b2t = std::pow(cfg.beta2, t);
    const S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, t));
    const double rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
    const double rho_t =
        rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
    const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.eps);
    const auto& nodes = params.nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      auto* p = nodes[i];
      auto& st = this->state_[i];
      if (p->grad_ready) {
        st.m = b1 * st.m + (S(1) - b1) * p->grad;
        st.v = (b2 * st.v.array() +
                (S(1) - b2) * p->grad.array().square())
                   .matrix();
      } else {
        st.m *= b1;
        st.v *= b2;
      }
      const auto mhat = st.m.array() / bc1;
      if (rho_t > 4.0) {
        const double rect =
            std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                      ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        const auto vhat = (st.v.array() / static_cast<S>(1.0 - b2t)).sqrt();
        p->val.array() -= lr * static_cast<S>(rect) * mhat / (vhat + eps);
      } else {
        p->val.array() -= lr * mhat;
      }
    }
  }

  static double rho_infinity(double beta2) { return 2.0 / (1.0 - beta2) - 1.0; }
};

}  // namespace amorgp
