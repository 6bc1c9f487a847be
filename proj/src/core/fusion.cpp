#include "m3net/fusion.hpp"

#include "m3net/errors.hpp"

#include <cmath>

namespace m3net {

namespace {

constexpr double kLogFloor = -69.07755278982137;  // log(1e-30)

void check_temperature(double temperature) {
  if (!(temperature > 0.0))
    throw Error(ErrorCode::kNonPositiveTemperature, "temperature must be > 0");
}

template <typename Real>
Real log_prob(const RowVec<Real>& d, int label, Real temperature) {
  const RowVec<Real> z = -d / temperature;
  const Real mx = z.maxCoeff();
  const Real lse = mx + std::log((z.array() - mx).exp().sum());
  return z(label) - lse;
}

}  // namespace

template <typename Real>
RowVec<Real> distances_to_probs(const RowVec<Real>& d, Real temperature) {
  check_temperature(static_cast<double>(temperature));
  RowVec<Real> z = -d / temperature;
  z = (z.array() - z.maxCoeff()).exp();
  return z / z.sum();
}

template <typename Real>
int argmax_lowest(const RowVec<Real>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

template <typename Real>
FusedPrediction<Real> fuse(const BranchScores<Real>& s, Real temperature, BranchSwitches enabled) {
  FusedPrediction<Real> f;
  f.y1 = distances_to_probs(s.d1, temperature);
  f.y2 = distances_to_probs(s.d2, temperature);
  f.y3 = distances_to_probs(s.d3, temperature);
  f.y = RowVec<Real>::Zero(f.y1.size());
  if (enabled.instance) f.y += f.y1;
  if (enabled.category) f.y += f.y2;
  if (enabled.task) f.y += f.y3;
  f.predicted_class = argmax_lowest(f.y);
  return f;
}

template <typename Real>
LossReport multiview_loss(const BranchScores<Real>& s, int label, Real temperature,
                          BranchSwitches enabled) {
  check_temperature(static_cast<double>(temperature));
  if (label < 0 || label >= s.d1.size())
    throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label));
  auto ce = [&](const RowVec<Real>& d) {
    return -std::max(static_cast<double>(log_prob(d, label, temperature)), kLogFloor);
  };
  LossReport r;
  if (enabled.instance) r.l1 = ce(s.d1);
  if (enabled.category) r.l2 = ce(s.d2);
  if (enabled.task) r.l3 = ce(s.d3);
  r.total = r.l1 + r.l2 + r.l3;
  return r;
}

template <typename Real>
BranchScores<Real> multiview_loss_backward(const BranchScores<Real>& s, int label, Real temperature,
                                           BranchSwitches enabled, Real grad) {
  check_temperature(static_cast<double>(temperature));
  if (label < 0 || label >= s.d1.size())
    throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label));
  auto branch = [&](const RowVec<Real>& d, bool on) {
    RowVec<Real> g = RowVec<Real>::Zero(d.size());
    if (!on || static_cast<double>(log_prob(d, label, temperature)) < kLogFloor) return g;
    // loss = -log softmax(-d/T)[label]  =>  dloss/dd = (onehot - p) / T
    g = -distances_to_probs(d, temperature);
    g(label) += Real(1);
    return RowVec<Real>(g * (grad / temperature));
  };
  return {branch(s.d1, enabled.instance), branch(s.d2, enabled.category), branch(s.d3, enabled.task)};
}

#define M3NET_INSTANTIATE(Real)                                                                   \
  template RowVec<Real> distances_to_probs(const RowVec<Real>&, Real);                            \
  template int argmax_lowest(const RowVec<Real>&);                                                \
  template FusedPrediction<Real> fuse(const BranchScores<Real>&, Real, BranchSwitches);           \
  template LossReport multiview_loss(const BranchScores<Real>&, int, Real, BranchSwitches);       \
  template BranchScores<Real> multiview_loss_backward(const BranchScores<Real>&, int, Real,       \
                                                      BranchSwitches, Real);

M3NET_INSTANTIATE(float)
M3NET_INSTANTIATE(double)

}  // namespace m3net
