#pragma once

#include "m3net/matching.hpp"

namespace m3net {

/// Which matching branches contribute to the loss and the fused prediction.
struct BranchSwitches {
  bool instance = true;
  bool category = true;
  bool task = true;

  bool operator==(const BranchSwitches&) const = default;
};

/// softmax(-d / temperature), max-subtracted.
template <typename Real>
RowVec<Real> distances_to_probs(const RowVec<Real>& d, Real temperature);

template <typename Real>
struct FusedPrediction {
  RowVec<Real> y1, y2, y3;
  RowVec<Real> y;  // sum of the enabled branches' probabilities
  int predicted_class = 0;
};

struct LossReport {
  double l1 = 0, l2 = 0, l3 = 0;
  double total = 0;
};

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Real>
int argmax_lowest(const RowVec<Real>& v);

template <typename Real>
FusedPrediction<Real> fuse(const BranchScores<Real>& scores, Real temperature,
                           BranchSwitches enabled = {});

/// Per-branch cross-entropy against `label`; disabled branches contribute 0.
/// log-probabilities are floored at log(1e-30).
template <typename Real>
LossReport multiview_loss(const BranchScores<Real>& scores, int label, Real temperature,
                          BranchSwitches enabled = {});

/// d(total loss)/d(distances), scaled by `grad`.
template <typename Real>
BranchScores<Real> multiview_loss_backward(const BranchScores<Real>& scores, int label,
                                           Real temperature, BranchSwitches enabled, Real grad);

}  // namespace m3net
