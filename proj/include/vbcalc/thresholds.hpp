#ifndef VBCALC_THRESHOLDS_HPP
#define VBCALC_THRESHOLDS_HPP

namespace vbc {

/// Pass/fail thresholds of the harness. Every field can be overridden in a
/// configuration's "thresholds" object under the same name.
struct Thresholds {
  double z_max = 3.0;             // martingale |z| and |trend t|
  double abort_budget = 0.01;     // fraction of aborted paths tolerated
  double order_low = 0.7;         // convergence-order window
  double order_high = 1.3;
  double min_ratio = 1.6;         // median residual ratio per Δt halving
  double floor = 1e-12;           // below this a residual counts as exact
  double fd_floor = 1e-10;        // same, for checks built on finite-difference Jacobians
  double strat_fraction = 0.05;   // conversion residual vs |Stratonovich terminal|
  double commutation_rel = 0.10;  // |defect − curvature term| / |curvature term|
};

}  // namespace vbc

#endif  // VBCALC_THRESHOLDS_HPP
