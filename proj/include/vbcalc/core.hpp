#ifndef VBCALC_CORE_HPP
#define VBCALC_CORE_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vbc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// A point (or increment) left the chart domain. `step` is the time index
/// of the offending sample, or -1 for a pointwise evaluation.
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// A parallel frame lost invertibility along a path.
class FrameDegeneracy : public std::runtime_error {
 public:
  FrameDegeneracy(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Per-path seed: the run seed is scrambled once, then xor-ed with the index,
/// so runs with nearby seeds do not share paths.
inline std::uint64_t path_seed(std::uint64_t run_seed, std::uint64_t index) {
  return splitmix64(run_seed) ^ index;
}

/// Worker count: VBCALC_THREADS if set, otherwise the hardware concurrency.
unsigned worker_count();

/// Run fn(i) for i in [0, n) on up to `threads` workers (0 = worker_count()).
/// Work items must not depend on each other; exceptions are rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  unsigned threads = 0);

/// Order statistics by linear interpolation between closest ranks; NaN on
/// empty input.
double quantile(std::vector<double> values, double q);
inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }
double mean(const std::vector<double>& values);
/// Standard error of the mean (sample standard deviation / √N).
double standard_error(const std::vector<double>& values);

}  // namespace vbc

#endif  // VBCALC_CORE_HPP
