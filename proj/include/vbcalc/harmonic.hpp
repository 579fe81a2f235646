#ifndef VBCALC_HARMONIC_HPP
#define VBCALC_HARMONIC_HPP

// Bundle-valued p-forms (p = 0, 1), the operators d, δ and Δ = dδ + δd by
// covariant finite differences, the gauge process e_t, and the martingale
// test for harmonic sections.
//
// A p = 1 form σ ∈ Γ(T*M ⊗ V) is a d×n array σ(l, α); as a section of the
// rank d·n bundle E¹ it is flattened with index l·n + α.

#include <cstdint>
#include <memory>
#include <vector>

#include "vbcalc/covariant.hpp"
#include "vbcalc/geometry.hpp"
#include "vbcalc/paths.hpp"

namespace vbc {

struct PFormSection {
  int degree = 0;  // 0 or 1
  Field field;     // n×1 (p = 0) or d×n (p = 1)

  /// Flattened value in E^p.
  Vector value(const Vector& x) const;
};

/// d×n array → E¹ vector (index l·n + α), and back.
Vector flatten_form(const Matrix& sigma);
Matrix unflatten_form(const Vector& flat, int d, int n);

/// Wrap a field with E^p-shaped values (n×1, or d×n for forms) as an m×1
/// field in the flattened layout.
Field flat_field(const Field& f);

/// Connection coefficients of E^p at x: Γ^V for p = 0, and
/// −C_i ⊗ I_n + I_d ⊗ Γ^V_i with C_i(l, m) = Γ^m_{il} for p = 1.
ConnectionValue form_connection(const Scene& s, int p, const Vector& x);

/// The scene whose bundle is E^p = Λ^pT*M ⊗ V with the induced connection.
std::shared_ptr<Scene> form_bundle_scene(const ScenePtr& s, int p);

/// (dσ)_{jα} = ∂_jσ^α + Γ_{jβ}^α σ^β for p = 0; d×n.
Matrix exterior_d(const Scene& s, const PFormSection& sigma, const Vector& x);
/// δσ^α = −g^{jl}(∇_jσ)_{lα} for p = 1; n entries.
Vector codifferential(const Scene& s, const PFormSection& sigma, const Vector& x);
/// Δ = dδ + δd with outer step fd_step2 and inner step 2·fd_step2; same
/// shape as σ (n×1 or d×n).
Matrix hodge_laplacian(const Scene& s, const PFormSection& sigma, const Vector& x);

/// Columns ∇_jσ of a flattened E^p section at x (m×d), central differences.
Matrix form_covariant_jacobian(const Scene& s, const PFormSection& sigma, const Vector& x, double h);
/// ∇²σ(∂_i, ∂_l) = ∂_i∇_lσ + Γ^{E^p}_i∇_lσ − Γ^m_{il}∇_mσ; entry i·d + l.
std::vector<Vector> form_second_covariant(const Scene& s, const PFormSection& sigma, const Vector& x);

enum class GaugeMode { Dt, Bracket };
const char* to_string(GaugeMode m);
GaugeMode gauge_mode_from_string(const std::string& s);

struct GaugePath {
  std::vector<Matrix> e;  // e_k on the fibre over x_k, in the coordinate frame
};

/// Increment weights w_k: Δt_k (Dt) or g_ij(x_k)Δx^iΔx^j (Bracket).
Vector gauge_weights(const Scene& s, const Matrix& base, const TimeGrid& grid, GaugeMode mode);

/// D^I e = e ∘ Φ(x) w, stepped as ẽ_{k+1} = ẽ_k + ẽ_k u_k⁻¹Φ(x_k)u_k w_k in
/// the parallel frame u of `ep` and mapped back by e_k = u_k ẽ_k u_k⁻¹.
/// `phi` may be null (Φ ≡ 0).
GaugePath solve_gauge(const Scene& ep, const Field* phi, const Matrix& base, const TimeGrid& grid,
                      GaugeMode mode);

struct MartingaleStatistic {
  std::size_t samples = 0;
  double mean = 0.0;
  double stderr_mean = 0.0;
  double z = 0.0;
  double trend_t = 0.0;  // t-statistic of the mean per-path regression slope
  bool verdict = true;
};

/// z = mean / standard error; zero spread gives z = 0 when the mean is 0 and
/// ±∞ otherwise. Throws std::invalid_argument below 100 samples.
MartingaleStatistic martingale_statistic(const std::vector<double>& samples, double z_max = 3.0);
/// Rows are paths, columns the running integral at `times` (last column =
/// terminal value). Adds the slope trend test; verdict needs both |z| and
/// |trend_t| below z_max.
MartingaleStatistic martingale_statistic(const Matrix& slices, const Vector& times,
                                         double z_max = 3.0);

/// ∫θ D^Iσ_t against ∫θ∘e ∇σ d^{∇M}x + ∫(θ∘e)(½∇² + V g)σ(dx, dx) for
/// σ_t = e_tσ(x_t) along one base path. `theta` is flat (m×1).
ResidualParts lemma_parts(const Scene& s, const Scene& ep, const PFormSection& sigma,
                          const Field& theta, const Field* v_field, const Matrix& base,
                          const TimeGrid& grid, GaugeMode mode);

struct HarmonicConfig {
  long paths = 1000;
  double horizon = 1.0;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  Vector x0;
  GaugeMode mode = GaugeMode::Dt;
  bool martingale = true;
  bool lemma = false;
  long lemma_paths = 100;
  int sample_points = 64;
  int slices = 10;
  unsigned threads = 0;
  double z_max = 3.0;
  double min_ratio = 1.6;
  double floor = 1e-12;
};

struct HarmonicReport {
  double max_laplacian = 0.0;
  std::vector<double> terminals;
  std::vector<long> path_ids;
  std::vector<std::uint64_t> seeds;
  MartingaleStatistic stat;
  long aborted = 0;
  // Lemma cross-check at Δt and Δt/2
  std::vector<double> lemma_gap_coarse;
  std::vector<double> lemma_gap_fine;
  double lemma_median_coarse = 0.0;
  double lemma_median_fine = 0.0;
  double lemma_ratio = 0.0;
  bool lemma_pass = true;
  bool pass = true;
};

/// (a) max|Δσ| over seeded sample points; (b) N Brownian paths, σ_t =
/// e_tσ(B_t), ∫θ D^Iσ_t and the martingale statistic; (c) the Lemma gap
/// (with `v_field`, gauge mode cfg.mode) at two nested step sizes.
HarmonicReport harmonicity_check(const ScenePtr& s, const PFormSection& sigma, const Field& theta,
                                 const Field* phi, const Field* v_field, const HarmonicConfig& cfg);

}  // namespace vbc

#endif  // VBCALC_HARMONIC_HPP
