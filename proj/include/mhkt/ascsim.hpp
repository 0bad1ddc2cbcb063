#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <vector>

#include "mhkt/rng.hpp"

namespace mhkt::ascsim {

constexpr double kDefaultWaveSpeed = 2.99792458e8;  // m/s

/// One attributed scattering center: the source-domain atom.
///
/// A scatterer with length == 0 is a local (point) scatterer; length > 0
/// marks a distributed scatterer (edge, dihedral rail, barrel, ...).
struct ScatteringCenter {
  double amplitude = 0.0;        // A, linear magnitude, >= 0
  double length = 0.0;           // L in meters, >= 0
  double freq_dependence = 0.0;  // alpha in [-1, 1]
  double orientation = 0.0;      // phi' in radians
  double x = 0.0;                // meters
  double y = 0.0;
  double z = 0.0;
  double aspect_damping = 0.0;   // gamma, per-radian decay, >= 0

  bool is_distributed() const { return length > 0.0; }

  /// Throws std::invalid_argument on non-finite or out-of-range fields.
  void validate() const;
};

/// Frequency/azimuth sampling grid and constants for synthesis and rendering.
struct RadarConfig {
  double center_frequency = 1e10;   // Hz
  double bandwidth = 5e8;           // Hz
  int n_freq = 64;
  double azimuth_center = 0.0;      // rad
  double azimuth_span = 0.05235987755982988;       // rad (3 degrees)
  int n_az = 64;
  double azimuth_resolution = 0.05235987755982988; // rad, drives Eq-level length threshold
  double wave_speed = kDefaultWaveSpeed;

  double frequency(int m) const {
    return center_frequency - 0.5 * bandwidth + bandwidth * static_cast<double>(m) / (n_freq - 1);
  }
  double azimuth(int n) const {
    return azimuth_center - 0.5 * azimuth_span + azimuth_span * static_cast<double>(n) / (n_az - 1);
  }
  double freq_step() const { return bandwidth / (n_freq - 1); }
  double azimuth_step() const { return azimuth_span / (n_az - 1); }
  /// Wavenumber k(f) = 2 pi f / c.
  double wavenumber(double f) const { return 2.0 * M_PI * f / wave_speed; }

  void validate() const;
};

/// One ray's contribution to a candidate scattering source.
struct RayContribution {
  std::complex<double> field_value;  // linear units
  double px = 0.0, py = 0.0, pz = 0.0;  // equivalent reflection point, meters
  double current_weight = 0.0;          // induced-current weight, >= 0
  int phase_class = 0;                  // rays with equal tags scatter in phase
};

enum class SurfaceType { planar, hyperbolic, monoclinic };

/// Per-sample perturbation magnitudes applied when instantiating a template.
/// The per-center fields follow the template contract; the global offset and
/// rotation emulate pose variation between collections.
struct JitterSpec {
  double position_sigma = 0.12;       // meters, per center, per axis
  double amplitude_rel_sigma = 0.35;  // lognormal scale on A
  double orientation_sigma = 0.12;    // radians, per center
  double global_offset_sigma = 0.45;  // meters, common x/y translation
  double global_rotation_sigma = 0.17;  // radians, common rotation
};

/// Class blueprint: a fixed scatterer layout plus its jitter magnitudes.
struct TargetTemplate {
  int class_id = 0;
  std::vector<ScatteringCenter> base_centers;
  JitterSpec jitter_spec;
};

/// Number of built-in class layouts available to the generator.
constexpr int kNumBuiltinClasses = 6;

/// Minimum resolvable length of a distributed scatterer:
/// L0 = c / (2 f sin(dphi / 2)).
double azimuth_length_threshold(double f, double delta_phi, double wave_speed = kDefaultWaveSpeed);

/// Coherent backscatter over the full frequency-azimuth grid.
///
/// Entry (m, n) sums over centers i:
///   A_i (j f_m/f_c)^alpha_i * sinc(k_m L_i sin(phi_n - phi'_i))
///   * exp(-k_m c gamma_i sin phi_n)
///   * exp(-j 2 k_m (x_i cos phi_n + y_i sin phi_n))
/// with k_m = 2 pi f_m / c and sinc(t) = sin(t)/t.
Eigen::MatrixXcd synthesize_backscatter(const std::vector<ScatteringCenter>& scs, const RadarConfig& cfg);

/// Magnitude image from a backscatter grid: separable Hann window,
/// zero-pad to the next power of two >= (H, W), 2-D inverse DFT, fftshift,
/// centered crop to (H, W), peak normalized to 1. Deterministic.
Eigen::MatrixXd render_image(const Eigen::MatrixXcd& backscatter, const RadarConfig& cfg, int out_h, int out_w);

/// Analytic scene-to-pixel map for a point scatterer at (x, y), valid for
/// small azimuth_center. Returns (row, col) in the rendered (H, W) image.
std::pair<int, int> scene_to_pixel(const RadarConfig& cfg, double x, double y, int out_h, int out_w);

/// Forward parameter extrapolation for one candidate source:
/// amplitude = |coherent ray sum|, position = current-weighted mean of
/// reflection points, length from the farthest same-phase pair against the
/// azimuth_length_threshold, alpha from the surface type (1 / 0.5 / 0).
ScatteringCenter estimate_sc_parameters(const std::vector<RayContribution>& rays, SurfaceType surface_type,
                                        double f, double delta_phi, double wave_speed = kDefaultWaveSpeed);

/// Built-in class layout, lightly perturbed by a seed-derived offset so
/// distinct seeds give distinct (but structurally identical) templates.
TargetTemplate generate_target_template(int class_id, std::uint64_t seed);

/// One jittered instance of a template (fresh scatterer set).
std::vector<ScatteringCenter> jitter_template(const TargetTemplate& tpl, Rng& rng);

}  // namespace mhkt::ascsim
