#include "mhkt/ascsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mhkt/fft.hpp"
#include "mhkt/mathx.hpp"

namespace mhkt::ascsim {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool finite(double v) { return std::isfinite(v); }

double hann(int i, int n) {
  if (n <= 1) return 1.0;
  return 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / (n - 1)));
}

}  // namespace

void ScatteringCenter::validate() const {
  require(finite(amplitude) && finite(length) && finite(freq_dependence) && finite(orientation) && finite(x) &&
              finite(y) && finite(z) && finite(aspect_damping),
          "ScatteringCenter: non-finite parameter");
  require(amplitude >= 0.0, "ScatteringCenter: amplitude must be >= 0");
  require(length >= 0.0, "ScatteringCenter: length must be >= 0");
  require(aspect_damping >= 0.0, "ScatteringCenter: aspect_damping must be >= 0");
  require(freq_dependence >= -1.0 && freq_dependence <= 1.0, "ScatteringCenter: freq_dependence outside [-1, 1]");
}

void RadarConfig::validate() const {
  require(finite(center_frequency) && finite(bandwidth) && finite(azimuth_center) && finite(azimuth_span) &&
              finite(azimuth_resolution) && finite(wave_speed),
          "RadarConfig: non-finite field");
  require(center_frequency > 0.0, "RadarConfig: center_frequency must be positive");
  require(bandwidth > 0.0 && bandwidth < 2.0 * center_frequency, "RadarConfig: bandwidth must be in (0, 2 f_c)");
  require(n_freq >= 2, "RadarConfig: n_freq must be >= 2");
  require(n_az >= 2, "RadarConfig: n_az must be >= 2");
  require(azimuth_span > 0.0, "RadarConfig: azimuth_span must be positive");
  require(azimuth_resolution > 0.0, "RadarConfig: azimuth_resolution must be positive");
  require(wave_speed > 0.0, "RadarConfig: wave_speed must be positive");
  // lowest grid frequency must keep k(f) > 0
  require(frequency(0) > 0.0, "RadarConfig: frequency grid reaches f <= 0");
}

double azimuth_length_threshold(double f, double delta_phi, double wave_speed) {
  if (!(f > 0.0)) throw std::domain_error("azimuth_length_threshold: f must be positive");
  if (!(delta_phi > 0.0) || !(delta_phi < 2.0 * M_PI))
    throw std::domain_error("azimuth_length_threshold: delta_phi must be in (0, 2 pi)");
  return wave_speed / (2.0 * f * std::sin(0.5 * delta_phi));
}

Eigen::MatrixXcd synthesize_backscatter(const std::vector<ScatteringCenter>& scs, const RadarConfig& cfg) {
  require(!scs.empty(), "synthesize_backscatter: empty scatterer list");
  cfg.validate();
  for (const auto& sc : scs) sc.validate();

  const std::complex<double> j(0.0, 1.0);
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(cfg.n_freq, cfg.n_az);

  for (int n = 0; n < cfg.n_az; ++n) {
    const double phi = cfg.azimuth(n);
    const double cphi = std::cos(phi);
    const double sphi = std::sin(phi);
    for (int m = 0; m < cfg.n_freq; ++m) {
      const double f = cfg.frequency(m);
      const double k = cfg.wavenumber(f);
      std::complex<double> acc(0.0, 0.0);
      for (const auto& sc : scs) {
        // (j f/f_c)^alpha = (f/f_c)^alpha * exp(j alpha pi/2) for f > 0
        const double mag = std::pow(f / cfg.center_frequency, sc.freq_dependence);
        const std::complex<double> freq_factor =
            mag * std::exp(j * (sc.freq_dependence * M_PI / 2.0));
        const double sinc_factor =
            sc.length > 0.0 ? sinc(k * sc.length * std::sin(phi - sc.orientation)) : 1.0;
        const double damping = std::exp(-k * cfg.wave_speed * sc.aspect_damping * sphi);
        const std::complex<double> phase = std::exp(-j * (2.0 * k * (sc.x * cphi + sc.y * sphi)));
        acc += sc.amplitude * freq_factor * sinc_factor * damping * phase;
      }
      out(m, n) = acc;
    }
  }
  return out;
}

Eigen::MatrixXd render_image(const Eigen::MatrixXcd& backscatter, const RadarConfig& cfg, int out_h, int out_w) {
  cfg.validate();
  require(backscatter.rows() == cfg.n_freq && backscatter.cols() == cfg.n_az,
          "render_image: backscatter shape does not match the radar grid");
  require(out_h >= 16 && out_w >= 16, "render_image: output size must be at least 16x16");
  require(out_h >= cfg.n_freq && out_w >= cfg.n_az, "render_image: output smaller than the sampled grid");
  require(backscatter.allFinite(), "render_image: non-finite backscatter");

  const std::size_t pad_h = next_pow2(static_cast<std::size_t>(out_h));
  const std::size_t pad_w = next_pow2(static_cast<std::size_t>(out_w));

  std::vector<std::complex<double>> grid(pad_h * pad_w, std::complex<double>(0.0, 0.0));
  for (int m = 0; m < cfg.n_freq; ++m) {
    const double wm = hann(m, cfg.n_freq);
    for (int n = 0; n < cfg.n_az; ++n) {
      grid[static_cast<std::size_t>(m) * pad_w + n] = backscatter(m, n) * (wm * hann(n, cfg.n_az));
    }
  }
  ifft2_inplace(grid, pad_h, pad_w);

  // fftshift + centered crop + magnitude
  const std::size_t row0 = (pad_h - static_cast<std::size_t>(out_h)) / 2;
  const std::size_t col0 = (pad_w - static_cast<std::size_t>(out_w)) / 2;
  Eigen::MatrixXd img(out_h, out_w);
  double peak = 0.0;
  for (int r = 0; r < out_h; ++r) {
    const std::size_t src_r = (row0 + static_cast<std::size_t>(r) + pad_h / 2) % pad_h;
    for (int c = 0; c < out_w; ++c) {
      const std::size_t src_c = (col0 + static_cast<std::size_t>(c) + pad_w / 2) % pad_w;
      const double v = std::abs(grid[src_r * pad_w + src_c]);
      img(r, c) = v;
      peak = std::max(peak, v);
    }
  }
  if (peak > 0.0) img /= peak;
  return img;
}

std::pair<int, int> scene_to_pixel(const RadarConfig& cfg, double x, double y, int out_h, int out_w) {
  const std::size_t pad_h = next_pow2(static_cast<std::size_t>(out_h));
  const std::size_t pad_w = next_pow2(static_cast<std::size_t>(out_w));
  const double ph = static_cast<double>(pad_h);
  const double pw = static_cast<double>(pad_w);

  // Range: per-bin phase step 4 pi df x / c; peak bin p = 2 x df P / c.
  const long p = std::lround(2.0 * x * cfg.freq_step() * ph / cfg.wave_speed);
  // Cross-range: per-bin phase step 4 pi f_c y daz / c (small-angle).
  const long q = std::lround(2.0 * cfg.center_frequency * y * cfg.azimuth_step() * pw / cfg.wave_speed);

  const long row_pad = ((p + static_cast<long>(pad_h) / 2) % static_cast<long>(pad_h) + static_cast<long>(pad_h)) %
                       static_cast<long>(pad_h);
  const long col_pad = ((q + static_cast<long>(pad_w) / 2) % static_cast<long>(pad_w) + static_cast<long>(pad_w)) %
                       static_cast<long>(pad_w);
  const long row = row_pad - static_cast<long>((pad_h - static_cast<std::size_t>(out_h)) / 2);
  const long col = col_pad - static_cast<long>((pad_w - static_cast<std::size_t>(out_w)) / 2);
  return {static_cast<int>(row), static_cast<int>(col)};
}

ScatteringCenter estimate_sc_parameters(const std::vector<RayContribution>& rays, SurfaceType surface_type, double f,
                                        double delta_phi, double wave_speed) {
  require(!rays.empty(), "estimate_sc_parameters: empty ray bundle");
  double weight_sum = 0.0;
  std::complex<double> field_sum(0.0, 0.0);
  for (const auto& r : rays) {
    require(finite(r.field_value.real()) && finite(r.field_value.imag()) && finite(r.px) && finite(r.py) &&
                finite(r.pz) && finite(r.current_weight),
            "estimate_sc_parameters: non-finite ray");
    require(r.current_weight >= 0.0, "estimate_sc_parameters: negative current weight");
    weight_sum += r.current_weight;
    field_sum += r.field_value;
  }
  if (weight_sum <= 0.0) throw std::invalid_argument("estimate_sc_parameters: total current weight is zero");

  ScatteringCenter sc;
  sc.amplitude = std::abs(field_sum);

  for (const auto& r : rays) {
    const double w = r.current_weight / weight_sum;
    sc.x += w * r.px;
    sc.y += w * r.py;
    sc.z += w * r.pz;
  }

  bool same_phase = true;
  for (const auto& r : rays) same_phase = same_phase && (r.phase_class == rays.front().phase_class);
  if (same_phase) {
    double max_dist = 0.0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
      for (std::size_t j = i + 1; j < rays.size(); ++j) {
        const double dx = rays[i].px - rays[j].px;
        const double dy = rays[i].py - rays[j].py;
        const double dz = rays[i].pz - rays[j].pz;
        max_dist = std::max(max_dist, std::sqrt(dx * dx + dy * dy + dz * dz));
      }
    }
    const double threshold = azimuth_length_threshold(f, delta_phi, wave_speed);
    sc.length = max_dist >= threshold ? max_dist : 0.0;
  } else {
    sc.length = 0.0;
  }

  switch (surface_type) {
    case SurfaceType::planar: sc.freq_dependence = 1.0; break;
    case SurfaceType::hyperbolic: sc.freq_dependence = 0.5; break;
    case SurfaceType::monoclinic: sc.freq_dependence = 0.0; break;
  }
  return sc;
}

namespace {

ScatteringCenter sc(double a, double len, double alpha, double phi, double x, double y, double z) {
  ScatteringCenter s;
  s.amplitude = a;
  s.length = len;
  s.freq_dependence = alpha;
  s.orientation = phi;
  s.x = x;
  s.y = y;
  s.z = z;
  return s;
}

// Built-in vehicle-like layouts. Coordinates in meters, scene-centered;
// each class differs in center count, position layout, lengths, and alphas.
std::vector<ScatteringCenter> builtin_layout(int class_id) {
  switch (class_id) {
    case 0:  // main battle tank: boxy hull, turret, long barrel, engine deck
      return {
          sc(1.00, 0.0, 1.0, 0.0, 2.60, 1.55, 0.3),   sc(1.00, 0.0, 1.0, 0.0, 2.60, -1.55, 0.3),
          sc(0.90, 0.0, 1.0, 0.0, -2.60, 1.55, 0.3),  sc(0.90, 0.0, 1.0, 0.0, -2.60, -1.55, 0.3),
          sc(1.40, 0.0, 0.5, 0.0, 0.20, 0.10, 1.3),   sc(0.95, 2.40, 0.5, 0.0, 1.60, 0.35, 1.1),
          sc(0.70, 1.30, 1.0, 1.5707963, -2.10, 0.0, 0.8), sc(0.80, 0.0, 0.5, 0.0, 2.30, 0.0, 0.5),
      };
    case 1:  // wheeled APC: smaller box, roof edge, nose, antenna, wheel line
      return {
          sc(0.90, 0.0, 1.0, 0.0, 2.00, 1.25, 0.4),   sc(0.90, 0.0, 1.0, 0.0, 2.00, -1.25, 0.4),
          sc(0.85, 0.0, 1.0, 0.0, -2.00, 1.25, 0.4),  sc(0.85, 0.0, 1.0, 0.0, -2.00, -1.25, 0.4),
          sc(0.60, 1.80, 1.0, 0.0, 0.0, -0.90, 1.1),  sc(1.20, 0.0, 0.5, 0.0, 2.25, 0.0, 0.4),
          sc(0.50, 0.0, 0.0, 0.0, -1.50, 0.90, 1.9),  sc(0.45, 2.80, 0.0, 0.05, 0.0, 1.20, 0.2),
          sc(0.55, 0.0, 0.5, 0.0, -0.40, 0.0, 1.0),
      };
    case 2:  // missile launcher truck: cab cluster, long tube, bed rail, wheels
      return {
          sc(0.85, 0.0, 1.0, 0.0, 2.90, 1.10, 0.6),   sc(0.85, 0.0, 1.0, 0.0, 2.90, -1.10, 0.6),
          sc(0.80, 0.0, 1.0, 0.0, 1.70, 1.10, 0.7),   sc(0.80, 0.0, 1.0, 0.0, 1.70, -1.10, 0.7),
          sc(1.10, 3.20, 0.5, 0.12, -0.80, 0.35, 1.0), sc(0.80, 0.0, 0.0, 0.0, -2.50, 0.60, 1.2),
          sc(0.50, 2.60, 1.0, 0.0, -1.20, -0.90, 0.6), sc(0.40, 0.0, 0.0, 0.0, -0.50, -1.30, 0.1),
          sc(0.40, 0.0, 0.0, 0.0, -2.20, -1.30, 0.1),  sc(0.60, 0.0, 0.5, 0.0, -3.00, 0.0, 0.2),
      };
    case 3:  // radar trailer: strong dish, mast, generator box
      return {
          sc(1.60, 0.0, 0.5, 0.0, 0.0, 0.0, 2.2),     sc(0.55, 0.0, 0.0, 0.0, 0.0, 0.0, 3.1),
          sc(0.75, 0.0, 1.0, 0.0, -1.80, 0.95, 0.5),  sc(0.75, 0.0, 1.0, 0.0, -1.80, -0.95, 0.5),
          sc(0.65, 1.90, 1.0, 1.5707963, 1.40, 0.0, 0.4), sc(0.45, 0.0, 0.0, 0.0, 2.30, 0.8, 0.1),
          sc(0.45, 0.0, 0.0, 0.0, 2.30, -0.8, 0.1),
      };
    case 4:  // towed howitzer: very long barrel, split trails, shield
      return {
          sc(0.90, 3.50, 0.5, 0.0, 0.90, 0.0, 0.9),   sc(0.75, 0.0, 0.5, 0.0, -0.60, 0.0, 1.0),
          sc(0.55, 2.20, 0.0, 0.45, -1.90, 1.10, 0.2), sc(0.55, 2.20, 0.0, -0.45, -1.90, -1.10, 0.2),
          sc(0.85, 1.60, 1.0, 1.5707963, -0.20, 0.0, 1.2), sc(0.40, 0.0, 0.0, 0.0, 0.20, 1.15, 0.3),
          sc(0.40, 0.0, 0.0, 0.0, 0.20, -1.15, 0.3),  sc(0.50, 0.0, 1.0, 0.0, 2.70, 0.0, 0.4),
      };
    default:  // 5, bulldozer: wide blade, cab, ripper
      return {
          sc(1.10, 2.90, 1.0, 1.5707963, 2.40, 0.0, 0.6), sc(1.00, 0.0, 0.5, 0.0, -0.30, 0.0, 1.6),
          sc(0.70, 0.0, 1.0, 0.0, -0.30, 1.30, 0.5),  sc(0.70, 0.0, 1.0, 0.0, -0.30, -1.30, 0.5),
          sc(0.60, 1.70, 0.0, 0.0, 0.80, 1.40, 0.3),  sc(0.60, 1.70, 0.0, 0.0, 0.80, -1.40, 0.3),
          sc(0.55, 0.0, 0.0, 0.0, -2.60, 0.0, 0.7),
      };
  }
}

}  // namespace

TargetTemplate generate_target_template(int class_id, std::uint64_t seed) {
  if (class_id < 0 || class_id >= kNumBuiltinClasses)
    throw std::invalid_argument("generate_target_template: unknown class_id " + std::to_string(class_id));

  TargetTemplate tpl;
  tpl.class_id = class_id;
  tpl.base_centers = builtin_layout(class_id);

  // Seed-specific fine structure on top of the fixed layout.
  Rng rng(derive_seed(seed, "template", static_cast<std::uint64_t>(class_id)));
  for (auto& c : tpl.base_centers) {
    c.x += rng.normal(0.0, 0.03);
    c.y += rng.normal(0.0, 0.03);
    c.z += rng.normal(0.0, 0.02);
  }
  return tpl;
}

std::vector<ScatteringCenter> jitter_template(const TargetTemplate& tpl, Rng& rng) {
  const JitterSpec& js = tpl.jitter_spec;
  const double theta = rng.normal(0.0, js.global_rotation_sigma);
  const double dx = rng.normal(0.0, js.global_offset_sigma);
  const double dy = rng.normal(0.0, js.global_offset_sigma);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);

  std::vector<ScatteringCenter> out;
  out.reserve(tpl.base_centers.size());
  for (const auto& base : tpl.base_centers) {
    ScatteringCenter c = base;
    c.x += rng.normal(0.0, js.position_sigma);
    c.y += rng.normal(0.0, js.position_sigma);
    c.z += rng.normal(0.0, js.position_sigma);
    const double rx = ct * c.x - st * c.y;
    const double ry = st * c.x + ct * c.y;
    c.x = rx + dx;
    c.y = ry + dy;
    c.orientation += theta + rng.normal(0.0, js.orientation_sigma);
    c.amplitude *= std::exp(js.amplitude_rel_sigma * rng.normal01());
    out.push_back(c);
  }
  return out;
}

}  // namespace mhkt::ascsim
