#include "pinv/models/waveform.hpp"

#include <cmath>
#include <numbers>

namespace pinv::models {

StimulusWaveform waveform_render(const Vector& coeffs, Index grid, double duration_s) {
  if (grid < 2) throw ConfigError("waveform grid needs at least 2 points");
  StimulusWaveform w;
  w.coeffs = coeffs;
  w.duration_s = duration_s;
  w.times = Vector::LinSpaced(grid, 0.0, duration_s);
  w.samples = Vector::Zero(grid);
  for (Index k = 0; k < grid; ++k) {
    const double t = w.times(k);
    double u = 0.0;
    for (Index i = 0; i < coeffs.size(); ++i) {
      u += coeffs(i) * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) * t);
    }
    w.samples(k) = u;
  }
  return w;
}

}  // namespace pinv::models
