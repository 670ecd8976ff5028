#pragma once

#include "pinv/core.hpp"

namespace pinv::models {

/// Sum-of-sinusoids current waveform u(t) = sum_i coeffs_i sin(2 pi (i-1) t),
/// t in seconds over a fixed 200 ms window. Export/inspection only; the
/// surrogate model consumes the coefficients directly.
struct StimulusWaveform {
  Vector coeffs;   // nA
  double duration_s = 0.2;
  Vector times;    // s
  Vector samples;  // nA
};

/// Samples at t_k = k * duration / (grid - 1), k = 0..grid-1.
StimulusWaveform waveform_render(const Vector& coeffs, Index grid, double duration_s = 0.2);

}  // namespace pinv::models
