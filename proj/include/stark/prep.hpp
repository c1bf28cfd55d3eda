#pragma once

#include <array>

#include "stark/config.hpp"
#include "stark/dataio.hpp"
#include "stark/layout.hpp"
#include "stark/rng.hpp"

// Coordinate normalization, training-time augmentations, and stream
// splitting. All functions are pure over [T, P, 3] frame arrays; the
// confidence channel is never touched.

namespace stark {

// Maps pixel coordinates to [-1, 1]: x' = 2x/width - 1, y' = 2y/height - 1.
// Refuses input that already looks normalized (every coordinate within
// [-1-eps, 1+eps] while the frame is larger than a few pixels) — passing
// a sample through twice is always a bug upstream.
KeypointSample normalize_coords(const KeypointSample& sample);

// Nearest-index resampling to T' = max(1, round(T*factor)) frames; frame
// t' copies source index round(t'*(T-1)/(T'-1)). No interpolation, so
// confidence values stay genuine per-frame estimates. Rounding is
// round-half-to-even throughout.
nd::Array temporal_resample(const nd::Array& frames, double factor);

// Rotates normalized (x, y) about the origin by theta degrees. The range
// guard enforces the training bounds; tests may disable it.
nd::Array random_rotation(const nd::Array& frames, double theta_deg,
                          bool enforce_range = true);

// Selects each stream's keypoints in layout order; the four outputs own
// their storage (no aliasing back into `frames`).
std::array<nd::Array, 4> split_streams(const nd::Array& frames,
                                       const StreamLayout& layout);

// Training-time pipeline: normalize, then (flag-gated) temporal resample
// and rotation with per-sample draws from `rng`. Evaluation uses
// augment=false, which reduces to normalize only.
KeypointSample prepare_sample(const KeypointSample& sample, const AugmentConfig& cfg,
                              bool augment, Rng& rng);

}  // namespace stark
