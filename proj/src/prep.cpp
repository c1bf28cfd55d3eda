#include "stark/prep.hpp"

#include <cfenv>
#include <cmath>
#include <stdexcept>

namespace stark {
namespace {

void check_frames_shape(const nd::Array& frames, const char* what) {
  if (frames.rank() != 3 || frames.shape[2] != 3 || frames.shape[0] < 1)
    throw std::invalid_argument(std::string(what) + ": frames must be [T>=1, P, 3], got " +
                                nd::shape_str(frames.shape));
}

}  // namespace

KeypointSample normalize_coords(const KeypointSample& sample) {
  check_frames_shape(sample.frames, "normalize");
  if (!(sample.width > 0) || !(sample.height > 0))
    throw std::invalid_argument("normalize: non-positive frame dimensions for sample '" +
                                sample.id + "'");

  // Already-normalized coordinates sit in [-1, 1]; genuine pixel data in a
  // frame wider than a few pixels does not. Treat the overlap as an error
  // instead of silently crushing everything to the corner.
  const double eps = 1e-6;
  if (sample.width > 4 || sample.height > 4) {
    bool looks_normalized = true;
    const int64_t n = sample.frames.size();
    for (int64_t i = 0; i < n && looks_normalized; i += 3)
      if (std::abs(sample.frames[i]) > 1 + eps || std::abs(sample.frames[i + 1]) > 1 + eps)
        looks_normalized = false;
    if (looks_normalized)
      throw std::invalid_argument("normalize: sample '" + sample.id +
                                  "' already looks normalized (all coordinates within "
                                  "[-1, 1] for a " +
                                  std::to_string(sample.width) + "x" +
                                  std::to_string(sample.height) + " frame)");
  }

  KeypointSample out = sample;
  out.frames = sample.frames.clone();
  for (int64_t i = 0; i < out.frames.size(); i += 3) {
    out.frames[i] = 2.0 * out.frames[i] / sample.width - 1.0;
    out.frames[i + 1] = 2.0 * out.frames[i + 1] / sample.height - 1.0;
  }
  return out;
}

nd::Array temporal_resample(const nd::Array& frames, double factor) {
  check_frames_shape(frames, "resample");
  if (!(factor >= 0.5 && factor <= 1.5))
    throw std::invalid_argument("resample: factor " + std::to_string(factor) +
                                " outside [0.5, 1.5]");
  const int T = frames.shape[0];
  if (T == 1) return frames.clone();  // a single frame has no time axis to stretch
  const int T2 = std::max(1, static_cast<int>(std::nearbyint(T * factor)));
  nd::Array out({T2, frames.shape[1], frames.shape[2]});
  const int64_t row = static_cast<int64_t>(frames.shape[1]) * frames.shape[2];
  for (int t2 = 0; t2 < T2; ++t2) {
    int src = T2 > 1
                  ? static_cast<int>(std::nearbyint(static_cast<double>(t2) * (T - 1) / (T2 - 1)))
                  : 0;
    const double* from = frames.ptr() + static_cast<int64_t>(src) * row;
    double* to = out.ptr() + static_cast<int64_t>(t2) * row;
    for (int64_t i = 0; i < row; ++i) to[i] = from[i];
  }
  return out;
}

nd::Array random_rotation(const nd::Array& frames, double theta_deg, bool enforce_range) {
  check_frames_shape(frames, "rotate");
  if (enforce_range && !(theta_deg >= -15.0 && theta_deg <= 15.0))
    throw std::invalid_argument("rotate: angle " + std::to_string(theta_deg) +
                                " outside [-15, 15] degrees");
  const double rad = theta_deg * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  nd::Array out = frames.clone();
  for (int64_t i = 0; i < out.size(); i += 3) {
    const double x = out[i], y = out[i + 1];
    out[i] = x * c - y * s;
    out[i + 1] = x * s + y * c;
  }
  return out;
}

std::array<nd::Array, 4> split_streams(const nd::Array& frames, const StreamLayout& layout) {
  check_frames_shape(frames, "split");
  if (frames.shape[1] != layout.points)
    throw std::invalid_argument("split: sample has P=" + std::to_string(frames.shape[1]) +
                                " but layout '" + layout.name + "' expects P=" +
                                std::to_string(layout.points));
  const int T = frames.shape[0];
  std::array<nd::Array, 4> out;
  for (int s = 0; s < 4; ++s) {
    const std::vector<int>& idx = layout.stream(s);
    const int Ps = static_cast<int>(idx.size());
    out[static_cast<size_t>(s)] = nd::Array({T, Ps, 3});
    nd::Array& dst = out[static_cast<size_t>(s)];
    for (int t = 0; t < T; ++t)
      for (int p = 0; p < Ps; ++p) {
        const int64_t from = (static_cast<int64_t>(t) * layout.points + idx[static_cast<size_t>(p)]) * 3;
        const int64_t to = (static_cast<int64_t>(t) * Ps + p) * 3;
        dst[to] = frames[from];
        dst[to + 1] = frames[from + 1];
        dst[to + 2] = frames[from + 2];
      }
  }
  return out;
}

KeypointSample prepare_sample(const KeypointSample& sample, const AugmentConfig& cfg,
                              bool augment, Rng& rng) {
  KeypointSample out = normalize_coords(sample);
  if (!augment) return out;
  // One speed factor and one angle per sample: the draws model
  // recording-level variability, not per-frame jitter. Both draws happen
  // unconditionally so disabling one augmentation does not shift the
  // other's stream.
  const double factor = rng.uniform(cfg.speed_min, cfg.speed_max);
  const double theta = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
  if (cfg.augment_speed) out.frames = temporal_resample(out.frames, factor);
  if (cfg.augment_rotate) out.frames = random_rotation(out.frames, theta);
  return out;
}

}  // namespace stark
