#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace inasim {

/// Training workload described by its synchronization footprint: gradient
/// payload per iteration, batch size, and a normal compute-time distribution.
struct ModelSpec {
  std::string name;
  std::uint64_t param_bytes = 0;
  int batch_size = 0;
  double compute_mean_s = 0.1;
  double compute_sigma_s = 0.005;

  void validate() const {
    if (param_bytes == 0) throw std::invalid_argument("param_bytes must be positive");
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
    if (compute_mean_s <= 0.0) throw std::invalid_argument("compute_mean_s must be positive");
    if (compute_sigma_s < 0.0 || compute_sigma_s >= compute_mean_s)
      throw std::invalid_argument("compute_sigma_s must be in [0, compute_mean_s)");
  }
};

inline constexpr std::uint64_t kMiB = 1ull << 20;

/// Built-in workload catalog. ResNet50's 98 MiB gradient payload is the only
/// size pinned by measurement; the rest are standard parameter counts times
/// four bytes and can be overridden via the JSON config.
inline const std::vector<ModelSpec>& catalog() {
  static const std::vector<ModelSpec> models = {
      {"resnet50", 98 * kMiB, 64, 0.1, 0.005},
      {"vgg16", 528 * kMiB, 64, 0.1, 0.005},
      {"inceptionv3", 91 * kMiB, 64, 0.1, 0.005},
      {"resnet101", 170 * kMiB, 64, 0.1, 0.005},
      {"bertbase", 418 * kMiB, 12, 0.1, 0.005},
  };
  return models;
}

inline const ModelSpec& find_model(const std::string& name) {
  for (const ModelSpec& m : catalog())
    if (m.name == name) return m;
  throw std::invalid_argument("unknown model: " + name);
}

/// mean + sigma * z with z ~ N(0,1). Sampling the standard normal and scaling
/// keeps draws pointwise monotone in sigma for a fixed seed and makes
/// sigma = 0 exact.
inline double normal_sample(std::mt19937_64& rng, double mean, double sigma) {
  if (sigma == 0.0) return mean;
  std::normal_distribution<double> dist(0.0, 1.0);
  return mean + sigma * dist(rng);
}

/// Per-iteration compute time draw, clamped to at least 1% of the mean.
inline double sample_compute_time(const ModelSpec& spec, std::mt19937_64& rng) {
  double v = normal_sample(rng, spec.compute_mean_s, spec.compute_sigma_s);
  return std::max(v, 0.01 * spec.compute_mean_s);
}

/// Fixed-point codec: gradients are scaled and rounded to integers so switch
/// aggregation is plain integer addition (bit-exact, order-independent).
struct FixedPointCodec {
  std::int64_t scale = 1;

  void validate() const {
    if (scale < 1) throw std::invalid_argument("codec scale must be >= 1");
  }
};

inline std::int64_t quantize(const FixedPointCodec& codec, double value) {
  codec.validate();
  double scaled = value * static_cast<double>(codec.scale);
  constexpr double kMax = 9.2233720368547e18;  // just under int64 max
  if (!(std::fabs(scaled) < kMax)) throw std::range_error("quantize overflow");
  return static_cast<std::int64_t>(std::llround(scaled));
}

inline double dequantize(const FixedPointCodec& codec, std::int64_t q) {
  codec.validate();
  return static_cast<double>(q) / static_cast<double>(codec.scale);
}

}  // namespace inasim
