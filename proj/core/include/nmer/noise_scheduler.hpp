#pragma once

// Forward-noising schedule and the corruption operators that manufacture
// noisy incomplete multimodal inputs:
//
//   E_t = sqrt(abar_t) * E_0 + sqrt(1 - abar_t) * eps,   abar_t = prod_{s<=t} (1 - beta_s)
//
// eps is standard normal (Gaussian noise) or drawn from {-1, 0, +1}
// (impulse noise, zero with probability p).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nmer/autograd.hpp"
#include "nmer/rng.hpp"
#include "nmer/types.hpp"

namespace nmer {

enum class ScheduleKind { scaled_linear, linear };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

struct NoiseSchedule {
  double beta_start = 0.01;
  double beta_end = 0.5;
  int total_steps = 100;
  ScheduleKind kind = ScheduleKind::scaled_linear;
  std::vector<double> betas;       // betas[t - 1] = beta_t, t = 1..T
  std::vector<double> alpha_bars;  // alpha_bars[t] = abar_t, t = 0..T

  double beta(int t) const;
  double alpha_bar(int t) const;
};

NoiseSchedule build_schedule(double beta_start, double beta_end, int total_steps, ScheduleKind kind);

enum class NoiseKind { gaussian, impulse };

std::string_view to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view name);

inline constexpr double kDefaultImpulseZeroProbability = 0.3;

struct NoiseType {
  NoiseKind kind = NoiseKind::gaussian;
  double zero_probability = kDefaultImpulseZeroProbability;  // impulse only

  static NoiseType gaussian() { return {NoiseKind::gaussian, kDefaultImpulseZeroProbability}; }
  static NoiseType impulse(double p = kDefaultImpulseZeroProbability) { return {NoiseKind::impulse, p}; }
};

/// Which modalities stay clean. Exactly six admissible patterns: every
/// nonempty proper subset of {a, v, l}.
class ConditionPattern {
 public:
  /// Throws unless mask is in 1..6 (bit 0 = a, bit 1 = v, bit 2 = l).
  explicit ConditionPattern(std::uint8_t clean_mask);

  static const std::vector<ConditionPattern>& all();
  /// Accepts "{a,l}", "a,l" or "al".
  static ConditionPattern parse(std::string_view text);

  bool is_clean(Modality m) const { return (mask_ >> index_of(m)) & 1U; }
  std::uint8_t mask() const { return mask_; }
  /// Canonical name, e.g. "{a,l}".
  std::string name() const;

  bool operator==(const ConditionPattern&) const = default;

 private:
  std::uint8_t mask_;
};

Matrix apply_gaussian(const Matrix& e0, int t, const NoiseSchedule& sched, Rng& rng);
FloatMatrix apply_gaussian(const FloatMatrix& e0, int t, const NoiseSchedule& sched, Rng& rng);

/// Elements are 0 with probability p, else +1 / -1 with probability (1-p)/2 each.
Matrix make_impulse_noise(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);

Matrix apply_impulse(const Matrix& e0, int t, double p, const NoiseSchedule& sched, Rng& rng);
FloatMatrix apply_impulse(const FloatMatrix& e0, int t, double p, const NoiseSchedule& sched, Rng& rng);

/// Returns a copy of `record` whose noisy modalities (those not in the
/// condition's clean set) are corrupted independently; clean modalities and
/// the label are copied bit-for-bit.
UtteranceRecord corrupt_condition(const UtteranceRecord& record, const ConditionPattern& cond, const NoiseType& noise,
                                  int t, const NoiseSchedule& sched, Rng& rng);

/// Independent stream for one sample's corruption.
inline Rng corruption_rng(std::uint64_t seed, std::string_view sample_id, int t) {
  return make_rng(seed, {fnv1a(sample_id), static_cast<std::uint64_t>(t)});
}

}  // namespace nmer
