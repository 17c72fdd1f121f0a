#include "nmer/noise_scheduler.hpp"

#include <cmath>
#include <string>

#include "nmer/error.hpp"

namespace nmer {

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::scaled_linear ? "scaled_linear" : "linear";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "scaled_linear") return ScheduleKind::scaled_linear;
  if (name == "linear") return ScheduleKind::linear;
  throw Error(ErrorKind::invalid_argument, "unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(NoiseKind kind) { return kind == NoiseKind::gaussian ? "gaussian" : "impulse"; }

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "impulse") return NoiseKind::impulse;
  throw Error(ErrorKind::invalid_argument, "unknown noise type '" + std::string(name) + "'");
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > total_steps) throw Error(ErrorKind::invalid_argument, "beta: t out of range");
  return betas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > total_steps) {
    throw Error(ErrorKind::invalid_argument,
                "noise intensity t=" + std::to_string(t) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  return alpha_bars[static_cast<size_t>(t)];
}

NoiseSchedule build_schedule(double beta_start, double beta_end, int total_steps, ScheduleKind kind) {
  if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "schedule bounds must lie in (0, 1)");
  }
  if (!(beta_start < beta_end)) throw Error(ErrorKind::invalid_argument, "schedule requires beta_start < beta_end");
  if (total_steps < 1) throw Error(ErrorKind::invalid_argument, "schedule requires at least one step");

  NoiseSchedule s;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.total_steps = total_steps;
  s.kind = kind;
  s.betas.resize(static_cast<size_t>(total_steps));
  const double lo = kind == ScheduleKind::scaled_linear ? std::sqrt(beta_start) : beta_start;
  const double hi = kind == ScheduleKind::scaled_linear ? std::sqrt(beta_end) : beta_end;
  for (int t = 1; t <= total_steps; ++t) {
    const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(total_steps - 1);
    const double x = lo + frac * (hi - lo);
    double b = kind == ScheduleKind::scaled_linear ? x * x : x;
    // endpoints pinned exactly (sqrt then square is not always the identity)
    if (t == 1) b = beta_start;
    if (t == total_steps && total_steps > 1) b = beta_end;
    s.betas[static_cast<size_t>(t - 1)] = b;
  }
  s.alpha_bars.resize(static_cast<size_t>(total_steps) + 1);
  s.alpha_bars[0] = 1.0;
  for (int t = 1; t <= total_steps; ++t) {
    s.alpha_bars[static_cast<size_t>(t)] = s.alpha_bars[static_cast<size_t>(t - 1)] * (1.0 - s.betas[static_cast<size_t>(t - 1)]);
  }
  return s;
}

ConditionPattern::ConditionPattern(std::uint8_t clean_mask) : mask_(clean_mask) {
  if (clean_mask < 1 || clean_mask > 6) {
    throw Error(ErrorKind::invalid_argument, "condition must keep a nonempty proper subset of {a,v,l} clean");
  }
}

const std::vector<ConditionPattern>& ConditionPattern::all() {
  static const std::vector<ConditionPattern> patterns = {
      ConditionPattern(0b001), ConditionPattern(0b010), ConditionPattern(0b100),
      ConditionPattern(0b011), ConditionPattern(0b101), ConditionPattern(0b110),
  };
  return patterns;
}

ConditionPattern ConditionPattern::parse(std::string_view text) {
  std::uint8_t mask = 0;
  for (char c : text) {
    switch (c) {
      case 'a': mask |= 0b001; break;
      case 'v': mask |= 0b010; break;
      case 'l': mask |= 0b100; break;
      case '{': case '}': case ',': case ' ': break;
      default:
        throw Error(ErrorKind::invalid_argument, "unknown condition '" + std::string(text) + "'");
    }
  }
  if (mask < 1 || mask > 6) throw Error(ErrorKind::invalid_argument, "unknown condition '" + std::string(text) + "'");
  return ConditionPattern(mask);
}

std::string ConditionPattern::name() const {
  std::string out = "{";
  for (Modality m : kModalities) {
    if (!is_clean(m)) continue;
    if (out.size() > 1) out += ',';
    out += short_name(m);
  }
  return out + "}";
}

namespace {

template <typename M>
void check_finite(const M& e0) {
  if (!e0.allFinite()) throw Error(ErrorKind::non_finite, "noise input contains non-finite values");
}

template <typename M>
M mix(const M& e0, const Matrix& eps, double alpha_bar) {
  const double signal = std::sqrt(alpha_bar);
  const double noise = std::sqrt(1.0 - alpha_bar);
  Matrix out = signal * e0.template cast<double>() + noise * eps;
  return out.template cast<typename M::Scalar>();
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix eps(rows, cols);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  return eps;
}

template <typename M>
M gaussian_impl(const M& e0, int t, const NoiseSchedule& sched, Rng& rng) {
  const double abar = sched.alpha_bar(t);
  check_finite(e0);
  if (t == 0) return e0;
  return mix(e0, standard_normal(e0.rows(), e0.cols(), rng), abar);
}

template <typename M>
M impulse_impl(const M& e0, int t, double p, const NoiseSchedule& sched, Rng& rng) {
  const double abar = sched.alpha_bar(t);
  check_finite(e0);
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::invalid_argument, "impulse zero probability must be in [0, 1]");
  if (t == 0) return e0;
  return mix(e0, make_impulse_noise(e0.rows(), e0.cols(), p, rng), abar);
}

}  // namespace

Matrix apply_gaussian(const Matrix& e0, int t, const NoiseSchedule& sched, Rng& rng) {
  return gaussian_impl(e0, t, sched, rng);
}

FloatMatrix apply_gaussian(const FloatMatrix& e0, int t, const NoiseSchedule& sched, Rng& rng) {
  return gaussian_impl(e0, t, sched, rng);
}

Matrix make_impulse_noise(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::invalid_argument, "impulse zero probability must be in [0, 1]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix eps(rows, cols);
  for (Eigen::Index i = 0; i < eps.size(); ++i) {
    const double r = u(rng);
    if (r < p) {
      eps.data()[i] = 0.0;
    } else {
      // remaining mass split evenly between the two signs
      eps.data()[i] = (r - p) < 0.5 * (1.0 - p) ? 1.0 : -1.0;
    }
  }
  return eps;
}

Matrix apply_impulse(const Matrix& e0, int t, double p, const NoiseSchedule& sched, Rng& rng) {
  return impulse_impl(e0, t, p, sched, rng);
}

FloatMatrix apply_impulse(const FloatMatrix& e0, int t, double p, const NoiseSchedule& sched, Rng& rng) {
  return impulse_impl(e0, t, p, sched, rng);
}

UtteranceRecord corrupt_condition(const UtteranceRecord& record, const ConditionPattern& cond, const NoiseType& noise,
                                  int t, const NoiseSchedule& sched, Rng& rng) {
  (void)sched.alpha_bar(t);  // range check even when nothing is noisy at t = 0
  UtteranceRecord out = record;
  if (t == 0) return out;
  for (Modality m : kModalities) {
    if (cond.is_clean(m)) continue;
    switch (noise.kind) {
      case NoiseKind::gaussian:
        out.feature(m) = apply_gaussian(record.feature(m), t, sched, rng);
        break;
      case NoiseKind::impulse:
        out.feature(m) = apply_impulse(record.feature(m), t, noise.zero_probability, sched, rng);
        break;
      default:
        throw Error(ErrorKind::invalid_argument, "unknown noise type");
    }
  }
  return out;
}

}  // namespace nmer
