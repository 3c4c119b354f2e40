#include "biped/gait_clock.hpp"

#include <cmath>
#include <numbers>

#include "biped/errors.hpp"

namespace biped {

std::string_view to_string(GaitSegment segment) {
  switch (segment) {
    case GaitSegment::DoubleSupportA:
      return "DoubleSupportA";
    case GaitSegment::FlightRight:
      return "FlightRight";
    case GaitSegment::DoubleSupportB:
      return "DoubleSupportB";
    case GaitSegment::FlightLeft:
      return "FlightLeft";
  }
  return "?";
}

void GaitSchedule::validate() const {
  if (!(std::isfinite(t_double_support) && t_double_support > 0.0) ||
      !(std::isfinite(t_single_support) && t_single_support > 0.0)) {
    throw InputError("gait schedule durations must be finite and > 0");
  }
}

std::array<double, 3> GaitSchedule::boundaries() const {
  const double period = cycle_period();
  return {t_double_support / period, (t_double_support + t_single_support) / period,
          (2.0 * t_double_support + t_single_support) / period};
}

GaitSegment segment_for(const GaitSchedule& schedule, double phi) {
  const auto [a, b, c] = schedule.boundaries();
  if (phi < a) return GaitSegment::DoubleSupportA;
  if (phi < b) return GaitSegment::FlightRight;
  if (phi < c) return GaitSegment::DoubleSupportB;
  return GaitSegment::FlightLeft;
}

GaitPhase phase_at(const GaitSchedule& schedule, double t) {
  if (!std::isfinite(t)) throw InputError("phase_at: time must be finite");
  if (t < 0.0) throw InputError("phase_at: time must be >= 0");
  const double period = schedule.cycle_period();
  double phi = std::fmod(t, period) / period;
  // fmod can land exactly on the period after rounding of t/period products
  if (phi >= 1.0) phi = 0.0;
  return {segment_for(schedule, phi), phi};
}

ClockSignal clock_signal(const GaitSchedule& schedule, double t) {
  const double angle = 2.0 * std::numbers::pi * phase_at(schedule, t).phi;
  return {std::sin(angle), std::cos(angle)};
}

int stance_coefficient(GaitSegment segment, Foot foot) {
  switch (segment) {
    case GaitSegment::DoubleSupportA:
    case GaitSegment::DoubleSupportB:
      return 1;
    case GaitSegment::FlightRight:
      return foot == Foot::Left ? 1 : -1;
    case GaitSegment::FlightLeft:
      return foot == Foot::Right ? 1 : -1;
  }
  return 1;
}

int contact_coefficient(const GaitSchedule& schedule, double t, Foot foot) {
  return stance_coefficient(phase_at(schedule, t).segment, foot);
}

}  // namespace biped
