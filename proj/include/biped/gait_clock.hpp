#pragma once

#include <array>
#include <string_view>

namespace biped {

enum class Foot { Left = 0, Right = 1 };

enum class GaitSegment { DoubleSupportA = 0, FlightRight = 1, DoubleSupportB = 2, FlightLeft = 3 };

std::string_view to_string(GaitSegment segment);

/// Periodic stepping cycle: DS -> right swing -> DS -> left swing.
struct GaitSchedule {
  double t_double_support = 0.35;  // s
  double t_single_support = 0.75;  // s

  double cycle_period() const { return 2.0 * (t_double_support + t_single_support); }

  /// Segment boundaries as cycle fractions {a, b, c}; segments are [0,a) [a,b) [b,c) [c,1).
  std::array<double, 3> boundaries() const;

  /// Throws InputError unless both durations are finite and positive.
  void validate() const;
};

struct GaitPhase {
  GaitSegment segment = GaitSegment::DoubleSupportA;
  double phi = 0.0;  // cycle fraction in [0,1)
};

struct ClockSignal {
  double sin_phase = 0.0;
  double cos_phase = 1.0;
};

GaitSegment segment_for(const GaitSchedule& schedule, double phi);

GaitPhase phase_at(const GaitSchedule& schedule, double t);

ClockSignal clock_signal(const GaitSchedule& schedule, double t);

/// +1 when `foot` is scheduled in stance at time t, -1 when scheduled in flight.
int contact_coefficient(const GaitSchedule& schedule, double t, Foot foot);

/// Stance coefficient for a known segment.
int stance_coefficient(GaitSegment segment, Foot foot);

inline int flight_coefficient(GaitSegment segment, Foot foot) { return -stance_coefficient(segment, foot); }

}  // namespace biped
