#pragma once

#include <array>

#include "ctmm/cohort/types.hpp"

namespace ctmm::obj {

/// Window summary of physiology: mean of the heart-rate channel, RMSSD of the
/// heart-rate channel, and Shannon entropy (nats) of an 8-bin histogram of the
/// activity channel over the window's own range.
struct PhysioSummary {
  double mean_hr = 0.0;
  double rmssd = 0.0;
  double entropy = 0.0;
  bool present = false;        // at least one observed sample
  bool rmssd_present = false;  // at least two observed heart-rate samples

  std::array<double, 3> values() const { return {mean_hr, rmssd, entropy}; }
};

inline constexpr std::size_t kActivityBins = 8;

/// Summary over observed samples with time in [t0, t1]. Successive
/// differences use consecutive observed samples.
PhysioSummary phi_summary(const WearableStream& w, double t0, double t1, std::size_t hr_channel = 0,
                          std::size_t activity_channel = 1);

/// Per-component standardization frozen from the pretraining split.
struct SummaryStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> sd{1.0, 1.0, 1.0};
};

}  // namespace ctmm::obj
