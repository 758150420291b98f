#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsm/core/error.hpp"
#include "dsm/quality/model.hpp"

namespace dsm::quality {

struct Candidate {
  double spindle_rpm = 0;
  double feed_mm_s = 0;
  bool operator==(const Candidate &) const = default;
};

struct Recommendation {
  Candidate candidate;
  double risk = 0;
};

/// Maps a candidate setting, in the context of the current features, to
/// the feature vector the model would see under that setting.
using Predictor = std::function<FeatureValues(const FeatureValues &context, const Candidate &)>;

/// Lower feed first, then lower rpm.
inline bool preferred(const Candidate &a, const Candidate &b) {
  if (a.feed_mm_s != b.feed_mm_s)
    return a.feed_mm_s < b.feed_mm_s;
  return a.spindle_rpm < b.spindle_rpm;
}

inline Recommendation recommend_parameters(const QualityModel &m, const FeatureValues &context,
                                           const std::vector<Candidate> &grid, const Predictor &predict) {
  if (grid.empty())
    throw Error(Errc::invalid_value, "grid", "empty candidate grid");
  Recommendation best;
  bool have = false;
  for (const auto &c : grid) {
    double r = predict_risk(m, predict(context, c));
    if (!have || r < best.risk || (r == best.risk && preferred(c, best.candidate))) {
      best = {c, r};
      have = true;
    }
  }
  return best;
}

inline std::vector<Candidate> grid_of(const std::vector<double> &rpms, const std::vector<double> &feeds) {
  std::vector<Candidate> g;
  for (double r : rpms)
    for (double f : feeds)
      g.push_back({r, f});
  return g;
}

/// Plant surrogate for the trimming cell: a candidate changes the machine
/// parameters and the derived chip load; every other feature (wear,
/// airflow, vibration) keeps its context value. Feature names may carry a
/// channel prefix ("state.feed_mm_s").
inline FeatureValues machine_surrogate(const FeatureValues &context, const Candidate &c) {
  FeatureValues out = context;
  auto ends_with = [](const std::string &s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0 &&
           (s.size() == suffix.size() || s[s.size() - suffix.size() - 1] == '.');
  };
  for (auto &[name, v] : out) {
    if (ends_with(name, "spindle_rpm"))
      v = c.spindle_rpm;
    else if (ends_with(name, "feed_mm_s"))
      v = c.feed_mm_s;
    else if (ends_with(name, "chip_load_mm_rev"))
      v = 60.0 * c.feed_mm_s / c.spindle_rpm;
  }
  return out;
}

} // namespace dsm::quality
