#pragma once

#include <map>
#include <string>
#include <vector>

#include "wmseg/volume.hpp"

namespace wmseg::postprocess {

enum class Connectivity { Faces = 6, Edges = 18, Corners = 26 };

/// Throws ParameterError unless n is 6, 18 or 26.
Connectivity connectivity_from_int(int n);

/// Default threshold with optional per-tract overrides (e.g. lower values
/// for thin tracts).
struct ThresholdTable {
  double default_theta = 0.5;
  std::map<std::string, double> per_tract;

  /// One threshold per channel. Throws ParameterError for values outside
  /// (0,1) and for overrides naming unknown tracts.
  std::vector<double> resolve(const std::vector<std::string>& tracts) const;
};

/// voxel = 1 iff prob >= theta.
Volume binarize(const Volume& probs, double theta);
Volume binarize(const Volume& probs, const std::vector<double>& per_channel_theta);

/// Keeps, per channel, the largest connected component. Equal sizes go to
/// the component holding the smallest linear voxel index.
Volume largest_component(const Volume& mask, Connectivity conn = Connectivity::Corners);

/// binarize followed by largest_component.
Volume finalize(const Volume& probs, const std::vector<double>& per_channel_theta,
                Connectivity conn = Connectivity::Corners);

}  // namespace wmseg::postprocess
