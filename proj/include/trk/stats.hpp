#pragma once

#include <vector>

namespace trk::stats {

/// Ranks starting at 1; tied values share their average rank.
std::vector<double> average_ranks(const std::vector<double>& values);

/// Throws InvalidArgument when sizes differ, n < 2, or either series is constant.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Pearson correlation of the average ranks.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace trk::stats
