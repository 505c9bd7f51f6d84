#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qsid/calibration.hpp"
#include "qsid/collusion_metrics.hpp"

namespace qsid {

enum class RiskBin { low_risk_f1 = 0, medium_risk_f2 = 1, high_risk_f3 = 2 };

std::string_view to_string(RiskBin bin);
RiskBin risk_bin_from_string(std::string_view text);

/// Cumulative empirical false-positive rates of the three bins.
struct FprLevels {
    double f1 = 0.0004;
    double f2 = 0.0020;
    double f3 = 0.0056;

    double operator[](RiskBin bin) const noexcept {
        return bin == RiskBin::low_risk_f1 ? f1 : bin == RiskBin::medium_risk_f2 ? f2 : f3;
    }
};

/// Groups are dropped from the main report when their bin's cumulative
/// synthetic FPR exceeds this.
inline constexpr double kSynFprExclusion = 0.008;

/// Student indices, ascending.
using StudentSet = std::vector<std::size_t>;

struct CollusionGroup {
    /// Descending CS, ties by ascending student ID.
    std::vector<std::size_t> members;
    double max_cs = 0.0;
    std::optional<RiskBin> bin;
    double emp_fpr = 0.0;
    std::optional<double> syn_fpr;
    bool excluded = false;
};

/// Step 2: connected components of the qualifying {student, 1st partner}
/// pairs, ordered by descending max member CS, ties by the smallest member ID.
std::vector<StudentSet> provisional_groups(std::span<const StudentMetrics> metrics,
                                           std::span<const std::string> ids, double c1, double c2);

/// Step 3: single pass over the ordered sets; a set absorbs every later set
/// holding a student who is the 2nd partner of two or more of its members.
std::vector<CollusionGroup> merge_groups(std::span<const StudentSet> provisional,
                                         std::span<const StudentMetrics> metrics,
                                         std::span<const std::string> ids);

/// Step 4: bin by max CS (lower bounds inclusive) and attach the bin's empFPR.
std::vector<CollusionGroup> assign_bins(std::vector<CollusionGroup> groups, const Thresholds& t,
                                        const FprLevels& levels = {});

/// Steps 2-4.
std::vector<CollusionGroup> detect_groups(std::span<const StudentMetrics> metrics,
                                          std::span<const std::string> ids, const Thresholds& t,
                                          const FprLevels& levels = {});

/// Cumulative per-bin proportions of students in groups: index 0 counts
/// f1-bin members, 1 adds f2, 2 adds f3.
std::array<std::size_t, 3> cumulative_bin_counts(std::span<const CollusionGroup> groups);

struct SynFprEstimate;

/// Attaches each group's cumulative synthetic FPR and flags groups whose
/// bin exceeds kSynFprExclusion.
std::vector<CollusionGroup> apply_synfpr_exclusion(std::vector<CollusionGroup> groups,
                                                   const SynFprEstimate& syn);

}  // namespace qsid
