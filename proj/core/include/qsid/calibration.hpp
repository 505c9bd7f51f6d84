#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "qsid/exam_data.hpp"

namespace qsid {

/// Collusion-score cutoffs for one class size; 0 < c1 < c2 < c3 < c4.
struct Thresholds {
    double c1 = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;
    double c4 = 0.0;

    bool strictly_increasing() const noexcept { return 0.0 < c1 && c1 < c2 && c2 < c3 && c3 < c4; }
    friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

/// Empirical-null CDF levels matched by c1..c4.
struct QuantileAnchors {
    double q1 = 0.9455;
    double q2 = 0.9971;
    double q3 = 0.9988;
    double q4 = 0.9999;

    std::array<double, 4> values() const noexcept { return {q1, q2, q3, q4}; }
    bool strictly_increasing() const noexcept {
        return 0.0 <= q1 && q1 < q2 && q2 < q3 && q3 < q4 && q4 <= 1.0;
    }
    friend bool operator==(const QuantileAnchors&, const QuantileAnchors&) = default;
};

/// Thresholds for exams with more than 250 students, taken from two
/// benchmark exams with known colluders.
inline constexpr Thresholds kOver250Thresholds{1.23, 1.50, 1.60, 1.70};
inline constexpr std::size_t kLargestGridSize = 250;

/// 15, 20, ..., 50, 60, ..., 250.
std::vector<std::size_t> default_grid();

class ThresholdTable {
public:
    ThresholdTable() = default;
    ThresholdTable(std::vector<std::size_t> grid, std::vector<Thresholds> rows, Thresholds over_250,
                   QuantileAnchors anchors = {});

    const std::vector<std::size_t>& grid() const noexcept { return grid_; }
    const std::vector<Thresholds>& rows() const noexcept { return rows_; }
    const Thresholds& over_250() const noexcept { return over_250_; }
    const QuantileAnchors& anchors() const noexcept { return anchors_; }

    /// Row for an exact grid size, if present.
    std::optional<Thresholds> row(std::size_t class_size) const;

    /// Shipped table: the over-250 row above plus sub-250 rows calibrated
    /// on simulated null exams (see data/default_thresholds.csv).
    static const ThresholdTable& builtin();

    /// Format: `#anchors,q1,q2,q3,q4`, then `class_size,c1,c2,c3,c4`, then
    /// one row per grid size and a final row whose class_size is `>250`.
    static ThresholdTable read_csv(std::istream& in);
    static ThresholdTable read_csv_file(const std::filesystem::path& path);
    void write_csv(std::ostream& out) const;

    friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;

private:
    std::vector<std::size_t> grid_;
    std::vector<Thresholds> rows_;
    Thresholds over_250_ = kOver250Thresholds;
    QuantileAnchors anchors_;
};

/// Grid size used for a class of `n` students: nearest default grid size,
/// ties to the larger one. Only meaningful for n <= 250.
std::size_t nearest_grid_size(std::size_t n);

/// Thresholds for a class of `n`: the over-250 row when n > 250, otherwise
/// the nearest grid row. Throws ConfigError if that row is missing.
Thresholds threshold_lookup(const ThresholdTable& table, std::size_t n);

/// Linear interpolation between adjacent order statistics of an ascending
/// sample: position (N-1)q.
double quantile_sorted(std::span<const double> sorted, double q);

struct CalibrationOptions {
    std::vector<std::size_t> grid = default_grid();
    QuantileAnchors anchors;
    std::size_t repeats = 100;
    std::uint64_t seed = 0;
    /// Redraws allowed per subsample when its CS is undefined.
    std::size_t max_redraws = 10;
};

struct CalibrationResult {
    ThresholdTable table;
    /// Cumulative fraction of null students placed in the f1, f1-f2 and
    /// f1-f3 bins when the null exams are run through detection with the
    /// calibrated table. Informational; never replaces the fixed FPR levels.
    std::optional<std::array<double, 3>> null_bin_fractions;
    std::size_t null_students = 0;
    std::size_t redraws = 0;
};

/// Subsampling-and-quantile-matching. For each grid size n, every null exam
/// is subsampled `repeats` times to n students without replacement; the
/// pooled CS values give c1..c4 at the anchors. The over-250 row uses the
/// pooled CS of the full null exams.
CalibrationResult calibrate_thresholds(std::span<const ScoreMatrix> null_exams,
                                       const CalibrationOptions& options);

/// Pooled CS values of `exam` subsampled to `n` students `repeats` times.
std::vector<double> subsampled_cs(const ScoreMatrix& exam, std::size_t exam_index, std::size_t n,
                                  std::size_t repeats, std::uint64_t seed, std::size_t max_redraws,
                                  std::size_t* redraws = nullptr);

/// Normal-approximation 95% interval for a rate estimated from n Bernoulli trials.
struct FprInterval {
    double estimate = 0.0;
    double half_width = 0.0;
    std::size_t n = 0;

    double lower() const noexcept;
    double upper() const noexcept;
    friend bool operator==(const FprInterval&, const FprInterval&) = default;
};

FprInterval wald_ci(double p_hat, std::size_t n);

}  // namespace qsid
