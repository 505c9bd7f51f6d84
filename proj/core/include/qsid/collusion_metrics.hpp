#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qsid/exam_data.hpp"

namespace qsid {

/// Symmetric n x n counts of identical question scores between students.
/// The diagonal is stored as zero and never read by consumers.
class IdentityScoreMatrix {
public:
    IdentityScoreMatrix() = default;
    IdentityScoreMatrix(std::size_t students, std::size_t questions)
        : n_(students), p_(questions), values_(students * students, 0) {}

    std::size_t students() const noexcept { return n_; }
    std::size_t questions() const noexcept { return p_; }

    std::uint32_t operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
    std::uint32_t& at(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }
    std::span<const std::uint32_t> row(std::size_t i) const { return {values_.data() + i * n_, n_}; }

    friend bool operator==(const IdentityScoreMatrix&, const IdentityScoreMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::size_t p_ = 0;
    std::vector<std::uint32_t> values_;
};

/// IS_ij = number of questions on which students i and j have the same score.
/// Exact on grain units; bit-identical for any thread count. Requires n >= 2.
IdentityScoreMatrix identity_scores(const ScoreMatrix& m);

struct StudentMetrics {
    std::int64_t test_score_units = 0;
    double test_score = 0.0;
    /// 1 = highest test score; ties by ascending student ID.
    std::size_t rank = 0;
    std::uint32_t max_is = 0;
    double median_is = 0.0;
    double im = 0.0;
    double local_median_im = 0.0;
    double cs = 0.0;
    std::size_t partner1 = 0;
    /// Absent only when the class has two students.
    std::optional<std::size_t> partner2;
    /// Another student shares the maximal (second-maximal) IS with this one.
    bool partner1_tied = false;
    bool partner2_tied = false;
};

/// Inclusive range of test-score ranks whose IMs form a student's local median.
struct RankWindow {
    std::size_t lo = 0;
    std::size_t hi = 0;
    std::size_t size() const noexcept { return hi - lo + 1; }
    friend bool operator==(const RankWindow&, const RankWindow&) = default;
};

inline constexpr std::size_t kFullWindow = 31;
inline constexpr std::size_t kEdgeWindow = 7;

/// Window per rank (index r-1 for rank r).
///
/// For n >= 31 the window is 31 ranks centered on the student. Near the top
/// it shrinks while staying centered: rank r in [4, 16] uses ranks
/// [1, 2r-1], so rank 4 has 7 ranks and each step adds 2 until rank 16 has 31.
/// Ranks 1-3 share rank 4's window [1, 7]. The bottom of the list mirrors
/// this. Classes under 31 students use the whole class for every rank.
std::vector<RankWindow> local_median_windows(std::size_t n);

/// Student indices ordered by rank (descending test score, ties by ID).
std::vector<std::size_t> rank_order(const ScoreMatrix& m);

/// Per-student IS summary, IM, local median IM, CS and partners. Throws
/// DegenerateExamError when a local median IM is zero.
std::vector<StudentMetrics> student_metrics(const ScoreMatrix& m, const IdentityScoreMatrix& is);

/// Convenience wrapper computing the IS matrix internally.
std::vector<StudentMetrics> student_metrics(const ScoreMatrix& m);

struct ComplexityProfile {
    std::vector<double> per_question;
    double total = 0.0;
};

/// O_s = -log10(sum over observed scores x of phat_s(x)^2), O = sum of O_s.
ComplexityProfile complexity(const ScoreMatrix& m);

/// Complexity of one question from the frequency of each distinct score.
double question_complexity(std::span<const std::size_t> counts);

/// Combined exams add their complexities.
double combined_complexity(std::span<const ComplexityProfile> parts);

/// Median of a sample; even sizes average the two central order statistics.
double median(std::vector<double> values);

}  // namespace qsid
