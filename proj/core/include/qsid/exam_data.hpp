#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace qsid {

/// Equality and rounding granularity for scores, a power-of-ten fraction
/// `numerator * 10^-decimals` (0.01 points by default).
struct Grain {
    std::int64_t numerator = 1;
    int decimals = 2;

    /// Parses a positive decimal such as "0.01", "0.5" or "1".
    static Grain parse(std::string_view text);

    double points() const;
    std::string to_string() const;

    friend bool operator==(const Grain&, const Grain&) = default;
};

/// n students x p questions of non-negative scores, stored as integer
/// multiples of the grain. Rows are students in input order.
class ScoreMatrix {
public:
    ScoreMatrix() = default;
    ScoreMatrix(std::vector<std::string> student_ids,
                std::vector<std::string> question_labels,
                std::vector<std::int32_t> units,
                Grain grain = {});

    std::size_t students() const noexcept { return ids_.size(); }
    std::size_t questions() const noexcept { return labels_.size(); }

    const std::vector<std::string>& student_ids() const noexcept { return ids_; }
    const std::vector<std::string>& question_labels() const noexcept { return labels_; }
    const Grain& grain() const noexcept { return grain_; }

    /// Score of student `i` on question `s` in grain units.
    std::int32_t unit(std::size_t i, std::size_t s) const { return units_[i * labels_.size() + s]; }
    std::span<const std::int32_t> row(std::size_t i) const {
        return {units_.data() + i * labels_.size(), labels_.size()};
    }
    std::span<const std::int32_t> units() const noexcept { return units_; }

    double points(std::size_t i, std::size_t s) const;

    /// Test score of student `i` in grain units (exact).
    std::int64_t test_score_units(std::size_t i) const;
    std::vector<std::int64_t> test_score_units() const;

    ScoreMatrix select_rows(std::span<const std::size_t> rows) const;
    ScoreMatrix select_columns(std::span<const std::size_t> columns) const;

    friend bool operator==(const ScoreMatrix&, const ScoreMatrix&) = default;

private:
    std::vector<std::string> ids_;
    std::vector<std::string> labels_;
    std::vector<std::int32_t> units_;
    Grain grain_;
};

/// Rows removed during ingest and preprocessing. Each removed row is in one category.
struct ExclusionLog {
    std::vector<std::string> duplicate_ids;
    std::size_t missing_id_rows = 0;
    std::vector<std::string> low_score_ids;
    /// Only populated when several exams are combined: IDs absent from at least one exam.
    std::vector<std::string> unmatched_ids;

    bool empty() const noexcept {
        return duplicate_ids.empty() && missing_id_rows == 0 && low_score_ids.empty() &&
               unmatched_ids.empty();
    }
    friend bool operator==(const ExclusionLog&, const ExclusionLog&) = default;
};

struct ParseOptions {
    Grain grain;
};

struct ParsedExam {
    ScoreMatrix matrix;
    /// Empty score cells, read as 0.
    std::size_t empty_cells = 0;
    /// Rows dropped because the identifier cell was empty.
    std::size_t missing_id_rows = 0;
    /// IDs that occur on more than one row (rows are kept; `preprocess` removes them).
    std::vector<std::string> repeated_ids;
};

/// Reads `student_id,<q1>,...,<qp>` CSV. Throws ParseError naming row and column.
ParsedExam parse_exam(std::istream& in, const ParseOptions& options = {});
ParsedExam parse_exam_file(const std::filesystem::path& path, const ParseOptions& options = {});

/// Canonical CSV; parse(write(m)) == m.
void write_exam_csv(std::ostream& out, const ScoreMatrix& m);
std::string format_units(std::int64_t units, const Grain& grain);

nlohmann::json exam_to_json(const ScoreMatrix& m);

struct PreprocessResult {
    ScoreMatrix matrix;
    ExclusionLog log;
};

/// Drops every row whose ID is duplicated, then students whose test score is
/// at most 5% of the highest remaining test score. Row order is preserved.
PreprocessResult preprocess(const ScoreMatrix& m);

/// Joins several exams taken by the same class on student ID. Question
/// labels are prefixed with the exam number. IDs repeated inside an exam go
/// to `duplicate_ids`; IDs missing from any exam go to `unmatched_ids`.
PreprocessResult combine_exams(std::span<const ScoreMatrix> exams);

inline constexpr std::size_t kMinStudents = 25;
inline constexpr std::size_t kMinQuestions = 20;
inline constexpr double kLowComplexity = 15.0;

enum class EligibilityStatus {
    ok,
    ok_low_complexity_warning,
    rejected_too_few_students,
    rejected_too_few_questions,
};

std::string_view to_string(EligibilityStatus status);

struct ExamEligibility {
    std::size_t n_students = 0;
    std::size_t n_questions = 0;
    double complexity = 0.0;
    EligibilityStatus status = EligibilityStatus::ok;

    bool accepted() const noexcept {
        return status == EligibilityStatus::ok ||
               status == EligibilityStatus::ok_low_complexity_warning;
    }
    bool low_complexity_warning() const noexcept {
        return status == EligibilityStatus::ok_low_complexity_warning;
    }
};

ExamEligibility check_eligibility(const ScoreMatrix& m);
/// Status rule alone, for callers that already know the complexity.
EligibilityStatus eligibility_status(std::size_t n_students, std::size_t n_questions,
                                     double complexity);

}  // namespace qsid
