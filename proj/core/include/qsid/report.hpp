#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qsid/calibration.hpp"
#include "qsid/collusion_metrics.hpp"
#include "qsid/error.hpp"
#include "qsid/exam_data.hpp"
#include "qsid/group_detector.hpp"
#include "qsid/synthetic_control.hpp"

namespace qsid {

inline constexpr int kReportSchemaVersion = 1;

/// Size of the proctored null sample behind the fixed empFPR levels, and the
/// per-bin rates observed in it.
inline constexpr std::size_t kEmpiricalNullStudents = 10816;
inline constexpr std::array<double, 3> kEmpiricalNullRates{0.00037, 0.00203, 0.00555};

struct RunConfig {
    /// Several inputs are combined into one exam by student ID.
    std::vector<std::filesystem::path> inputs;
    std::filesystem::path output_dir = ".";
    std::uint64_t seed = 0;
    std::size_t synthetic_students = 100000;
    std::size_t cohorts = 5;
    std::optional<std::filesystem::path> threshold_table_path;
    std::optional<std::filesystem::path> empirical_cs_path;
    bool html = true;
    bool json = true;
    std::string course_label;
    std::string exam_label;
    Grain grain;
};

/// Error carrying the pipeline stage and a remediation hint.
class PipelineError : public Error {
public:
    enum class Kind { input, ineligible, internal };

    PipelineError(Kind kind, std::string stage, const std::string& message, std::string hint)
        : Error(stage + ": " + message + (hint.empty() ? "" : " (hint: " + hint + ")")),
          kind_(kind),
          stage_(std::move(stage)),
          hint_(std::move(hint)) {}

    Kind kind() const noexcept { return kind_; }
    const std::string& stage() const noexcept { return stage_; }
    const std::string& hint() const noexcept { return hint_; }

private:
    Kind kind_;
    std::string stage_;
    std::string hint_;
};

struct ReportHeader {
    std::string course;
    std::string exam;
    std::size_t n_students = 0;
    std::size_t n_exams = 1;
    std::size_t n_questions = 0;
    double complexity = 0.0;
    std::vector<double> exam_complexities;
    bool low_complexity_warning = false;
};

struct StudentRow {
    std::string id;
    double test_score = 0.0;
    std::size_t rank = 0;
    std::uint32_t max_is = 0;
    double median_is = 0.0;
    double im = 0.0;
    double local_median_im = 0.0;
    double cs = 0.0;
    std::string partner1;
    std::string partner2;
    bool partner1_tied = false;
    bool partner2_tied = false;
};

struct ReportGroup {
    /// 1-based position in detection order.
    std::size_t rank = 0;
    std::vector<std::string> member_ids;
    std::vector<double> member_cs;
    double max_cs = 0.0;
    RiskBin bin = RiskBin::high_risk_f3;
    double emp_fpr = 0.0;
    std::optional<double> syn_fpr;
    bool excluded = false;
};

struct FprRow {
    RiskBin bin = RiskBin::low_risk_f1;
    double level = 0.0;
    FprInterval empirical;
    FprInterval synthetic;
};

/// ISs between a group's top-CS member and every other student.
struct IsHistogram {
    std::size_t group_rank = 0;
    std::string member_id;
    /// counts[v] = students sharing exactly v identical scores with the member.
    std::vector<std::size_t> counts;
    /// ISs with the other members of the group.
    std::vector<std::uint32_t> group_pair_is;
};

struct ReportBundle {
    int schema_version = kReportSchemaVersion;
    ReportHeader header;
    std::uint64_t seed = 0;
    std::size_t cohorts = 5;
    std::size_t synthetic_students_requested = 0;
    Thresholds thresholds;
    /// Grid size whose row was used, or 0 for the over-250 row.
    std::size_t threshold_class_size = 0;
    std::string threshold_source;
    std::vector<StudentRow> students;
    std::vector<ReportGroup> groups;
    std::vector<FprRow> fpr_table;
    std::size_t n_synthetic = 0;
    std::size_t synthetic_replicates = 0;
    std::size_t synthetic_redraws = 0;
    Histogram query_cs;
    Histogram synthetic_cs;
    std::optional<Histogram> empirical_cs;
    std::string empirical_cs_label;
    std::vector<IsHistogram> is_histograms;
    ExclusionLog exclusions;
    std::size_t empty_cells = 0;
    std::vector<std::string> warnings;
};

/// Parses, preprocesses, checks eligibility, scores, groups, estimates the
/// synthetic FPRs and assembles the report. Throws PipelineError.
ReportBundle run_pipeline(const RunConfig& config);

/// Writes report.html and/or results.json into the output directory.
void write_report(const ReportBundle& bundle, const RunConfig& config);

/// Self-contained HTML with inline SVG charts.
std::string render_html(const ReportBundle& bundle);

/// Stable, versioned JSON carrying every reported number.
nlohmann::ordered_json emit_json(const ReportBundle& bundle);
std::string emit_json_text(const ReportBundle& bundle);
ReportBundle bundle_from_json(const nlohmann::ordered_json& doc);

struct CsSample {
    std::vector<double> values;
    /// From a `# label: ...` comment line, else the file name.
    std::string label;
};

/// Reads a null CS sample: one value per line, optional `cs` header, `#` comments.
CsSample read_cs_sample(const std::filesystem::path& path);

/// Fixed 12-color palette cycled over group rows and charts.
const std::array<const char*, 12>& group_palette();

}  // namespace qsid
