#include "qsid/exam_data.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "qsid/collusion_metrics.hpp"
#include "qsid/error.hpp"

namespace qsid {
namespace {

using i128 = __int128;

constexpr int kMaxDecimalDigits = 18;

i128 pow10(int k) {
    i128 r = 1;
    for (int i = 0; i < k; ++i) r *= 10;
    return r;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Exact decimal text -> mantissa / 10^scale. Returns false when not a decimal.
bool parse_decimal(std::string_view text, bool& negative, i128& mantissa, int& scale) {
    negative = false;
    mantissa = 0;
    scale = 0;
    if (!text.empty() && (text.front() == '+' || text.front() == '-')) {
        negative = text.front() == '-';
        text.remove_prefix(1);
    }
    bool seen_digit = false;
    bool seen_point = false;
    int digits = 0;
    for (char c : text) {
        if (c == '.') {
            if (seen_point) return false;
            seen_point = true;
            continue;
        }
        if (c < '0' || c > '9') return false;
        seen_digit = true;
        if (mantissa == 0 && c == '0' && !seen_point) continue;
        if (++digits > kMaxDecimalDigits + 9) return false;
        mantissa = mantissa * 10 + (c - '0');
        if (seen_point) ++scale;
    }
    // Trailing fractional zeros carry no information.
    while (scale > 0 && mantissa % 10 == 0) {
        mantissa /= 10;
        --scale;
    }
    return seen_digit && scale <= kMaxDecimalDigits;
}

// Splits one CSV record, honoring double quotes. Embedded newlines are not supported.
std::vector<std::string> split_record(std::string_view line, std::size_t row) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char c = line[k];
        if (quoted) {
            if (c == '"') {
                if (k + 1 < line.size() && line[k + 1] == '"') {
                    field.push_back('"');
                    ++k;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && trim(field).empty()) {
            field.clear();
            quoted = true;
            was_quoted = true;
        } else if (c == ',') {
            fields.push_back(was_quoted ? field : std::string(trim(field)));
            field.clear();
            was_quoted = false;
        } else {
            field.push_back(c);
        }
    }
    if (quoted) throw ParseError(row, fields.size() + 1, "unterminated quoted field");
    fields.push_back(was_quoted ? field : std::string(trim(field)));
    return fields;
}

std::string lower(std::string_view s) {
    std::string r(s);
    std::transform(r.begin(), r.end(), r.begin(), [](unsigned char c) { return std::tolower(c); });
    return r;
}

}  // namespace

Grain Grain::parse(std::string_view text) {
    bool negative = false;
    i128 mantissa = 0;
    int scale = 0;
    if (!parse_decimal(trim(text), negative, mantissa, scale) || negative || mantissa == 0 ||
        mantissa > std::numeric_limits<std::int32_t>::max() || scale > 9) {
        throw ConfigError("grain must be a positive decimal with at most 9 fractional digits, got '" +
                          std::string(text) + "'");
    }
    return Grain{static_cast<std::int64_t>(mantissa), scale};
}

double Grain::points() const {
    return static_cast<double>(numerator) / static_cast<double>(pow10(decimals));
}

std::string Grain::to_string() const { return format_units(1, *this); }

std::string format_units(std::int64_t units, const Grain& grain) {
    const i128 value = static_cast<i128>(units) * grain.numerator;
    const bool negative = value < 0;
    i128 mag = negative ? -value : value;
    std::string digits;
    do {
        digits.push_back(static_cast<char>('0' + static_cast<int>(mag % 10)));
        mag /= 10;
    } while (mag > 0);
    while (static_cast<int>(digits.size()) <= grain.decimals) digits.push_back('0');
    std::reverse(digits.begin(), digits.end());
    std::string out = digits.substr(0, digits.size() - grain.decimals);
    std::string frac = digits.substr(digits.size() - grain.decimals);
    while (!frac.empty() && frac.back() == '0') frac.pop_back();
    if (!frac.empty()) out += "." + frac;
    return negative ? "-" + out : out;
}

ScoreMatrix::ScoreMatrix(std::vector<std::string> student_ids,
                         std::vector<std::string> question_labels,
                         std::vector<std::int32_t> units, Grain grain)
    : ids_(std::move(student_ids)),
      labels_(std::move(question_labels)),
      units_(std::move(units)),
      grain_(grain) {
    if (units_.size() != ids_.size() * labels_.size()) {
        throw InvalidArgument("score grid has " + std::to_string(units_.size()) +
                              " cells, expected " + std::to_string(ids_.size()) + " x " +
                              std::to_string(labels_.size()));
    }
    if (std::any_of(units_.begin(), units_.end(), [](std::int32_t u) { return u < 0; })) {
        throw InvalidArgument("scores must be non-negative");
    }
}

double ScoreMatrix::points(std::size_t i, std::size_t s) const {
    return static_cast<double>(unit(i, s)) * grain_.points();
}

std::int64_t ScoreMatrix::test_score_units(std::size_t i) const {
    std::int64_t total = 0;
    for (std::int32_t u : row(i)) total += u;
    return total;
}

std::vector<std::int64_t> ScoreMatrix::test_score_units() const {
    std::vector<std::int64_t> totals(students());
    for (std::size_t i = 0; i < totals.size(); ++i) totals[i] = test_score_units(i);
    return totals;
}

ScoreMatrix ScoreMatrix::select_rows(std::span<const std::size_t> rows) const {
    std::vector<std::string> ids;
    std::vector<std::int32_t> units;
    ids.reserve(rows.size());
    units.reserve(rows.size() * questions());
    for (std::size_t r : rows) {
        ids.push_back(ids_.at(r));
        auto src = row(r);
        units.insert(units.end(), src.begin(), src.end());
    }
    return ScoreMatrix(std::move(ids), labels_, std::move(units), grain_);
}

ScoreMatrix ScoreMatrix::select_columns(std::span<const std::size_t> columns) const {
    std::vector<std::string> labels;
    labels.reserve(columns.size());
    for (std::size_t c : columns) labels.push_back(labels_.at(c));
    std::vector<std::int32_t> units;
    units.reserve(students() * columns.size());
    for (std::size_t i = 0; i < students(); ++i) {
        for (std::size_t c : columns) units.push_back(unit(i, c));
    }
    return ScoreMatrix(ids_, std::move(labels), std::move(units), grain_);
}

ParsedExam parse_exam(std::istream& in, const ParseOptions& options) {
    const Grain grain = options.grain;
    if (grain.numerator <= 0) throw ConfigError("grain must be positive");

    ParsedExam result;
    std::string line;
    std::size_t row = 0;
    std::vector<std::string> header;
    while (header.empty() && std::getline(in, line)) {
        ++row;
        if (row == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        header = split_record(line, row);
    }
    if (header.empty()) throw ParseError(row, 1, "malformed header: input is empty");
    if (lower(header.front()) != "student_id") {
        throw ParseError(row, 1, "malformed header: first column must be 'student_id'");
    }
    if (header.size() < 2) throw ParseError(row, 2, "malformed header: no question columns");
    std::unordered_set<std::string> seen_labels;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (header[c].empty()) throw ParseError(row, c + 1, "malformed header: empty question label");
        if (!seen_labels.insert(header[c]).second) {
            throw ParseError(row, c + 1, "malformed header: duplicate question label '" + header[c] + "'");
        }
    }
    const std::size_t p = header.size() - 1;

    // Divisor for value / grain where value = mantissa / 10^scale:
    // units = mantissa * 10^decimals / (numerator * 10^scale).
    std::vector<std::string> ids;
    std::vector<std::int32_t> units;
    std::unordered_map<std::string, std::size_t> id_count;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        auto fields = split_record(line, row);
        if (fields.size() != header.size()) {
            throw ParseError(row, std::min(fields.size(), header.size()) + 1,
                             "expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()));
        }
        std::vector<std::int32_t> row_units(p);
        for (std::size_t c = 1; c < fields.size(); ++c) {
            const std::string_view cell = fields[c];
            if (cell.empty()) {
                ++result.empty_cells;
                row_units[c - 1] = 0;
                continue;
            }
            bool negative = false;
            i128 mantissa = 0;
            int scale = 0;
            if (!parse_decimal(cell, negative, mantissa, scale)) {
                throw ParseError(row, c + 1, "non-numeric score '" + std::string(cell) + "'");
            }
            if (negative && mantissa != 0) {
                throw ParseError(row, c + 1, "negative score '" + std::string(cell) + "'");
            }
            const i128 num = mantissa * pow10(grain.decimals);
            const i128 den = static_cast<i128>(grain.numerator) * pow10(scale);
            i128 q = num / den;
            if (2 * (num % den) >= den) ++q;  // half away from zero; values are non-negative
            if (q > std::numeric_limits<std::int32_t>::max()) {
                throw ParseError(row, c + 1, "score '" + std::string(cell) + "' is too large");
            }
            row_units[c - 1] = static_cast<std::int32_t>(q);
        }
        if (fields.front().empty()) {
            ++result.missing_id_rows;
            continue;
        }
        if (++id_count[fields.front()] == 2) result.repeated_ids.push_back(fields.front());
        ids.push_back(std::move(fields.front()));
        units.insert(units.end(), row_units.begin(), row_units.end());
    }
    header.erase(header.begin());
    result.matrix = ScoreMatrix(std::move(ids), std::move(header), std::move(units), grain);
    return result;
}

ParsedExam parse_exam_file(const std::filesystem::path& path, const ParseOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open exam file '" + path.string() + "'");
    try {
        return parse_exam(in, options);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos && trim(s) == s) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

}  // namespace

void write_exam_csv(std::ostream& out, const ScoreMatrix& m) {
    out << "student_id";
    for (const auto& label : m.question_labels()) out << ',' << csv_field(label);
    out << '\n';
    for (std::size_t i = 0; i < m.students(); ++i) {
        out << csv_field(m.student_ids()[i]);
        for (std::int32_t u : m.row(i)) out << ',' << format_units(u, m.grain());
        out << '\n';
    }
}

nlohmann::json exam_to_json(const ScoreMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.students(); ++i) {
        rows.push_back({{"student_id", m.student_ids()[i]},
                        {"units", std::vector<std::int32_t>(m.row(i).begin(), m.row(i).end())}});
    }
    return {{"grain", m.grain().to_string()},
            {"question_labels", m.question_labels()},
            {"students", std::move(rows)}};
}

PreprocessResult preprocess(const ScoreMatrix& m) {
    if (m.students() == 0) throw EmptyExamError("exam has no student rows");

    PreprocessResult result;
    std::unordered_map<std::string_view, std::size_t> count;
    for (const auto& id : m.student_ids()) ++count[id];

    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < m.students(); ++i) {
        const auto& id = m.student_ids()[i];
        const std::size_t c = count[id];
        if (c == 1) {
            kept.push_back(i);
        } else if (c > 1) {
            result.log.duplicate_ids.push_back(id);
            count[id] = 0;  // report once
        }
    }

    std::int64_t max_total = 0;
    std::vector<std::int64_t> totals(m.students());
    for (std::size_t i : kept) {
        totals[i] = m.test_score_units(i);
        max_total = std::max(max_total, totals[i]);
    }
    std::vector<std::size_t> retained;
    for (std::size_t i : kept) {
        // total <= 5% of max  <=>  20 * total <= max
        if (20 * totals[i] <= max_total) {
            result.log.low_score_ids.push_back(m.student_ids()[i]);
        } else {
            retained.push_back(i);
        }
    }
    if (retained.empty()) throw EmptyExamError("preprocessing removed every student row");
    result.matrix = m.select_rows(retained);
    return result;
}

PreprocessResult combine_exams(std::span<const ScoreMatrix> exams) {
    if (exams.empty()) throw InvalidArgument("no exams to combine");
    if (exams.size() == 1) {
        return {exams.front(), {}};
    }
    const Grain grain = exams.front().grain();
    std::vector<std::unordered_map<std::string_view, std::size_t>> index(exams.size());
    std::unordered_set<std::string_view> duplicated;
    for (std::size_t e = 0; e < exams.size(); ++e) {
        if (!(exams[e].grain() == grain)) throw InvalidArgument("combined exams must share one grain");
        for (std::size_t i = 0; i < exams[e].students(); ++i) {
            const auto& id = exams[e].student_ids()[i];
            if (!index[e].emplace(id, i).second) duplicated.insert(id);
        }
    }

    PreprocessResult result;
    std::vector<std::string> labels;
    for (std::size_t e = 0; e < exams.size(); ++e) {
        for (const auto& label : exams[e].question_labels()) {
            labels.push_back("exam" + std::to_string(e + 1) + ":" + label);
        }
    }
    std::vector<std::string> ids;
    std::vector<std::int32_t> units;
    std::unordered_set<std::string_view> reported;
    for (std::size_t e = 0; e < exams.size(); ++e) {
        for (const auto& id : exams[e].student_ids()) {
            if (!reported.insert(id).second) continue;
            if (duplicated.contains(id)) {
                result.log.duplicate_ids.push_back(id);
                continue;
            }
            bool everywhere = true;
            for (const auto& idx : index) everywhere = everywhere && idx.contains(id);
            if (!everywhere) {
                result.log.unmatched_ids.push_back(id);
                continue;
            }
            ids.push_back(id);
            for (std::size_t f = 0; f < exams.size(); ++f) {
                auto r = exams[f].row(index[f].at(id));
                units.insert(units.end(), r.begin(), r.end());
            }
        }
    }
    result.matrix = ScoreMatrix(std::move(ids), std::move(labels), std::move(units), grain);
    return result;
}

std::string_view to_string(EligibilityStatus status) {
    switch (status) {
        case EligibilityStatus::ok: return "ok";
        case EligibilityStatus::ok_low_complexity_warning: return "ok_low_complexity_warning";
        case EligibilityStatus::rejected_too_few_students: return "rejected_too_few_students";
        case EligibilityStatus::rejected_too_few_questions: return "rejected_too_few_questions";
    }
    return "unknown";
}

EligibilityStatus eligibility_status(std::size_t n_students, std::size_t n_questions,
                                     double complexity) {
    if (n_students < kMinStudents) return EligibilityStatus::rejected_too_few_students;
    if (n_questions < kMinQuestions) return EligibilityStatus::rejected_too_few_questions;
    if (complexity < kLowComplexity) return EligibilityStatus::ok_low_complexity_warning;
    return EligibilityStatus::ok;
}

ExamEligibility check_eligibility(const ScoreMatrix& m) {
    ExamEligibility e;
    e.n_students = m.students();
    e.n_questions = m.questions();
    e.complexity = m.students() > 0 ? complexity(m).total : 0.0;
    e.status = eligibility_status(e.n_students, e.n_questions, e.complexity);
    return e;
}

}  // namespace qsid
