#include "qsid/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "builtin_thresholds.hpp"
#include "qsid/collusion_metrics.hpp"
#include "qsid/error.hpp"
#include "qsid/group_detector.hpp"
#include "qsid/parallel.hpp"
#include "qsid/rng.hpp"

namespace qsid {
namespace {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, std::size_t line) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    while (first != last && *first == ' ') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) {
        throw ConfigError("threshold table line " + std::to_string(line) + ": bad number '" + text + "'");
    }
    return v;
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        out.push_back(cell);
    }
    return out;
}

Thresholds thresholds_from_pool(std::vector<double>& pool, const QuantileAnchors& anchors,
                                std::size_t class_size) {
    if (pool.empty()) throw ConfigError("no CS values pooled for class size " + std::to_string(class_size));
    std::sort(pool.begin(), pool.end());
    const Thresholds t{quantile_sorted(pool, anchors.q1), quantile_sorted(pool, anchors.q2),
                       quantile_sorted(pool, anchors.q3), quantile_sorted(pool, anchors.q4)};
    if (!t.strictly_increasing()) {
        throw ConfigError("calibrated thresholds for class size " + std::to_string(class_size) +
                          " are not strictly increasing; the pooled null sample has too few "
                          "distinct values above the anchors");
    }
    return t;
}

}  // namespace

std::vector<std::size_t> default_grid() {
    std::vector<std::size_t> grid;
    for (std::size_t n = 15; n <= 50; n += 5) grid.push_back(n);
    for (std::size_t n = 60; n <= kLargestGridSize; n += 10) grid.push_back(n);
    return grid;
}

ThresholdTable::ThresholdTable(std::vector<std::size_t> grid, std::vector<Thresholds> rows,
                               Thresholds over_250, QuantileAnchors anchors)
    : grid_(std::move(grid)), rows_(std::move(rows)), over_250_(over_250), anchors_(anchors) {
    if (grid_.size() != rows_.size()) throw ConfigError("threshold table grid and rows differ in length");
    for (std::size_t k = 1; k < grid_.size(); ++k) {
        if (grid_[k] <= grid_[k - 1]) throw ConfigError("threshold table grid must be strictly increasing");
    }
    for (std::size_t k = 0; k < rows_.size(); ++k) {
        if (!rows_[k].strictly_increasing()) {
            throw ConfigError("threshold row for class size " + std::to_string(grid_[k]) +
                              " must satisfy 0 < c1 < c2 < c3 < c4");
        }
    }
    if (!over_250_.strictly_increasing()) throw ConfigError("over-250 thresholds must be increasing");
    if (!anchors_.strictly_increasing()) throw ConfigError("quantile anchors must be increasing in [0, 1]");
}

std::optional<Thresholds> ThresholdTable::row(std::size_t class_size) const {
    const auto it = std::lower_bound(grid_.begin(), grid_.end(), class_size);
    if (it == grid_.end() || *it != class_size) return std::nullopt;
    return rows_[static_cast<std::size_t>(it - grid_.begin())];
}

const ThresholdTable& ThresholdTable::builtin() {
    static const ThresholdTable table = [] {
        std::istringstream in(std::string(detail::kBuiltinThresholdCsv));
        return read_csv(in);
    }();
    return table;
}

ThresholdTable ThresholdTable::read_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::optional<QuantileAnchors> anchors;
    bool header_seen = false;
    std::optional<Thresholds> over;
    std::vector<std::size_t> grid;
    std::vector<Thresholds> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != 5) {
            throw ConfigError("threshold table line " + std::to_string(line_no) + ": expected 5 columns");
        }
        if (cells[0] == "#anchors") {
            anchors = QuantileAnchors{parse_double(cells[1], line_no), parse_double(cells[2], line_no),
                                      parse_double(cells[3], line_no), parse_double(cells[4], line_no)};
            continue;
        }
        if (cells[0] == "class_size") {
            header_seen = true;
            continue;
        }
        if (!header_seen) {
            throw ConfigError("threshold table line " + std::to_string(line_no) +
                              ": missing 'class_size,c1,c2,c3,c4' header");
        }
        const Thresholds t{parse_double(cells[1], line_no), parse_double(cells[2], line_no),
                           parse_double(cells[3], line_no), parse_double(cells[4], line_no)};
        if (cells[0] == ">250") {
            over = t;
            continue;
        }
        std::size_t size = 0;
        const auto res = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), size);
        if (res.ec != std::errc() || res.ptr != cells[0].data() + cells[0].size() || size == 0) {
            throw ConfigError("threshold table line " + std::to_string(line_no) + ": bad class size '" +
                              cells[0] + "'");
        }
        grid.push_back(size);
        rows.push_back(t);
    }
    if (!anchors) throw ConfigError("threshold table is missing the '#anchors' row");
    if (!over) throw ConfigError("threshold table is missing the '>250' row");
    return ThresholdTable(std::move(grid), std::move(rows), *over, *anchors);
}

ThresholdTable ThresholdTable::read_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open threshold table '" + path.string() + "'");
    return read_csv(in);
}

void ThresholdTable::write_csv(std::ostream& out) const {
    out << "#anchors," << format_double(anchors_.q1) << ',' << format_double(anchors_.q2) << ','
        << format_double(anchors_.q3) << ',' << format_double(anchors_.q4) << '\n';
    out << "class_size,c1,c2,c3,c4\n";
    auto row_out = [&](const std::string& label, const Thresholds& t) {
        out << label << ',' << format_double(t.c1) << ',' << format_double(t.c2) << ','
            << format_double(t.c3) << ',' << format_double(t.c4) << '\n';
    };
    for (std::size_t k = 0; k < grid_.size(); ++k) row_out(std::to_string(grid_[k]), rows_[k]);
    row_out(">250", over_250_);
}

std::size_t nearest_grid_size(std::size_t n) {
    static const std::vector<std::size_t> grid = default_grid();
    std::size_t best = grid.front();
    for (std::size_t g : grid) {
        const std::size_t d_new = g > n ? g - n : n - g;
        const std::size_t d_best = best > n ? best - n : n - best;
        if (d_new <= d_best) best = g;  // ties go to the larger size
    }
    return best;
}

Thresholds threshold_lookup(const ThresholdTable& table, std::size_t n) {
    if (n > kLargestGridSize) return table.over_250();
    const std::size_t size = nearest_grid_size(n);
    const auto row = table.row(size);
    if (!row) {
        throw ConfigError("threshold table has no row for class size " + std::to_string(size) +
                          " (needed for " + std::to_string(n) + " students)");
    }
    return *row;
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile level must lie in [0, 1]");
    const double h = static_cast<double>(sorted.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::vector<double> subsampled_cs(const ScoreMatrix& exam, std::size_t exam_index, std::size_t n,
                                  std::size_t repeats, std::uint64_t seed, std::size_t max_redraws,
                                  std::size_t* redraws) {
    if (n > exam.students()) {
        throw InvalidArgument("cannot subsample " + std::to_string(n) + " students from an exam of " +
                              std::to_string(exam.students()));
    }
    std::vector<double> pool;
    pool.reserve(n * repeats);
    std::vector<std::size_t> indices(exam.students());
    for (std::size_t r = 0; r < repeats; ++r) {
        for (std::size_t attempt = 0;; ++attempt) {
            auto engine = make_engine(seed, Stream::calibration_subsample, {exam_index, n, r, attempt});
            std::iota(indices.begin(), indices.end(), 0);
            // Partial Fisher-Yates: the first n slots become a uniform subset.
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t pick = k + uniform_index(engine, indices.size() - k);
                std::swap(indices[k], indices[pick]);
            }
            std::vector<std::size_t> chosen(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n));
            std::sort(chosen.begin(), chosen.end());
            try {
                const auto metrics = student_metrics(exam.select_rows(chosen));
                for (const auto& sm : metrics) pool.push_back(sm.cs);
                break;
            } catch (const DegenerateExamError& e) {
                if (attempt >= max_redraws) {
                    throw DegenerateExamError(e.lo_rank(), e.hi_rank());
                }
                if (redraws) ++*redraws;
            }
        }
    }
    return pool;
}

CalibrationResult calibrate_thresholds(std::span<const ScoreMatrix> null_exams,
                                       const CalibrationOptions& options) {
    if (null_exams.empty()) throw InvalidArgument("calibration needs at least one null exam");
    if (!options.anchors.strictly_increasing()) throw ConfigError("quantile anchors must be increasing");
    if (options.repeats == 0) throw ConfigError("calibration needs at least one repeat");
    std::vector<std::size_t> grid = options.grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (const auto& exam : null_exams) {
        if (!grid.empty() && exam.students() < grid.back()) {
            throw InvalidArgument("null exam with " + std::to_string(exam.students()) +
                                  " students is smaller than grid size " + std::to_string(grid.back()));
        }
    }

    // One task per (grid size, exam); pools are concatenated in task order.
    const std::size_t tasks = grid.size() * null_exams.size();
    std::vector<std::vector<double>> pools(tasks);
    std::vector<std::size_t> redraws(tasks, 0);
    parallel_for(tasks, [&](std::size_t t) {
        const std::size_t g = t / null_exams.size();
        const std::size_t e = t % null_exams.size();
        pools[t] = subsampled_cs(null_exams[e], e, grid[g], options.repeats, options.seed,
                                 options.max_redraws, &redraws[t]);
    });

    std::vector<Thresholds> rows;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        std::vector<double> pooled;
        for (std::size_t e = 0; e < null_exams.size(); ++e) {
            auto& part = pools[g * null_exams.size() + e];
            pooled.insert(pooled.end(), part.begin(), part.end());
            part.clear();
            part.shrink_to_fit();
        }
        rows.push_back(thresholds_from_pool(pooled, options.anchors, grid[g]));
    }

    std::vector<std::vector<StudentMetrics>> full(null_exams.size());
    parallel_for(null_exams.size(), [&](std::size_t e) { full[e] = student_metrics(null_exams[e]); });
    std::vector<double> pooled;
    for (const auto& metrics : full) {
        for (const auto& sm : metrics) pooled.push_back(sm.cs);
    }
    const Thresholds over = thresholds_from_pool(pooled, options.anchors, 0);

    CalibrationResult result{ThresholdTable(grid, rows, over, options.anchors), std::nullopt, 0, 0};
    for (std::size_t r : redraws) result.redraws += r;

    std::array<std::size_t, 3> flagged{};
    std::size_t students = 0;
    bool complete = true;
    for (std::size_t e = 0; e < null_exams.size() && complete; ++e) {
        Thresholds t;
        try {
            t = threshold_lookup(result.table, null_exams[e].students());
        } catch (const ConfigError&) {
            complete = false;
            break;
        }
        const auto groups = detect_groups(full[e], null_exams[e].student_ids(), t);
        const auto counts = cumulative_bin_counts(groups);
        for (std::size_t b = 0; b < 3; ++b) flagged[b] += counts[b];
        students += null_exams[e].students();
    }
    result.null_students = students;
    if (complete && students > 0) {
        std::array<double, 3> fractions{};
        for (std::size_t b = 0; b < 3; ++b) {
            fractions[b] = static_cast<double>(flagged[b]) / static_cast<double>(students);
        }
        result.null_bin_fractions = fractions;
    }
    return result;
}

double FprInterval::lower() const noexcept { return std::clamp(estimate - half_width, 0.0, 1.0); }
double FprInterval::upper() const noexcept { return std::clamp(estimate + half_width, 0.0, 1.0); }

FprInterval wald_ci(double p_hat, std::size_t n) {
    if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw InvalidArgument("rate must lie in [0, 1]");
    if (n == 0) throw InvalidArgument("Wald interval needs n >= 1");
    return {p_hat, 1.96 * std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n)), n};
}

}  // namespace qsid
