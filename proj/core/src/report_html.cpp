#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <string>

#include "qsid/report.hpp"

namespace qsid {
namespace {

std::string fmt(const char* format, ...) {
    char buf[256];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

std::string escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string cs_text(double cs) { return fmt("%.2f", cs); }
std::string level_text(double rate) { return fmt("%.2f%%", rate * 100.0); }
std::string rate_text(double rate) { return fmt("%.3f%%", rate * 100.0); }

std::string_view bin_label(RiskBin bin) {
    switch (bin) {
        case RiskBin::low_risk_f1: return "f1 (highest CS)";
        case RiskBin::medium_risk_f2: return "f2";
        case RiskBin::high_risk_f3: return "f3";
    }
    return "";
}

constexpr const char* kQueryColor = "#1f78b4";
constexpr const char* kControlColor = "#bdbdbd";
constexpr const char* kOtherBarColor = "#9e9e9e";

struct Frame {
    double width = 460, height = 260;
    double left = 48, right = 12, top = 26, bottom = 36;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

double nice_step(double range, int target) {
    const double raw = range / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        if (m * mag >= raw) return m * mag;
    }
    return 10.0 * mag;
}

void axes(std::string& svg, const Frame& f, const std::string& title, const std::string& xlabel,
          const std::string& ylabel, double xstep, double ystep) {
    svg += fmt("<text x=\"%.1f\" y=\"16\" text-anchor=\"middle\" font-weight=\"bold\">", f.width / 2);
    svg += escape(title) + "</text>\n";
    svg += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#333\"/>\n", f.px(f.x0), f.py(f.y0),
               f.px(f.x1), f.py(f.y0));
    svg += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#333\"/>\n", f.px(f.x0), f.py(f.y0),
               f.px(f.x0), f.py(f.y1));
    if (xstep > 0) {
        const int count = static_cast<int>(std::floor((f.x1 - f.x0) / xstep + 1e-9));
        for (int k = 0; k <= count; ++k) {
            const double x = f.x0 + k * xstep;
            svg += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#333\"/>", f.px(x), f.py(f.y0),
                       f.px(x), f.py(f.y0) + 4);
            svg += fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n", f.px(x), f.py(f.y0) + 15, x);
        }
    }
    const int ycount = static_cast<int>(std::floor((f.y1 - f.y0) / ystep + 1e-9));
    for (int k = 0; k <= ycount; ++k) {
        const double y = f.y0 + k * ystep;
        svg += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#333\"/>", f.px(f.x0) - 4, f.py(y),
                   f.px(f.x0), f.py(y));
        svg += fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%g</text>\n", f.px(f.x0) - 6, f.py(y) + 4, y);
    }
    svg += fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">", (f.px(f.x0) + f.px(f.x1)) / 2, f.height - 4);
    svg += escape(xlabel) + "</text>\n";
    svg += fmt("<text x=\"12\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 12 %.1f)\">",
               (f.py(f.y0) + f.py(f.y1)) / 2, (f.py(f.y0) + f.py(f.y1)) / 2);
    svg += escape(ylabel) + "</text>\n";
}

std::string svg_open(const Frame& f) {
    return fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
               "viewBox=\"0 0 %.0f %.0f\" font-family=\"sans-serif\" font-size=\"11\">\n",
               f.width, f.height, f.width, f.height);
}

double density(const Histogram& h, std::size_t k) {
    if (h.total == 0 || k >= h.counts.size()) return 0.0;
    return static_cast<double>(h.counts[k]) / (static_cast<double>(h.total) * h.bin_width);
}

void threshold_lines(std::string& svg, const Frame& f, const Thresholds& t, bool vertical) {
    const double cuts[] = {t.c1, t.c2};
    const char* names[] = {"c1", "c2"};
    for (int k = 0; k < 2; ++k) {
        if (vertical) {
            if (cuts[k] > f.x1) continue;
            svg += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#d62728\" "
                       "stroke-dasharray=\"4 3\"/>",
                       f.px(cuts[k]), f.py(f.y0), f.px(cuts[k]), f.py(f.y1));
            svg += fmt("<text x=\"%.1f\" y=\"%.1f\" fill=\"#d62728\">%s</text>\n", f.px(cuts[k]) + 2,
                       f.py(f.y1) + 10 + 11 * k, names[k]);
        } else {
            if (cuts[k] > f.y1) continue;
            svg += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#d62728\" "
                       "stroke-dasharray=\"4 3\"/>",
                       f.px(f.x0), f.py(cuts[k]), f.px(f.x1), f.py(cuts[k]));
            svg += fmt("<text x=\"%.1f\" y=\"%.1f\" fill=\"#d62728\">%s</text>\n", f.px(f.x1) - 16,
                       f.py(cuts[k]) - 3, names[k]);
        }
    }
}

std::string cs_overlay(const Histogram& query, const Histogram& control, const std::string& control_name,
                       const Thresholds& t) {
    Frame f;
    std::size_t bins = std::max(query.counts.size(), control.counts.size());
    f.x1 = std::max(2.5, std::ceil(static_cast<double>(bins) * query.bin_width * 2.0) / 2.0);
    bins = static_cast<std::size_t>(std::lround(f.x1 / query.bin_width));
    double ymax = 0.0;
    for (std::size_t k = 0; k < bins; ++k) ymax = std::max({ymax, density(query, k), density(control, k)});
    const double ystep = nice_step(std::max(ymax, 1e-9), 4);
    f.y1 = std::max(ystep, std::ceil(ymax / ystep) * ystep);

    std::string svg = svg_open(f);
    const double w = query.bin_width;
    for (std::size_t k = 0; k < bins; ++k) {
        const double d = density(control, k);
        if (d <= 0) continue;
        svg += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>", f.px(k * w),
                   f.py(d), f.px((k + 1) * w) - f.px(k * w), f.py(0) - f.py(d), kControlColor);
    }
    svg += "\n";
    for (std::size_t k = 0; k < bins; ++k) {
        const double d = density(query, k);
        if (d <= 0) continue;
        svg += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\" fill-opacity=\"0.55\"/>",
                   f.px(k * w), f.py(d), f.px((k + 1) * w) - f.px(k * w), f.py(0) - f.py(d), kQueryColor);
    }
    svg += "\n";
    threshold_lines(svg, f, t, true);
    axes(svg, f, "Query exam vs " + control_name, "Collusion score (CS)", "Density", 0.5, ystep);
    svg += fmt("<rect x=\"%.1f\" y=\"30\" width=\"10\" height=\"10\" fill=\"%s\" fill-opacity=\"0.55\"/>"
               "<text x=\"%.1f\" y=\"39\">Query exam</text>",
               f.width - 150, kQueryColor, f.width - 136);
    svg += fmt("<rect x=\"%.1f\" y=\"44\" width=\"10\" height=\"10\" fill=\"%s\"/><text x=\"%.1f\" y=\"53\">",
               f.width - 150, kControlColor, f.width - 136);
    svg += escape(control_name) + "</text>\n</svg>\n";
    return svg;
}

std::string cs_bar_graph(const ReportBundle& b) {
    const std::size_t n = b.students.size();
    std::vector<const StudentRow*> by_rank(n, nullptr);
    for (const auto& s : b.students) {
        if (s.rank >= 1 && s.rank <= n) by_rank[s.rank - 1] = &s;
    }
    std::vector<std::string> color(n, kOtherBarColor);
    const auto& palette = group_palette();
    for (const auto& g : b.groups) {
        if (g.excluded) continue;
        for (const auto& id : g.member_ids) {
            for (std::size_t r = 0; r < n; ++r) {
                if (by_rank[r] && by_rank[r]->id == id) color[r] = palette[(g.rank - 1) % palette.size()];
            }
        }
    }
    Frame f;
    f.width = 900;
    f.height = 280;
    f.x0 = 0;
    f.x1 = static_cast<double>(std::max<std::size_t>(n, 1));
    double ymax = b.thresholds.c2;
    for (const auto* s : by_rank) {
        if (s) ymax = std::max(ymax, s->cs);
    }
    const double ystep = nice_step(ymax, 5);
    f.y1 = std::ceil(ymax / ystep) * ystep;

    std::string svg = svg_open(f);
    const double bar = f.px(1) - f.px(0);
    for (std::size_t r = 0; r < n; ++r) {
        if (!by_rank[r]) continue;
        const double cs = by_rank[r]->cs;
        svg += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"", f.px(r), f.py(cs),
                   std::max(bar * 0.9, 0.3), f.py(0) - f.py(cs), color[r].c_str());
        if (color[r] != kOtherBarColor) svg += " stroke=\"#333\" stroke-width=\"0.5\"";
        svg += "><title>" + escape(by_rank[r]->id) + " rank " + std::to_string(r + 1) + " CS " + cs_text(cs) +
               "</title></rect>";
    }
    svg += "\n";
    threshold_lines(svg, f, b.thresholds, false);
    axes(svg, f, "CS by test-score rank", "Test-score rank (1 = highest)", "CS", nice_step(f.x1, 10), ystep);
    svg += "</svg>\n";
    return svg;
}

std::string is_histogram(const IsHistogram& h, const char* color) {
    Frame f;
    f.width = 440;
    f.height = 240;
    f.x0 = 0;
    f.x1 = static_cast<double>(h.counts.empty() ? 1 : h.counts.size());
    std::vector<std::size_t> pairs(h.counts.size(), 0);
    for (auto v : h.group_pair_is) {
        if (v < pairs.size()) ++pairs[v];
    }
    std::size_t ymax = 1;
    for (auto c : h.counts) ymax = std::max(ymax, c);
    const double ystep = std::max(1.0, nice_step(static_cast<double>(ymax), 4));
    f.y1 = std::ceil(static_cast<double>(ymax) / ystep) * ystep;

    std::string svg = svg_open(f);
    for (std::size_t v = 0; v < h.counts.size(); ++v) {
        if (h.counts[v] == 0) continue;
        const auto others = static_cast<double>(h.counts[v] - std::min(pairs[v], h.counts[v]));
        const auto mine = static_cast<double>(std::min(pairs[v], h.counts[v]));
        const double x = f.px(static_cast<double>(v));
        const double w = f.px(static_cast<double>(v + 1)) - x;
        if (others > 0) {
            svg += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>", x, f.py(others),
                       w, f.py(0) - f.py(others), kOtherBarColor);
        }
        if (mine > 0) {
            svg += fmt("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\" stroke=\"#333\"/>", x,
                       f.py(others + mine), w, f.py(others) - f.py(others + mine), color);
        }
    }
    svg += "\n";
    axes(svg, f, "Group " + std::to_string(h.group_rank) + ": ISs of " + h.member_id, "Identity score (IS)",
         "Students", nice_step(f.x1, 8), ystep);
    svg += "</svg>\n";
    return svg;
}

void group_rows(std::string& html, const ReportBundle& b, bool excluded) {
    const auto& palette = group_palette();
    html += "<table class=\"groups\"><tr><th>Group</th><th>Risk bin</th><th>empFPR</th><th>synFPR</th>"
            "<th>Student ID</th><th>CS</th></tr>\n";
    for (const auto& g : b.groups) {
        if (g.excluded != excluded) continue;
        const char* color = palette[(g.rank - 1) % palette.size()];
        for (std::size_t k = 0; k < g.member_ids.size(); ++k) {
            html += fmt("<tr style=\"background:%s\">", color);
            if (k == 0) {
                const auto span = g.member_ids.size();
                html += fmt("<td rowspan=\"%zu\">%zu</td>", span, g.rank);
                html += fmt("<td rowspan=\"%zu\">", span) + std::string(bin_label(g.bin)) + "</td>";
                html += fmt("<td rowspan=\"%zu\">", span) + level_text(g.emp_fpr) + "</td>";
                html += fmt("<td rowspan=\"%zu\">", span) + (g.syn_fpr ? rate_text(*g.syn_fpr) : "n/a") + "</td>";
            }
            html += "<td>" + escape(g.member_ids[k]) + "</td><td>" + cs_text(g.member_cs[k]) + "</td></tr>\n";
        }
    }
    html += "</table>\n";
}

std::string id_list(const std::vector<std::string>& ids) {
    if (ids.empty()) return "none";
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out += ", ";
        out += escape(id);
    }
    return out;
}

constexpr const char* kStyle = R"(<style>
body{font-family:sans-serif;margin:24px;color:#222;max-width:1000px}
h1{font-size:22px}h2{font-size:18px;margin-top:28px;border-bottom:1px solid #ccc}
table{border-collapse:collapse;margin:8px 0}td,th{border:1px solid #aaa;padding:3px 8px;text-align:left}
th{background:#eee}.warn{color:#b00020;font-weight:bold}.note{color:#555;font-style:italic}
.charts svg{margin-right:12px}
</style>
)";

}  // namespace

std::string render_html(const ReportBundle& b) {
    std::string html;
    html.reserve(1 << 16);
    html += "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Collusion report";
    if (!b.header.exam.empty()) html += ": " + escape(b.header.exam);
    html += "</title>\n";
    html += kStyle;
    html += "</head>\n<body>\n<h1>Collusion report</h1>\n<table>\n";
    if (!b.header.course.empty()) html += "<tr><th>Course</th><td>" + escape(b.header.course) + "</td></tr>\n";
    html += "<tr><th>Exam</th><td>" + escape(b.header.exam) + "</td></tr>\n";
    html += fmt("<tr><th>Students</th><td>%zu</td></tr>\n", b.header.n_students);
    html += fmt("<tr><th>Exams combined</th><td>%zu</td></tr>\n", b.header.n_exams);
    html += fmt("<tr><th>Questions</th><td>%zu</td></tr>\n", b.header.n_questions);
    html += fmt("<tr><th>Complexity</th><td>%.1f", b.header.complexity);
    if (!b.header.exam_complexities.empty()) {
        html += " (";
        for (std::size_t k = 0; k < b.header.exam_complexities.size(); ++k) {
            if (k) html += " + ";
            html += fmt("exam %zu: %.1f", k + 1, b.header.exam_complexities[k]);
        }
        html += ")";
    }
    html += "</td></tr>\n";
    html += fmt("<tr><th>Thresholds c1-c4</th><td>%.2f, %.2f, %.2f, %.2f (", b.thresholds.c1, b.thresholds.c2,
                b.thresholds.c3, b.thresholds.c4);
    html += escape(b.threshold_source);
    html += b.threshold_class_size == 0 ? std::string(", over-250 row)")
                                        : fmt(", class size %zu row)", b.threshold_class_size);
    html += "</td></tr>\n";
    html += fmt("<tr><th>Synthetic control</th><td>%zu students in %zu replicates, %zu cohorts, seed %llu</td></tr>\n",
                b.n_synthetic, b.synthetic_replicates, b.cohorts, static_cast<unsigned long long>(b.seed));
    html += "</table>\n";
    if (b.header.low_complexity_warning) {
        html += fmt("<p class=\"warn\">Complexity is lower than required (%.0f). Detection power is reduced.</p>\n",
                    kLowComplexity);
    }
    for (const auto& w : b.warnings) html += "<p class=\"note\">" + escape(w) + "</p>\n";

    html += "<h2>1. CS distributions</h2>\n<div class=\"charts\">\n";
    if (b.empirical_cs) {
        html += cs_overlay(b.query_cs, *b.empirical_cs, "Empirical control", b.thresholds);
    } else {
        html += "<p class=\"note\">Empirical control not shown: no null CS sample was supplied "
                "(pass --empirical-cs FILE).</p>\n";
    }
    html += cs_overlay(b.query_cs, b.synthetic_cs, "Synthetic control", b.thresholds);
    html += "</div>\n";
    if (b.empirical_cs) {
        html += "<p class=\"note\">Empirical control sample: " + escape(b.empirical_cs_label) +
                fmt(" (%zu students).</p>\n", b.empirical_cs->total);
    }

    html += "<h2>2. Collusion groups</h2>\n";
    const bool any_reported =
        std::any_of(b.groups.begin(), b.groups.end(), [](const ReportGroup& g) { return !g.excluded; });
    if (any_reported) {
        group_rows(html, b, false);
    } else {
        html += "<p>No collusion groups detected.</p>\n";
    }
    html += "<h3>False-positive rates by risk bin (95% CI)</h3>\n<table><tr><th>Risk bin</th><th>empFPR level</th>"
            "<th>Empirical null estimate</th><th>Synthetic control estimate</th></tr>\n";
    for (const auto& row : b.fpr_table) {
        html += "<tr><td>" + std::string(bin_label(row.bin)) + "</td><td>" + level_text(row.level) + "</td><td>" +
                rate_text(row.empirical.estimate) + " (&plusmn;" + rate_text(row.empirical.half_width) +
                ")</td><td>" + rate_text(row.synthetic.estimate) + " (&plusmn;" +
                rate_text(row.synthetic.half_width) + ")</td></tr>\n";
    }
    html += "</table>\n";

    html += "<h2>3. CS by test-score rank</h2>\n";
    html += cs_bar_graph(b);

    html += "<h2>4. IS histograms</h2>\n";
    if (b.is_histograms.empty()) {
        html += "<p>No collusion groups detected.</p>\n";
    } else {
        html += "<div class=\"charts\">\n";
        const auto& palette = group_palette();
        for (const auto& h : b.is_histograms) {
            html += is_histogram(h, palette[(h.group_rank - 1) % palette.size()]);
        }
        html += "</div>\n";
    }

    html += "<h2>Appendix: exclusions</h2>\n<table>\n";
    html += "<tr><th>Duplicated IDs</th><td>" + id_list(b.exclusions.duplicate_ids) + "</td></tr>\n";
    html += fmt("<tr><th>Rows without ID</th><td>%zu</td></tr>\n", b.exclusions.missing_id_rows);
    html += "<tr><th>Test score at most 5% of the maximum</th><td>" + id_list(b.exclusions.low_score_ids) +
            "</td></tr>\n";
    if (b.header.n_exams > 1) {
        html += "<tr><th>Missing from a combined exam</th><td>" + id_list(b.exclusions.unmatched_ids) +
                "</td></tr>\n";
    }
    html += fmt("<tr><th>Empty score cells read as 0</th><td>%zu</td></tr>\n", b.empty_cells);
    html += "</table>\n";
    const bool any_excluded =
        std::any_of(b.groups.begin(), b.groups.end(), [](const ReportGroup& g) { return g.excluded; });
    if (any_excluded) {
        html += fmt("<p>Groups whose risk bin has a cumulative synthetic FPR above %.1f%%:</p>\n",
                    kSynFprExclusion * 100.0);
        group_rows(html, b, true);
    } else {
        html += "<p>No groups were excluded by the synthetic-control rule.</p>\n";
    }
    html += "</body>\n</html>\n";
    return html;
}

}  // namespace qsid
