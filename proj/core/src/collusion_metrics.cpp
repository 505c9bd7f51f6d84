#include "qsid/collusion_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qsid/error.hpp"
#include "qsid/parallel.hpp"

namespace qsid {
namespace {

// Dense per-column codes: equal codes <=> equal scores within a column.
// Returns false when some column has more than 256 distinct values.
bool encode_u8(const ScoreMatrix& m, std::vector<std::uint8_t>& codes) {
    const std::size_t n = m.students();
    const std::size_t p = m.questions();
    codes.assign(n * p, 0);
    std::vector<std::int32_t> column(n);
    for (std::size_t s = 0; s < p; ++s) {
        for (std::size_t i = 0; i < n; ++i) column[i] = m.unit(i, s);
        std::sort(column.begin(), column.end());
        const auto last = std::unique(column.begin(), column.end());
        if (last - column.begin() > 256) return false;
        for (std::size_t i = 0; i < n; ++i) {
            codes[i * p + s] = static_cast<std::uint8_t>(
                std::lower_bound(column.begin(), last, m.unit(i, s)) - column.begin());
        }
    }
    return true;
}

inline std::uint32_t count_equal(const std::uint8_t* a, const std::uint8_t* b, std::size_t p) {
    std::uint32_t total = 0;
    std::size_t s = 0;
    while (s < p) {
        const std::size_t end = std::min(p, s + 255);
        std::uint8_t block = 0;
        for (; s < end; ++s) block = static_cast<std::uint8_t>(block + (a[s] == b[s]));
        total += block;
    }
    return total;
}

inline std::uint32_t count_equal(const std::int32_t* a, const std::int32_t* b, std::size_t p) {
    std::uint32_t total = 0;
    for (std::size_t s = 0; s < p; ++s) total += static_cast<std::uint32_t>(a[s] == b[s]);
    return total;
}

template <class Code>
void fill_pairs(const Code* rows, std::size_t n, std::size_t p, IdentityScoreMatrix& out) {
    // Row i owns cells (i, j) and (j, i) for j > i, so tasks never share a cell.
    parallel_for(n, [&](std::size_t i) {
        const Code* a = rows + i * p;
        for (std::size_t j = i + 1; j < n; ++j) {
            const std::uint32_t c = count_equal(a, rows + j * p, p);
            out.at(i, j) = c;
            out.at(j, i) = c;
        }
    });
}

// k-th smallest (0-based) of the values counted in `hist`.
std::size_t kth_from_histogram(const std::vector<std::size_t>& hist, std::size_t k) {
    std::size_t seen = 0;
    for (std::size_t v = 0; v < hist.size(); ++v) {
        seen += hist[v];
        if (seen > k) return v;
    }
    throw InternalError("histogram rank out of range");
}

}  // namespace

IdentityScoreMatrix identity_scores(const ScoreMatrix& m) {
    const std::size_t n = m.students();
    const std::size_t p = m.questions();
    if (n < 2) throw InvalidArgument("identity scores need at least two students");
    IdentityScoreMatrix out(n, p);
    std::vector<std::uint8_t> codes;
    if (encode_u8(m, codes)) {
        fill_pairs(codes.data(), n, p, out);
    } else {
        fill_pairs(m.units().data(), n, p, out);
    }
    return out;
}

std::vector<RankWindow> local_median_windows(std::size_t n) {
    std::vector<RankWindow> windows(n);
    if (n < kFullWindow) {
        std::fill(windows.begin(), windows.end(), RankWindow{1, n});
        return windows;
    }
    constexpr std::size_t half = kFullWindow / 2;        // 15
    constexpr std::size_t edge_rank = kEdgeWindow / 2 + 1;  // 4: first rank with a centered 7-window
    for (std::size_t r = 1; r <= n; ++r) {
        const std::size_t from_top = std::max(r, edge_rank);
        const std::size_t from_bottom = std::max(n - r + 1, edge_rank);
        if (from_top <= half + 1) {
            windows[r - 1] = {1, 2 * from_top - 1};
        } else if (from_bottom <= half + 1) {
            windows[r - 1] = {n - 2 * from_bottom + 2, n};
        } else {
            windows[r - 1] = {r - half, r + half};
        }
    }
    return windows;
}

std::vector<std::size_t> rank_order(const ScoreMatrix& m) {
    const auto totals = m.test_score_units();
    std::vector<std::size_t> order(m.students());
    std::iota(order.begin(), order.end(), 0);
    const auto& ids = m.student_ids();
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (totals[a] != totals[b]) return totals[a] > totals[b];
        return ids[a] < ids[b];
    });
    return order;
}

double median(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("median of an empty sample");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + mid);
    return 0.5 * (lower + upper);
}

std::vector<StudentMetrics> student_metrics(const ScoreMatrix& m, const IdentityScoreMatrix& is) {
    const std::size_t n = m.students();
    if (n < 2) throw InvalidArgument("student metrics need at least two students");
    if (is.students() != n) throw InvalidArgument("identity score matrix does not match the exam");
    const std::size_t p = is.questions();

    std::vector<StudentMetrics> out(n);
    const auto order = rank_order(m);
    for (std::size_t k = 0; k < n; ++k) out[order[k]].rank = k + 1;

    const double grain_points = m.grain().points();
    std::vector<std::size_t> hist(p + 1);
    for (std::size_t i = 0; i < n; ++i) {
        StudentMetrics& sm = out[i];
        sm.test_score_units = m.test_score_units(i);
        sm.test_score = static_cast<double>(sm.test_score_units) * grain_points;

        const auto row = is.row(i);
        std::fill(hist.begin(), hist.end(), 0);
        std::uint32_t best = 0;
        std::size_t best_at = n;
        std::size_t best_count = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const std::uint32_t v = row[j];
            ++hist[v];
            if (best_at == n || v > best) {
                best = v;
                best_at = j;
                best_count = 1;
            } else if (v == best) {
                ++best_count;
            }
        }
        sm.max_is = best;
        sm.partner1 = best_at;
        sm.partner1_tied = best_count > 1;

        std::uint32_t second = 0;
        std::size_t second_at = n;
        std::size_t second_count = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || j == best_at) continue;
            const std::uint32_t v = row[j];
            if (second_at == n || v > second) {
                second = v;
                second_at = j;
                second_count = 1;
            } else if (v == second) {
                ++second_count;
            }
        }
        if (second_at != n) {
            sm.partner2 = second_at;
            sm.partner2_tied = second_count > 1;
        }

        const std::size_t count = n - 1;
        const std::size_t upper = kth_from_histogram(hist, count / 2);
        sm.median_is = count % 2 == 1
                           ? static_cast<double>(upper)
                           : 0.5 * static_cast<double>(kth_from_histogram(hist, count / 2 - 1) + upper);
        sm.im = static_cast<double>(sm.max_is) - sm.median_is;
    }

    std::vector<double> im_by_rank(n);
    for (std::size_t k = 0; k < n; ++k) im_by_rank[k] = out[order[k]].im;
    const auto windows = local_median_windows(n);
    std::vector<double> buffer;
    std::size_t zero_lo = 0;
    std::size_t zero_hi = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const RankWindow w = windows[k];
        buffer.assign(im_by_rank.begin() + static_cast<std::ptrdiff_t>(w.lo - 1),
                      im_by_rank.begin() + static_cast<std::ptrdiff_t>(w.hi));
        const double local = median(std::move(buffer));
        StudentMetrics& sm = out[order[k]];
        sm.local_median_im = local;
        if (local > 0.0) {
            sm.cs = sm.im / local;
        } else if (zero_lo == 0) {
            zero_lo = zero_hi = k + 1;
        } else if (zero_hi == k) {
            zero_hi = k + 1;
        }
    }
    if (zero_lo != 0) throw DegenerateExamError(zero_lo, zero_hi);
    return out;
}

std::vector<StudentMetrics> student_metrics(const ScoreMatrix& m) {
    return student_metrics(m, identity_scores(m));
}

double question_complexity(std::span<const std::size_t> counts) {
    double total = 0.0;
    double squares = 0.0;
    for (std::size_t c : counts) {
        total += static_cast<double>(c);
        squares += static_cast<double>(c) * static_cast<double>(c);
    }
    if (total == 0.0) return 0.0;
    const double collision = squares / (total * total);
    if (collision >= 1.0) return 0.0;
    return -std::log10(collision);
}

ComplexityProfile complexity(const ScoreMatrix& m) {
    ComplexityProfile profile;
    profile.per_question.reserve(m.questions());
    std::vector<std::int32_t> column(m.students());
    std::vector<std::size_t> counts;
    for (std::size_t s = 0; s < m.questions(); ++s) {
        for (std::size_t i = 0; i < m.students(); ++i) column[i] = m.unit(i, s);
        std::sort(column.begin(), column.end());
        counts.clear();
        for (std::size_t i = 0; i < column.size();) {
            std::size_t j = i;
            while (j < column.size() && column[j] == column[i]) ++j;
            counts.push_back(j - i);
            i = j;
        }
        profile.per_question.push_back(question_complexity(counts));
    }
    profile.total = std::accumulate(profile.per_question.begin(), profile.per_question.end(), 0.0);
    return profile;
}

double combined_complexity(std::span<const ComplexityProfile> parts) {
    double total = 0.0;
    for (const auto& part : parts) total += part.total;
    return total;
}

}  // namespace qsid
