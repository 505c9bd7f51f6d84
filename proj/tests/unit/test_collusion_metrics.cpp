#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "qsid/collusion_metrics.hpp"
#include "qsid/error.hpp"
#include "qsid/parallel.hpp"
#include "qsid/simulate.hpp"

using namespace qsid;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

void expect_is_matches(const oracle::Scores& x) {
    const auto m = oracle::make_exam(x);
    const auto is = identity_scores(m);
    const auto ref = oracle::identity_scores(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (i != j) ASSERT_EQ(is(i, j), static_cast<std::uint32_t>(ref[i][j])) << i << "," << j;
        }
    }
}

}  // namespace

TEST(IdentityScores, IdenticalRowsScoreP) {
    const oracle::Scores x{{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}};
    EXPECT_EQ(identity_scores(oracle::make_exam(x))(0, 1), 10u);
}

TEST(IdentityScores, HandCount) {
    EXPECT_EQ(identity_scores(oracle::make_exam({{1, 0, 2}, {1, 2, 2}}))(0, 1), 2u);
}

TEST(IdentityScores, NeedsTwoStudents) {
    EXPECT_THROW(identity_scores(oracle::make_exam({{1, 2}})), InvalidArgument);
}

TEST(IdentityScores, MatchesOracleSmall) {
    qsid::Engine engine(5);
    for (int t = 0; t < 50; ++t) expect_is_matches(oracle::random_scores(engine, 5, 4, {0, 1, 2, 3}));
}

TEST(IdentityScores, MatchesOracleWideAndManyValues) {
    qsid::Engine engine(6);
    // More than 255 questions crosses the byte-counter block boundary.
    expect_is_matches(oracle::random_scores(engine, 40, 600, {0, 0.5, 1}));
    // More than 256 distinct values in a column forces the wide-code path.
    oracle::Scores x = oracle::random_scores(engine, 300, 3, {0, 1});
    for (std::size_t i = 0; i < x.size(); ++i) x[i][0] = static_cast<double>(i % 290);
    expect_is_matches(x);
}

TEST(IdentityScores, SymmetricAndThreadIndependent) {
    qsid::Engine engine(8);
    const auto m = oracle::make_exam(oracle::random_scores(engine, 120, 30, {0, 1, 2}));
    set_worker_threads(1);
    const auto a = identity_scores(m);
    set_worker_threads(4);
    const auto b = identity_scores(m);
    set_worker_threads(0);
    EXPECT_EQ(a, b);
    for (std::size_t i = 0; i < 120; ++i) {
        for (std::size_t j = 0; j < 120; ++j) {
            if (i != j) EXPECT_EQ(a(i, j), a(j, i));
        }
    }
}

TEST(IdentityScores, ValueRelabelingInvariance) {
    qsid::Engine engine(9);
    auto x = oracle::random_scores(engine, 20, 8, {0, 1, 2, 3});
    const auto base = identity_scores(oracle::make_exam(x));
    for (auto& row : x) row[2] = 17.0 - 3.0 * row[2];
    EXPECT_EQ(identity_scores(oracle::make_exam(x)), base);
}

TEST(Median, EvenCountAveragesMiddle) {
    EXPECT_DOUBLE_EQ(median({3, 5, 9}), 5.0);
    EXPECT_DOUBLE_EQ(median({1, 2, 3, 10}), 2.5);
    EXPECT_DOUBLE_EQ(median({4}), 4.0);
    EXPECT_THROW(median({}), InvalidArgument);
    qsid::Engine engine(1);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> v(1 + qsid::uniform_index(engine, 40));
        for (auto& x : v) x = static_cast<double>(qsid::uniform_index(engine, 10));
        EXPECT_DOUBLE_EQ(median(v), oracle::median(v));
    }
}

TEST(StudentMetrics, HandMedianFromIsMatrix) {
    // Student 0 has ISs {3, 5, 9} with students 1..3.
    const auto m = oracle::make_exam({{1}, {2}, {3}, {4}});
    IdentityScoreMatrix is(4, 10);
    const std::uint32_t v[4][4] = {{0, 3, 5, 9}, {3, 0, 4, 6}, {5, 4, 0, 2}, {9, 6, 2, 0}};
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) is.at(i, j) = v[i][j];
    }
    const auto metrics = student_metrics(m, is);
    EXPECT_EQ(metrics[0].max_is, 9u);
    EXPECT_DOUBLE_EQ(metrics[0].median_is, 5.0);
    EXPECT_DOUBLE_EQ(metrics[0].im, 4.0);
    EXPECT_EQ(metrics[0].partner1, 3u);
    EXPECT_EQ(metrics[0].partner2, std::optional<std::size_t>(2));
}

TEST(StudentMetrics, ConstantIsAbortsAsDegenerate) {
    // Every pair shares exactly the same number of identical scores.
    const auto m = oracle::make_exam({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
    try {
        student_metrics(m);
        FAIL() << "expected a degenerate-exam error";
    } catch (const DegenerateExamError& e) {
        EXPECT_EQ(e.lo_rank(), 1u);
        EXPECT_EQ(e.hi_rank(), 5u);
    }
}

TEST(StudentMetrics, RanksByScoreThenId) {
    const auto m = oracle::make_exam({{1, 1}, {3, 0}, {2, 0}, {0, 3}}, {"d", "c", "b", "a"});
    const auto order = rank_order(m);
    // Totals: d=2, c=3, b=2, a=3. Ties go to the smaller ID.
    EXPECT_EQ(order, (std::vector<std::size_t>{3, 1, 2, 0}));
}

TEST(StudentMetrics, PartnerTiesGoToLowestIndexAndAreFlagged) {
    // Student 0 matches students 1 and 2 equally well.
    const auto m = oracle::make_exam({{1, 1, 0}, {1, 1, 1}, {1, 1, 2}, {0, 0, 0}, {2, 2, 2}});
    IdentityScoreMatrix is = identity_scores(m);
    std::vector<StudentMetrics> metrics;
    try {
        metrics = student_metrics(m, is);
    } catch (const DegenerateExamError&) {
        GTEST_SKIP();
    }
    EXPECT_EQ(metrics[0].partner1, 1u);
    EXPECT_TRUE(metrics[0].partner1_tied);
    EXPECT_EQ(metrics[0].partner2, std::optional<std::size_t>(2));
}

TEST(StudentMetrics, TwoStudentClassIsDegenerate) {
    // Both IMs are zero: max and median of a single IS coincide.
    const auto m = oracle::make_exam({{1, 2}, {1, 3}});
    EXPECT_THROW(student_metrics(m), DegenerateExamError);
}

TEST(StudentMetrics, MatchesOracleOnRandomExams) {
    qsid::Engine engine(12);
    int compared = 0;
    for (int t = 0; t < 400; ++t) {
        const std::size_t n = 2 + qsid::uniform_index(engine, 45);
        const std::size_t p = 1 + qsid::uniform_index(engine, 12);
        const auto x = oracle::random_scores(engine, n, p, {0, 0.5, 1, 2});
        const auto m = oracle::make_exam(x);
        const auto ref = oracle::metrics(x, m.student_ids());
        if (!ref) {
            EXPECT_THROW(student_metrics(m), DegenerateExamError);
            continue;
        }
        const auto got = student_metrics(m);
        const auto r = oracle::ranks(x, m.student_ids());
        for (std::size_t i = 0; i < n; ++i) {
            ASSERT_EQ(got[i].rank, r[i]);
            ASSERT_EQ(static_cast<int>(got[i].max_is), (*ref)[i].max_is);
            ASSERT_DOUBLE_EQ(got[i].median_is, (*ref)[i].median_is);
            ASSERT_DOUBLE_EQ(got[i].im, (*ref)[i].im);
            ASSERT_DOUBLE_EQ(got[i].local_median_im, (*ref)[i].local_median_im);
            ASSERT_DOUBLE_EQ(got[i].cs, (*ref)[i].cs);
            ASSERT_EQ(got[i].partner1, (*ref)[i].partner1);
            ASSERT_EQ(got[i].partner2, (*ref)[i].partner2);
        }
        ++compared;
    }
    EXPECT_GT(compared, 100);
}

TEST(StudentMetrics, InvariantsOnSimulatedExam) {
    const auto gen = make_null_generator({200, 40, 0.3, 4});
    const auto m = simulate_exam(gen, 9);
    const auto metrics = student_metrics(m);
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        const auto& s = metrics[i];
        EXPECT_GE(s.im, 0.0);
        EXPECT_GE(s.cs, 0.0);
        EXPECT_DOUBLE_EQ(s.im, s.max_is - s.median_is);
        EXPECT_DOUBLE_EQ(s.cs, s.im / s.local_median_im);
        EXPECT_NE(s.partner1, i);
        ASSERT_TRUE(s.partner2);
        EXPECT_NE(*s.partner2, i);
        EXPECT_NE(*s.partner2, s.partner1);
    }
}

TEST(StudentMetrics, QuestionPermutationInvariance) {
    const auto gen = make_null_generator({80, 25, 0.3, 5});
    const auto m = simulate_exam(gen, 2);
    std::vector<std::size_t> cols(m.questions());
    std::iota(cols.begin(), cols.end(), 0);
    std::reverse(cols.begin(), cols.end());
    std::swap(cols[0], cols[7]);
    const auto permuted = m.select_columns(cols);
    const auto a = student_metrics(m);
    const auto b = student_metrics(permuted);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].max_is, b[i].max_is);
        EXPECT_DOUBLE_EQ(a[i].cs, b[i].cs);
        EXPECT_EQ(a[i].partner1, b[i].partner1);
        EXPECT_EQ(a[i].partner2, b[i].partner2);
    }
    EXPECT_NEAR(complexity(m).total, complexity(permuted).total, 1e-9);
}

TEST(StudentMetrics, RowPermutationEquivariance) {
    const auto gen = make_null_generator({90, 25, 0.3, 6});
    const auto m = simulate_exam(gen, 3);
    std::vector<std::size_t> rows(m.students());
    std::iota(rows.begin(), rows.end(), 0);
    qsid::Engine engine(4);
    std::shuffle(rows.begin(), rows.end(), engine);
    const auto permuted = m.select_rows(rows);
    const auto a = student_metrics(m);
    const auto b = student_metrics(permuted);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& x = a[rows[k]];
        const auto& y = b[k];
        EXPECT_EQ(x.rank, y.rank);
        EXPECT_EQ(x.max_is, y.max_is);
        EXPECT_DOUBLE_EQ(x.median_is, y.median_is);
        EXPECT_DOUBLE_EQ(x.cs, y.cs);
        if (!x.partner1_tied) EXPECT_EQ(x.partner1, rows[y.partner1]);
    }
}

TEST(StudentMetrics, CsRemovesMedianIsCorrelation) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto gen = make_null_generator({300, 60, 0.3, seed});
        const auto m = simulate_exam(gen, seed + 100);
        const auto metrics = student_metrics(m);
        std::vector<double> med, mx, cs;
        for (const auto& s : metrics) {
            med.push_back(s.median_is);
            mx.push_back(s.max_is);
            cs.push_back(s.cs);
        }
        EXPECT_LT(std::abs(pearson(med, cs)), std::abs(pearson(med, mx))) << "seed " << seed;
    }
}

TEST(LocalMedianWindows, KnownWindows) {
    const auto w = local_median_windows(100);
    EXPECT_EQ(w[49], (RankWindow{35, 65}));
    EXPECT_EQ(w[0], w[1]);
    EXPECT_EQ(w[1], w[2]);
    EXPECT_EQ(w[0], (RankWindow{1, 7}));
    EXPECT_EQ(w[3], (RankWindow{1, 7}));
    EXPECT_EQ(w[4], (RankWindow{1, 9}));
    EXPECT_EQ(w[15], (RankWindow{1, 31}));
    EXPECT_EQ(w[16], (RankWindow{2, 32}));
    EXPECT_EQ(w[99], (RankWindow{94, 100}));
    EXPECT_EQ(w[97], w[99]);
    for (const auto& x : local_median_windows(25)) EXPECT_EQ(x, (RankWindow{1, 25}));
}

TEST(LocalMedianWindows, MatchOracleAndBounds) {
    for (std::size_t n = 2; n <= 140; ++n) {
        const auto w = local_median_windows(n);
        ASSERT_EQ(w.size(), n);
        for (std::size_t r = 1; r <= n; ++r) {
            const auto [lo, hi] = oracle::window(n, r);
            ASSERT_EQ(w[r - 1], (RankWindow{lo, hi})) << "n=" << n << " r=" << r;
            ASSERT_LE(w[r - 1].lo, r);
            ASSERT_GE(w[r - 1].hi, r);
            ASSERT_GE(w[r - 1].lo, 1u);
            ASSERT_LE(w[r - 1].hi, n);
            if (n >= 31) {
                ASSERT_GE(w[r - 1].size(), 7u);
                ASSERT_LE(w[r - 1].size(), 31u);
                const RankWindow mirror = w[n - r];
                ASSERT_EQ(mirror.lo, n + 1 - w[r - 1].hi);
            }
        }
    }
}

TEST(Complexity, ClosedForms) {
    const std::vector<std::size_t> uniform10(10, 7);
    EXPECT_NEAR(question_complexity(uniform10), 1.0, 1e-12);
    const std::vector<std::size_t> constant{42};
    EXPECT_EQ(question_complexity(constant), 0.0);
    const std::vector<std::size_t> half{3, 3};
    EXPECT_NEAR(question_complexity(half), std::log10(2.0), 1e-12);
}

TEST(Complexity, ProfileOfMatrix) {
    oracle::Scores x;
    for (int i = 0; i < 20; ++i) x.push_back({static_cast<double>(i % 10), 5.0, static_cast<double>(i % 2)});
    const auto c = complexity(oracle::make_exam(x));
    ASSERT_EQ(c.per_question.size(), 3u);
    EXPECT_NEAR(c.per_question[0], 1.0, 1e-12);
    EXPECT_EQ(c.per_question[1], 0.0);
    EXPECT_NEAR(c.per_question[2], std::log10(2.0), 1e-12);
    EXPECT_NEAR(c.total, 1.0 + std::log10(2.0), 1e-12);
    const std::vector<ComplexityProfile> parts{c, c};
    EXPECT_NEAR(combined_complexity(parts), 2 * c.total, 1e-12);
}

TEST(Complexity, BoundedByLogN) {
    qsid::Engine engine(21);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 1 + qsid::uniform_index(engine, 30);
        const auto x = oracle::random_scores(engine, n, 4, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
        for (double o : complexity(oracle::make_exam(x)).per_question) {
            EXPECT_GE(o, 0.0);
            EXPECT_LE(o, std::log10(static_cast<double>(n)) + 1e-12);
        }
    }
}
