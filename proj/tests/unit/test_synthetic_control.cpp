#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "qsid/error.hpp"
#include "qsid/parallel.hpp"
#include "qsid/simulate.hpp"
#include "qsid/synthetic_control.hpp"

using namespace qsid;

namespace {

CopulaModel single_cohort_model(std::size_t n, std::vector<Marginal> marginals, Eigen::MatrixXd corr) {
    CopulaModel model;
    for (std::size_t s = 0; s < marginals.size(); ++s) model.question_labels.push_back("q" + std::to_string(s + 1));
    model.cohorts.push_back(make_cohort(n, std::move(marginals), std::move(corr)));
    return model;
}

std::vector<std::int32_t> column(const ScoreMatrix& m, std::size_t s) {
    std::vector<std::int32_t> out(m.students());
    for (std::size_t i = 0; i < m.students(); ++i) out[i] = m.unit(i, s);
    return out;
}

double total_variation(const Marginal& fitted, const std::vector<std::int32_t>& sample) {
    std::map<std::int32_t, double> freq;
    for (auto v : sample) freq[v] += 1.0 / static_cast<double>(sample.size());
    double tv = 0.0;
    for (std::size_t j = 0; j < fitted.support.size(); ++j) {
        tv += std::abs(fitted.probabilities[j] - freq[fitted.support[j]]);
        freq.erase(fitted.support[j]);
    }
    for (const auto& [v, f] : freq) tv += f;
    return tv / 2.0;
}

std::vector<double> ranks_of(const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t k = 0; k < idx.size();) {
        std::size_t e = k;
        while (e + 1 < idx.size() && x[idx[e + 1]] == x[idx[k]]) ++e;
        for (std::size_t t = k; t <= e; ++t) r[idx[t]] = 0.5 * static_cast<double>(k + e);
        k = e + 1;
    }
    return r;
}

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

double spearman(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b) {
    return pearson(ranks_of(std::vector<double>(a.begin(), a.end())), ranks_of(std::vector<double>(b.begin(), b.end())));
}

/// Two-sided KS statistic against Uniform[0, 1].
double ks_uniform(std::vector<double> u) {
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        d = std::max({d, (k + 1) / n - u[k], u[k] - k / n});
    }
    return d;
}

}  // namespace

TEST(Marginal, FromCountsAndQuantile) {
    const std::vector<std::size_t> counts{3, 7};
    const auto m = Marginal::from_counts({0, 200}, counts);
    EXPECT_DOUBLE_EQ(m.probabilities[0], 0.3);
    EXPECT_EQ(m.cdf.back(), 1.0);
    EXPECT_EQ(m.quantile(0.0), 0);
    EXPECT_EQ(m.quantile(0.3), 0);
    EXPECT_EQ(m.quantile(0.3000001), 200);
    EXPECT_EQ(m.quantile(1.0), 200);
    EXPECT_DOUBLE_EQ(m.cdf_below(1), 0.3);
    EXPECT_EQ(m.index_of(200), 1u);
    EXPECT_THROW(m.index_of(100), InvalidArgument);
    EXPECT_THROW(Marginal::from_probabilities({2, 1}, {0.5, 0.5}), InvalidArgument);
}

TEST(Marginal, FitSumsToOne) {
    const std::vector<std::int32_t> scores{5, 1, 5, 5, 9, 1, 5};
    const auto m = Marginal::fit(scores);
    EXPECT_EQ(m.support, (std::vector<std::int32_t>{1, 5, 9}));
    EXPECT_NEAR(std::accumulate(m.probabilities.begin(), m.probabilities.end(), 0.0), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(m.probabilities[1], 4.0 / 7.0);
}

TEST(Marginal, DegenerateQuestion) {
    const std::vector<std::int32_t> scores(10, 700);
    const auto m = Marginal::fit(scores);
    EXPECT_TRUE(m.degenerate());
    EXPECT_EQ(m.probabilities, std::vector<double>{1.0});
    const auto model = single_cohort_model(1000, {m, Marginal::fit(std::vector<std::int32_t>{0, 1})},
                                           Eigen::MatrixXd::Identity(2, 2));
    const auto sample = sample_synthetic(model, 3);
    for (std::size_t i = 0; i < sample.students(); ++i) EXPECT_EQ(sample.unit(i, 0), 700);
}

TEST(SplitCohorts, SizesAlongRankOrder) {
    qsid::Engine engine(51);
    const auto m = oracle::make_exam(oracle::random_scores(engine, 250, 5, {0, 1, 2, 3}));
    const auto cohorts = split_cohorts(m, 5);
    ASSERT_EQ(cohorts.size(), 5u);
    for (const auto& c : cohorts) EXPECT_EQ(c.size(), 50u);
    // Cohort 1 holds the 50 best-ranked students.
    const auto order = rank_order(m);
    EXPECT_TRUE(std::equal(cohorts[0].begin(), cohorts[0].end(), order.begin()));

    const auto m2 = m.select_rows(std::vector<std::size_t>(order.begin(), order.begin() + 252 - 5));
    const auto uneven = split_cohorts(m2, 5);
    std::vector<std::size_t> sizes;
    for (const auto& c : uneven) sizes.push_back(c.size());
    EXPECT_EQ(sizes, (std::vector<std::size_t>{50, 50, 49, 49, 49}));
    EXPECT_THROW(split_cohorts(oracle::make_exam({{1}, {2}, {3}}), 2), InvalidArgument);
}

TEST(RepairCorrelation, MakesPositiveDefiniteUnitDiagonal) {
    Eigen::MatrixXd c(3, 3);
    c << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
    const auto r = repair_correlation(c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
    EXPECT_GE(eig.eigenvalues().minCoeff(), kMinCorrelationEigenvalue * 0.999);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(r(k, k), 1.0, 1e-12);
    EXPECT_TRUE(r.isApprox(r.transpose()));
    const Eigen::MatrixXd good = Eigen::MatrixXd::Identity(3, 3) * 0.5 + Eigen::MatrixXd::Constant(3, 3, 0.5);
    EXPECT_TRUE(repair_correlation(good).isApprox(good, 1e-12));
}

TEST(DistributionalTransform, UniformOnKnownMultinomial) {
    const auto marginal = Marginal::from_probabilities({0, 50, 100, 300}, {0.1, 0.5, 0.15, 0.25});
    qsid::Engine data(52);
    std::vector<std::int32_t> scores(20000);
    for (auto& s : scores) s = marginal.quantile(uniform01(data));
    qsid::Engine v(53);
    const auto u = distributional_transform(scores, marginal, v);
    const double d = ks_uniform(u);
    // alpha = 0.001 critical value.
    EXPECT_LT(d, 1.949 / std::sqrt(static_cast<double>(u.size())));
}

TEST(SampleSynthetic, BinaryMarginalFrequency) {
    const auto marginal = Marginal::from_probabilities({0, 200}, {0.3, 0.7});
    const auto model = single_cohort_model(100000, {marginal}, Eigen::MatrixXd::Identity(1, 1));
    const auto sample = sample_synthetic(model, 1);
    const auto col = column(sample, 0);
    const double zeros = static_cast<double>(std::count(col.begin(), col.end(), 0)) / col.size();
    EXPECT_NEAR(zeros, 0.3, 0.02);
    EXPECT_EQ(sample.student_ids()[0], "syn-1-1");
}

TEST(SampleSynthetic, IndependentModelHasNoCorrelation) {
    std::vector<Marginal> marginals;
    for (int s = 0; s < 6; ++s) marginals.push_back(Marginal::from_probabilities({0, 1, 2, 3}, {0.2, 0.3, 0.3, 0.2}));
    const auto model = single_cohort_model(10000, marginals, Eigen::MatrixXd::Identity(6, 6));
    const auto sample = sample_synthetic(model, 2);
    double total = 0;
    int pairs = 0;
    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = a + 1; b < 6; ++b) {
            total += std::abs(spearman(column(sample, a), column(sample, b)));
            ++pairs;
        }
    }
    EXPECT_LE(total / pairs, 0.05);
}

TEST(SampleSynthetic, RecoversLatentCorrelation) {
    std::vector<std::int32_t> support(60);
    std::iota(support.begin(), support.end(), 0);
    std::vector<Marginal> marginals(3, Marginal::from_probabilities(support, std::vector<double>(60, 1.0)));
    Eigen::MatrixXd r = Eigen::MatrixXd::Constant(3, 3, 0.6);
    r.diagonal().setOnes();
    const auto model = single_cohort_model(100000, marginals, r);
    const auto sample = sample_synthetic(model, 4);
    const boost::math::normal normal;
    std::vector<std::vector<double>> z(3);
    qsid::Engine v(5);
    for (std::size_t s = 0; s < 3; ++s) {
        for (double u : distributional_transform(column(sample, s), marginals[s], v)) {
            z[s].push_back(boost::math::quantile(normal, std::clamp(u, 1e-12, 1 - 1e-12)));
        }
    }
    EXPECT_NEAR(pearson(z[0], z[1]), 0.6, 0.05);
    EXPECT_NEAR(pearson(z[0], z[2]), 0.6, 0.05);
    EXPECT_NEAR(pearson(z[1], z[2]), 0.6, 0.05);
}

TEST(FitCopula, DuplicatedColumnsAreStronglyCorrelated) {
    // A finely graded column (sum of ten questions) appears twice.
    const auto gen = make_null_generator({300, 20, 0.3, 7});
    const auto base = simulate_exam(gen, 1);
    auto labels = base.question_labels();
    labels.push_back("sum_a");
    labels.push_back("sum_b");
    std::vector<std::int32_t> units;
    for (std::size_t i = 0; i < base.students(); ++i) {
        std::int32_t sum = 0;
        for (std::size_t s = 0; s < base.questions(); ++s) {
            units.push_back(base.unit(i, s));
            if (s < 10) sum += base.unit(i, s);
        }
        units.push_back(sum);
        units.push_back(sum);
    }
    const ScoreMatrix m(base.student_ids(), labels, units, base.grain());
    const auto model = fit_copula(m, 1, 2);
    ASSERT_GE(model.cohorts[0].marginals[20].support.size(), 10u);
    EXPECT_GE(model.cohorts[0].corr(20, 21), 0.9);
}

TEST(FitCopula, StructureAndSupportContainment) {
    const auto gen = make_null_generator({253, 30, 0.3, 8});
    const auto m = simulate_exam(gen, 2);
    const auto model = fit_copula(m, 5, 3);
    ASSERT_EQ(model.cohorts.size(), 5u);
    EXPECT_EQ(model.students(), 253u);
    const auto groups = split_cohorts(m, 5);
    for (std::size_t k = 0; k < 5; ++k) {
        const auto& c = model.cohorts[k];
        EXPECT_EQ(c.n_students, groups[k].size());
        EXPECT_TRUE(c.corr.isApprox(c.corr.transpose()));
        for (Eigen::Index s = 0; s < c.corr.rows(); ++s) EXPECT_DOUBLE_EQ(c.corr(s, s), 1.0);
        for (const auto& mg : c.marginals) {
            EXPECT_NEAR(std::accumulate(mg.probabilities.begin(), mg.probabilities.end(), 0.0), 1.0, 1e-12);
        }
    }
    const auto sample = sample_synthetic(model, 9);
    std::size_t row = 0;
    for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t i = 0; i < model.cohorts[k].n_students; ++i, ++row) {
            for (std::size_t s = 0; s < m.questions(); ++s) {
                const auto& support = model.cohorts[k].marginals[s].support;
                ASSERT_TRUE(std::binary_search(support.begin(), support.end(), sample.unit(row, s)));
            }
        }
    }
    const auto j = model_to_json(model);
    EXPECT_EQ(j.at("cohorts").size(), 5u);
    EXPECT_THROW(fit_copula(m.select_rows(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8}), 5, 0),
                 InvalidArgument);
}

TEST(FitCopula, ConstantQuestionInCohortGetsZeroCorrelation) {
    auto gen = make_null_generator({100, 20, 0.3, 9});
    auto m = simulate_exam(gen, 3);
    std::vector<std::int32_t> units(m.units().begin(), m.units().end());
    for (std::size_t i = 0; i < m.students(); ++i) units[i * m.questions() + 4] = 100;
    m = ScoreMatrix(m.student_ids(), m.question_labels(), units, m.grain());
    const auto model = fit_copula(m, 2, 1);
    for (const auto& c : model.cohorts) {
        EXPECT_TRUE(c.marginals[4].degenerate());
        for (Eigen::Index s = 0; s < c.corr.rows(); ++s) {
            if (s != 4) EXPECT_EQ(c.corr(4, s), 0.0);
        }
    }
}

TEST(SyntheticFidelity, TotalVariationPerQuestion) {
    const auto gen = make_null_generator({200, 25, 0.3, 10});
    const auto m = simulate_exam(gen, 4);
    const auto model = fit_copula(m, 5, 5);
    // Accumulate at least 50,000 synthetic students per cohort.
    std::vector<std::vector<std::vector<std::int32_t>>> draws(5, std::vector<std::vector<std::int32_t>>(25));
    qsid::Engine engine(6);
    while (draws[4][0].size() < 50000) {
        const auto s = sample_synthetic(model, engine);
        std::size_t row = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            for (std::size_t i = 0; i < model.cohorts[k].n_students; ++i, ++row) {
                for (std::size_t q = 0; q < 25; ++q) draws[k][q].push_back(s.unit(row, q));
            }
        }
    }
    for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t q = 0; q < 25; ++q) {
            EXPECT_LE(total_variation(model.cohorts[k].marginals[q], draws[k][q]), 0.02) << k << "/" << q;
        }
    }
}

TEST(SyntheticFpr, ReplicateCount) {
    EXPECT_EQ(replicate_count(200, 100000), 500u);
    EXPECT_EQ(replicate_count(300, 100000), 334u);
    EXPECT_EQ(replicate_count(300, 1), 1u);
}

TEST(SyntheticFpr, DeterministicCumulativeAndThreadIndependent) {
    const auto gen = make_null_generator({150, 40, 0.3, 11});
    const auto m = simulate_exam(gen, 5);
    SyntheticFprOptions options;
    options.min_students = 6000;
    options.seed = 12;
    const ThresholdTable& table = ThresholdTable::builtin();
    set_worker_threads(1);
    const auto a = synthetic_fpr(m, table, options);
    set_worker_threads(3);
    const auto b = synthetic_fpr(m, table, options);
    set_worker_threads(0);
    EXPECT_EQ(a.cumulative, b.cumulative);
    EXPECT_EQ(a.intervals, b.intervals);
    EXPECT_EQ(a.cs_histogram, b.cs_histogram);
    EXPECT_EQ(a.n_synthetic, 6000u);
    EXPECT_EQ(a.replicates, 40u);
    EXPECT_EQ(a.cs_histogram.total, 6000u);
    EXPECT_LE(a.cumulative[0], a.cumulative[1]);
    EXPECT_LE(a.cumulative[1], a.cumulative[2]);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(a.intervals[k], wald_ci(a.cumulative[k], a.n_synthetic));
    }
}

TEST(Histogram, BinsAndMerge) {
    Histogram h;
    h.add(0.0);
    h.add(0.049);
    h.add(0.05);
    h.add(1.0);
    EXPECT_EQ(h.counts.size(), 21u);
    EXPECT_EQ(h.counts[0], 2u);
    EXPECT_EQ(h.counts[1], 1u);
    EXPECT_EQ(h.counts[20], 1u);
    Histogram g;
    g.add(0.01);
    h.merge(g);
    EXPECT_EQ(h.counts[0], 3u);
    EXPECT_EQ(h.total, 5u);
    Histogram other;
    other.bin_width = 1.0;
    EXPECT_THROW(h.merge(other), InvalidArgument);
}
