#include "qsid/synthetic_control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "qsid/collusion_metrics.hpp"
#include "qsid/error.hpp"
#include "qsid/parallel.hpp"

namespace qsid {
namespace {

const boost::math::normal_distribution<double> kStandardNormal{0.0, 1.0};

double normal_quantile(double u) { return boost::math::quantile(kStandardNormal, u); }

constexpr std::size_t kMaxHistogramBins = 100000;

}  // namespace

Marginal Marginal::from_probabilities(std::vector<std::int32_t> support, std::vector<double> probabilities) {
    if (support.empty() || support.size() != probabilities.size()) {
        throw InvalidArgument("marginal needs a nonempty support matching its probabilities");
    }
    for (std::size_t j = 1; j < support.size(); ++j) {
        if (support[j] <= support[j - 1]) throw InvalidArgument("marginal support must be strictly increasing");
    }
    double total = 0.0;
    for (double p : probabilities) {
        if (!(p > 0.0)) throw InvalidArgument("marginal probabilities must be positive");
        total += p;
    }
    Marginal m;
    m.support = std::move(support);
    m.probabilities = std::move(probabilities);
    for (double& p : m.probabilities) p /= total;
    m.cdf.resize(m.support.size());
    m.z_cuts.resize(m.support.size());
    double running = 0.0;
    for (std::size_t j = 0; j < m.support.size(); ++j) {
        running += m.probabilities[j];
        m.cdf[j] = std::min(running, 1.0);
    }
    m.cdf.back() = 1.0;
    for (std::size_t j = 0; j < m.support.size(); ++j) {
        m.z_cuts[j] = m.cdf[j] >= 1.0 ? std::numeric_limits<double>::infinity() : normal_quantile(m.cdf[j]);
    }
    return m;
}

Marginal Marginal::from_counts(std::vector<std::int32_t> support, std::span<const std::size_t> counts) {
    std::vector<double> p(counts.begin(), counts.end());
    return from_probabilities(std::move(support), std::move(p));
}

Marginal Marginal::fit(std::span<const std::int32_t> scores) {
    if (scores.empty()) throw InvalidArgument("cannot fit a marginal to no scores");
    std::vector<std::int32_t> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::int32_t> support;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        support.push_back(sorted[i]);
        counts.push_back(j - i);
        i = j;
    }
    return from_counts(std::move(support), counts);
}

std::size_t Marginal::index_of(std::int32_t score) const {
    const auto it = std::lower_bound(support.begin(), support.end(), score);
    if (it == support.end() || *it != score) {
        throw InvalidArgument("score " + std::to_string(score) + " is outside the marginal support");
    }
    return static_cast<std::size_t>(it - support.begin());
}

std::int32_t Marginal::quantile(double u) const {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return it == cdf.end() ? support.back() : support[static_cast<std::size_t>(it - cdf.begin())];
}

std::size_t CopulaModel::students() const noexcept {
    std::size_t n = 0;
    for (const auto& c : cohorts) n += c.n_students;
    return n;
}

Eigen::MatrixXd repair_correlation(const Eigen::MatrixXd& corr) {
    const Eigen::Index p = corr.rows();
    if (p != corr.cols()) throw InvalidArgument("correlation matrix must be square");
    Eigen::MatrixXd sym = 0.5 * (corr + corr.transpose());
    sym.diagonal().setOnes();
    if (p == 0) return sym;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw InternalError("eigen decomposition of correlation failed");
    if (eig.eigenvalues().minCoeff() >= kMinCorrelationEigenvalue) return sym;

    const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(kMinCorrelationEigenvalue);
    Eigen::MatrixXd rebuilt = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    const Eigen::VectorXd scale = rebuilt.diagonal().cwiseSqrt().cwiseInverse();
    rebuilt = scale.asDiagonal() * rebuilt * scale.asDiagonal();
    rebuilt = 0.5 * (rebuilt + rebuilt.transpose()).eval();
    rebuilt.diagonal().setOnes();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> check(rebuilt, Eigen::EigenvaluesOnly);
    const double lowest = check.eigenvalues().minCoeff();
    if (lowest < kMinCorrelationEigenvalue) {
        // (1 - t) R + t I raises every eigenvalue by t (1 - lambda).
        const double target = 2.0 * kMinCorrelationEigenvalue;
        const double t = (target - lowest) / (1.0 - lowest);
        rebuilt = (1.0 - t) * rebuilt + t * Eigen::MatrixXd::Identity(p, p);
        rebuilt.diagonal().setOnes();
    }
    return rebuilt;
}

Cohort make_cohort(std::size_t n_students, std::vector<Marginal> marginals, Eigen::MatrixXd corr) {
    const auto p = static_cast<Eigen::Index>(marginals.size());
    if (corr.rows() != p || corr.cols() != p) throw InvalidArgument("correlation size does not match marginals");
    Cohort c;
    c.n_students = n_students;
    c.marginals = std::move(marginals);
    c.corr = std::move(corr);
    const Eigen::MatrixXd repaired = repair_correlation(c.corr);
    Eigen::LLT<Eigen::MatrixXd> llt(repaired);
    if (llt.info() != Eigen::Success) throw InternalError("Cholesky factorization of repaired correlation failed");
    c.corr_factor = llt.matrixL();
    return c;
}

std::vector<double> distributional_transform(std::span<const std::int32_t> scores,
                                             const Marginal& marginal, Engine& engine) {
    std::vector<double> u(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::size_t j = marginal.index_of(scores[i]);
        const double v = uniform01(engine);
        u[i] = v * marginal.cdf_below(j) + (1.0 - v) * marginal.cdf[j];
    }
    return u;
}

std::vector<std::vector<std::size_t>> split_cohorts(const ScoreMatrix& m, std::size_t k) {
    if (k == 0) throw InvalidArgument("need at least one cohort");
    const std::size_t n = m.students();
    if (n / k < 2) {
        throw InvalidArgument("too few students per cohort: " + std::to_string(n) + " students in " +
                              std::to_string(k) + " cohorts; use fewer cohorts");
    }
    const auto order = rank_order(m);
    std::vector<std::vector<std::size_t>> cohorts(k);
    std::size_t next = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t size = n / k + (c < n % k ? 1 : 0);
        cohorts[c].assign(order.begin() + static_cast<std::ptrdiff_t>(next),
                          order.begin() + static_cast<std::ptrdiff_t>(next + size));
        next += size;
    }
    return cohorts;
}

CopulaModel fit_copula(const ScoreMatrix& m, std::size_t k_cohorts, std::uint64_t seed) {
    const auto groups = split_cohorts(m, k_cohorts);
    const std::size_t p = m.questions();
    CopulaModel model;
    model.question_labels = m.question_labels();
    model.grain = m.grain();

    for (std::size_t c = 0; c < groups.size(); ++c) {
        const ScoreMatrix sub = m.select_rows(groups[c]);
        const std::size_t nk = sub.students();
        auto engine = make_engine(seed, Stream::copula_fit, {c});

        std::vector<Marginal> marginals;
        marginals.reserve(p);
        Eigen::MatrixXd z(static_cast<Eigen::Index>(nk), static_cast<Eigen::Index>(p));
        std::vector<std::int32_t> column(nk);
        for (std::size_t s = 0; s < p; ++s) {
            for (std::size_t i = 0; i < nk; ++i) column[i] = sub.unit(i, s);
            marginals.push_back(Marginal::fit(column));
            const auto u = distributional_transform(column, marginals.back(), engine);
            for (std::size_t i = 0; i < nk; ++i) {
                z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) =
                    normal_quantile(std::clamp(u[i], kUniformClamp, 1.0 - kUniformClamp));
            }
        }

        // Pearson correlation over non-constant questions; constant ones stay independent.
        Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
        std::vector<Eigen::Index> live;
        for (std::size_t s = 0; s < p; ++s) {
            if (!marginals[s].degenerate()) live.push_back(static_cast<Eigen::Index>(s));
        }
        if (!live.empty()) {
            Eigen::MatrixXd zl(z.rows(), static_cast<Eigen::Index>(live.size()));
            for (std::size_t a = 0; a < live.size(); ++a) zl.col(static_cast<Eigen::Index>(a)) = z.col(live[a]);
            zl.rowwise() -= zl.colwise().mean();
            const Eigen::MatrixXd cov = zl.transpose() * zl;
            const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
            for (std::size_t a = 0; a < live.size(); ++a) {
                for (std::size_t b = a + 1; b < live.size(); ++b) {
                    const auto ia = static_cast<Eigen::Index>(a);
                    const auto ib = static_cast<Eigen::Index>(b);
                    const double denom = sd(ia) * sd(ib);
                    const double r = denom > 0.0 ? std::clamp(cov(ia, ib) / denom, -1.0, 1.0) : 0.0;
                    corr(live[a], live[b]) = r;
                    corr(live[b], live[a]) = r;
                }
            }
        }
        model.cohorts.push_back(make_cohort(nk, std::move(marginals), std::move(corr)));
    }
    return model;
}

ScoreMatrix sample_synthetic(const CopulaModel& model, Engine& engine) {
    const std::size_t p = model.questions();
    const std::size_t n = model.students();
    std::vector<std::string> ids;
    ids.reserve(n);
    std::vector<std::int32_t> units;
    units.reserve(n * p);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd draw(static_cast<Eigen::Index>(p));
    Eigen::VectorXd latent(static_cast<Eigen::Index>(p));
    for (std::size_t c = 0; c < model.cohorts.size(); ++c) {
        const Cohort& cohort = model.cohorts[c];
        if (cohort.marginals.size() != p) throw InvalidArgument("cohort marginals do not match question count");
        const auto factor = cohort.corr_factor.triangularView<Eigen::Lower>();
        for (std::size_t i = 0; i < cohort.n_students; ++i) {
            for (Eigen::Index s = 0; s < draw.size(); ++s) draw(s) = normal(engine);
            latent.noalias() = factor * draw;
            for (std::size_t s = 0; s < p; ++s) {
                const Marginal& marg = cohort.marginals[s];
                const double z = latent(static_cast<Eigen::Index>(s));
                const auto it = std::lower_bound(marg.z_cuts.begin(), marg.z_cuts.end(), z);
                const std::size_t j = it == marg.z_cuts.end() ? marg.support.size() - 1
                                                              : static_cast<std::size_t>(it - marg.z_cuts.begin());
                units.push_back(marg.support[j]);
            }
            ids.push_back("syn-" + std::to_string(c + 1) + "-" + std::to_string(i + 1));
        }
    }
    return ScoreMatrix(std::move(ids), model.question_labels, std::move(units), model.grain);
}

ScoreMatrix sample_synthetic(const CopulaModel& model, std::uint64_t seed) {
    auto engine = make_engine(seed, Stream::copula_sample);
    return sample_synthetic(model, engine);
}

nlohmann::json model_to_json(const CopulaModel& model) {
    nlohmann::json cohorts = nlohmann::json::array();
    for (const auto& c : model.cohorts) {
        nlohmann::json marginals = nlohmann::json::array();
        for (const auto& m : c.marginals) {
            marginals.push_back({{"support_units", m.support}, {"probabilities", m.probabilities}});
        }
        nlohmann::json corr = nlohmann::json::array();
        for (Eigen::Index r = 0; r < c.corr.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(c.corr.cols()));
            for (Eigen::Index k = 0; k < c.corr.cols(); ++k) row[static_cast<std::size_t>(k)] = c.corr(r, k);
            corr.push_back(std::move(row));
        }
        cohorts.push_back({{"n_students", c.n_students}, {"marginals", std::move(marginals)},
                           {"correlation", std::move(corr)}});
    }
    return {{"grain", model.grain.to_string()},
            {"question_labels", model.question_labels},
            {"cohorts", std::move(cohorts)}};
}

void Histogram::add(double value) {
    const double scaled = std::floor(std::max(value, 0.0) / bin_width);
    const auto bin = static_cast<std::size_t>(std::min(scaled, static_cast<double>(kMaxHistogramBins - 1)));
    if (counts.size() <= bin) counts.resize(bin + 1, 0);
    ++counts[bin];
    ++total;
}

void Histogram::merge(const Histogram& other) {
    if (other.bin_width != bin_width) throw InvalidArgument("histogram bin widths differ");
    if (counts.size() < other.counts.size()) counts.resize(other.counts.size(), 0);
    for (std::size_t k = 0; k < other.counts.size(); ++k) counts[k] += other.counts[k];
    total += other.total;
}

std::size_t replicate_count(std::size_t n, std::size_t min_students) {
    if (n == 0) throw InvalidArgument("replicate count needs a nonempty exam");
    return (min_students + n - 1) / n;
}

SynFprEstimate synthetic_fpr(const CopulaModel& model, const Thresholds& thresholds,
                             const SyntheticFprOptions& options) {
    if (options.min_students == 0) throw InvalidArgument("synthetic students must be at least 1");
    const std::size_t n = model.students();
    const std::size_t replicates = replicate_count(n, options.min_students);

    struct Outcome {
        std::array<std::size_t, 3> counts{};
        Histogram histogram;
        std::size_t redraws = 0;
    };
    std::vector<Outcome> outcomes(replicates);
    parallel_for(replicates, [&](std::size_t r) {
        Outcome& out = outcomes[r];
        for (std::size_t attempt = 0;; ++attempt) {
            auto engine = make_engine(options.seed, Stream::synthetic_replicate, {r, attempt});
            const ScoreMatrix exam = sample_synthetic(model, engine);
            try {
                const auto metrics = student_metrics(exam);
                const auto groups = detect_groups(metrics, exam.student_ids(), thresholds, options.levels);
                out.counts = cumulative_bin_counts(groups);
                for (const auto& sm : metrics) out.histogram.add(sm.cs);
                return;
            } catch (const DegenerateExamError& e) {
                if (attempt >= options.max_redraws) {
                    throw Error("synthetic replicate " + std::to_string(r) + " stayed degenerate after " +
                                std::to_string(options.max_redraws) + " redraws: " + e.what());
                }
                ++out.redraws;
            }
        }
    });

    SynFprEstimate est;
    est.replicates = replicates;
    est.n_synthetic = replicates * n;
    std::array<std::size_t, 3> flagged{};
    for (const auto& out : outcomes) {
        for (std::size_t b = 0; b < 3; ++b) flagged[b] += out.counts[b];
        est.cs_histogram.merge(out.histogram);
        est.redraws += out.redraws;
    }
    for (std::size_t b = 0; b < 3; ++b) {
        est.cumulative[b] = static_cast<double>(flagged[b]) / static_cast<double>(est.n_synthetic);
        est.intervals[b] = wald_ci(est.cumulative[b], est.n_synthetic);
    }
    return est;
}

SynFprEstimate synthetic_fpr(const ScoreMatrix& m, const ThresholdTable& table,
                             const SyntheticFprOptions& options) {
    const Thresholds thresholds = threshold_lookup(table, m.students());
    const CopulaModel model = fit_copula(m, options.cohorts, options.seed);
    return synthetic_fpr(model, thresholds, options);
}

}  // namespace qsid
