#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "qsid/calibration.hpp"
#include "qsid/exam_data.hpp"
#include "qsid/group_detector.hpp"
#include "qsid/rng.hpp"

namespace qsid {

/// Categorical distribution of one question's score within a cohort.
struct Marginal {
    /// Observed scores in grain units, ascending.
    std::vector<std::int32_t> support;
    std::vector<double> probabilities;
    /// cdf[j] = P(X <= support[j]); the last entry is exactly 1.
    std::vector<double> cdf;
    /// Latent Gaussian cut points: a draw z maps to the first j with z <= cut[j].
    std::vector<double> z_cuts;

    bool degenerate() const noexcept { return support.size() <= 1; }

    /// Builds from (score, count) observations.
    static Marginal from_counts(std::vector<std::int32_t> support, std::span<const std::size_t> counts);
    static Marginal from_probabilities(std::vector<std::int32_t> support, std::vector<double> probabilities);
    static Marginal fit(std::span<const std::int32_t> scores);

    /// P(X < x) for x in the support.
    double cdf_below(std::size_t support_index) const {
        return support_index == 0 ? 0.0 : cdf[support_index - 1];
    }
    std::size_t index_of(std::int32_t score) const;
    /// Smallest support value whose CDF is at least u.
    std::int32_t quantile(double u) const;
};

struct Cohort {
    std::size_t n_students = 0;
    std::vector<Marginal> marginals;
    /// Sample correlation of the latent scores (unit diagonal; 0 for constant questions).
    Eigen::MatrixXd corr;
    /// Lower-triangular factor of the repaired positive-definite correlation.
    Eigen::MatrixXd corr_factor;
};

/// Per-cohort categorical marginals joined by a Gaussian copula.
struct CopulaModel {
    std::vector<Cohort> cohorts;
    std::vector<std::string> question_labels;
    Grain grain;

    std::size_t students() const noexcept;
    std::size_t questions() const noexcept { return question_labels.size(); }
};

inline constexpr double kMinCorrelationEigenvalue = 1e-8;
inline constexpr double kUniformClamp = 1e-12;

/// Clips eigenvalues at kMinCorrelationEigenvalue and rescales to unit
/// diagonal; blends toward the identity if rescaling pushed the smallest
/// eigenvalue back under the floor.
Eigen::MatrixXd repair_correlation(const Eigen::MatrixXd& corr);

/// Builds a cohort from marginals and a target latent correlation.
Cohort make_cohort(std::size_t n_students, std::vector<Marginal> marginals, Eigen::MatrixXd corr);

/// u = v * P(X < x) + (1 - v) * P(X <= x) with v ~ Uniform[0, 1).
std::vector<double> distributional_transform(std::span<const std::int32_t> scores,
                                             const Marginal& marginal, Engine& engine);

/// Student indices split into k contiguous cohorts along the rank order;
/// sizes differ by at most one, larger cohorts first.
std::vector<std::vector<std::size_t>> split_cohorts(const ScoreMatrix& m, std::size_t k);

/// Fits the no-collusion generator. Throws InvalidArgument when a cohort
/// would have fewer than two students.
CopulaModel fit_copula(const ScoreMatrix& m, std::size_t k_cohorts = 5, std::uint64_t seed = 0);

/// Draws one synthetic exam the size of the fitted one. IDs are "syn-<cohort>-<index>".
ScoreMatrix sample_synthetic(const CopulaModel& model, std::uint64_t seed);
ScoreMatrix sample_synthetic(const CopulaModel& model, Engine& engine);

nlohmann::json model_to_json(const CopulaModel& model);

/// Sparse histogram with fixed bin width; bin k covers [k*w, (k+1)*w).
struct Histogram {
    double bin_width = 0.05;
    std::vector<std::size_t> counts;
    std::size_t total = 0;

    void add(double value);
    void merge(const Histogram& other);
    friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct SynFprEstimate {
    std::size_t n_synthetic = 0;
    std::size_t replicates = 0;
    std::size_t redraws = 0;
    /// Cumulative proportion of synthetic students at or above each bin:
    /// [f1 bin, f1+f2 bins, f1+f2+f3 bins].
    std::array<double, 3> cumulative{};
    std::array<FprInterval, 3> intervals{};
    Histogram cs_histogram;
};

struct SyntheticFprOptions {
    std::size_t min_students = 100000;
    std::size_t cohorts = 5;
    std::uint64_t seed = 0;
    std::size_t max_redraws = 10;
    FprLevels levels;
};

/// ceil(min_students / n).
std::size_t replicate_count(std::size_t n, std::size_t min_students);

/// Runs detection on independent synthetic replicates of a fitted model.
SynFprEstimate synthetic_fpr(const CopulaModel& model, const Thresholds& thresholds,
                             const SyntheticFprOptions& options);

/// Fits the copula to `m` and estimates the synthetic FPRs with the
/// class-size thresholds of `m`.
SynFprEstimate synthetic_fpr(const ScoreMatrix& m, const ThresholdTable& table,
                             const SyntheticFprOptions& options);

}  // namespace qsid
