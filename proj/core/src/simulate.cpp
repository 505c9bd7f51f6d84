#include "qsid/simulate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "qsid/error.hpp"

namespace qsid {
namespace {

Marginal random_marginal(Engine& engine, const Grain& grain) {
    constexpr std::array<int, 5> kMaxPoints{1, 2, 3, 4, 5};
    const int max_points = kMaxPoints[uniform_index(engine, kMaxPoints.size())];
    const bool halves = uniform01(engine) < 0.4;
    const double step = halves ? 0.5 : 1.0;
    const auto levels = static_cast<std::size_t>(std::lround(max_points / step)) + 1;

    const double centre = 0.35 + 0.6 * uniform01(engine);
    const double spread = 0.15 + 0.25 * uniform01(engine);
    std::vector<std::int32_t> support(levels);
    std::vector<double> weights(levels);
    const double units_per_point = 1.0 / grain.points();
    for (std::size_t j = 0; j < levels; ++j) {
        support[j] = static_cast<std::int32_t>(std::lround(static_cast<double>(j) * step * units_per_point));
        const double x = static_cast<double>(j) / static_cast<double>(levels - 1);
        weights[j] = std::exp(-0.5 * (x - centre) * (x - centre) / (spread * spread)) + 0.01;
    }
    return Marginal::from_probabilities(std::move(support), std::move(weights));
}

}  // namespace

CopulaModel make_null_generator(const NullGeneratorSpec& spec) {
    if (spec.students < 2 || spec.questions == 0) throw InvalidArgument("generator needs >= 2 students and >= 1 question");
    if (!(spec.latent_correlation > -1.0 / static_cast<double>(spec.questions) && spec.latent_correlation < 1.0)) {
        throw InvalidArgument("latent correlation out of range for an equicorrelated matrix");
    }
    auto engine = make_engine(spec.seed, Stream::simulation, {spec.questions});
    CopulaModel model;
    model.grain = Grain{};
    std::vector<Marginal> marginals;
    for (std::size_t s = 0; s < spec.questions; ++s) {
        model.question_labels.push_back("Q" + std::to_string(s + 1));
        marginals.push_back(random_marginal(engine, model.grain));
    }
    const auto p = static_cast<Eigen::Index>(spec.questions);
    Eigen::MatrixXd corr = Eigen::MatrixXd::Constant(p, p, spec.latent_correlation);
    corr.diagonal().setOnes();
    model.cohorts.push_back(make_cohort(spec.students, std::move(marginals), std::move(corr)));
    return model;
}

ScoreMatrix simulate_exam(const CopulaModel& generator, std::uint64_t seed) {
    const ScoreMatrix raw = sample_synthetic(generator, seed);
    std::vector<std::string> ids(raw.students());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "S%05zu", i + 1);
        ids[i] = buf;
    }
    return ScoreMatrix(std::move(ids), raw.question_labels(),
                       std::vector<std::int32_t>(raw.units().begin(), raw.units().end()), raw.grain());
}

std::vector<std::size_t> PlantedGroup::members() const {
    std::vector<std::size_t> all = copiers;
    all.push_back(source);
    std::sort(all.begin(), all.end());
    return all;
}

PlantedGroup plant_collusion(ScoreMatrix& exam, std::size_t group_size, double copy_fraction,
                             Engine& engine) {
    const std::size_t n = exam.students();
    const std::size_t p = exam.questions();
    if (group_size < 2 || group_size > n) throw InvalidArgument("planted group size out of range");
    if (!(copy_fraction >= 0.0 && copy_fraction <= 1.0)) throw InvalidArgument("copy fraction must lie in [0, 1]");

    std::vector<std::size_t> students(n);
    std::iota(students.begin(), students.end(), 0);
    for (std::size_t k = 0; k < group_size; ++k) {
        std::swap(students[k], students[k + uniform_index(engine, n - k)]);
    }
    PlantedGroup group;
    group.source = students[0];
    group.copiers.assign(students.begin() + 1, students.begin() + static_cast<std::ptrdiff_t>(group_size));

    const auto copied = static_cast<std::size_t>(std::lround(copy_fraction * static_cast<double>(p)));
    std::vector<std::int32_t> units(exam.units().begin(), exam.units().end());
    std::vector<std::size_t> questions(p);
    for (std::size_t c : group.copiers) {
        std::iota(questions.begin(), questions.end(), 0);
        for (std::size_t k = 0; k < copied; ++k) {
            std::swap(questions[k], questions[k + uniform_index(engine, p - k)]);
        }
        for (std::size_t k = 0; k < copied; ++k) {
            units[c * p + questions[k]] = exam.unit(group.source, questions[k]);
        }
    }
    exam = ScoreMatrix(exam.student_ids(), exam.question_labels(), std::move(units), exam.grain());
    return group;
}

}  // namespace qsid
