#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "qsid/exam_data.hpp"
#include "qsid/rng.hpp"
#include "qsid/synthetic_control.hpp"

namespace qsid {

/// A collusion-free exam generator: one cohort, randomly shaped per-question
/// categorical marginals and an equicorrelated Gaussian copula.
struct NullGeneratorSpec {
    std::size_t students = 300;
    std::size_t questions = 80;
    double latent_correlation = 0.3;
    /// Seeds the marginal shapes, not the students.
    std::uint64_t seed = 0;
};

CopulaModel make_null_generator(const NullGeneratorSpec& spec);

/// One exam from `generator` with IDs S00001, S00002, ...
ScoreMatrix simulate_exam(const CopulaModel& generator, std::uint64_t seed);

struct PlantedGroup {
    std::size_t source = 0;
    std::vector<std::size_t> copiers;

    std::vector<std::size_t> members() const;
};

/// Picks a source and `group_size - 1` copiers at random; each copier takes
/// the source's score on a random `copy_fraction` of the questions.
PlantedGroup plant_collusion(ScoreMatrix& exam, std::size_t group_size, double copy_fraction,
                             Engine& engine);

}  // namespace qsid
