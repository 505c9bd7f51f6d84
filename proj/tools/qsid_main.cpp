// qsid command-line tool: analyze, calibrate, complexity, simulate.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "qsid/calibration.hpp"
#include "qsid/collusion_metrics.hpp"
#include "qsid/exam_data.hpp"
#include "qsid/report.hpp"
#include "qsid/simulate.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kIneligible = 2, kInputError = 3, kInternalError = 4 };

struct AnalyzeArgs {
    std::vector<std::string> inputs;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t synthetic_students = 100000;
    std::size_t cohorts = 5;
    std::string thresholds;
    std::string empirical_cs;
    std::vector<std::string> formats{"html", "json"};
    std::string course;
    std::string exam_label;
    std::string grain = "0.01";
};

struct CalibrateArgs {
    std::string nulls;
    std::string out;
    std::size_t repeats = 100;
    std::uint64_t seed = 0;
    std::vector<std::size_t> grid;
    std::vector<double> anchors;
    std::string null_cs_out;
    std::string grain = "0.01";
};

struct ComplexityArgs {
    std::vector<std::string> inputs;
    std::string grain = "0.01";
};

struct SimulateArgs {
    std::string out;
    std::size_t exams = 1;
    std::size_t students = 300;
    std::size_t questions = 80;
    double correlation = 0.3;
    std::uint64_t generator_seed = 0;
    std::uint64_t seed = 0;
    std::size_t plant = 0;
    double copy_fraction = 0.9;
};

std::vector<qsid::ScoreMatrix> load_exams(const std::vector<std::string>& paths, const qsid::Grain& grain) {
    std::vector<qsid::ScoreMatrix> exams;
    for (const auto& p : paths) exams.push_back(qsid::parse_exam_file(p, {grain}).matrix);
    return exams;
}

int run_analyze(const AnalyzeArgs& a) {
    qsid::RunConfig cfg;
    for (const auto& p : a.inputs) cfg.inputs.emplace_back(p);
    cfg.output_dir = a.out;
    cfg.seed = a.seed;
    cfg.synthetic_students = a.synthetic_students;
    cfg.cohorts = a.cohorts;
    if (!a.thresholds.empty()) cfg.threshold_table_path = a.thresholds;
    if (!a.empirical_cs.empty()) cfg.empirical_cs_path = a.empirical_cs;
    cfg.html = std::find(a.formats.begin(), a.formats.end(), "html") != a.formats.end();
    cfg.json = std::find(a.formats.begin(), a.formats.end(), "json") != a.formats.end();
    cfg.course_label = a.course;
    cfg.exam_label = a.exam_label;
    cfg.grain = qsid::Grain::parse(a.grain);

    const qsid::ReportBundle bundle = qsid::run_pipeline(cfg);
    qsid::write_report(bundle, cfg);

    std::size_t reported = 0;
    for (const auto& g : bundle.groups) reported += g.excluded ? 0 : 1;
    std::printf("students %zu, questions %zu, complexity %.1f\n", bundle.header.n_students,
                bundle.header.n_questions, bundle.header.complexity);
    std::printf("collusion groups: %zu reported, %zu excluded\n", reported, bundle.groups.size() - reported);
    for (const auto& g : bundle.groups) {
        if (g.excluded) continue;
        std::printf("  group %zu [%s] max CS %.2f:", g.rank, std::string(qsid::to_string(g.bin)).c_str(), g.max_cs);
        for (const auto& id : g.member_ids) std::printf(" %s", id.c_str());
        std::printf("\n");
    }
    for (const auto& w : bundle.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("output written to %s\n", cfg.output_dir.string().c_str());
    return kOk;
}

int run_calibrate(const CalibrateArgs& a) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.nulls)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw qsid::ParseError("no .csv null exams found in " + a.nulls);

    const qsid::Grain grain = qsid::Grain::parse(a.grain);
    std::vector<qsid::ScoreMatrix> exams;
    for (const auto& f : files) {
        exams.push_back(qsid::preprocess(qsid::parse_exam_file(f, {grain}).matrix).matrix);
    }
    qsid::CalibrationOptions options;
    options.repeats = a.repeats;
    options.seed = a.seed;
    if (!a.grid.empty()) options.grid = a.grid;
    if (!a.anchors.empty()) {
        if (a.anchors.size() != 4) throw qsid::ConfigError("--anchors takes exactly four values");
        options.anchors = {a.anchors[0], a.anchors[1], a.anchors[2], a.anchors[3]};
    }
    const qsid::CalibrationResult result = qsid::calibrate_thresholds(exams, options);
    {
        std::ofstream out(a.out);
        if (!out) throw qsid::ConfigError("cannot write " + a.out);
        result.table.write_csv(out);
    }
    std::printf("calibrated %zu grid sizes on %zu null exams (%zu students)\n", result.table.grid().size(),
                exams.size(), result.null_students);
    if (result.null_bin_fractions) {
        const auto& f = *result.null_bin_fractions;
        std::printf("null students flagged, cumulative by bin: f1 %.4f%%, f1-f2 %.4f%%, f1-f3 %.4f%%\n",
                    f[0] * 100, f[1] * 100, f[2] * 100);
    }
    if (!a.null_cs_out.empty()) {
        std::ofstream out(a.null_cs_out);
        if (!out) throw qsid::ConfigError("cannot write " + a.null_cs_out);
        out << "# label: simulated null exams (" << exams.size() << " exams)\ncs\n";
        char buf[32];
        for (const auto& exam : exams) {
            for (const auto& m : qsid::student_metrics(exam)) {
                std::snprintf(buf, sizeof buf, "%.6f\n", m.cs);
                out << buf;
            }
        }
    }
    std::printf("thresholds written to %s\n", a.out.c_str());
    return kOk;
}

int run_complexity(const ComplexityArgs& a) {
    const auto exams = load_exams(a.inputs, qsid::Grain::parse(a.grain));
    const qsid::ScoreMatrix m = qsid::combine_exams(exams).matrix;
    const qsid::ComplexityProfile profile = qsid::complexity(m);
    std::printf("complexity %.4f (%zu questions, %zu students)\n", profile.total, m.questions(), m.students());
    for (std::size_t s = 0; s < m.questions(); ++s) {
        std::printf("%s\t%.4f\n", m.question_labels()[s].c_str(), profile.per_question[s]);
    }
    return kOk;
}

int run_simulate(const SimulateArgs& a) {
    qsid::NullGeneratorSpec spec;
    spec.students = a.students;
    spec.questions = a.questions;
    spec.latent_correlation = a.correlation;
    spec.seed = a.generator_seed;
    const qsid::CopulaModel generator = qsid::make_null_generator(spec);
    fs::create_directories(a.out);
    for (std::size_t k = 0; k < a.exams; ++k) {
        qsid::ScoreMatrix exam = qsid::simulate_exam(generator, qsid::derive_seed(a.seed, qsid::Stream::simulation, {k}));
        std::string note;
        if (a.plant > 0) {
            auto engine = qsid::make_engine(a.seed, qsid::Stream::simulation, {k, 1});
            const auto planted = qsid::plant_collusion(exam, a.plant, a.copy_fraction, engine);
            for (auto i : planted.members()) note += " " + exam.student_ids()[i];
        }
        char name[32];
        std::snprintf(name, sizeof name, "exam_%03zu.csv", k + 1);
        std::ofstream out(fs::path(a.out) / name);
        qsid::write_exam_csv(out, exam);
        if (!out) throw qsid::ConfigError("cannot write " + (fs::path(a.out) / name).string());
        if (!note.empty()) std::printf("%s planted:%s\n", name, note.c_str());
    }
    std::printf("wrote %zu exams to %s\n", a.exams, a.out.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qsid: detect collusion groups from graded exam scores"};
    app.require_subcommand(1);

    AnalyzeArgs analyze;
    auto* cmd_analyze = app.add_subcommand("analyze", "Run detection and write the report");
    cmd_analyze->add_option("--input", analyze.inputs, "Exam CSV; repeat to combine exams of one class")->required();
    cmd_analyze->add_option("--out", analyze.out, "Output directory")->required();
    cmd_analyze->add_option("--seed", analyze.seed, "Random seed")->capture_default_str();
    cmd_analyze->add_option("--synthetic-students", analyze.synthetic_students, "Minimum synthetic students")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_analyze->add_option("--cohorts", analyze.cohorts, "Synthetic-control cohorts")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000}))
        ->capture_default_str();
    cmd_analyze->add_option("--thresholds", analyze.thresholds, "Threshold table CSV")->check(CLI::ExistingFile);
    cmd_analyze->add_option("--empirical-cs", analyze.empirical_cs, "Null CS sample for the empirical control")
        ->check(CLI::ExistingFile);
    cmd_analyze->add_option("--format", analyze.formats, "Output formats")
        ->delimiter(',')
        ->check(CLI::IsMember({"html", "json"}))
        ->capture_default_str();
    cmd_analyze->add_option("--course", analyze.course, "Course label for the report header");
    cmd_analyze->add_option("--exam-label", analyze.exam_label, "Exam label (default: input file names)");
    cmd_analyze->add_option("--grain", analyze.grain, "Score equality granularity")->capture_default_str();

    CalibrateArgs calibrate;
    auto* cmd_calibrate = app.add_subcommand("calibrate", "Calibrate a threshold table on null exams");
    cmd_calibrate->add_option("--nulls", calibrate.nulls, "Directory of null exam CSVs")
        ->required()
        ->check(CLI::ExistingDirectory);
    cmd_calibrate->add_option("--out", calibrate.out, "Threshold table CSV to write")->required();
    cmd_calibrate->add_option("--repeats", calibrate.repeats, "Subsamples per exam and class size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd_calibrate->add_option("--seed", calibrate.seed, "Random seed")->capture_default_str();
    cmd_calibrate->add_option("--grid", calibrate.grid, "Class sizes (default 15,20,...,50,60,...,250)")
        ->delimiter(',');
    cmd_calibrate->add_option("--anchors", calibrate.anchors, "Quantile anchors q1,q2,q3,q4")->delimiter(',');
    cmd_calibrate->add_option("--null-cs-out", calibrate.null_cs_out, "Also write the null exams' CS sample");
    cmd_calibrate->add_option("--grain", calibrate.grain, "Score equality granularity")->capture_default_str();

    ComplexityArgs complexity;
    auto* cmd_complexity = app.add_subcommand("complexity", "Print exam complexity and per-question values");
    cmd_complexity->add_option("--input", complexity.inputs, "Exam CSV; repeat to combine")->required();
    cmd_complexity->add_option("--grain", complexity.grain, "Score equality granularity")->capture_default_str();

    SimulateArgs simulate;
    auto* cmd_simulate = app.add_subcommand("simulate", "Write simulated collusion-free exams");
    cmd_simulate->add_option("--out", simulate.out, "Output directory")->required();
    cmd_simulate->add_option("--exams", simulate.exams, "Number of exams")->capture_default_str();
    cmd_simulate->add_option("--students", simulate.students, "Students per exam")->capture_default_str();
    cmd_simulate->add_option("--questions", simulate.questions, "Questions per exam")->capture_default_str();
    cmd_simulate->add_option("--correlation", simulate.correlation, "Latent pairwise correlation")
        ->capture_default_str();
    cmd_simulate->add_option("--generator-seed", simulate.generator_seed, "Seed of the question marginals")
        ->capture_default_str();
    cmd_simulate->add_option("--seed", simulate.seed, "Seed of the students")->capture_default_str();
    cmd_simulate->add_option("--plant", simulate.plant, "Plant one copying group of this size");
    cmd_simulate->add_option("--copy-fraction", simulate.copy_fraction, "Share of answers copied")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*cmd_analyze) return run_analyze(analyze);
        if (*cmd_calibrate) return run_calibrate(calibrate);
        if (*cmd_complexity) return run_complexity(complexity);
        if (*cmd_simulate) return run_simulate(simulate);
    } catch (const qsid::PipelineError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        switch (e.kind()) {
            case qsid::PipelineError::Kind::ineligible: return kIneligible;
            case qsid::PipelineError::Kind::input: return kInputError;
            case qsid::PipelineError::Kind::internal: return kInternalError;
        }
    } catch (const qsid::InternalError& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternalError;
    } catch (const qsid::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kInputError;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kInputError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternalError;
    }
    return kUsage;
}
