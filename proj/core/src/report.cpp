#include "qsid/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "qsid/parallel.hpp"

namespace qsid {
namespace {

using Kind = PipelineError::Kind;
using ojson = nlohmann::ordered_json;

template <class F>
auto stage(const char* name, const char* hint, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const PipelineError&) {
        throw;
    } catch (const ParseError& e) {
        throw PipelineError(Kind::input, name, e.what(), hint);
    } catch (const EmptyExamError& e) {
        throw PipelineError(Kind::input, name, e.what(), hint);
    } catch (const DegenerateExamError& e) {
        throw PipelineError(Kind::input, name, e.what(), hint);
    } catch (const ConfigError& e) {
        throw PipelineError(Kind::input, name, e.what(), hint);
    } catch (const InvalidArgument& e) {
        throw PipelineError(Kind::input, name, e.what(), hint);
    } catch (const std::exception& e) {
        throw PipelineError(Kind::internal, name, e.what(), "please report this failure with the input file");
    }
}

std::string default_label(const std::vector<std::filesystem::path>& inputs) {
    std::string label;
    for (const auto& p : inputs) {
        if (!label.empty()) label += " + ";
        label += p.stem().string();
    }
    return label;
}

}  // namespace

const std::array<const char*, 12>& group_palette() {
    static constexpr std::array<const char*, 12> kPalette{
        "#8DD3C7", "#FFFFB3", "#BEBADA", "#FB8072", "#80B1D3", "#FDB462",
        "#B3DE69", "#FCCDE5", "#D9D9D9", "#BC80BD", "#CCEBC5", "#FFED6F"};
    return kPalette;
}

CsSample read_cs_sample(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open CS sample " + path.string());
    CsSample sample;
    sample.label = path.filename().string();
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        std::string_view text(line);
        text.remove_prefix(first);
        if (text.front() == '#') {
            constexpr std::string_view kLabel = "label:";
            text.remove_prefix(1);
            const auto at = text.find(kLabel);
            if (at != std::string_view::npos) {
                auto rest = text.substr(at + kLabel.size());
                const auto b = rest.find_first_not_of(" \t");
                if (b != std::string_view::npos) sample.label = std::string(rest.substr(b));
            }
            continue;
        }
        if (sample.values.empty() && (text == "cs" || text == "CS")) continue;
        const auto end = text.find_last_not_of(" \t,");
        text = text.substr(0, end + 1);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || ptr != text.data() + text.size() || !(v >= 0.0) || !std::isfinite(v)) {
            throw ParseError(row, 1, "not a non-negative CS value: '" + std::string(text) + "'");
        }
        sample.values.push_back(v);
    }
    if (sample.values.empty()) throw ParseError("CS sample " + path.string() + " has no values");
    return sample;
}

ReportBundle run_pipeline(const RunConfig& config) {
    if (config.inputs.empty()) throw PipelineError(Kind::input, "config", "no input exam", "pass --input FILE");
    if (config.synthetic_students < 1) {
        throw PipelineError(Kind::input, "config", "synthetic_students must be >= 1", "");
    }
    if (config.cohorts < 2) throw PipelineError(Kind::input, "config", "cohorts must be >= 2", "");

    ReportBundle bundle;
    bundle.seed = config.seed;
    bundle.cohorts = config.cohorts;
    bundle.synthetic_students_requested = config.synthetic_students;

    std::vector<ScoreMatrix> exams;
    std::size_t missing_id_rows = 0;
    stage("parse", "the header must be student_id followed by question labels; scores are non-negative decimals", [&] {
        for (const auto& path : config.inputs) {
            ParsedExam parsed = parse_exam_file(path, ParseOptions{config.grain});
            bundle.empty_cells += parsed.empty_cells;
            missing_id_rows += parsed.missing_id_rows;
            exams.push_back(std::move(parsed.matrix));
        }
    });

    ScoreMatrix exam;
    stage("preprocess", "the exam needs students with distinct IDs and non-trivial scores", [&] {
        PreprocessResult combined = combine_exams(exams);
        PreprocessResult cleaned = preprocess(combined.matrix);
        ExclusionLog log = std::move(combined.log);
        log.missing_id_rows = missing_id_rows;
        log.duplicate_ids.insert(log.duplicate_ids.end(), cleaned.log.duplicate_ids.begin(),
                                 cleaned.log.duplicate_ids.end());
        log.low_score_ids = std::move(cleaned.log.low_score_ids);
        bundle.exclusions = std::move(log);
        exam = std::move(cleaned.matrix);
    });

    const std::size_t n = exam.students();
    const std::size_t p = exam.questions();
    auto& header = bundle.header;
    header.course = config.course_label;
    header.exam = config.exam_label.empty() ? default_label(config.inputs) : config.exam_label;
    header.n_students = n;
    header.n_exams = exams.size();
    header.n_questions = p;

    stage("eligibility", "", [&] {
        const ComplexityProfile profile = complexity(exam);
        header.complexity = profile.total;
        if (exams.size() > 1) {
            std::size_t at = 0;
            for (const auto& e : exams) {
                double sum = 0.0;
                for (std::size_t s = 0; s < e.questions(); ++s) sum += profile.per_question[at + s];
                at += e.questions();
                header.exam_complexities.push_back(sum);
            }
        }
    });
    const EligibilityStatus status = eligibility_status(n, p, header.complexity);
    if (status == EligibilityStatus::rejected_too_few_students) {
        throw PipelineError(Kind::ineligible, "eligibility", std::string(to_string(status)),
                            "at least " + std::to_string(kMinStudents) + " students are required, found " +
                                std::to_string(n));
    }
    if (status == EligibilityStatus::rejected_too_few_questions) {
        throw PipelineError(Kind::ineligible, "eligibility", std::string(to_string(status)),
                            "at least " + std::to_string(kMinQuestions) + " questions are required, found " +
                                std::to_string(p) + "; consider combining exams of the same class");
    }
    header.low_complexity_warning = status == EligibilityStatus::ok_low_complexity_warning;
    if (header.low_complexity_warning) {
        bundle.warnings.push_back("Exam complexity is below " + std::to_string(static_cast<int>(kLowComplexity)) +
                                  "; detection power is reduced.");
    }
    if (bundle.empty_cells > 0) {
        bundle.warnings.push_back(std::to_string(bundle.empty_cells) + " empty score cells were read as 0.");
    }

    IdentityScoreMatrix is;
    std::vector<StudentMetrics> metrics;
    stage("metrics", "the exam's question scores barely vary between students; add questions or combine exams", [&] {
        is = identity_scores(exam);
        metrics = student_metrics(exam, is);
    });

    Thresholds t;
    stage("thresholds", "check the threshold table file format", [&] {
        if (config.threshold_table_path) {
            const ThresholdTable table = ThresholdTable::read_csv_file(*config.threshold_table_path);
            t = threshold_lookup(table, n);
            bundle.threshold_source = config.threshold_table_path->filename().string();
        } else {
            t = threshold_lookup(ThresholdTable::builtin(), n);
            bundle.threshold_source = "built-in";
        }
        bundle.threshold_class_size = n > kLargestGridSize ? 0 : nearest_grid_size(n);
    });
    bundle.thresholds = t;

    const auto& ids = exam.student_ids();
    std::vector<CollusionGroup> groups =
        stage("groups", "", [&] { return detect_groups(metrics, ids, t); });

    SynFprEstimate syn = stage("synthetic", "use fewer --cohorts for small classes", [&] {
        const CopulaModel model = fit_copula(exam, config.cohorts, config.seed);
        SyntheticFprOptions options;
        options.min_students = config.synthetic_students;
        options.cohorts = config.cohorts;
        options.seed = config.seed;
        return synthetic_fpr(model, t, options);
    });
    groups = stage("exclusion", "", [&] { return apply_synfpr_exclusion(std::move(groups), syn); });

    bundle.n_synthetic = syn.n_synthetic;
    bundle.synthetic_replicates = syn.replicates;
    bundle.synthetic_redraws = syn.redraws;
    bundle.synthetic_cs = syn.cs_histogram;

    bundle.students.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const StudentMetrics& m = metrics[i];
        StudentRow row;
        row.id = ids[i];
        row.test_score = m.test_score;
        row.rank = m.rank;
        row.max_is = m.max_is;
        row.median_is = m.median_is;
        row.im = m.im;
        row.local_median_im = m.local_median_im;
        row.cs = m.cs;
        row.partner1 = ids[m.partner1];
        if (m.partner2) row.partner2 = ids[*m.partner2];
        row.partner1_tied = m.partner1_tied;
        row.partner2_tied = m.partner2_tied;
        bundle.students.push_back(std::move(row));
        bundle.query_cs.add(m.cs);
    }

    const FprLevels levels;
    for (std::size_t k = 0; k < groups.size(); ++k) {
        const CollusionGroup& g = groups[k];
        ReportGroup rg;
        rg.rank = k + 1;
        for (std::size_t member : g.members) {
            rg.member_ids.push_back(ids[member]);
            rg.member_cs.push_back(metrics[member].cs);
        }
        rg.max_cs = g.max_cs;
        rg.bin = *g.bin;
        rg.emp_fpr = g.emp_fpr;
        rg.syn_fpr = g.syn_fpr;
        rg.excluded = g.excluded;
        if (!g.excluded) {
            IsHistogram h;
            h.group_rank = rg.rank;
            const std::size_t top = g.members.front();
            h.member_id = ids[top];
            h.counts.assign(p + 1, 0);
            for (std::size_t j = 0; j < n; ++j) {
                if (j != top) ++h.counts[is(top, j)];
            }
            for (std::size_t k2 = 1; k2 < g.members.size(); ++k2) h.group_pair_is.push_back(is(top, g.members[k2]));
            bundle.is_histograms.push_back(std::move(h));
        }
        bundle.groups.push_back(std::move(rg));
    }

    for (std::size_t b = 0; b < 3; ++b) {
        FprRow row;
        row.bin = static_cast<RiskBin>(b);
        row.level = levels[row.bin];
        row.empirical = wald_ci(kEmpiricalNullRates[b], kEmpiricalNullStudents);
        row.synthetic = syn.intervals[b];
        bundle.fpr_table.push_back(row);
    }

    if (config.empirical_cs_path) {
        stage("empirical-control", "the CS sample file holds one non-negative number per line", [&] {
            const CsSample sample = read_cs_sample(*config.empirical_cs_path);
            Histogram h;
            for (double v : sample.values) h.add(v);
            bundle.empirical_cs = std::move(h);
            bundle.empirical_cs_label = sample.label;
        });
    }
    return bundle;
}

void write_report(const ReportBundle& bundle, const RunConfig& config) {
    stage("report", "check that the output directory is writable", [&] {
        std::filesystem::create_directories(config.output_dir);
        auto write = [&](const char* name, const std::string& text) {
            const auto path = config.output_dir / name;
            std::ofstream out(path, std::ios::binary);
            out << text;
            out.close();
            if (!out) throw ConfigError("cannot write " + path.string());
        };
        if (config.json) write("results.json", emit_json_text(bundle));
        if (config.html) write("report.html", render_html(bundle));
    });
}

// JSON ----------------------------------------------------------------------

namespace {

ojson interval_json(const FprInterval& ci) {
    ojson j;
    j["estimate"] = ci.estimate;
    j["half_width"] = ci.half_width;
    j["lower"] = ci.lower();
    j["upper"] = ci.upper();
    j["n"] = ci.n;
    return j;
}

FprInterval interval_from(const ojson& j) {
    return {j.at("estimate").get<double>(), j.at("half_width").get<double>(), j.at("n").get<std::size_t>()};
}

ojson histogram_json(const Histogram& h) {
    ojson j;
    j["bin_width"] = h.bin_width;
    j["total"] = h.total;
    j["counts"] = h.counts;
    return j;
}

Histogram histogram_from(const ojson& j) {
    Histogram h;
    h.bin_width = j.at("bin_width").get<double>();
    h.total = j.at("total").get<std::size_t>();
    h.counts = j.at("counts").get<std::vector<std::size_t>>();
    return h;
}

ojson thresholds_json(const Thresholds& t) {
    ojson j;
    j["c1"] = t.c1;
    j["c2"] = t.c2;
    j["c3"] = t.c3;
    j["c4"] = t.c4;
    return j;
}

}  // namespace

ojson emit_json(const ReportBundle& b) {
    ojson doc;
    doc["schema"] = "qsid-results";
    doc["schema_version"] = b.schema_version;

    ojson header;
    header["course"] = b.header.course;
    header["exam"] = b.header.exam;
    header["n_students"] = b.header.n_students;
    header["n_exams"] = b.header.n_exams;
    header["n_questions"] = b.header.n_questions;
    header["complexity"] = b.header.complexity;
    header["exam_complexities"] = b.header.exam_complexities;
    header["low_complexity_warning"] = b.header.low_complexity_warning;
    doc["header"] = std::move(header);

    ojson settings;
    settings["seed"] = b.seed;
    settings["cohorts"] = b.cohorts;
    settings["synthetic_students_requested"] = b.synthetic_students_requested;
    settings["threshold_source"] = b.threshold_source;
    settings["threshold_class_size"] = b.threshold_class_size;
    settings["thresholds"] = thresholds_json(b.thresholds);
    doc["settings"] = std::move(settings);

    ojson students = ojson::array();
    for (const auto& s : b.students) {
        ojson j;
        j["id"] = s.id;
        j["test_score"] = s.test_score;
        j["rank"] = s.rank;
        j["max_is"] = s.max_is;
        j["median_is"] = s.median_is;
        j["im"] = s.im;
        j["local_median_im"] = s.local_median_im;
        j["cs"] = s.cs;
        j["partner1"] = s.partner1;
        j["partner2"] = s.partner2.empty() ? ojson(nullptr) : ojson(s.partner2);
        j["partner1_tied"] = s.partner1_tied;
        j["partner2_tied"] = s.partner2_tied;
        students.push_back(std::move(j));
    }
    doc["students"] = std::move(students);

    ojson groups = ojson::array();
    for (const auto& g : b.groups) {
        ojson j;
        j["rank"] = g.rank;
        j["bin"] = std::string(to_string(g.bin));
        j["max_cs"] = g.max_cs;
        j["emp_fpr"] = g.emp_fpr;
        j["syn_fpr"] = g.syn_fpr ? ojson(*g.syn_fpr) : ojson(nullptr);
        j["excluded"] = g.excluded;
        ojson members = ojson::array();
        for (std::size_t k = 0; k < g.member_ids.size(); ++k) {
            ojson m;
            m["id"] = g.member_ids[k];
            m["cs"] = g.member_cs[k];
            members.push_back(std::move(m));
        }
        j["members"] = std::move(members);
        groups.push_back(std::move(j));
    }
    doc["groups"] = std::move(groups);

    ojson fpr = ojson::array();
    for (const auto& row : b.fpr_table) {
        ojson j;
        j["bin"] = std::string(to_string(row.bin));
        j["level"] = row.level;
        j["empirical"] = interval_json(row.empirical);
        j["synthetic"] = interval_json(row.synthetic);
        fpr.push_back(std::move(j));
    }
    doc["fpr_table"] = std::move(fpr);

    ojson synthetic;
    synthetic["n_synthetic"] = b.n_synthetic;
    synthetic["replicates"] = b.synthetic_replicates;
    synthetic["redraws"] = b.synthetic_redraws;
    doc["synthetic"] = std::move(synthetic);

    ojson hist;
    hist["query"] = histogram_json(b.query_cs);
    hist["synthetic"] = histogram_json(b.synthetic_cs);
    hist["empirical"] = b.empirical_cs ? histogram_json(*b.empirical_cs) : ojson(nullptr);
    hist["empirical_label"] = b.empirical_cs_label;
    doc["cs_histograms"] = std::move(hist);

    ojson is_hist = ojson::array();
    for (const auto& h : b.is_histograms) {
        ojson j;
        j["group_rank"] = h.group_rank;
        j["member_id"] = h.member_id;
        j["counts"] = h.counts;
        j["group_pair_is"] = h.group_pair_is;
        is_hist.push_back(std::move(j));
    }
    doc["is_histograms"] = std::move(is_hist);

    ojson excl;
    excl["duplicate_ids"] = b.exclusions.duplicate_ids;
    excl["missing_id_rows"] = b.exclusions.missing_id_rows;
    excl["low_score_ids"] = b.exclusions.low_score_ids;
    excl["unmatched_ids"] = b.exclusions.unmatched_ids;
    excl["empty_cells"] = b.empty_cells;
    ojson excluded_groups = ojson::array();
    for (const auto& g : b.groups) {
        if (g.excluded) excluded_groups.push_back(g.rank);
    }
    excl["excluded_groups"] = std::move(excluded_groups);
    doc["exclusions"] = std::move(excl);

    doc["warnings"] = b.warnings;
    return doc;
}

std::string emit_json_text(const ReportBundle& bundle) { return emit_json(bundle).dump(2) + "\n"; }

ReportBundle bundle_from_json(const ojson& doc) {
    try {
        ReportBundle b;
        b.schema_version = doc.at("schema_version").get<int>();
        if (b.schema_version != kReportSchemaVersion) {
            throw ConfigError("unsupported results schema version " + std::to_string(b.schema_version));
        }
        const auto& h = doc.at("header");
        b.header.course = h.at("course").get<std::string>();
        b.header.exam = h.at("exam").get<std::string>();
        b.header.n_students = h.at("n_students").get<std::size_t>();
        b.header.n_exams = h.at("n_exams").get<std::size_t>();
        b.header.n_questions = h.at("n_questions").get<std::size_t>();
        b.header.complexity = h.at("complexity").get<double>();
        b.header.exam_complexities = h.at("exam_complexities").get<std::vector<double>>();
        b.header.low_complexity_warning = h.at("low_complexity_warning").get<bool>();

        const auto& s = doc.at("settings");
        b.seed = s.at("seed").get<std::uint64_t>();
        b.cohorts = s.at("cohorts").get<std::size_t>();
        b.synthetic_students_requested = s.at("synthetic_students_requested").get<std::size_t>();
        b.threshold_source = s.at("threshold_source").get<std::string>();
        b.threshold_class_size = s.at("threshold_class_size").get<std::size_t>();
        const auto& t = s.at("thresholds");
        b.thresholds = {t.at("c1").get<double>(), t.at("c2").get<double>(), t.at("c3").get<double>(),
                        t.at("c4").get<double>()};

        for (const auto& j : doc.at("students")) {
            StudentRow r;
            r.id = j.at("id").get<std::string>();
            r.test_score = j.at("test_score").get<double>();
            r.rank = j.at("rank").get<std::size_t>();
            r.max_is = j.at("max_is").get<std::uint32_t>();
            r.median_is = j.at("median_is").get<double>();
            r.im = j.at("im").get<double>();
            r.local_median_im = j.at("local_median_im").get<double>();
            r.cs = j.at("cs").get<double>();
            r.partner1 = j.at("partner1").get<std::string>();
            if (!j.at("partner2").is_null()) r.partner2 = j.at("partner2").get<std::string>();
            r.partner1_tied = j.at("partner1_tied").get<bool>();
            r.partner2_tied = j.at("partner2_tied").get<bool>();
            b.students.push_back(std::move(r));
        }
        for (const auto& j : doc.at("groups")) {
            ReportGroup g;
            g.rank = j.at("rank").get<std::size_t>();
            g.bin = risk_bin_from_string(j.at("bin").get<std::string>());
            g.max_cs = j.at("max_cs").get<double>();
            g.emp_fpr = j.at("emp_fpr").get<double>();
            if (!j.at("syn_fpr").is_null()) g.syn_fpr = j.at("syn_fpr").get<double>();
            g.excluded = j.at("excluded").get<bool>();
            for (const auto& m : j.at("members")) {
                g.member_ids.push_back(m.at("id").get<std::string>());
                g.member_cs.push_back(m.at("cs").get<double>());
            }
            b.groups.push_back(std::move(g));
        }
        for (const auto& j : doc.at("fpr_table")) {
            FprRow r;
            r.bin = risk_bin_from_string(j.at("bin").get<std::string>());
            r.level = j.at("level").get<double>();
            r.empirical = interval_from(j.at("empirical"));
            r.synthetic = interval_from(j.at("synthetic"));
            b.fpr_table.push_back(r);
        }
        const auto& syn = doc.at("synthetic");
        b.n_synthetic = syn.at("n_synthetic").get<std::size_t>();
        b.synthetic_replicates = syn.at("replicates").get<std::size_t>();
        b.synthetic_redraws = syn.at("redraws").get<std::size_t>();

        const auto& hist = doc.at("cs_histograms");
        b.query_cs = histogram_from(hist.at("query"));
        b.synthetic_cs = histogram_from(hist.at("synthetic"));
        if (!hist.at("empirical").is_null()) b.empirical_cs = histogram_from(hist.at("empirical"));
        b.empirical_cs_label = hist.at("empirical_label").get<std::string>();

        for (const auto& j : doc.at("is_histograms")) {
            IsHistogram ih;
            ih.group_rank = j.at("group_rank").get<std::size_t>();
            ih.member_id = j.at("member_id").get<std::string>();
            ih.counts = j.at("counts").get<std::vector<std::size_t>>();
            ih.group_pair_is = j.at("group_pair_is").get<std::vector<std::uint32_t>>();
            b.is_histograms.push_back(std::move(ih));
        }
        const auto& e = doc.at("exclusions");
        b.exclusions.duplicate_ids = e.at("duplicate_ids").get<std::vector<std::string>>();
        b.exclusions.missing_id_rows = e.at("missing_id_rows").get<std::size_t>();
        b.exclusions.low_score_ids = e.at("low_score_ids").get<std::vector<std::string>>();
        b.exclusions.unmatched_ids = e.at("unmatched_ids").get<std::vector<std::string>>();
        b.empty_cells = e.at("empty_cells").get<std::size_t>();
        b.warnings = doc.at("warnings").get<std::vector<std::string>>();
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed results JSON: ") + e.what());
    }
}

}  // namespace qsid
