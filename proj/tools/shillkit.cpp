// shillkit: config-driven shilling-attack experiments on rating datasets.
// Verbs: validate, run, summarize, detect, project.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "shill/evaluation.hpp"
#include "shill/runner.hpp"

using namespace shill;

namespace {

RatingMatrix load_any(const std::string& path, const std::string& format, bool csv_header) {
    if (format == "movielens") return load_movielens(path);
    if (format == "csv") return load_csv(path, csv_header);
    throw ValidationError("unknown format '" + format + "' (movielens | csv)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shilling-attack toolkit"};
    app.require_subcommand(1);

    std::string config_path, matrix_path, format = "movielens", out_path, report_dir;
    bool csv_header = false;
    std::size_t det_m = 50, det_k = 3;

    auto* validate_cmd = app.add_subcommand("validate", "check a config file");
    validate_cmd->add_option("config", config_path)->required();

    auto* run_cmd = app.add_subcommand("run", "run the experiment grid");
    run_cmd->add_option("config", config_path)->required();

    auto* summarize_cmd = app.add_subcommand("summarize", "best/top-2 counts per attacker");
    summarize_cmd->add_option("dir", report_dir)->required();

    auto* detect_cmd = app.add_subcommand("detect", "flag suspicious users");
    detect_cmd->add_option("matrix", matrix_path)->required();
    detect_cmd->add_option("--format", format);
    detect_cmd->add_flag("--csv-header", csv_header);
    detect_cmd->add_option("--m", det_m, "users to flag");
    detect_cmd->add_option("--k", det_k, "principal components");

    auto* project_cmd = app.add_subcommand("project", "export 2-D PCA coordinates");
    project_cmd->add_option("matrix", matrix_path)->required();
    project_cmd->add_option("--format", format);
    project_cmd->add_flag("--csv-header", csv_header);
    project_cmd->add_option("--out", out_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate_cmd->parsed()) {
            ExperimentConfig cfg = parse_config_file(config_path);
            ValidationOutcome vo = validate(cfg);
            if (!vo.ok()) {
                for (const auto& e : vo.errors) std::cerr << "error: " << e << "\n";
                return 2;
            }
            std::cout << "config ok: " << vo.normalized.attackers.size() << " attackers x "
                      << vo.normalized.victims.size() << " victims\n";
            return 0;
        }
        if (run_cmd->parsed()) {
            ExperimentConfig cfg = parse_config_file(config_path);
            if (const char* dir = std::getenv("SHILLKIT_OUTPUT_DIR")) cfg.output_dir = dir;
            RunResult res = run_experiment(cfg);
            for (const auto& f : res.failures) std::cerr << "failed: " << f << "\n";
            if (res.exit_code == 0)
                std::cout << res.reports.size() << " cells completed, reports in "
                          << cfg.output_dir << "\n";
            return res.exit_code;
        }
        if (summarize_cmd->parsed()) {
            auto reports = read_report_csv(report_dir + "/report.csv");
            std::cout << "attacker\t#best\t#top-2\n";
            for (const auto& s : summarize(reports))
                std::cout << s.attacker << '\t' << s.best << '\t' << s.top2 << "\n";
            return 0;
        }
        if (detect_cmd->parsed()) {
            RatingMatrix m = load_any(matrix_path, format, csv_header);
            DetectionResult res = detect(m, std::min(det_m, m.num_users()), det_k);
            std::cout << "components_used " << res.components_used << "\n";
            for (std::size_t u : res.flagged) std::cout << m.user_id(u) << "\n";
            return 0;
        }
        if (project_cmd->parsed()) {
            RatingMatrix m = load_any(matrix_path, format, csv_header);
            std::vector<bool> is_fake(m.num_users());
            for (std::size_t u = 0; u < m.num_users(); ++u)
                is_fake[u] = m.user_id(u).rfind("fake:", 0) == 0;
            export_projection(m, is_fake, out_path);
            std::cout << "wrote " << out_path << "\n";
            return 0;
        }
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
