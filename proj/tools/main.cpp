#include "sabma/error.hpp"
#include "sabma/harness.hpp"
#include "sabma/losssurface.hpp"
#include "sabma/rng.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace sabma;

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              std::optional<std::string> out_dir, bool canonical) {
    ExperimentConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.output_dir = *out_dir;
    RunReport report = run_experiment(cfg, canonical);
    const auto& fin = report.at("final");
    std::printf("mode=%s seed=%llu acc=%.4f ece=%.4f nll=%.4f\n",
                report.at("mode").get<std::string>().c_str(),
                static_cast<unsigned long long>(cfg.seed), fin.at("acc").get<double>(),
                fin.at("ece").get<double>(), fin.at("nll").get<double>());
    std::printf("report: %s\n",
                (std::filesystem::path(cfg.output_dir) / "report.json").string().c_str());
    return 0;
}

void print_spectrum_block(const Json& s, const std::string& label) {
    std::printf("%-10s lambda1=%+.6e iters=%d converged=%s", label.c_str(),
                s.at("lambda1").get<double>(), s.at("iterations").get<int>(),
                s.at("converged").get<bool>() ? "yes" : "no");
    if (s.contains("ratio_1_5"))
        std::printf(" ratio_1_5=%.4f", s.at("ratio_1_5").get<double>());
    std::printf("\n");
}

int cmd_spectrum(const std::string& report_path) {
    std::ifstream in(report_path);
    if (!in) fail_io("cannot open report '" + report_path + "'");
    Json report;
    try {
        in >> report;
    } catch (const Json::parse_error& e) {
        fail_config("invalid JSON in '" + report_path + "': " + e.what());
    }
    if (!report.contains("spectroscopy"))
        fail_config("report '" + report_path + "' has no spectroscopy section");
    const Json& spec = report.at("spectroscopy");
    if (spec.contains("point")) {
        print_spectrum_block(spec.at("point"), "point");
        return 0;
    }
    const Json& per = spec.at("per_sample");
    int i = 0;
    for (const Json& s : per) print_spectrum_block(s, "sample " + std::to_string(i++));
    std::printf("mean_lambda1=%+.6e", spec.at("mean_lambda1").get<double>());
    if (spec.contains("mean_ratio_1_5"))
        std::printf(" mean_ratio_1_5=%.4f", spec.at("mean_ratio_1_5").get<double>());
    std::printf("\n");
    if (spec.contains("weyl")) {
        const Json& w = spec.at("weyl");
        std::printf("weyl: lower=%+.6e observed=%+.6e upper=%+.6e pass=%s\n",
                    w.at("lower").get<double>(), w.at("observed").get<double>(),
                    w.at("upper").get<double>(), w.at("pass").get<bool>() ? "yes" : "no");
    }
    return 0;
}

int cmd_surface(const std::string& config_path, const std::string& w0_path,
                const std::string& w1_path, const std::string& w2_path,
                const std::string& out_path, int na, int nb) {
    ExperimentConfig cfg = load_config(config_path);
    Dataset train;
    if (cfg.dataset.path) {
        train = load_csv(*cfg.dataset.path);
    } else {
        train = gen_dataset(parse_data_kind(cfg.dataset.kind), cfg.dataset.n_per_class,
                            cfg.dataset.noise, rng::derive(cfg.seed, "data", 0),
                            cfg.dataset.classes, cfg.dataset.dim);
    }
    Model model = build_mlp(train.dim(), cfg.model.hidden, train.classes, cfg.model.norm,
                            parse_activation(cfg.model.activation));

    ParamVector w0 = load_param_vector(w0_path);
    ParamVector w1 = load_param_vector(w1_path);
    ParamVector w2 = load_param_vector(w2_path);
    if (w0.size() != model.param_count())
        fail_config("surface: weights do not match the configured model");

    SurfacePlane plane = plane_from_points(w0, w1, w2);
    SurfaceGrid grid = grid_eval(model, plane, default_extent(plane), na, nb, train);
    write_surface_csv(grid, plane, out_path);
    std::printf("surface: %dx%d grid -> %s\n", na, nb, out_path.c_str());
    return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& out_path) {
    std::vector<ComparisonRow> rows = compare_runs(paths);
    std::fputs(render_comparison(rows).c_str(), stdout);
    if (!out_path.empty())
        atomic_write_text(out_path, comparison_to_json(rows).dump(2) + "\n");
    return 0;
}

int cmd_gen_data(const std::string& kind, int n_per_class, double noise, std::uint64_t seed,
                 const std::string& out_dir, int classes, int dim, int test_per_class) {
    DataKind k = parse_data_kind(kind);
    std::filesystem::create_directories(out_dir);
    Dataset train = gen_dataset(k, n_per_class, noise, rng::derive(seed, "data", 0), classes, dim);
    Dataset test = gen_dataset(k, test_per_class, noise, rng::derive(seed, "data", 1), classes, dim);
    const auto train_path = (std::filesystem::path(out_dir) / "train.csv").string();
    const auto test_path = (std::filesystem::path(out_dir) / "test.csv").string();
    write_csv(train, train_path);
    write_csv(test, test_path);
    std::printf("wrote %s (%d rows) and %s (%d rows)\n", train_path.c_str(), train.size(),
                test_path.c_str(), test.size());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"flat-posterior optimizer workbench"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "run an experiment from a config file");
    std::string train_config;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::string> train_out;
    bool canonical = false;
    train->add_option("--config", train_config, "experiment config JSON")->required();
    train->add_option("--seed", train_seed, "override the config seed");
    train->add_option("--out", train_out, "override the output directory");
    train->add_flag("--canonical", canonical, "byte-reproducible report (no wall clock)");

    // spectrum
    auto* spectrum = app.add_subcommand("spectrum", "summarize spectroscopy from a run report");
    std::string spectrum_report;
    spectrum->add_option("--report", spectrum_report, "report.json from a run")->required();

    // surface
    auto* surface = app.add_subcommand("surface", "2-D loss surface through three weight vectors");
    std::string surf_config, surf_w0, surf_w1, surf_w2, surf_out = "surface.csv";
    int surf_na = 25, surf_nb = 25;
    surface->add_option("--config", surf_config, "experiment config JSON")->required();
    surface->add_option("--w0", surf_w0, "anchor weights (origin)")->required();
    surface->add_option("--w1", surf_w1, "anchor weights")->required();
    surface->add_option("--w2", surf_w2, "anchor weights")->required();
    surface->add_option("--out", surf_out, "output CSV path");
    surface->add_option("--na", surf_na, "grid resolution along a");
    surface->add_option("--nb", surf_nb, "grid resolution along b");

    // compare
    auto* compare = app.add_subcommand("compare", "aggregate run reports");
    std::vector<std::string> compare_paths;
    std::string compare_out;
    compare->add_option("reports", compare_paths, "report.json paths")->required()->expected(-1);
    compare->add_option("--out", compare_out, "also write the table as JSON");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write synthetic train/test CSVs");
    std::string gen_kind = "two_moons", gen_out = "data";
    int gen_n = 50, gen_classes = 2, gen_dim = 2, gen_test = 1000;
    double gen_noise = 0.1;
    std::uint64_t gen_seed = 0;
    gen->add_option("--kind", gen_kind, "two_moons | spirals | blobs");
    gen->add_option("--n-per-class", gen_n, "training points per class");
    gen->add_option("--noise", gen_noise, "noise scale");
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--classes", gen_classes, "number of classes");
    gen->add_option("--dim", gen_dim, "feature dimension");
    gen->add_option("--test-per-class", gen_test, "test points per class");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(train_config, train_seed, train_out, canonical);
        if (*spectrum) return cmd_spectrum(spectrum_report);
        if (*surface)
            return cmd_surface(surf_config, surf_w0, surf_w1, surf_w2, surf_out, surf_na, surf_nb);
        if (*compare) return cmd_compare(compare_paths, compare_out);
        if (*gen) return cmd_gen_data(gen_kind, gen_n, gen_noise, gen_seed, gen_out, gen_classes,
                                      gen_dim, gen_test);
    } catch (const sabma::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        switch (e.kind()) {
            case sabma::ErrorKind::Config:
            case sabma::ErrorKind::Io: return 2;
            case sabma::ErrorKind::Numeric: return 3;
        }
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
    return 0;
}
