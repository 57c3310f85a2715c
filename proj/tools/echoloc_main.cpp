// SPDX-License-Identifier: Apache-2.0
// echoloc: acoustic source localization pipeline driver.
//
// Subcommands: scene, rir, dataset, train, eval, report.
// Exit codes: 0 success, 1 internal error, 2 user/input error.

#include "echoloc/audio.hpp"
#include "echoloc/dataset.hpp"
#include "echoloc/eval.hpp"
#include "echoloc/localize.hpp"
#include "echoloc/propagation.hpp"
#include "echoloc/scene.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace echoloc;

namespace {

Vec3 to_vec3(const std::vector<double>& v, const char* name) {
    if (v.size() != 3)
        throw UserError(std::string(name) + " needs exactly three numbers");
    return Vec3(v[0], v[1], v[2]);
}

std::pair<int, int> parse_grid(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos)
        throw UserError("grid must look like ROWSxCOLS, e.g. 8x8");
    try {
        const int rows = std::stoi(text.substr(0, x));
        const int cols = std::stoi(text.substr(x + 1));
        if (rows <= 0 || cols <= 0) throw UserError("grid sizes must be positive");
        return {rows, cols};
    } catch (const std::invalid_argument&) {
        throw UserError("grid must look like ROWSxCOLS, e.g. 8x8");
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UserError("cannot write: " + path);
    os << text;
}

json propagation_to_json(const PropagationConfig& c) {
    return {{"sample_rate", c.sample_rate},
            {"speed_of_sound", c.speed_of_sound},
            {"rays_per_endpoint", c.rays_per_endpoint},
            {"max_bounces", c.max_bounces},
            {"rir_duration", c.rir_duration},
            {"seed", c.seed},
            {"russian_roulette_start", c.russian_roulette_start},
            {"max_specular_order", c.max_specular_order}};
}

// ---- scene ---------------------------------------------------------------

int cmd_scene_build(const std::string& preset, const std::string& out) {
    if (preset != "house10")
        throw UserError("unknown preset: " + preset + " (available: house10)");
    save_scene(build_house10(), out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_scene_validate(const std::string& path) {
    const Scene scene = load_scene(path);
    std::cout << "ok: " << scene.regions.size() << " regions, "
              << scene.surfaces.size() << " surfaces, "
              << scene.vertices.size() << " vertices\n";
    return 0;
}

// ---- rir -----------------------------------------------------------------

struct RirArgs {
    std::string scene_path;
    std::vector<double> source;
    std::vector<double> receiver{0.0, 0.0, 0.0};
    std::string out = "rir.wav";
    bool free_field = false;
    std::string oracle;
    std::vector<double> box{5.0, 4.0, 3.0};
    double absorption = 0.3;
    int max_order = 2;
    PropagationConfig prop;
};

int cmd_rir(const RirArgs& a) {
    const Vec3 source = to_vec3(a.source, "--source");
    ImpulseResponse ir;
    if (a.oracle == "image-source") {
        ir = image_source_rir(to_vec3(a.box, "--box"), source,
                              to_vec3(a.receiver, "--receiver"), a.absorption,
                              a.max_order, a.prop);
    } else if (!a.oracle.empty()) {
        throw UserError("unknown oracle: " + a.oracle);
    } else if (a.free_field) {
        Scene scene;
        scene.receiver.position = to_vec3(a.receiver, "--receiver");
        scene.finalize();
        ir = simulate_rir(scene, source, a.prop);
    } else {
        if (a.scene_path.empty())
            throw UserError("--scene is required (or --free-field / --oracle)");
        const Scene scene = load_scene(a.scene_path);
        ir = simulate_rir(scene, source, a.prop);
    }

    AudioClip clip{ir.samples, ir.sample_rate};
    write_wav(a.out, clip, WavEncoding::Float32);
    json sidecar = {{"source", {source.x(), source.y(), source.z()}},
                    {"receiver", a.receiver},
                    {"free_field", a.free_field},
                    {"oracle", a.oracle},
                    {"propagation", propagation_to_json(a.prop)},
                    {"checksum", file_checksum(a.out)}};
    write_text(a.out + ".json", sidecar.dump(2) + "\n");
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

// ---- dataset ---------------------------------------------------------------

struct DatasetArgs {
    std::string scene_path;
    std::string out;
    std::string mode = "regions";
    std::string grid = "8x8";
    double spacing = 0.52;
    double height = 1.7;
    int test_count = 250;
    int folds = 5;
    std::uint64_t seed = 0;
    int threads = 0;
    PropagationConfig prop;
    StftConfig stft;
};

int cmd_dataset(const DatasetArgs& a) {
    const Scene scene = load_scene(a.scene_path);

    std::vector<SourcePlacement> placements;
    if (a.mode == "regions") {
        const auto [rows, cols] = parse_grid(a.grid);
        placements = region_grid(scene, rows, cols, a.height);
    } else if (a.mode == "coords") {
        placements = coordinate_grid(scene, a.spacing, a.height);
    } else {
        throw UserError("unknown mode: " + a.mode + " (regions|coords)");
    }
    const std::vector<SourcePlacement> test =
        offset_test_grid(scene, placements, a.test_count, derive_seed(a.seed, 0x7e57));
    placements.insert(placements.end(), test.begin(), test.end());

    AudioClip dry = synthetic_dry_clip(a.prop.sample_rate);
    dry = loudness_normalize(dry, -15.0);

    PropagationConfig prop = a.prop;
    prop.seed = a.seed;
    DatasetManifest manifest = render_dataset(scene, placements, dry, prop,
                                              a.stft, a.out, a.threads);
    manifest = assign_folds(std::move(manifest), a.folds, derive_seed(a.seed, 0xf01d));
    save_manifest(manifest, (fs::path(a.out) / "manifest.json").string());

    json config = {{"scene", a.scene_path},
                   {"mode", a.mode},
                   {"grid", a.grid},
                   {"spacing", a.spacing},
                   {"height", a.height},
                   {"test_count", a.test_count},
                   {"folds", a.folds},
                   {"seed", a.seed},
                   {"propagation", propagation_to_json(prop)},
                   {"stft", {{"window_length", a.stft.window_length},
                             {"hop", a.stft.hop}}}};
    write_text((fs::path(a.out) / "config.json").string(), config.dump(2) + "\n");
    std::cout << "wrote " << manifest.entries.size() << " entries ("
              << manifest.train_indices().size() << " train, "
              << manifest.test_indices().size() << " test) to " << a.out << "\n";
    return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::string manifest_path;
    std::string data_dir;  // defaults to the manifest's directory
    std::string out = ".";
    std::string task = "regions";
    int fold = 0;
    bool all_folds = false;
    std::uint64_t seed = 0;
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 0.0;  // 0: task default
};

int cmd_train(const TrainArgs& a) {
    const DatasetManifest manifest = load_manifest(a.manifest_path);
    const std::string data_dir =
        a.data_dir.empty() ? fs::path(a.manifest_path).parent_path().string()
                           : a.data_dir;
    fs::create_directories(a.out);

    ModelConfig config;
    config.task = a.task == "coords" ? Task::Regression : Task::Classification;
    if (a.task != "regions" && a.task != "coords")
        throw UserError("unknown task: " + a.task + " (regions|coords)");
    config.epochs = a.epochs;
    config.batch_size = a.batch_size;
    // Unbounded MSE gradients need a smaller step than cross-entropy.
    config.learning_rate =
        a.learning_rate > 0.0
            ? a.learning_rate
            : (config.task == Task::Regression ? 1e-3 : 1e-2);

    std::vector<int> folds;
    if (a.all_folds)
        for (int f = 0; f < manifest.folds; ++f) folds.push_back(f);
    else
        folds.push_back(a.fold);

    std::ostringstream csv;
    csv << std::setprecision(10);
    csv << (config.task == Task::Classification
                ? "fold,macro_precision,macro_recall,macro_f1\n"
                : "fold,validation_mse\n");
    json fold_reports = json::array();
    std::vector<ClassMetrics> fold_metrics;
    for (int f : folds) {
        ModelConfig cfg = config;
        cfg.seed = derive_seed(a.seed, static_cast<std::uint64_t>(f));
        auto [model, report] = train(cfg, manifest, data_dir, f);
        const std::string model_path =
            (fs::path(a.out) / ("model_fold" + std::to_string(f) + ".bin")).string();
        save_model(model, model_path);

        json jr = {{"fold", f},
                   {"model", model_path},
                   {"model_checksum", model_checksum(model)},
                   {"final_loss",
                    report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()}};
        if (config.task == Task::Classification) {
            const ConfusionMatrix cm =
                confusion(report.validation_pred, report.validation_truth,
                          static_cast<int>(model.labels.size()));
            const ClassMetrics m = metrics(cm);
            fold_metrics.push_back(m);
            csv << f << ',' << m.macro_precision << ',' << m.macro_recall << ','
                << m.macro_f1 << '\n';
            jr["macro_precision"] = m.macro_precision;
            jr["macro_recall"] = m.macro_recall;
            jr["macro_f1"] = m.macro_f1;
            std::cout << "fold " << f << ": macro-F1 "
                      << std::setprecision(4) << m.macro_f1 << "\n";
        } else {
            csv << f << ',' << report.validation_mse << '\n';
            jr["validation_mse"] = report.validation_mse;
            std::cout << "fold " << f << ": validation MSE "
                      << std::setprecision(4) << report.validation_mse << "\n";
        }
        fold_reports.push_back(jr);
    }
    write_text((fs::path(a.out) / "fold_metrics.csv").string(), csv.str());

    json report_json = {{"task", a.task},
                        {"seed", a.seed},
                        {"epochs", a.epochs},
                        {"manifest", a.manifest_path},
                        {"folds", fold_reports}};
    if (fold_metrics.size() >= 2) {
        const CvSummary s = cv_summary(fold_metrics);
        report_json["cv_summary"] = {
            {"macro_precision_mean", s.mean_precision},
            {"macro_precision_std", s.std_precision},
            {"macro_recall_mean", s.mean_recall},
            {"macro_recall_std", s.std_recall},
            {"macro_f1_mean", s.mean_f1},
            {"macro_f1_std", s.std_f1}};
        std::ostringstream cv_csv;
        cv_csv << std::setprecision(10)
               << "metric,mean,sample_std\n"
               << "macro_precision," << s.mean_precision << ',' << s.std_precision << '\n'
               << "macro_recall," << s.mean_recall << ',' << s.std_recall << '\n'
               << "macro_f1," << s.mean_f1 << ',' << s.std_f1 << '\n';
        write_text((fs::path(a.out) / "cv_summary.csv").string(), cv_csv.str());
    }
    write_text((fs::path(a.out) / "train_report.json").string(),
               report_json.dump(2) + "\n");
    return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string manifest_path;
    std::string model_path;
    std::string data_dir;
    std::string out = ".";
};

int cmd_eval(const EvalArgs& a) {
    const DatasetManifest manifest = load_manifest(a.manifest_path);
    const Model model = load_model(a.model_path);
    const std::string data_dir =
        a.data_dir.empty() ? fs::path(a.manifest_path).parent_path().string()
                           : a.data_dir;
    fs::create_directories(a.out);

    const std::vector<int> test = manifest.test_indices();
    if (test.empty()) throw UserError("manifest has no test entries");

    if (model.config.task == Task::Classification) {
        std::vector<int> preds, truths;
        std::ostringstream pred_csv;
        pred_csv << "index,x,y,z,true_region,predicted_region\n";
        auto class_of = [&](const std::string& name) {
            const auto it = std::find(model.labels.begin(), model.labels.end(), name);
            if (it == model.labels.end())
                throw UserError("test region not known to model: " + name);
            return static_cast<int>(it - model.labels.begin());
        };
        for (int i : test) {
            const ManifestEntry& e = manifest.entries[static_cast<size_t>(i)];
            const Spectrogram spec = read_spectrogram(
                (fs::path(data_dir) / e.spectrogram_path).string());
            const std::string predicted = predict_region(model, spec);
            preds.push_back(class_of(predicted));
            truths.push_back(class_of(e.placement.region));
            pred_csv << i << ',' << e.placement.position.x() << ','
                     << e.placement.position.y() << ','
                     << e.placement.position.z() << ',' << e.placement.region
                     << ',' << predicted << '\n';
        }
        const ConfusionMatrix cm =
            confusion(preds, truths, static_cast<int>(model.labels.size()));
        const ClassMetrics m = metrics(cm);
        write_confusion_csv(cm, model.labels,
                            (fs::path(a.out) / "confusion.csv").string());
        write_metrics_csv(m, model.labels,
                          (fs::path(a.out) / "metrics.csv").string());
        write_text((fs::path(a.out) / "predictions.csv").string(), pred_csv.str());
        std::cout << std::setprecision(4) << "test macro-F1 " << m.macro_f1
                  << " over " << test.size() << " samples\n";
    } else {
        std::vector<Eigen::Vector2d> preds, truths;
        std::ostringstream pred_csv;
        pred_csv << std::setprecision(10)
                 << "index,true_x,true_z,pred_x,pred_z,distance\n";
        for (int i : test) {
            const ManifestEntry& e = manifest.entries[static_cast<size_t>(i)];
            const Spectrogram spec = read_spectrogram(
                (fs::path(data_dir) / e.spectrogram_path).string());
            const Eigen::Vector2d pred = predict_xy(model, spec);
            const Eigen::Vector2d truth(e.placement.position.x(),
                                        e.placement.position.z());
            preds.push_back(pred);
            truths.push_back(truth);
            pred_csv << i << ',' << truth.x() << ',' << truth.y() << ','
                     << pred.x() << ',' << pred.y() << ','
                     << (pred - truth).norm() << '\n';
        }
        const RegressionError err = regression_error(preds, truths);
        const double max_d =
            *std::max_element(err.distances.begin(), err.distances.end());
        std::vector<double> radii;
        for (double r = 0.0; r <= max_d + 0.1; r += 0.1) radii.push_back(r);
        const LeniencyCurve curve = leniency_curve(err.distances, radii);
        write_leniency_csv(curve, (fs::path(a.out) / "leniency.csv").string());
        write_leniency_svg(curve, (fs::path(a.out) / "leniency.svg").string());
        write_text((fs::path(a.out) / "predictions.csv").string(), pred_csv.str());
        std::ostringstream reg_csv;
        reg_csv << std::setprecision(10) << "mse,radius_at_50pct\n"
                << err.mse << ',' << radius_at_accuracy(curve, 0.5) << '\n';
        write_text((fs::path(a.out) / "regression.csv").string(), reg_csv.str());
        std::cout << std::setprecision(4) << "test MSE " << err.mse
                  << ", 50% leniency radius "
                  << radius_at_accuracy(curve, 0.5) << " m\n";
    }
    return 0;
}

// ---- report ------------------------------------------------------------------

int cmd_report(const std::string& train_dir, const std::string& eval_dir,
               const std::string& out) {
    fs::create_directories(out);
    std::ostringstream text;
    text << std::setprecision(4);
    text << "echoloc run report\n==================\n\n";

    if (!train_dir.empty()) {
        std::ifstream in(fs::path(train_dir) / "train_report.json");
        if (!in) throw UserError("no train_report.json in " + train_dir);
        json jr = json::parse(in);
        text << "task: " << jr.value("task", "?") << "\n";
        text << "folds trained: " << jr.at("folds").size() << "\n";
        for (const auto& f : jr.at("folds")) {
            text << "  fold " << f.at("fold").get<int>() << ": ";
            if (f.contains("macro_f1"))
                text << "macro-F1 " << f.at("macro_f1").get<double>() << "\n";
            else
                text << "validation MSE " << f.at("validation_mse").get<double>() << "\n";
        }
        if (jr.contains("cv_summary")) {
            const auto& s = jr.at("cv_summary");
            text << "cross-validation macro-F1: "
                 << s.at("macro_f1_mean").get<double>() << " +/- "
                 << s.at("macro_f1_std").get<double>() << " (sample std)\n";
            text << "reference values, not asserted: CNN 0.594 +/- 0.019, "
                    "AST 0.786 +/- 0.014\n";
        }
        text << "\n";
    }
    if (!eval_dir.empty()) {
        const fs::path leniency = fs::path(eval_dir) / "leniency.csv";
        if (fs::exists(leniency)) {
            std::ifstream in(leniency);
            std::string line;
            std::getline(in, line);  // header
            LeniencyCurve curve;
            while (std::getline(in, line)) {
                const auto comma = line.find(',');
                if (comma == std::string::npos) continue;
                curve.radii.push_back(std::stod(line.substr(0, comma)));
                curve.accuracy.push_back(std::stod(line.substr(comma + 1)));
            }
            if (!curve.radii.empty()) {
                write_leniency_svg(curve, (fs::path(out) / "leniency.svg").string());
                text << "50% leniency radius: "
                     << radius_at_accuracy(curve, 0.5)
                     << " m (reference value, not asserted: 3.4 m)\n";
            }
        }
        const fs::path metrics_csv = fs::path(eval_dir) / "metrics.csv";
        if (fs::exists(metrics_csv)) {
            std::ifstream in(metrics_csv);
            std::string line;
            while (std::getline(in, line))
                if (line.rfind("macro,", 0) == 0) text << "test " << line << "\n";
        }
    }
    write_text((fs::path(out) / "report.txt").string(), text.str());
    std::cout << text.str();
    return 0;
}

void add_propagation_flags(CLI::App* cmd, PropagationConfig* prop) {
    cmd->add_option("--rays", prop->rays_per_endpoint,
                    "Rays per endpoint (Monte Carlo paths)")
        ->capture_default_str();
    cmd->add_option("--bounces", prop->max_bounces, "Maximum bounces per path")
        ->capture_default_str();
    cmd->add_option("--duration", prop->rir_duration, "RIR length in seconds")
        ->capture_default_str();
    cmd->add_option("--sample-rate", prop->sample_rate, "Sample rate in Hz")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"echoloc: room-acoustics rendering and source localization"};
    app.require_subcommand(1);

    // scene
    auto* scene_cmd = app.add_subcommand("scene", "Build or validate scene files");
    scene_cmd->require_subcommand(1);
    std::string preset = "house10", scene_out = "scene.json", scene_in;
    auto* build = scene_cmd->add_subcommand("build", "Write a preset scene");
    build->add_option("--preset", preset, "Scene preset name")->capture_default_str();
    build->add_option("-o,--out", scene_out, "Output path")->capture_default_str();
    auto* validate = scene_cmd->add_subcommand("validate", "Check a scene file");
    validate->add_option("file", scene_in, "Scene JSON path")->required();

    // rir
    RirArgs rir;
    auto* rir_cmd = app.add_subcommand("rir", "Simulate one impulse response");
    rir_cmd->add_option("--scene", rir.scene_path, "Scene JSON path");
    rir_cmd->add_option("--source", rir.source, "Source position x y z")
        ->expected(3)->required();
    rir_cmd->add_option("--receiver", rir.receiver,
                        "Receiver position x y z (free-field/oracle modes)")
        ->expected(3)->capture_default_str();
    rir_cmd->add_option("-o,--out", rir.out, "Output WAV path")->capture_default_str();
    rir_cmd->add_flag("--free-field", rir.free_field, "No geometry, direct path only");
    rir_cmd->add_option("--oracle", rir.oracle,
                        "Analytic oracle instead of the tracer (image-source)");
    rir_cmd->add_option("--box", rir.box, "Oracle shoebox dimensions x y z")
        ->expected(3)->capture_default_str();
    rir_cmd->add_option("--absorption", rir.absorption, "Oracle wall absorption")
        ->capture_default_str();
    rir_cmd->add_option("--max-order", rir.max_order, "Oracle reflection order")
        ->capture_default_str();
    rir_cmd->add_option("--seed", rir.prop.seed, "Random seed")->capture_default_str();
    rir_cmd->add_option("--threads", rir.prop.threads,
                        "Worker threads (0: ECHOLOC_THREADS or all cores)")
        ->capture_default_str();
    add_propagation_flags(rir_cmd, &rir.prop);

    // dataset
    DatasetArgs ds;
    auto* ds_cmd = app.add_subcommand("dataset", "Render a spectrogram dataset");
    ds_cmd->add_option("--scene", ds.scene_path, "Scene JSON path")->required();
    ds_cmd->add_option("-o,--out", ds.out, "Output directory")->required();
    ds_cmd->add_option("--mode", ds.mode, "Placement mode: regions|coords")
        ->capture_default_str();
    ds_cmd->add_option("--grid", ds.grid, "Per-region grid, ROWSxCOLS")
        ->capture_default_str();
    ds_cmd->add_option("--spacing", ds.spacing, "Coordinate-mode lattice spacing, m")
        ->capture_default_str();
    ds_cmd->add_option("--height", ds.height, "Source height, m")
        ->capture_default_str();
    ds_cmd->add_option("--test-count", ds.test_count, "Held-out test placements")
        ->capture_default_str();
    ds_cmd->add_option("--folds", ds.folds, "Stratified fold count")
        ->capture_default_str();
    ds_cmd->add_option("--seed", ds.seed, "Random seed")->capture_default_str();
    ds_cmd->add_option("--threads", ds.threads,
                       "Worker threads (0: ECHOLOC_THREADS or all cores)")
        ->capture_default_str();
    ds_cmd->add_option("--window", ds.stft.window_length, "STFT window length")
        ->capture_default_str();
    ds_cmd->add_option("--hop", ds.stft.hop, "STFT hop length")
        ->capture_default_str();
    add_propagation_flags(ds_cmd, &ds.prop);

    // train
    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "Train the localization model");
    tr_cmd->add_option("--manifest", tr.manifest_path, "Dataset manifest path")
        ->required();
    tr_cmd->add_option("--data-dir", tr.data_dir,
                       "Spectrogram root (default: manifest directory)");
    tr_cmd->add_option("-o,--out", tr.out, "Output directory")->capture_default_str();
    tr_cmd->add_option("--task", tr.task, "regions (classify) or coords (regress)")
        ->capture_default_str();
    tr_cmd->add_option("--fold", tr.fold, "Validation fold id")->capture_default_str();
    tr_cmd->add_flag("--all-folds", tr.all_folds, "Train every fold in turn");
    tr_cmd->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
    tr_cmd->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
    tr_cmd->add_option("--batch", tr.batch_size, "Minibatch size")
        ->capture_default_str();
    tr_cmd->add_option("--lr", tr.learning_rate,
                       "SGD learning rate (default 0.01 regions, 0.001 coords)");

    // eval
    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "Evaluate a model on the test split");
    ev_cmd->add_option("--manifest", ev.manifest_path, "Dataset manifest path")
        ->required();
    ev_cmd->add_option("--model", ev.model_path, "Model file path")->required();
    ev_cmd->add_option("--data-dir", ev.data_dir,
                       "Spectrogram root (default: manifest directory)");
    ev_cmd->add_option("-o,--out", ev.out, "Output directory")->capture_default_str();

    // report
    std::string rp_train, rp_eval, rp_out = ".";
    auto* rp_cmd = app.add_subcommand("report", "Aggregate train/eval outputs");
    rp_cmd->add_option("--train-dir", rp_train, "Directory with train_report.json");
    rp_cmd->add_option("--eval-dir", rp_eval, "Directory with eval CSVs");
    rp_cmd->add_option("-o,--out", rp_out, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (build->parsed()) return cmd_scene_build(preset, scene_out);
        if (validate->parsed()) return cmd_scene_validate(scene_in);
        if (rir_cmd->parsed()) return cmd_rir(rir);
        if (ds_cmd->parsed()) return cmd_dataset(ds);
        if (tr_cmd->parsed()) return cmd_train(tr);
        if (ev_cmd->parsed()) return cmd_eval(ev);
        if (rp_cmd->parsed()) return cmd_report(rp_train, rp_eval, rp_out);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
