// Command-line front end: arrangement inspection, annotation conversion,
// training, inference, evaluation, robustness sweeps, graph optimization and
// latency benchmarking, all on the same engine the tests exercise.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmsnet/bench.hpp"
#include "cmsnet/builder.hpp"
#include "cmsnet/dataset.hpp"
#include "cmsnet/impairments.hpp"
#include "cmsnet/metrics.hpp"
#include "cmsnet/optimizer.hpp"
#include "cmsnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace cmsnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int thread_width() {
    const char* env = std::getenv("CMSNET_THREADS");
    if (!env) return 0;
    try {
        return std::max(0, std::stoi(env));
    } catch (...) {
        return 0;
    }
}

std::pair<int, int> parse_hw(const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos)
        throw config_error("--input expects HxW, got '" + s + "'");
    try {
        int h = std::stoi(s.substr(0, x));
        int w = std::stoi(s.substr(x + 1));
        if (h < 1 || w < 1) throw config_error("--input dims must be positive");
        return {h, w};
    } catch (const std::invalid_argument&) {
        throw config_error("--input expects HxW, got '" + s + "'");
    }
}

void refuse_overwrite(const fs::path& p, bool force) {
    if (!force && fs::exists(p))
        throw config_error("refusing to overwrite " + p.string() +
                           " (pass --force)");
}

ArrangementConfig resolve_config(const std::string& arrangement,
                                 const std::string& config_path,
                                 const std::string& input, int classes) {
    ArrangementConfig cfg;
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw data_error("cannot open config: " + config_path);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw data_error("bad config JSON in " + config_path + ": " + e.what());
        }
        cfg = config_from_json(j);
    } else if (!arrangement.empty()) {
        cfg = arrangement_by_name(arrangement);
    } else {
        throw config_error("either --arrangement or --config is required");
    }
    if (!input.empty()) {
        auto [h, w] = parse_hw(input);
        cfg.input_h = h;
        cfg.input_w = w;
    }
    if (classes > 0) cfg.num_classes = classes;
    cfg.validate();
    return cfg;
}

void echo_config(const ArrangementConfig& cfg, unsigned seed) {
    nlohmann::json j = config_to_json(cfg);
    j["seed"] = seed;
    j["threads"] = thread_width();
    std::cout << "config: " << j.dump() << "\n";
}

std::array<std::uint8_t, 3> overlay_color(int id) {
    static const std::array<std::uint8_t, 3> palette[10] = {
        {0, 0, 0},      {128, 64, 128}, {220, 20, 60}, {0, 0, 142},
        {0, 0, 230},    {0, 0, 70},     {0, 60, 100},  {119, 11, 32},
        {190, 153, 153}, {250, 170, 30},
    };
    return palette[id % 10];
}

std::vector<TrainSample> synthetic_dataset(int scenes, int h, int w, int classes,
                                           unsigned seed) {
    std::vector<TrainSample> ds;
    for (int i = 0; i < scenes; ++i) {
        SyntheticScene s =
            generate_synthetic_scene(seed + static_cast<unsigned>(i), h, w, classes);
        ds.push_back({std::move(s.image), std::move(s.mask)});
    }
    return ds;
}

// ---------------------------------------------------------------------------

int cmd_describe(const ArrangementConfig& cfg, unsigned seed) {
    echo_config(cfg, seed);
    Graph g = build_arrangement(cfg, seed);
    auto shapes = infer_shapes(g, {1, cfg.input_h, cfg.input_w, cfg.input_c});
    std::cout << "id,op,h,w,c,params\n";
    for (const Node& nd : g.nodes) {
        std::size_t params = 0;
        if (!nd.weight_name.empty()) params += g.weight(nd.weight_name).size();
        if (!nd.bias_name.empty()) params += g.weight(nd.bias_name).size();
        if (!nd.bn_prefix.empty())
            for (const char* s : {".gamma", ".beta", ".mean", ".var"})
                params += g.weight(nd.bn_prefix + s).size();
        Dims4 d = shapes[nd.id];
        std::cout << nd.id << "," << op_kind_name(nd.kind) << "," << d.h << ","
                  << d.w << "," << d.c << "," << params << "\n";
    }
    std::cout << "total_params," << count_params(g) << "\n";
    return kExitOk;
}

int cmd_convert(const std::string& annotation, const std::string& out,
                bool force, const ArrangementConfig& cfg, unsigned seed) {
    echo_config(cfg, seed);
    SceneAnnotation ann = load_annotation(annotation);
    Mask mask = rasterize(ann);
    fs::path out_dir(out);
    fs::create_directories(out_dir);
    fs::path mask_path =
        out_dir / (fs::path(annotation).stem().string() + "_mask.pgm");
    refuse_overwrite(mask_path, force);
    save_mask(mask, mask_path.string());
    std::cout << "wrote " << mask_path.string() << " (" << ann.width << "x"
              << ann.height << ", " << ann.shapes.size() << " shapes)\n";
    return kExitOk;
}

int cmd_train(const ArrangementConfig& cfg, int scenes, int epochs, int batch,
              float lr, long iters, unsigned seed, const std::string& out,
              bool force) {
    echo_config(cfg, seed);
    fs::path out_dir(out);
    fs::create_directories(out_dir);
    fs::path weights_path = out_dir / "weights.cmsw";
    fs::path log_path = out_dir / "train_log.csv";
    refuse_overwrite(weights_path, force);
    refuse_overwrite(log_path, force);

    Graph g = build_arrangement(cfg, seed);
    auto ds = synthetic_dataset(scenes, cfg.input_h, cfg.input_w,
                                cfg.num_classes, seed + 1000);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch;
    tc.base_lr = lr;
    tc.max_iterations = iters;
    tc.seed = seed;
    TrainResult r = train(g, ds, tc);

    save_weights(g, weights_path.string());
    std::ofstream log(log_path);
    log << "# seed=" << seed << "\n";
    save_train_log(r.log, log);
    std::cout << "final_loss," << r.final_loss << "\n";
    std::cout << "final_miou," << r.final_miou << "\n";
    std::cout << "wrote " << weights_path.string() << " and " << log_path.string()
              << "\n";
    return kExitOk;
}

int cmd_infer(const ArrangementConfig& cfg, const std::string& weights,
              const std::string& image_path, const std::string& out, bool force,
              bool overlay, unsigned seed) {
    echo_config(cfg, seed);
    Graph g = build_arrangement(cfg, seed);
    if (!weights.empty()) g.weights = load_weights(weights);

    Image img = load_image(image_path);
    if (img.h != cfg.input_h || img.w != cfg.input_w || img.c != cfg.input_c)
        throw data_error("image dims " + std::to_string(img.h) + "x" +
                         std::to_string(img.w) + " do not match the config");
    Tensor in = image_to_tensor(img);
    Tensor logits = forward(g, in);
    if (!logits.all_finite())
        throw numeric_error("non-finite logits during inference");
    auto pred = predict_from_logits(logits);

    Mask mask(img.h, img.w);
    mask.data = pred;
    fs::path out_dir(out);
    fs::create_directories(out_dir);
    fs::path mask_path =
        out_dir / (fs::path(image_path).stem().string() + "_mask.pgm");
    refuse_overwrite(mask_path, force);
    save_mask(mask, mask_path.string());
    std::cout << "wrote " << mask_path.string() << "\n";

    if (overlay) {
        Image ov(img.h, img.w, 3);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                auto col = overlay_color(mask.at(y, x));
                for (int c = 0; c < 3; ++c) {
                    int base = img.c == 3 ? img.at(y, x, c) : img.at(y, x, 0);
                    ov.at(y, x, c) =
                        static_cast<std::uint8_t>((base + col[c]) / 2);
                }
            }
        fs::path ov_path =
            out_dir / (fs::path(image_path).stem().string() + "_overlay.ppm");
        refuse_overwrite(ov_path, force);
        save_image(ov, ov_path.string());
        std::cout << "wrote " << ov_path.string() << "\n";
    }
    return kExitOk;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, int classes,
             const std::string& out, bool force, const ArrangementConfig& cfg,
             unsigned seed) {
    echo_config(cfg, seed);
    if (!fs::is_directory(pred_dir))
        throw data_error("--pred is not a directory: " + pred_dir);
    if (!fs::is_directory(gt_dir))
        throw data_error("--gt is not a directory: " + gt_dir);

    ConfusionMatrix cm(classes);
    int pairs = 0;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(gt_dir))
        if (e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& gt_path : files) {
        fs::path pred_path = fs::path(pred_dir) / gt_path.filename();
        if (!fs::exists(pred_path))
            throw data_error("missing prediction for " + gt_path.filename().string());
        Mask gt = load_mask(gt_path.string());
        Mask pred = load_mask(pred_path.string());
        if (gt.h != pred.h || gt.w != pred.w)
            throw data_error("mask size mismatch for " +
                             gt_path.filename().string());
        accumulate(cm, std::span<const std::int32_t>(gt.data),
                   std::span<const std::int32_t>(pred.data));
        ++pairs;
    }
    if (pairs == 0) throw data_error("no .pgm masks found in " + gt_dir);

    fs::path out_path = fs::path(out) / "metrics.csv";
    fs::create_directories(out_path.parent_path());
    refuse_overwrite(out_path, force);
    std::ofstream os(out_path);
    os << "class,iou,cp_acc\n";
    for (int c = 0; c < classes; ++c) {
        os << c << ",";
        if (cm.row_sum(c) + cm.col_sum(c) == 0) {
            os << ",";  // class absent from gt and pred: both cells empty
        } else {
            os << iou(cm, c) << ",";
            if (cm.row_sum(c) > 0) os << class_pixel_accuracy(cm, c);
        }
        os << "\n";
    }
    os << "summary,miou=" << miou(cm) << ",p_acc=" << pixel_accuracy(cm)
       << ",fwiou=" << fwiou(cm) << ",mcp_acc=" << mean_accuracy(cm) << "\n";
    std::cout << "pairs," << pairs << "\n";
    std::cout << "miou," << miou(cm) << "\n";
    std::cout << "wrote " << out_path.string() << "\n";
    return kExitOk;
}

int cmd_sweep(const ArrangementConfig& cfg, const std::string& weights,
              const std::string& condition, double severity, int scenes,
              unsigned seed, const std::string& out, bool force) {
    echo_config(cfg, seed);
    Graph g = build_arrangement(cfg, seed);
    if (!weights.empty()) g.weights = load_weights(weights);

    std::vector<EvalSample> good, bad;
    for (int i = 0; i < scenes; ++i) {
        SyntheticScene s = generate_synthetic_scene(
            seed + 2000 + static_cast<unsigned>(i), cfg.input_h, cfg.input_w,
            cfg.num_classes);
        EvalSample clean{s.image, s.mask};
        EvalSample dirty = clean;
        if (condition == "noise")
            dirty.image = add_gaussian_noise(s.image, severity,
                                             seed + static_cast<unsigned>(i));
        else if (condition == "fog")
            dirty.image =
                apply_fog(s.image, severity, seed + static_cast<unsigned>(i));
        else
            throw config_error("--condition must be noise or fog");
        good.push_back(std::move(clean));
        bad.push_back(std::move(dirty));
    }

    Predictor predict_fn = [&](const Image& img) {
        Tensor t = image_to_tensor(img);
        Tensor logits = forward(g, t);
        if (!logits.all_finite())
            throw numeric_error("non-finite logits during sweep");
        Mask m(img.h, img.w);
        m.data = predict_from_logits(logits);
        return m;
    };
    auto curve = condition_sweep(predict_fn, good, bad, cfg.num_classes,
                                 good.size());

    fs::path out_path = fs::path(out) / ("sweep_" + condition + ".csv");
    fs::create_directories(out_path.parent_path());
    refuse_overwrite(out_path, force);
    std::ofstream os(out_path);
    os << "# seed=" << seed << " severity=" << severity << "\n";
    os << "fraction,miou\n";
    for (const auto& p : curve) os << p.fraction << "," << p.miou_value << "\n";
    std::cout << "degradation_points," << degradation(curve) << "\n";
    std::cout << "wrote " << out_path.string() << "\n";
    return kExitOk;
}

int cmd_optimize(const ArrangementConfig& cfg, const std::string& weights,
                 const std::string& out, bool force, unsigned seed) {
    echo_config(cfg, seed);
    Graph g = build_arrangement(cfg, seed);
    if (!weights.empty()) g.weights = load_weights(weights);

    auto reports = optimize(g);
    std::cout << "pass,nodes_before,nodes_after,bytes_before,bytes_after,warnings\n";
    for (const auto& r : reports) {
        std::cout << r.pass << "," << r.nodes_before << "," << r.nodes_after
                  << "," << r.bytes_before << "," << r.bytes_after << ","
                  << r.warnings.size() << "\n";
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    }
    if (reports.empty()) std::cout << "(graph already optimal)\n";

    if (!out.empty()) {
        fs::path out_path = fs::path(out) / "weights_optimized.cmsw";
        fs::create_directories(out_path.parent_path());
        refuse_overwrite(out_path, force);
        save_weights(g, out_path.string());
        std::cout << "wrote " << out_path.string() << "\n";
    }
    return kExitOk;
}

int cmd_bench(const ArrangementConfig& cfg, int batch, int iters, int warmup,
              unsigned seed, const std::string& out, bool force) {
    echo_config(cfg, seed);
    Graph g = build_arrangement(cfg, seed);
    optimize(g);  // benchmark the deployable graph
    LatencyStats s = time_inference(g, batch, iters, warmup, seed);

    auto emit = [&](std::ostream& os) {
        os << "arrangement,batch,threads,mean_fps,sd_pct,min,q1,median,q3,max\n";
        os << cfg.name << "," << batch << "," << thread_width() << ","
           << s.mean_fps << "," << s.sd_pct << "," << s.min << "," << s.q1 << ","
           << s.median << "," << s.q3 << "," << s.max << "\n";
    };
    emit(std::cout);
    std::cout << "outliers," << s.outliers.size() << "\n";
    if (!out.empty()) {
        fs::path out_path = fs::path(out) / "bench.csv";
        fs::create_directories(out_path.parent_path());
        refuse_overwrite(out_path, force);
        std::ofstream os(out_path);
        emit(os);
        std::cout << "wrote " << out_path.string() << "\n";
    }
    return kExitOk;
}

// Compact self-contained checks against independently coded references.
int cmd_selftest(unsigned seed) {
    std::cout << "selftest seed=" << seed << "\n";
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::cout << (ok ? "pass" : "FAIL") << ": " << name << "\n";
        if (!ok) ++failures;
    };

    {
        // convolution gradient vs central finite differences of the op itself
        std::mt19937 rng(seed);
        Tensor x(1, 5, 5, 2);
        x.fill_random(rng, 1.0f);
        Tensor w(3, 3, 2, 3);
        w.fill_random(rng, 0.5f);
        ConvSpec spec{3, 3, 1, 1, 1, 3};
        Tensor out = conv2d(x, w, {}, spec);
        Tensor go(out.n, out.h, out.w, out.c);
        go.fill_random(rng, 1.0f);
        ConvGrads g = conv2d_backward(go, x, w, spec);
        double worst = 0.0;
        for (std::size_t i = 0; i < x.data.size(); i += 7) {
            float orig = x.data[i];
            const float h = 1e-2f;
            x.data[i] = orig + h;
            Tensor op = conv2d(x, w, {}, spec);
            x.data[i] = orig - h;
            Tensor om = conv2d(x, w, {}, spec);
            x.data[i] = orig;
            double fd = 0.0;
            for (std::size_t k = 0; k < op.data.size(); ++k)
                fd += go.data[k] * (op.data[k] - om.data[k]);
            fd /= 2.0 * h;
            worst = std::max(worst,
                             std::abs(fd - g.grad_input.data[i]) /
                                 std::max(1.0, std::abs(fd)));
        }
        check("conv gradient vs finite differences", worst < 1e-2);
    }
    {
        // worked metric example
        ConfusionMatrix cm(2);
        std::vector<std::int32_t> gt = {0, 0, 1, 1}, pred = {0, 1, 1, 1};
        accumulate(cm, std::span<const std::int32_t>(gt),
                   std::span<const std::int32_t>(pred));
        check("worked metric example",
              pixel_accuracy(cm) == 0.75 && std::abs(miou(cm) - 7.0 / 12.0) < 1e-15);
    }
    {
        // noise calibration
        auto field = gaussian_noise_field(500000, 0.25, seed);
        double var = 0.0;
        for (float v : field) var += static_cast<double>(v) * v;
        double sd = std::sqrt(var / static_cast<double>(field.size()));
        check("noise std near 63.75", std::abs(sd - 63.75) / 63.75 < 0.02);
    }
    {
        // rasterized square has the exact interior area
        SceneAnnotation ann;
        ann.width = 20;
        ann.height = 20;
        AnnotatedShape s;
        s.label = "road";
        s.class_id = 1;
        s.polygon = {{2, 2}, {12, 2}, {12, 12}, {2, 12}};
        ann.shapes = {s};
        Mask m = rasterize(ann);
        int count = 0;
        for (auto v : m.data) count += (v == 1);
        check("rasterizer square area", count == 100);
    }
    {
        // optimizer equivalence on a small arrangement
        Graph g = build_arrangement("CM3", 4, 32, 48, 3, seed);
        std::mt19937 rng(seed + 1);
        Tensor in(1, 32, 48, 3);
        in.fill_random(rng, 0.5f);
        Tensor before = forward(g, in);
        Graph opt = g;
        optimize(opt);
        Tensor after = forward(opt, in);
        double diff = 0.0;
        for (std::size_t i = 0; i < before.data.size(); ++i)
            diff = std::max(diff, std::abs(static_cast<double>(before.data[i]) -
                                           after.data[i]));
        check("optimizer output equivalence", diff <= 1e-5);
    }

    std::cout << (failures == 0 ? "selftest passed" : "selftest FAILED") << "\n";
    return failures == 0 ? kExitOk : kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CMSNet configurable segmentation toolkit"};
    app.require_subcommand(1);

    std::string arrangement, config_path, input_hw, weights, out = "out";
    std::string annotation, image_path, pred_dir, gt_dir, condition = "noise";
    int classes = 0, batch = 1, iters = 500, warmup = 20, scenes = 8;
    int epochs = 200;
    long max_iters = 0;
    float lr = 0.007f;
    double severity = 0.25;
    unsigned seed = 42;
    bool force = false, overlay = false;

    auto add_common = [&](CLI::App* cmd, bool with_model = true) {
        if (with_model) {
            cmd->add_option("--arrangement", arrangement, "CM0..CM8");
            cmd->add_option("--config", config_path, "arrangement JSON path");
            cmd->add_option("--input", input_hw, "input size HxW");
            cmd->add_option("--classes", classes, "number of classes");
        }
        cmd->add_option("--seed", seed, "RNG seed (default 42)");
        cmd->add_option("--out", out, "output directory");
        cmd->add_flag("--force", force, "allow overwriting outputs");
    };

    CLI::App* describe = app.add_subcommand("describe", "print the layer table");
    add_common(describe);

    CLI::App* convert =
        app.add_subcommand("convert", "rasterize a polygon annotation");
    convert->add_option("--annotation", annotation, "annotation JSON")->required();
    add_common(convert);

    CLI::App* train_cmd =
        app.add_subcommand("train", "train on generated scenes");
    add_common(train_cmd);
    train_cmd->add_option("--scenes", scenes, "synthetic scene count");
    train_cmd->add_option("--epochs", epochs, "epoch budget");
    train_cmd->add_option("--batch", batch, "batch size");
    train_cmd->add_option("--lr", lr, "base learning rate");
    train_cmd->add_option("--iters", max_iters, "hard iteration cap");

    CLI::App* infer = app.add_subcommand("infer", "segment one image");
    infer->add_option("--image", image_path, "input image (PGM/PPM)")->required();
    infer->add_option("--weights", weights, "weights file");
    infer->add_flag("--overlay", overlay, "also write a color overlay");
    add_common(infer);

    CLI::App* eval_cmd =
        app.add_subcommand("eval", "compare mask directories");
    eval_cmd->add_option("--pred", pred_dir, "predicted masks dir")->required();
    eval_cmd->add_option("--gt", gt_dir, "ground-truth masks dir")->required();
    add_common(eval_cmd);

    CLI::App* sweep = app.add_subcommand("sweep", "condition-mix robustness curve");
    add_common(sweep);
    sweep->add_option("--weights", weights, "weights file");
    sweep->add_option("--condition", condition, "noise or fog");
    sweep->add_option("--severity", severity, "impairment strength [0,1]");
    sweep->add_option("--scenes", scenes, "scenes per set");

    CLI::App* optimize_cmd =
        app.add_subcommand("optimize", "fold/fuse/prune the graph");
    add_common(optimize_cmd);
    optimize_cmd->add_option("--weights", weights, "weights file");

    CLI::App* bench = app.add_subcommand("bench", "latency statistics");
    add_common(bench);
    bench->add_option("--batch", batch, "batch size");
    bench->add_option("--iters", iters, "timed iterations");
    bench->add_option("--warmup", warmup, "warmup iterations");

    CLI::App* selftest = app.add_subcommand("selftest", "run the oracle suite");
    selftest->add_option("--seed", seed, "RNG seed (default 42)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        auto cfg = [&] {
            ArrangementConfig c =
                resolve_config(arrangement, config_path, input_hw, classes);
            return c;
        };
        if (describe->parsed()) return cmd_describe(cfg(), seed);
        if (convert->parsed()) {
            ArrangementConfig c;  // convert needs no model; echo defaults
            if (!arrangement.empty() || !config_path.empty()) c = cfg();
            return cmd_convert(annotation, out, force, c, seed);
        }
        if (train_cmd->parsed())
            return cmd_train(cfg(), scenes, epochs, batch, lr, max_iters, seed,
                             out, force);
        if (infer->parsed())
            return cmd_infer(cfg(), weights, image_path, out, force, overlay,
                             seed);
        if (eval_cmd->parsed()) {
            ArrangementConfig c;
            if (classes > 0) c.num_classes = classes;
            return cmd_eval(pred_dir, gt_dir, c.num_classes, out, force, c, seed);
        }
        if (sweep->parsed())
            return cmd_sweep(cfg(), weights, condition, severity, scenes, seed,
                             out, force);
        if (optimize_cmd->parsed())
            return cmd_optimize(cfg(), weights, out, force, seed);
        if (bench->parsed())
            return cmd_bench(cfg(), batch, iters, warmup, seed, out, force);
        if (selftest->parsed()) return cmd_selftest(seed);
        std::cerr << "no subcommand given\n";
        return kExitUsage;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const config_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
