// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

// maskraster command-line tool. Exit codes: 0 success, 1 usage, 2 I/O, 3 verification failure.

#include "maskraster.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace maskraster;
using io::Json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kIo = 2;
constexpr int kVerify = 3;

struct VerificationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string
view_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%03zu", i);
    return buf;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SyntheticSceneConfig cfg;
    std::string background = "white";
};

int
run_synth(const SynthArgs &a) {
    SyntheticSceneConfig cfg = a.cfg;
    cfg.background = io::config_detail::parse_color(Json(a.background));
    const SyntheticScene sc = generate_synthetic_scene(cfg);
    const fs::path out(a.out);
    fs::create_directories(out / "images");
    io::SceneManifest m;
    m.base_dir = out;
    m.background = sc.background;
    m.train = sc.train;
    m.eval = sc.eval;
    for (std::size_t i = 0; i < sc.cameras.size(); ++i) {
        const std::string name = view_name(i);
        m.views.push_back({name, sc.cameras[i], "images/" + name + ".png"});
        io::write_png(out / "images" / (name + ".png"), sc.targets[i]);
    }
    io::write_manifest(out / "manifest.json", m);
    io::write_ply(out / "truth.ply", sc.truth);
    std::cout << "wrote " << sc.cameras.size() << " views (" << sc.train.size() << " train, " << sc.eval.size()
              << " eval) and " << sc.truth.size() << " Gaussians to " << out.string() << "\n";
    return kOk;
}

// ---- shared: config, views, initial cloud -------------------------------

struct RunArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string manifest;
    std::string init;
    std::string preset;
    int iterations = -1;
    long long seed = -1;
    unsigned workers = 0;
    bool quiet = false;
};

io::FlatConfig
flat_config(const RunArgs &a) {
    io::FlatConfig flat;
    if (!a.config.empty()) flat = io::load_config_file(a.config);
    if (!a.manifest.empty()) flat["manifest"] = a.manifest;
    if (!a.init.empty()) flat["init.ply"] = a.init;
    if (!a.preset.empty()) flat["preset"] = a.preset;
    if (a.iterations >= 0) flat["iterations"] = a.iterations;
    if (a.seed >= 0) flat["seed"] = a.seed;
    if (a.workers > 0) flat["workers"] = a.workers;
    for (const auto &s : a.sets) io::apply_override(flat, s);
    return flat;
}

struct Problem {
    io::RunConfig run;
    TrainingViews<float> views;
    GaussianCloud<float> init;
    std::vector<io::PlyExtraProperty> extras;
};

Problem
build_problem(const io::FlatConfig &flat, bool require_ply) {
    Problem p;
    p.run = io::load_run_config(flat);
    io::RunConfig &r = p.run;
    GaussianCloud<double> reference;
    if (!r.manifest.empty()) {
        const auto m = io::load_manifest(r.manifest);
        if (m.background && !flat.contains("background")) r.train.background = *m.background;
        p.views = io::load_training_views(m);
        if (m.train.empty()) throw InvalidParameter("manifest has no training views");
        // Random starts for manifests fill a cube around the camera centroid.
        Vec3<double> mid = Vec3<double>::Zero();
        for (const auto &v : m.views) mid += v.camera.position();
        mid /= double(m.views.size());
        const double half = 0.25 * p.views.extent;
        reference.sh_degree = 0;
        reference.resize(2);
        reference.centers[0] = mid.array() - half;
        reference.centers[1] = mid.array() + half;
    } else {
        r.synthetic.background = r.train.background;
        const SyntheticScene sc = generate_synthetic_scene(r.synthetic);
        p.views = training_views<float>(sc);
        reference = sc.truth;
    }
    if (!r.init_ply.empty()) {
        io::PlyReadOptions opts;
        opts.mask_init = r.init_logits;
        auto ply = io::read_ply(r.init_ply, opts);
        p.init = std::move(ply.cloud);
        p.extras = std::move(ply.extras);
    } else {
        if (require_ply) throw InvalidParameter("an input PLY is required");
        std::size_t count = std::size_t(r.init_count);
        if (count == 0) {
            if (!r.manifest.empty()) throw InvalidParameter("set init.ply or init.count when training from a manifest");
            count = std::size_t(std::llround(r.overprovision * double(r.synthetic.n_gaussians)));
        }
        p.init = random_init<float>(reference, std::max<std::size_t>(count, 1), r.init_sh_degree, r.init_seed,
                                    r.init_logits);
    }
    return p;
}

void
print_eval(const EvalPoint &e) {
    std::cout << "iter " << e.iteration << "  psnr " << e.psnr << "  ssim " << e.ssim << "  gaussians "
              << e.gaussian_count << "  active " << e.active_count << "  t " << e.wall_seconds << "s" << std::endl;
}

int
finish_run(const Problem &p, const TrainResult<float> &res, const fs::path &out_dir, const fs::path &ply_path,
           bool quiet) {
    const Json eff = io::effective_config(p.run);
    const auto extras = io::select_extras(p.extras, res.origin);
    io::write_ply(ply_path, res.cloud, extras);
    fs::path side = ply_path;
    side.replace_extension(".json");
    io::atomic_write(side, io::checkpoint_sidecar(res.cloud, res.optimizer, p.run.train, p.run.train.iterations).dump() + "\n");
    io::atomic_write(out_dir / "report.json", io::report_json(res.report, eff).dump(2) + "\n");
    io::atomic_write(out_dir / "metrics.csv", io::metrics_csv(res.report));
    io::atomic_write(out_dir / "loss.csv", io::loss_csv(res.report));
    const auto &f = res.report.final_eval();
    if (!quiet) std::cout << "effective config: " << eff.dump() << "\n";
    std::cout << "final: psnr " << f.psnr << "  ssim " << f.ssim << "  gaussians " << f.gaussian_count << "  ("
              << res.report.wall_seconds << " s)\n"
              << "wrote " << ply_path.string() << ", " << (out_dir / "report.json").string() << "\n";
    return kOk;
}

TrainResult<float>
train_or_save(const Problem &p, const fs::path &out_dir, bool quiet) {
    try {
        return run_training(p.init, p.views, p.run.train, quiet ? std::function<void(const EvalPoint &)>{} : print_eval);
    } catch (const TrainingAborted<float> &e) {
        io::write_ply(out_dir / "last_good.ply", e.last_good);
        throw VerificationFailure(std::string(e.what()) + "; last good parameters in " +
                                  (out_dir / "last_good.ply").string());
    }
}

// ---- train ---------------------------------------------------------------

int
run_train(const RunArgs &a, const std::string &out) {
    const Problem p = build_problem(flat_config(a), false);
    const fs::path dir(out);
    fs::create_directories(dir);
    const auto res = train_or_save(p, dir, a.quiet);
    return finish_run(p, res, dir, dir / "point_cloud.ply", a.quiet);
}

// ---- prune ---------------------------------------------------------------

int
run_prune(RunArgs a, const std::string &out, bool all_params, double lambda) {
    if (a.iterations < 0) a.iterations = 5000;
    io::FlatConfig flat;
    flat["densify.enabled"] = false;
    flat["lambda"] = lambda;
    if (!all_params) {
        for (const char *k : {"lr.position", "lr.position_final", "lr.sh_dc", "lr.sh_rest", "lr.opacity", "lr.scale",
                              "lr.rotation"})
            flat[k] = 0.0;
    }
    for (auto &[k, v] : flat_config(a)) flat[k] = v;
    const Problem p = build_problem(flat, true);
    const fs::path ply(out);
    const fs::path dir = ply.has_parent_path() ? ply.parent_path() : fs::path(".");
    fs::create_directories(dir);
    const std::size_t before = p.init.size();
    const auto res = train_or_save(p, dir, a.quiet);
    std::cout << "pruned " << before << " -> " << res.cloud.size() << " Gaussians\n";
    return finish_run(p, res, dir, ply, a.quiet);
}

// ---- render --------------------------------------------------------------

struct RenderArgs {
    std::string ply;
    std::string manifest;
    std::string out;
    std::string views = "all";
    std::string masks = "mode";
    std::string background;
    unsigned workers = 0;
};

int
run_render(const RenderArgs &a) {
    const auto m = io::load_manifest(a.manifest, false);
    const auto ply = io::read_ply(a.ply);
    const auto &cloud = ply.cloud;
    Vec3<double> bg = m.background.value_or(Vec3<double>::Zero());
    if (!a.background.empty()) {
        Json j = Json::parse(a.background, nullptr, false);
        bg = io::config_detail::parse_color(j.is_discarded() ? Json(a.background) : j);
    }
    std::vector<std::size_t> ids;
    if (a.views == "train") ids = m.train;
    else if (a.views == "eval") ids = m.eval;
    else if (a.views == "all") for (std::size_t i = 0; i < m.views.size(); ++i) ids.push_back(i);
    else throw InvalidParameter("--views must be all, train or eval");
    if (a.masks != "mode" && a.masks != "all") throw InvalidParameter("--masks must be mode or all");
    MaskSample<float> masks;
    const bool use_masks = a.masks == "mode" && ply.has_mask_logits;
    if (use_masks) masks = mode_masks<float>(cloud.mask_logits);

    fs::create_directories(a.out);
    RenderOptions ro;
    ro.workers = a.workers;
    const Vec3<float> bgf = bg.cast<float>();
    const RasterConfig rc;
    for (const std::size_t i : ids) {
        const auto cam = m.views[i].camera.cast<float>();
        const auto pv = prepare_view(cloud, cam);
        const auto fb = use_masks ? render_masked(pv, std::span<const float>(masks.hard), bgf, rc, ro)
                                  : render_standard(pv, bgf, rc, ro);
        io::write_png(fs::path(a.out) / (m.views[i].name + ".png"), Image<float>{fb.width, fb.height, fb.color});
    }
    std::cout << "rendered " << ids.size() << " views of " << cloud.size() << " Gaussians"
              << (use_masks ? " (most probable masks: " + std::to_string(masks.count_on()) + " present)" : "")
              << " to " << a.out << "\n";
    return kOk;
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
    std::uint64_t seed = 7;
    std::size_t scenes = 20;
    double tol = 1e-4;
    std::string application = "rasterization";
    std::string json;
};

int
run_gradcheck(const GradcheckArgs &a) {
    GradCheckTolerances tol{a.tol, a.tol, a.tol, a.tol, a.tol, a.tol};
    GradCheckOptions opt;
    opt.application = parse_mask_application(a.application);
    const auto rep = gradcheck_suite(a.seed, a.scenes, tol, opt);
    Json classes = Json::object();
    std::cout << "gradcheck seed " << rep.seed << "  scenes " << rep.n_scenes << "  scene hash 0x" << std::hex
              << rep.scene_hash << std::dec << "\n";
    for (const auto &c : rep.classes) {
        std::printf("  %-15s max %.3e  mean %.3e  checked %6zu  skipped %4zu  tol %.1e  %s\n",
                    std::string(to_string(c.cls)).c_str(), c.max_rel_error, c.mean_rel_error, c.checked, c.skipped,
                    c.tolerance, c.pass ? "ok" : "FAIL");
        classes[std::string(to_string(c.cls))] = {{"max_rel_error", c.max_rel_error},
                                                 {"mean_rel_error", c.mean_rel_error},
                                                 {"checked", c.checked},
                                                 {"skipped", c.skipped},
                                                 {"tolerance", c.tolerance},
                                                 {"pass", c.pass}};
    }
    for (const auto &w : rep.warnings) std::cout << "  warning: " << w << "\n";
    const auto &w = rep.worst;
    std::printf("  worst: %s scene %zu gaussian %zu component %d analytic %.9e numeric %.9e rel %.3e\n",
                std::string(to_string(w.cls)).c_str(), w.scene, w.gaussian, w.component, w.analytic, w.numeric,
                w.rel_error);
    std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";
    if (!a.json.empty()) {
        Json j = {{"seed", rep.seed},
                  {"n_scenes", rep.n_scenes},
                  {"scene_hash", rep.scene_hash},
                  {"classes", classes},
                  {"warnings", rep.warnings},
                  {"worst",
                   {{"class", to_string(w.cls)},
                    {"scene", w.scene},
                    {"gaussian", w.gaussian},
                    {"component", w.component},
                    {"analytic", w.analytic},
                    {"numeric", w.numeric},
                    {"rel_error", w.rel_error}}},
                  {"pass", rep.pass}};
        io::atomic_write(a.json, j.dump(2) + "\n");
    }
    return rep.pass ? kOk : kVerify;
}

// ---- bench ---------------------------------------------------------------

int
run_bench_cmd(const BenchConfig &cfg, double min_speedup) {
    const auto r = run_bench(cfg);
    std::printf("scene: %zu Gaussians, %dx%d px, %zu visible, %zu tile entries, %d repeats\n", cfg.n, cfg.width,
                cfg.height, r.visible, r.tile_entries, cfg.repeats);
    std::printf("tiled:  project %.4f s  bin %.4f s  raster %.4f s  total %.4f s\n", r.tiled.project, r.tiled.bin,
                r.tiled.raster, r.tiled.total());
    std::printf("        %.2f renders/s  %.3e pixels/s\n", r.renders_per_second(), r.pixels_per_second());
    if (cfg.run_naive) {
        std::printf("naive:  %.4f s\n", r.naive_seconds);
        std::printf("speedup %.2fx  max |tiled - naive| %.3e\n", r.speedup, r.max_abs_diff);
        if (min_speedup > 0.0 && !(r.speedup >= min_speedup)) {
            std::printf("FAIL: speedup below %.2fx\n", min_speedup);
            return kVerify;
        }
    }
    return kOk;
}

// ---- stats ---------------------------------------------------------------

int
run_stats(const std::vector<double> &gaps, double tau, std::size_t draws, std::uint64_t seed) {
    std::vector<std::array<double, 2>> logits;
    for (const double g : gaps) logits.push_back({g, 0.0});
    const auto st = sampler_stats(logits, tau, draws, seed);
    std::printf("draws %zu  temperature %.3g  seed %llu\n", draws, tau, static_cast<unsigned long long>(seed));
    for (std::size_t i = 0; i < logits.size(); ++i)
        std::printf("  gap %+.6f  p %.6f  freq %.6f  z %+.3f\n", gaps[i], st.probability[i], st.frequency[i],
                    st.z_score[i]);
    std::cout << (st.pass ? "PASS" : "FAIL") << "\n";
    return st.pass ? kOk : kVerify;
}

} // namespace

int
main(int argc, char **argv) {
    CLI::App app{"Tile-based CPU rasterizer for Gaussian splats with learned existence masks"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto *c_synth = app.add_subcommand("synth", "Generate the synthetic scene (manifest, PNG targets, truth PLY)");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--seed", synth.cfg.seed);
    c_synth->add_option("--gaussians", synth.cfg.n_gaussians);
    c_synth->add_option("--cameras", synth.cfg.n_cameras);
    c_synth->add_option("--width", synth.cfg.width);
    c_synth->add_option("--height", synth.cfg.height);
    c_synth->add_option("--sh-degree", synth.cfg.sh_degree);
    c_synth->add_option("--background", synth.background, "white, black or [r,g,b]");

    RunArgs run;
    std::string train_out;
    auto add_run_options = [&run](CLI::App *c) {
        c->add_option("--config", run.config, "JSON config file")->check(CLI::ExistingFile);
        c->add_option("--set", run.sets, "key=value override (repeatable)");
        c->add_option("--manifest", run.manifest, "Scene manifest (default: synthetic scene)");
        c->add_option("--iterations", run.iterations);
        c->add_option("--seed", run.seed);
        c->add_option("--workers", run.workers);
        c->add_flag("--quiet", run.quiet);
    };
    auto *c_train = app.add_subcommand("train", "Optimize a cloud against a scene");
    add_run_options(c_train);
    c_train->add_option("--init", run.init, "Starting PLY (default: random over-provisioned start)");
    c_train->add_option("--preset", run.preset, "ours-alpha, ours-beta or ours-gamma");
    c_train->add_option("--out", train_out, "Output directory")->required();

    std::string prune_out;
    bool prune_all = false;
    double prune_lambda = 0.0005;
    auto *c_prune = app.add_subcommand("prune", "Fine-tune masks of an existing PLY and drop absent Gaussians");
    add_run_options(c_prune);
    c_prune->add_option("--in", run.init, "Input PLY")->required()->check(CLI::ExistingFile);
    c_prune->add_option("--out", prune_out, "Output PLY")->required();
    c_prune->add_option("--lambda", prune_lambda, "Mask loss weight");
    c_prune->add_flag("--all-params", prune_all, "Also fine-tune the Gaussian parameters");

    RenderArgs render;
    auto *c_render = app.add_subcommand("render", "Render a PLY from the cameras of a manifest");
    c_render->add_option("--ply", render.ply)->required()->check(CLI::ExistingFile);
    c_render->add_option("--manifest", render.manifest)->required()->check(CLI::ExistingFile);
    c_render->add_option("--out", render.out, "Output directory")->required();
    c_render->add_option("--views", render.views, "all, train or eval");
    c_render->add_option("--masks", render.masks, "mode (most probable masks) or all");
    c_render->add_option("--background", render.background, "white, black or [r,g,b]");
    c_render->add_option("--workers", render.workers);

    GradcheckArgs gc;
    auto *c_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    c_gc->add_option("--seed", gc.seed);
    c_gc->add_option("--scenes", gc.scenes);
    c_gc->add_option("--tol", gc.tol);
    c_gc->add_option("--application", gc.application, "rasterization or opacity");
    c_gc->add_option("--json", gc.json, "Also write the report as JSON");

    BenchConfig bench;
    double min_speedup = 0.0;
    bool skip_naive = false;
    auto *c_bench = app.add_subcommand("bench", "Time the tiled renderer against the naive oracle");
    c_bench->add_option("--n", bench.n);
    c_bench->add_option("--width", bench.width);
    c_bench->add_option("--height", bench.height);
    c_bench->add_option("--repeats", bench.repeats);
    c_bench->add_option("--seed", bench.seed);
    c_bench->add_option("--workers", bench.workers);
    c_bench->add_flag("--skip-naive", skip_naive);
    c_bench->add_option("--min-speedup", min_speedup, "Exit 3 when the speedup is lower");

    std::vector<double> gaps = {0.0, std::log(3.0), 3.0};
    double tau = 0.5;
    std::size_t draws = 100000;
    std::uint64_t stats_seed = 0;
    auto *c_stats = app.add_subcommand("stats", "Check Gumbel sample frequencies against existence probabilities");
    c_stats->add_option("--gaps", gaps, "Logit gaps (present - absent)")->delimiter(',');
    c_stats->add_option("--tau", tau);
    c_stats->add_option("--draws", draws);
    c_stats->add_option("--seed", stats_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*c_synth) return run_synth(synth);
        if (*c_train) return run_train(run, train_out);
        if (*c_prune) return run_prune(run, prune_out, prune_all, prune_lambda);
        if (*c_render) return run_render(render);
        if (*c_gc) return run_gradcheck(gc);
        if (*c_bench) {
            bench.run_naive = !skip_naive;
            return run_bench_cmd(bench, min_speedup);
        }
        if (*c_stats) return run_stats(gaps, tau, draws, stats_seed);
    } catch (const InvalidParameter &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const io::IoError &e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error &e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const VerificationFailure &e) {
        std::cerr << "failed: " << e.what() << "\n";
        return kVerify;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kUsage;
}
