#include "hm/cli.hpp"

#include <atomic>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "hm/fsim.hpp"
#include "hm/train.hpp"

namespace hm::cli {

namespace {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int worker_threads(size_t jobs) {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw > 0 ? int(hw) : 1;
    if (const char* env = std::getenv("HM_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) n = std::min<long>(n, v);
    }
    return int(std::min<size_t>(size_t(n), jobs ? jobs : 1));
}

template <typename F>
void parallel_for(size_t count, F&& body) {
    const int threads = worker_threads(count);
    if (threads <= 1) {
        for (size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(size_t(threads));
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&]() {
            NoGradGuard ng;
            for (size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
        });
    for (auto& th : pool) th.join();
}

Tensor<float> bilinear_resize(const Tensor<float>& img, int64_t H2, int64_t W2) {
    const int64_t H = img.dim(1), W = img.dim(2);
    Tensor<float> out({3, H2, W2});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H2; ++y)
            for (int64_t x = 0; x < W2; ++x) {
                const double fy = (double(y) + 0.5) * double(H) / double(H2) - 0.5;
                const double fx = (double(x) + 0.5) * double(W) / double(W2) - 0.5;
                const int64_t y0 = std::clamp<int64_t>(int64_t(std::floor(fy)), 0, H - 1);
                const int64_t x0 = std::clamp<int64_t>(int64_t(std::floor(fx)), 0, W - 1);
                const int64_t y1 = std::min<int64_t>(y0 + 1, H - 1);
                const int64_t x1 = std::min<int64_t>(x0 + 1, W - 1);
                const double wy = std::clamp(fy - double(y0), 0.0, 1.0);
                const double wx = std::clamp(fx - double(x0), 0.0, 1.0);
                auto at = [&](int64_t yy, int64_t xx) {
                    return double(img.data()[c * H * W + yy * W + xx]);
                };
                out.data()[c * H2 * W2 + y * W2 + x] =
                    float((1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                          wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1)));
            }
    return out;
}

// --- commands ---

int cmd_gen_data(const std::string& out_dir, int64_t n, int64_t size, uint64_t seed,
                 const std::string& difficulty, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
        std::cerr << "gen-data: '" << out_dir << "' exists and is not empty (use --force)\n";
        return kExitData;
    }
    DatasetSpec spec;
    spec.count = n;
    spec.size = size;
    spec.seed = seed;
    spec.difficulty = parse_difficulty(difficulty);
    write_dataset(out_dir, spec);
    std::cout << "wrote " << n << " pairs of size " << size << "x" << size << " (difficulty "
              << difficulty << ", seed " << seed << ") to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path) {
    std::ifstream cf(config_path);
    if (!cf) throw DataError("train: cannot open config '" + config_path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(cf);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("train: config is not valid JSON: " + std::string(e.what()));
    }
    ExperimentConfig cfg = ExperimentConfig::from_json(j);
    if (cfg.dataset.empty()) throw std::invalid_argument("train: config must set \"dataset\"");
    if (!std::filesystem::exists(cfg.dataset))
        throw DataError("train: dataset path '" + cfg.dataset + "' does not exist");
    train_run(cfg, &std::cout);
    return kExitOk;
}

int cmd_enhance(const std::string& model_path, const std::string& in_path,
                const std::string& out_path, bool resize) {
    auto model = load_checkpoint<float>(model_path);
    Tensor<float> img;
    try {
        img = read_image(in_path);
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
    const int64_t H = img.dim(1), W = img.dim(2);
    const int64_t S = model->cfg.image_size;
    Tensor<float> net_in = img;
    if (H != S || W != S) {
        if (!resize)
            throw DataError("enhance: input " + std::to_string(H) + "x" + std::to_string(W) +
                            " does not match model size " + std::to_string(S) +
                            " (pass --resize to opt in)");
        net_in = bilinear_resize(img, S, S);
    }
    NoGradGuard ng;
    Tensor<float> batch({1, 3, S, S});
    std::copy_n(net_in.data(), net_in.numel(), batch.data());
    Tensor<float> out = forward(*model, batch, false);
    Tensor<float> enhanced({3, S, S});
    std::copy_n(out.data(), out.numel(), enhanced.data());
    if (H != S || W != S) enhanced = bilinear_resize(enhanced, H, W);
    write_image(enhanced, out_path);
    return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& report_path, bool with_fsim) {
    auto model = load_checkpoint<float>(model_path);
    LoadedDataset ds = load_dataset(data_dir);
    if (int64_t(ds.spec.size) != model->cfg.image_size)
        throw DataError("eval: dataset size " + std::to_string(ds.spec.size) +
                        " != model image_size " + std::to_string(model->cfg.image_size));

    MetricsReport report;
    report.rows.resize(ds.pairs.size());
    std::vector<std::string> errors(ds.pairs.size());
    parallel_for(ds.pairs.size(), [&](size_t i) {
        try {
            const auto& p = ds.pairs[i];
            const int64_t S = p.degraded.dim(1);
            Tensor<float> in({1, 3, S, S});
            std::copy_n(p.degraded.data(), p.degraded.numel(), in.data());
            NoGradGuard ng;
            Tensor<float> out = forward(*model, in, false);
            Tensor<float> img({3, S, S});
            std::copy_n(out.data(), out.numel(), img.data());
            MetricsRow row;
            row.id = p.id;
            row.psnr_db = psnr(img, p.clean);
            row.ssim = double(ssim(img, p.clean).item());
            row.fsim = with_fsim ? fsim(img, p.clean) : 0.0;
            report.rows[i] = row;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    bool partial = !ds.missing.empty();
    for (const auto& id : ds.missing) std::cerr << "eval: missing pair " << id << "\n";
    MetricsReport ok_report;
    for (size_t i = 0; i < report.rows.size(); ++i) {
        if (!errors[i].empty()) {
            std::cerr << "eval: pair " << ds.pairs[i].id << " failed: " << errors[i] << "\n";
            partial = true;
            continue;
        }
        ok_report.rows.push_back(report.rows[i]);
    }

    std::ofstream rf(report_path);
    if (!rf) throw DataError("eval: cannot open report '" + report_path + "'");
    rf << metrics_csv(ok_report);
    if (!rf) throw DataError("eval: write failed for '" + report_path + "'");

    MetricsRow m = ok_report.mean(), sd = ok_report.stddev();
    std::cout << "aggregate: psnr=" << metrics_value(m.psnr_db) << "+-"
              << metrics_value(sd.psnr_db) << " dB ssim=" << metrics_value(m.ssim) << "+-"
              << metrics_value(sd.ssim) << " fsim=" << metrics_value(m.fsim) << "+-"
              << metrics_value(sd.fsim) << " over " << ok_report.rows.size() << " pairs\n";
    return partial ? kExitData : kExitOk;
}

int cmd_bench_scan(const std::string& kind, int64_t min_l, int64_t max_l, int64_t d_inner,
                   int64_t d_state, int repeats, const std::string& out_path) {
    std::vector<int64_t> lengths;
    for (int64_t L = min_l; L <= max_l; L *= 2) lengths.push_back(L);
    std::vector<ProbeRow> rows;
    if (kind == "scan")
        rows = scan_complexity_probe(lengths, d_inner, d_state, repeats);
    else if (kind == "quad")
        rows = quadratic_attention_probe(lengths, d_state, repeats);
    else
        throw std::invalid_argument("bench-scan: --kind must be scan|quad");
    std::string csv = probe_csv(rows);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        std::ofstream of(out_path);
        if (!of) throw DataError("bench-scan: cannot open '" + out_path + "'");
        of << csv;
    }
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Hero-Mamba underwater image enhancement"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
    std::string gen_out, gen_difficulty = "easy";
    int64_t gen_n = 8, gen_size = 32;
    uint64_t gen_seed = 1;
    bool gen_force = false;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n", gen_n, "number of pairs");
    gen->add_option("--size", gen_size, "image size (power of two)");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--difficulty", gen_difficulty, "easy|medium|hard");
    gen->add_flag("--force", gen_force, "overwrite an existing non-empty directory");

    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    std::string train_config;
    train->add_option("--config", train_config, "flat JSON config file")->required();

    auto* enhance = app.add_subcommand("enhance", "enhance a single image");
    std::string enh_model, enh_in, enh_out;
    bool enh_resize = false;
    enhance->add_option("--model", enh_model, "checkpoint file")->required();
    enhance->add_option("--in", enh_in, "input PNG")->required();
    enhance->add_option("--out", enh_out, "output PNG")->required();
    enhance->add_flag("--resize", enh_resize, "resize to the model resolution and back");

    auto* eval = app.add_subcommand("eval", "evaluate a model over a dataset");
    std::string eval_model, eval_data, eval_report;
    bool eval_no_fsim = false;
    eval->add_option("--model", eval_model, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--report", eval_report, "CSV report path")->required();
    eval->add_flag("--no-fsim", eval_no_fsim, "skip the FSIM column (faster)");

    auto* bench = app.add_subcommand("bench-scan", "scan complexity probe (CSV: L,seconds)");
    std::string bench_kind = "scan", bench_out;
    int64_t bench_min = 2048, bench_max = 16384, bench_dinner = 32, bench_dstate = 8;
    int bench_repeats = 7;
    bench->add_option("--kind", bench_kind, "scan|quad");
    bench->add_option("--min-l", bench_min, "smallest sequence length");
    bench->add_option("--max-l", bench_max, "largest sequence length");
    bench->add_option("--d-inner", bench_dinner, "scan channel count");
    bench->add_option("--d-state", bench_dstate, "state dimension");
    bench->add_option("--repeats", bench_repeats, "timing repeats (best-of)");
    bench->add_option("--out", bench_out, "CSV output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_n, gen_size, gen_seed, gen_difficulty,
                                               gen_force);
        if (train->parsed()) return cmd_train(train_config);
        if (enhance->parsed()) return cmd_enhance(enh_model, enh_in, enh_out, enh_resize);
        if (eval->parsed()) return cmd_eval(eval_model, eval_data, eval_report, !eval_no_fsim);
        if (bench->parsed())
            return cmd_bench_scan(bench_kind, bench_min, bench_max, bench_dinner, bench_dstate,
                                  bench_repeats, bench_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        // unreadable/corrupt/missing files and other I/O-level failures
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace hm::cli
