#pragma once

#include <chrono>

#include "hm/network.hpp"
#include "hm/sim.hpp"

namespace hm {

// Flat key/value experiment configuration. Every field has a default; a
// minimal config is {} plus the dataset path.
struct ExperimentConfig {
    ModelConfig model;
    LossWeights<float> loss;
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float weight_decay = 0.01f;
    int64_t batch_size = 4;
    int64_t total_steps = 500;
    float min_lr = 0.0f;
    std::string dataset;
    int64_t holdout = 0;  // pairs held out for eval; 0 evaluates on the train set
    std::string checkpoint = "model.hmam";
    std::string log = "train_log.jsonl";
    int64_t eval_interval = 100;
    uint64_t fx_seed = 1234;
    bool resume = false;
    bool eval_fsim = true;
    int64_t stop_after_steps = -1;  // not a config key; lets tests emulate an interrupt

    void validate() const {
        model.validate();
        loss.validate();
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
        if (total_steps < 1) throw std::invalid_argument("config: total_steps must be >= 1");
        if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
        if (!(lr > 0) || !(min_lr >= 0)) throw std::invalid_argument("config: bad learning rates");
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        for (const auto& [key, value] : j.items()) {
            if (key == "image_size") c.model.image_size = value.get<int64_t>();
            else if (key == "base_channels") c.model.base_channels = value.get<int64_t>();
            else if (key == "d_state") c.model.d_state = value.get<int64_t>();
            else if (key == "expand_factor") c.model.expand_factor = value.get<int64_t>();
            else if (key == "use_ms_fusion") c.model.use_ms_fusion = value.get<bool>();
            else if (key == "use_ss2d") c.model.use_ss2d = value.get<bool>();
            else if (key == "use_fft_branch") c.model.use_fft_branch = value.get<bool>();
            else if (key == "use_color_fusion") c.model.use_color_fusion = value.get<bool>();
            else if (key == "tie_scan_directions") c.model.tie_scan_directions = value.get<bool>();
            else if (key == "seed") c.model.seed = value.get<uint64_t>();
            else if (key == "alpha") c.loss.alpha = value.get<float>();
            else if (key == "beta_w") c.loss.beta_w = value.get<float>();
            else if (key == "gamma") c.loss.gamma = value.get<float>();
            else if (key == "lr") c.lr = value.get<float>();
            else if (key == "beta1") c.beta1 = value.get<float>();
            else if (key == "beta2") c.beta2 = value.get<float>();
            else if (key == "weight_decay") c.weight_decay = value.get<float>();
            else if (key == "batch_size") c.batch_size = value.get<int64_t>();
            else if (key == "total_steps") c.total_steps = value.get<int64_t>();
            else if (key == "min_lr") c.min_lr = value.get<float>();
            else if (key == "dataset") c.dataset = value.get<std::string>();
            else if (key == "holdout") c.holdout = value.get<int64_t>();
            else if (key == "checkpoint") c.checkpoint = value.get<std::string>();
            else if (key == "log") c.log = value.get<std::string>();
            else if (key == "eval_interval") c.eval_interval = value.get<int64_t>();
            else if (key == "fx_seed") c.fx_seed = value.get<uint64_t>();
            else if (key == "resume") c.resume = value.get<bool>();
            else if (key == "eval_fsim") c.eval_fsim = value.get<bool>();
            else throw std::invalid_argument("config: unknown key '" + key + "'");
        }
        return c;
    }
};

// Deterministic epoch-permutation batch stream; state is a pure function of
// (seed, steps consumed), so resumed runs replay the same order.
class BatchSampler {
public:
    BatchSampler(uint64_t seed, int64_t n, int64_t batch)
        : seed_(seed), n_(n), batch_(std::min(batch, n)) {}

    std::vector<int64_t> next() {
        std::vector<int64_t> idx;
        idx.reserve(size_t(batch_));
        while (int64_t(idx.size()) < batch_) {
            if (pos_ >= int64_t(order_.size())) refill();
            idx.push_back(order_[size_t(pos_++)]);
        }
        return idx;
    }

    void fast_forward(int64_t steps) {
        for (int64_t s = 0; s < steps; ++s) next();
    }

private:
    void refill() {
        order_.resize(size_t(n_));
        std::iota(order_.begin(), order_.end(), 0);
        Rng rng(Rng::derive(seed_, 0x5a5a5a5aull + uint64_t(epoch_)));
        for (int64_t i = n_ - 1; i > 0; --i) {
            int64_t j = rng.uniform_int(0, i);
            std::swap(order_[size_t(i)], order_[size_t(j)]);
        }
        pos_ = 0;
        epoch_ += 1;
    }

    uint64_t seed_;
    int64_t n_;
    int64_t batch_;
    int64_t epoch_ = 0;
    int64_t pos_ = 0;
    std::vector<int64_t> order_;
};

struct TrainResult {
    double step0_loss = 0;
    double final_loss = 0;  // mean over the last 10 logged steps
    double best_eval_psnr = -1e30;
    double best_eval_ssim = -1e30;
    double final_train_psnr = 0;  // eval-mode mean PSNR over the eval set at the end
    double final_train_ssim = 0;
    double omega_min = 1e30;
    double omega_max = -1e30;
    int64_t steps_run = 0;
    double wall_seconds = 0;
};

namespace detail {

template <typename T>
Tensor<T> stack_images(const std::vector<LoadedPair>& pairs, const std::vector<int64_t>& idx,
                       bool degraded) {
    const int64_t S = pairs[0].clean.dim(1);
    Tensor<T> out({int64_t(idx.size()), 3, S, S});
    for (size_t b = 0; b < idx.size(); ++b) {
        const Tensor<float>& src = degraded ? pairs[size_t(idx[b])].degraded
                                            : pairs[size_t(idx[b])].clean;
        for (int64_t i = 0; i < src.numel(); ++i)
            out.data()[int64_t(b) * src.numel() + i] = T(src.data()[i]);
    }
    return out;
}

inline void track_omega(HeroMambaModel<float>& m, TrainResult& r) {
    for (const auto& cf : m.cf)
        if (cf) {
            double w = double(color_fusion_omega(*cf));
            r.omega_min = std::min(r.omega_min, w);
            r.omega_max = std::max(r.omega_max, w);
        }
}

}  // namespace detail

// Mean eval-mode PSNR/SSIM of the model over a pair list.
inline std::pair<double, double> evaluate_pairs(HeroMambaModel<float>& model,
                                                const std::vector<LoadedPair>& pairs) {
    NoGradGuard ng;
    double psnr_sum = 0, ssim_sum = 0;
    for (const auto& p : pairs) {
        const int64_t S = p.degraded.dim(1);
        Tensor<float> in({1, 3, S, S});
        std::copy_n(p.degraded.data(), p.degraded.numel(), in.data());
        Tensor<float> out = forward(model, in, false);
        Tensor<float> img({3, S, S});
        std::copy_n(out.data(), out.numel(), img.data());
        psnr_sum += psnr(img, p.clean);
        ssim_sum += double(ssim(img, p.clean).item());
    }
    return {psnr_sum / double(pairs.size()), ssim_sum / double(pairs.size())};
}

// The training loop: batch -> forward -> composite loss -> backward -> AdamW
// step at the cosine-annealed rate. Writes JSON-lines log records and
// checkpoints; aborts on non-finite loss keeping the last good checkpoint.
inline TrainResult train_run(const ExperimentConfig& cfg, std::ostream* console = nullptr) {
    cfg.validate();
    auto wall_start = std::chrono::steady_clock::now();

    LoadedDataset ds = load_dataset(cfg.dataset);
    if (ds.pairs.empty()) throw std::runtime_error("train: dataset '" + cfg.dataset + "' is empty");
    if (!ds.missing.empty())
        throw std::runtime_error("train: dataset has missing pairs, starting with '" +
                                 ds.missing.front() + "'");
    if (int64_t(ds.spec.size) != cfg.model.image_size)
        throw std::runtime_error("train: dataset size " + std::to_string(ds.spec.size) +
                                 " != configured image_size " +
                                 std::to_string(cfg.model.image_size));
    std::vector<LoadedPair> train_pairs, eval_pairs;
    if (cfg.holdout > 0 && cfg.holdout < int64_t(ds.pairs.size())) {
        train_pairs.assign(ds.pairs.begin(), ds.pairs.end() - cfg.holdout);
        eval_pairs.assign(ds.pairs.end() - cfg.holdout, ds.pairs.end());
    } else {
        train_pairs = ds.pairs;
        eval_pairs = ds.pairs;
    }

    std::unique_ptr<HeroMambaModel<float>> model;
    OptimizerState<float> opt;
    opt.base_lr = cfg.lr;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.weight_decay = cfg.weight_decay;

    int64_t start_step = 0;
    const std::string opt_path = cfg.checkpoint + ".opt";
    if (cfg.resume && std::filesystem::exists(cfg.checkpoint) &&
        std::filesystem::exists(opt_path)) {
        model = load_checkpoint<float>(cfg.checkpoint);
        load_optimizer_state(opt, opt_path);
        start_step = opt.step;
    } else {
        model = build_network<float>(cfg.model);
    }

    FeatureExtractor<float> fx(cfg.fx_seed);
    BatchSampler sampler(cfg.model.seed, int64_t(train_pairs.size()), cfg.batch_size);
    sampler.fast_forward(start_step);

    std::ofstream log(cfg.log, cfg.resume && start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open log '" + cfg.log + "'");

    TrainResult result;
    std::vector<double> recent;
    detail::track_omega(*model, result);

    auto write_ckpt = [&]() {
        for (const auto& [name, p] : model->params)
            for (int64_t i = 0; i < p.numel(); ++i)
                if (!std::isfinite(p.data()[i]))
                    throw NumericError("train: non-finite parameter '" + name +
                                       "', not checkpointing");
        save_checkpoint(*model, cfg.checkpoint);
        save_optimizer_state(opt, opt_path);
    };
    // the initial state is the first "last good" checkpoint
    if (start_step == 0) write_ckpt();
    auto eval_and_log = [&](int64_t step) {
        auto [p, s] = evaluate_pairs(*model, eval_pairs);
        result.best_eval_psnr = std::max(result.best_eval_psnr, p);
        result.best_eval_ssim = std::max(result.best_eval_ssim, s);
        result.final_train_psnr = p;
        result.final_train_ssim = s;
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - wall_start)
                      .count();
        nlohmann::json rec{{"step", step}, {"eval_psnr", p}, {"eval_ssim", s}, {"wall_ms", ms}};
        log << rec.dump() << "\n";
        log.flush();
    };

    const int64_t end_step = cfg.stop_after_steps > 0
                                 ? std::min(cfg.total_steps, start_step + cfg.stop_after_steps)
                                 : cfg.total_steps;
    for (int64_t step = start_step; step < end_step; ++step) {
        auto idx = sampler.next();
        Tensor<float> degraded = detail::stack_images<float>(train_pairs, idx, true);
        Tensor<float> clean = detail::stack_images<float>(train_pairs, idx, false);

        zero_grads(*model);
        clear_tape<float>();
        Tensor<float> pred = forward(*model, degraded, true);
        auto terms = composite_loss_terms(pred, clean, degraded, cfg.loss, fx);
        const double loss_v = double(terms.total.item());
        if (!std::isfinite(loss_v)) {
            // abort; the checkpoint from before this step stays on disk
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        }
        Tensor<float> total = terms.total;
        backward(total);
        const float lr = cosine_anneal_lr(step, cfg.total_steps, cfg.lr, cfg.min_lr);
        adamw_step(*model, opt, lr);
        detail::track_omega(*model, result);

        if (step == 0) result.step0_loss = loss_v;
        recent.push_back(loss_v);
        if (int64_t(recent.size()) > 10) recent.erase(recent.begin());

        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - wall_start)
                      .count();
        nlohmann::json rec{{"step", step},
                           {"lr", double(lr)},
                           {"loss", loss_v},
                           {"l1", double(terms.l1)},
                           {"ssim", double(terms.ssim_term)},
                           {"contrastive", double(terms.contrastive)},
                           {"omega_min", result.omega_min},
                           {"omega_max", result.omega_max},
                           {"wall_ms", ms}};
        log << rec.dump() << "\n";

        if ((step + 1) % cfg.eval_interval == 0 || step + 1 == end_step) {
            write_ckpt();
            eval_and_log(step + 1);
        }
        result.steps_run = step + 1;
    }

    result.final_loss = 0;
    for (double v : recent) result.final_loss += v;
    if (!recent.empty()) result.final_loss /= double(recent.size());
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

    if (console != nullptr)
        *console << "best eval: psnr=" << metrics_value(result.best_eval_psnr)
                 << " dB ssim=" << metrics_value(result.best_eval_ssim) << "\n";
    return result;
}

}  // namespace hm
