#pragma once

#include <filesystem>
#include <fstream>

#include "hm/image_io.hpp"
#include "hm/metrics.hpp"
#include "hm/spectral.hpp"
#include "json.hpp"

namespace hm {

// Ground-truth physics of one synthetic underwater scene:
//   I = J * t + B * (1 - t),  t = exp(-beta_c * depth) per channel,
// with channel-ordered attenuation beta_r >= beta_g >= beta_b > 0.
template <typename T>
struct SceneParams {
    std::array<T, 3> background{};    // B, blue/green dominant
    std::array<T, 3> beta{};          // attenuation, red heaviest
    Tensor<T> depth;                  // H x W
    Tensor<T> transmission;           // 3 x H x W in (0,1]
    uint64_t depth_seed = 0;
};

template <typename T>
struct ScenePair {
    std::string id;
    Tensor<T> clean;     // J
    Tensor<T> degraded;  // I
    SceneParams<T> scene;
};

enum class InversionMode { exact, approx };

template <typename T>
Tensor<T> degrade(const Tensor<T>& clean, const SceneParams<T>& scene) {
    if (clean.ndim() != 3 || clean.dim(0) != 3)
        throw std::invalid_argument("degrade: expected 3 x H x W image");
    detail::check_same_shape(clean, scene.transmission, "degrade(J/t)");
    const int64_t plane = clean.dim(1) * clean.dim(2);
    Tensor<T> out(clean.shape());
    for (int64_t c = 0; c < 3; ++c) {
        const T b = scene.background[size_t(c)];
        for (int64_t i = 0; i < plane; ++i) {
            const T t = scene.transmission.data()[c * plane + i];
            if (!(t > T(0)) || t > T(1))
                throw std::invalid_argument("degrade: transmission outside (0,1] at channel " +
                                            std::to_string(c) + ", pixel " + std::to_string(i));
            const T j = clean.data()[c * plane + i];
            out.data()[c * plane + i] = j * t + b * (T(1) - t);
        }
    }
    return out;
}

// Exact mode inverts the imaging model, J = (I - B(1-t)) / t; approx mode
// evaluates the feature-space approximation J ~= I t + B (1 - t) literally.
template <typename T>
Tensor<T> invert_degradation(const Tensor<T>& degraded, const SceneParams<T>& scene,
                             InversionMode mode = InversionMode::exact, T t_min = T(0.05)) {
    if (degraded.ndim() != 3 || degraded.dim(0) != 3)
        throw std::invalid_argument("invert_degradation: expected 3 x H x W image");
    detail::check_same_shape(degraded, scene.transmission, "invert_degradation(I/t)");
    const int64_t plane = degraded.dim(1) * degraded.dim(2);
    Tensor<T> out(degraded.shape());
    for (int64_t c = 0; c < 3; ++c) {
        const T b = scene.background[size_t(c)];
        for (int64_t i = 0; i < plane; ++i) {
            const T t = scene.transmission.data()[c * plane + i];
            const T iv = degraded.data()[c * plane + i];
            if (mode == InversionMode::exact) {
                if (t < t_min)
                    throw std::invalid_argument(
                        "invert_degradation: transmission " + std::to_string(double(t)) +
                        " below t_min " + std::to_string(double(t_min)) + " (unstable division)");
                out.data()[c * plane + i] = (iv - b * (T(1) - t)) / t;
            } else {
                out.data()[c * plane + i] = iv * t + b * (T(1) - t);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// procedural scene generation

enum class Difficulty { easy, medium, hard };

inline Difficulty parse_difficulty(const std::string& s) {
    if (s == "easy") return Difficulty::easy;
    if (s == "medium") return Difficulty::medium;
    if (s == "hard") return Difficulty::hard;
    throw std::invalid_argument("difficulty must be easy|medium|hard, got '" + s + "'");
}

inline const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "easy";
}

namespace detail {

// smooth field from a few random low-frequency cosine waves, mapped to [0,1]
template <typename T>
Tensor<T> smooth_field(Rng& rng, int64_t size, int waves) {
    Tensor<T> f({size, size});
    std::vector<double> fx(static_cast<size_t>(waves)), fy(static_cast<size_t>(waves)), ph(static_cast<size_t>(waves)), am(static_cast<size_t>(waves));
    for (int k = 0; k < waves; ++k) {
        fx[size_t(k)] = rng.uniform(-2.5, 2.5) / double(size);
        fy[size_t(k)] = rng.uniform(-2.5, 2.5) / double(size);
        ph[size_t(k)] = rng.uniform(0.0, 6.283185307179586);
        am[size_t(k)] = rng.uniform(0.3, 1.0) / double(k + 1);
    }
    double lo = 1e30, hi = -1e30;
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            double v = 0;
            for (int k = 0; k < waves; ++k)
                v += am[size_t(k)] *
                     std::cos(6.283185307179586 * (fx[size_t(k)] * double(x) +
                                                   fy[size_t(k)] * double(y)) +
                              ph[size_t(k)]);
            f.data()[y * size + x] = T(v);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = hi - lo > 1e-9 ? hi - lo : 1.0;
    for (int64_t i = 0; i < f.numel(); ++i) f.data()[i] = T((double(f.data()[i]) - lo) / span);
    return f;
}

}  // namespace detail

// Layered procedural content: smooth color fields, geometric shapes, texture
// noise. Deterministic per (seed, index) via the derived stream.
template <typename T>
ScenePair<T> sample_scene(uint64_t seed, uint64_t index, int64_t size, Difficulty difficulty) {
    if (!detail::is_pow2(size) || size < 16)
        throw std::invalid_argument("sample_scene: size must be a power of two >= 16");
    const uint64_t pair_seed = Rng::derive(seed, index);
    Rng rng(pair_seed);
    const int64_t plane = size * size;

    ScenePair<T> pair;
    pair.id = "pair_" + std::to_string(index);

    // clean image: color fields + shapes + noise; scene radiance stays dimmer
    // than the veiling light so deep pixels dominate the bright tail
    pair.clean = Tensor<T>({3, size, size});
    for (int64_t c = 0; c < 3; ++c) {
        Tensor<T> field = detail::smooth_field<T>(rng, size, 4);
        // blue-leaning content floor, in keeping with underwater scenes
        const double lo = c == 2 ? rng.uniform(0.18, 0.32) : rng.uniform(0.05, 0.18);
        const double hi = c == 2 ? rng.uniform(0.42, 0.58) : rng.uniform(0.3, 0.55);
        for (int64_t i = 0; i < plane; ++i)
            pair.clean.data()[c * plane + i] = T(lo + (hi - lo) * double(field.data()[i]));
    }
    const int shapes = int(rng.uniform_int(3, 6));
    for (int s = 0; s < shapes; ++s) {
        const bool circle = rng.uniform() < 0.5;
        const double cx = rng.uniform(0.1, 0.9) * double(size);
        const double cy = rng.uniform(0.1, 0.9) * double(size);
        const double r = rng.uniform(0.08, 0.3) * double(size);
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = c == 2 ? rng.uniform(0.2, 0.58) : rng.uniform(0.04, 0.6);
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                // feathered edges (~1.5 px): signed distance to the boundary
                double dist;
                if (circle) {
                    dist = std::sqrt((double(x) - cx) * (double(x) - cx) +
                                     (double(y) - cy) * (double(y) - cy)) -
                           r;
                } else {
                    dist = std::max(std::fabs(double(x) - cx) - r,
                                    std::fabs(double(y) - cy) - r * 0.7);
                }
                const double alpha = std::clamp(0.5 - dist / 1.5, 0.0, 1.0);
                if (alpha > 0.0)
                    for (int64_t c = 0; c < 3; ++c) {
                        T& px = pair.clean.data()[c * plane + y * size + x];
                        px = T(alpha * col[c] + (1.0 - alpha) * double(px));
                    }
            }
    }
    const double noise_amp =
        difficulty == Difficulty::easy ? 0.01 : difficulty == Difficulty::medium ? 0.03 : 0.05;
    for (int64_t i = 0; i < 3 * plane; ++i) {
        double v = double(pair.clean.data()[i]) + rng.uniform(-noise_amp, noise_amp);
        pair.clean.data()[i] = T(std::min(0.58, std::max(0.05, v)));
    }

    // physics: smooth depth, channel-ordered attenuation, blue/green light
    SceneParams<T>& sc = pair.scene;
    sc.depth_seed = pair_seed;
    double depth_min, depth_max;
    double bb_lo, bb_hi, bg_lo, bg_hi, br_lo, br_hi;  // per-channel attenuation increments
    switch (difficulty) {
        case Difficulty::easy:
            depth_min = 0.7; depth_max = 1.9;
            bb_lo = 0.12; bb_hi = 0.18; bg_lo = 0.05; bg_hi = 0.11; br_lo = 0.28; br_hi = 0.42;
            break;
        case Difficulty::medium:
            depth_min = 0.8; depth_max = 3.0;
            bb_lo = 0.18; bb_hi = 0.28; bg_lo = 0.06; bg_hi = 0.14; br_lo = 0.3; br_hi = 0.5;
            break;
        case Difficulty::hard:
            depth_min = 1.1; depth_max = 3.5;
            bb_lo = 0.5; bb_hi = 0.58; bg_lo = 0.08; bg_hi = 0.16; br_lo = 0.35; br_hi = 0.45;
            break;
    }
    Tensor<T> dfield = detail::smooth_field<T>(rng, size, 3);
    sc.depth = Tensor<T>({size, size});
    // hard scenes saturate the top of the field into a flat far-water zone,
    // so a fully veiled region of useful area always exists
    const double gain = difficulty == Difficulty::hard ? 1.25 : 1.0;
    for (int64_t i = 0; i < plane; ++i)
        sc.depth.data()[i] = T(depth_min + (depth_max - depth_min) *
                               std::min(1.0, double(dfield.data()[i]) * gain));

    const double beta_b = rng.uniform(bb_lo, bb_hi);
    const double beta_g = beta_b + rng.uniform(bg_lo, bg_hi);
    const double beta_r = beta_g + rng.uniform(br_lo, br_hi);
    sc.beta = {T(beta_r), T(beta_g), T(beta_b)};
    if (!(sc.beta[0] >= sc.beta[1] && sc.beta[1] >= sc.beta[2] && sc.beta[2] > T(0)))
        throw std::logic_error("sample_scene: attenuation ordering violated");

    const double b_blue = rng.uniform(0.72, 0.88);
    const double b_green = rng.uniform(0.68, std::min(0.84, b_blue));
    const double b_red = rng.uniform(0.08, 0.35);
    sc.background = {T(b_red), T(b_green), T(b_blue)};

    sc.transmission = Tensor<T>({3, size, size});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < plane; ++i)
            sc.transmission.data()[c * plane + i] =
                T(std::exp(-double(sc.beta[size_t(c)]) * double(sc.depth.data()[i])));

    pair.degraded = degrade(pair.clean, sc);
    return pair;
}

// ---------------------------------------------------------------------------
// on-disk dataset

struct DatasetSpec {
    int64_t count = 8;
    int64_t size = 32;
    uint64_t seed = 1;
    Difficulty difficulty = Difficulty::easy;
};

template <typename T>
std::vector<ScenePair<T>> generate_pairs(const DatasetSpec& spec) {
    if (spec.count < 1) throw std::invalid_argument("generate_pairs: need at least one pair");
    std::vector<ScenePair<T>> pairs;
    pairs.reserve(size_t(spec.count));
    for (int64_t i = 0; i < spec.count; ++i)
        pairs.push_back(sample_scene<T>(spec.seed, uint64_t(i), spec.size, spec.difficulty));
    return pairs;
}

inline void write_dataset(const std::string& dir, const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto pairs = generate_pairs<float>(spec);
    nlohmann::json manifest;
    manifest["seed"] = spec.seed;
    manifest["size"] = spec.size;
    manifest["difficulty"] = difficulty_name(spec.difficulty);
    manifest["count"] = spec.count;
    manifest["pairs"] = nlohmann::json::array();
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        fs::path pdir = fs::path(dir) / p.id;
        fs::create_directories(pdir);
        write_image(p.clean, (pdir / "clean.png").string());
        write_image(p.degraded, (pdir / "degraded.png").string());
        nlohmann::json scene;
        scene["background"] = {p.scene.background[0], p.scene.background[1], p.scene.background[2]};
        scene["beta"] = {p.scene.beta[0], p.scene.beta[1], p.scene.beta[2]};
        scene["depth_seed"] = p.scene.depth_seed;
        std::ofstream sf(pdir / "scene.json");
        sf << scene.dump(2) << "\n";
        if (!sf) throw std::runtime_error("write_dataset: failed writing scene.json for " + p.id);
        manifest["pairs"].push_back({{"id", p.id}, {"index", i}});
    }
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw std::runtime_error("write_dataset: failed writing manifest.json");
}

struct LoadedPair {
    std::string id;
    Tensor<float> clean;
    Tensor<float> degraded;
};

struct LoadedDataset {
    DatasetSpec spec;
    std::vector<LoadedPair> pairs;
    std::vector<std::string> missing;  // ids that failed to load
};

inline LoadedDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("load_dataset: no manifest.json in '" + dir + "'");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    LoadedDataset ds;
    ds.spec.seed = manifest.at("seed").get<uint64_t>();
    ds.spec.size = manifest.at("size").get<int64_t>();
    ds.spec.count = manifest.at("count").get<int64_t>();
    ds.spec.difficulty = parse_difficulty(manifest.at("difficulty").get<std::string>());
    for (const auto& entry : manifest.at("pairs")) {
        LoadedPair p;
        p.id = entry.at("id").get<std::string>();
        fs::path pdir = fs::path(dir) / p.id;
        try {
            p.clean = read_image((pdir / "clean.png").string());
            p.degraded = read_image((pdir / "degraded.png").string());
        } catch (const std::exception&) {
            ds.missing.push_back(p.id);
            continue;
        }
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

}  // namespace hm
