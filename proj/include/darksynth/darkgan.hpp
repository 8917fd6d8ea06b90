#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "darksynth/networks.hpp"
#include "darksynth/objectives.hpp"
#include "darksynth/spectral.hpp"
#include "darksynth/teacher.hpp"
#include "darksynth/toyset.hpp"

namespace darksynth {

/// Gradient of a scalar critic with respect to its input.
using CriticGradient = std::function<std::vector<double>(std::span<const double>)>;

/// mean_i (||grad D(x_i)|| - 1)^2 with x_i = eps_i * real_i + (1 - eps_i) * fake_i.
double gradient_penalty(const CriticGradient& critic_grad, const std::vector<std::vector<double>>& real,
                        const std::vector<std::vector<double>>& fake, std::span<const double> eps);

struct ConditioningBundle {
    std::vector<double> alpha;  // may exceed 1 for out-of-range probing
    std::vector<double> pitch;  // one-hot
    std::vector<double> z;

    static ConditioningBundle make(std::vector<double> alpha, int pitch_index, int num_pitches, std::mt19937_64& rng,
                                   int latent_dim = kLatentDim);
    /// Checks dimensions and the one-hot; returns indices of alpha entries above 1.
    std::vector<std::size_t> validate(const GanArchitecture& arch) const;
};

struct AttributeRange {
    double low = 0.0;
    double high = 1.0;
};

/// A trained generator plus everything needed to condition and invert it.
struct GeneratorModel {
    Generator<float> net;
    SpectralConfig spectral;
    PitchRange pitch_range;
    std::vector<std::string> attribute_names;
    double trained_temperature = 1.0;
    std::vector<double> defaults;  // per-attribute validation median
    std::vector<AttributeRange> observed_ranges;
    nlohmann::json train_config;

    const GanArchitecture& arch() const { return net.arch(); }
    std::size_t num_attributes() const { return attribute_names.size(); }
};

MagIFTensor generate(const GeneratorModel& g, const ConditioningBundle& c);
std::vector<MagIFTensor> generate(const GeneratorModel& g, std::span<const ConditioningBundle> batch);

struct CriticOutput {
    double score = 0.0;
    std::vector<double> attribute_logits;
    std::vector<double> pitch_logits;
};
CriticOutput criticize(const Critic<float>& d, const MagIFTensor& x);

/// Tensors and conditioning for one split, held in memory.
struct TrainingSet {
    std::vector<std::string> attribute_names;  // conditioned attributes
    SpectralConfig spectral;
    PitchRange pitch_range;
    int frames = 0, bins = 0;
    std::vector<float> data;                  // [n][2][frames][bins]
    std::vector<std::vector<double>> alphas;  // [n][K] teacher labels at T = 1
    std::vector<int> pitch_index;
    std::vector<Waveshape> waveshapes;
    std::vector<std::string> clip_ids;

    std::size_t size() const { return pitch_index.size(); }
    std::size_t tensor_size() const { return static_cast<std::size_t>(2) * frames * bins; }
    MagIFTensor tensor(std::size_t i) const;
};

/// Analyzes every clip of one split. attributes selects and orders the
/// conditioning columns by name; an empty list conditions on pitch only.
TrainingSet make_training_set(const DatasetReader& reader, const SoftLabelSet& labels,
                              const std::vector<std::string>& attributes, Split split);

struct TrainConfig {
    double temperature = 1.0;
    double gp_weight = 10.0;
    double distill_weight = 1.0;
    double pitch_weight = 1.0;
    int batch_size = 16;
    int steps = 2000;
    int critic_steps = 1;  // critic updates per generator update
    nn::AdamConfig optimizer{8e-4, 0.0, 0.99, 1e-8};
    std::uint64_t seed = 0;
    std::vector<int> feature_maps = {256, 128, 128, 128, 128, 64};
    int width_divisor = 16;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainStep {
    int step = 0;
    double critic_loss = 0.0;
    double generator_loss = 0.0;
    double wasserstein = 0.0;  // mean W(real) - mean W(fake)
    double gradient_penalty = 0.0;
    double critic_distill = 0.0;
    double critic_pitch = 0.0;
    double generator_distill = 0.0;
    double generator_pitch = 0.0;

    bool operator==(const TrainStep&) const = default;
};

struct TrainLog {
    std::vector<TrainStep> steps;
    double seconds = 0.0;

    /// Max minus min of the Wasserstein estimate over a fraction of the run.
    double wasserstein_spread(double from_fraction, double to_fraction) const;
    nlohmann::json to_json() const;
};

struct TrainResult {
    GeneratorModel generator;
    Critic<float> critic;
    TrainLog log;
};

using TrainProgress = std::function<void(const TrainStep&)>;
/// Receives the generator after `step` completed steps.
using TrainSnapshot = std::function<void(int step, const GeneratorModel&)>;

/// WGAN-GP training with attribute distillation. Conditioning alphas are the
/// raw (T = 1) labels; the auxiliary-head targets are the same labels
/// re-tempered to cfg.temperature. A set without attributes trains the
/// pitch-only baseline. val supplies the per-attribute default medians.
/// snapshot, when set, runs every snapshot_every steps before the last.
TrainResult train(const TrainingSet& train_set, const TrainingSet* val, const TrainConfig& cfg,
                  const TrainProgress& progress = {}, int snapshot_every = 0, const TrainSnapshot& snapshot = {});

/// An untrained generator with the same metadata train() would produce.
GeneratorModel initial_generator(const TrainingSet& train_set, const TrainingSet* val, const TrainConfig& cfg);

void save_checkpoint(const GeneratorModel& g, const std::filesystem::path& path);
GeneratorModel load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const GeneratorModel& g);
GeneratorModel decode_checkpoint(std::string_view bytes);

}  // namespace darksynth
