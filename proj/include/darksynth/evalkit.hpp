#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "darksynth/darkgan.hpp"
#include "darksynth/nn.hpp"
#include "darksynth/teacher.hpp"
#include "darksynth/toyset.hpp"

namespace darksynth {

struct ClassifierConfig {
    std::vector<int> hidden = {256};
    int embedding_dim = 128;
    int epochs = 80;
    int batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
};

/// Descriptor MLP with a shared trunk whose last hidden layer is the
/// embedding, and three heads read off one output layer: pitch (P-way
/// softmax), waveshape (W-way softmax) and attributes (K sigmoids).
struct EmbeddingClassifier {
    nn::Mlp net;
    nn::Standardizer scaler;
    int num_pitches = 0;
    int num_waveshapes = kWaveshapeCount;
    std::vector<std::string> attribute_names;
    SpectralConfig input_spec;
    PitchRange pitch_range;
    double pitch_accuracy = 0.0;      // on the validation split
    double waveshape_accuracy = 0.0;  // on the validation split

    int embedding_dim() const;
    /// Content hash of the parameters, used to key cached embeddings.
    std::string version() const;

    nn::Matrix embed(const nn::Matrix& descriptors) const;
    nn::Matrix pitch_probabilities(const nn::Matrix& descriptors) const;
    nn::Matrix waveshape_probabilities(const nn::Matrix& descriptors) const;
    nn::Matrix attribute_probabilities(const nn::Matrix& descriptors) const;

    nlohmann::json to_json() const;
    static EmbeddingClassifier from_json(const nlohmann::json& j);
};

void save_classifier(const EmbeddingClassifier& c, const std::filesystem::path& path);
EmbeddingClassifier load_classifier(const std::filesystem::path& path);

/// Fits on the train split and reports accuracies on the validation split.
/// The attribute head learns `labels` when given, ground truth otherwise.
EmbeddingClassifier train_embedding_classifier(const DatasetManifest& manifest, const FeatureTable& features,
                                               const ClassifierConfig& cfg, const SoftLabelSet* labels = nullptr);

struct EmbeddingSet {
    nn::Matrix data;  // [n x E]
    std::string source;  // "real" or "generated"
    std::string classifier_version;

    void validate() const;
};

/// Flat little-endian float64 matrix at path, JSON sidecar {n, E,
/// classifier_version, source} at path + ".json".
void save_embeddings(const EmbeddingSet& e, const std::filesystem::path& path);
/// Throws a compatibility error when expected_version is non-empty and differs.
EmbeddingSet load_embeddings(const std::filesystem::path& path, const std::string& expected_version = {});

/// exp(mean_x KL(p(y|x) || p(y))) over rows of class probabilities.
double inception_score(const nn::Matrix& probs);

struct KidEstimate {
    double value = 0.0;
    double standard_error = 0.0;  // bootstrap
};

/// Unbiased squared MMD with kernel (x.y / E + 1)^3. The stderr comes from
/// `resamples` bootstrap draws of both sets.
KidEstimate kid(const EmbeddingSet& a, const EmbeddingSet& b, int resamples = 100, std::uint64_t seed = 0);

inline constexpr double kFadRegularization = 1e-6;

/// Frechet distance between N(mu_a, cov_a) and N(mu_b, cov_b), with
/// kFadRegularization * I added to both covariances.
double frechet_distance(const nn::Vector& mu_a, const nn::Matrix& cov_a, const nn::Vector& mu_b, const nn::Matrix& cov_b);
double fad(const EmbeddingSet& a, const EmbeddingSet& b);

/// Real clips of one split: descriptors and conditioning for sampling.
struct EvalSource {
    Split split = Split::Val;
    nn::Matrix descriptors;
    std::vector<std::vector<double>> alphas;  // model attribute order, T = 1
    std::vector<int> pitch_index;
};

EvalSource make_eval_source(const DatasetManifest& manifest, const FeatureTable& features, const SoftLabelSet& labels,
                            const std::vector<std::string>& attributes, Split split);

/// Conditioning for n samples drawn with replacement from a source.
std::vector<ConditioningBundle> sample_conditioning(const EvalSource& src, const GanArchitecture& arch, std::size_t n,
                                                    std::mt19937_64& rng);

/// Generates, renders to audio, re-analyzes and describes each sample, in
/// chunks to bound memory.
nn::Matrix describe_generated(const GeneratorModel& g, std::span<const ConditioningBundle> batch);

struct MetricReport {
    double pis = 0.0;
    double iis = 0.0;
    double kid = 0.0;
    double kid_stderr = 0.0;
    double fad = 0.0;
    std::size_t n_samples = 0;
    Split split = Split::Val;
    nlohmann::json config;

    nlohmann::json to_json() const;
};

MetricReport evaluate_model(const GeneratorModel& g, const EmbeddingClassifier& clf, const EvalSource& src,
                            std::size_t n, std::uint64_t seed);

}  // namespace darksynth
