#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darksynth/nn.hpp"
#include "darksynth/spectral.hpp"
#include "darksynth/toyset.hpp"

namespace darksynth {

/// Temperature sigmoid 1 / (1 + exp(-z / T)), evaluated without overflow.
double tempered_sigmoid(double logit, double temperature);
std::vector<double> tempered_sigmoid(std::span<const double> logits, double temperature);
/// Inverse of the T = 1 sigmoid.
double logit(double probability);
/// Re-expresses a probability produced at temperature `from` as if produced at `to`.
double retemper(double probability, double from, double to);

struct SoftLabelVector {
    std::vector<double> values;
    double temperature = 1.0;
};

/// Per-clip soft labels over a fixed attribute vocabulary.
struct SoftLabelSet {
    double temperature = 1.0;
    std::vector<std::string> attribute_names;
    std::vector<std::string> clip_ids;
    std::vector<std::vector<double>> values;  // [clip][attribute], each in (0, 1)

    std::size_t size() const { return clip_ids.size(); }
    std::optional<std::size_t> index_of(const std::string& clip_id) const;
    const std::vector<double>& at(const std::string& clip_id) const;
    SoftLabelSet retempered(double to) const;
};

/// JSON lines: {"clip_id": str, "T": float, "labels": {name: float}} per clip.
void save_soft_labels(const SoftLabelSet& s, const std::filesystem::path& path);
SoftLabelSet load_soft_labels(const std::filesystem::path& path);

/// External labels in columnar CSV: header `clip_id,<name>,...`, one row per
/// clip, probabilities strictly inside (0, 1). When expected_clip_ids is
/// given, the file must cover exactly those clips.
SoftLabelSet import_external_labels(const std::filesystem::path& path,
                                    const std::vector<std::string>& attribute_names,
                                    const std::vector<std::string>* expected_clip_ids = nullptr);

struct TeacherConfig {
    std::vector<int> hidden = {128};
    int epochs = 150;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double holdout_fraction = 0.2;  // of the dataset's train split
    std::uint64_t seed = 1;
    bool shuffle_labels = false;    // sanity control: permute targets across clips
};

struct TeacherModel {
    nn::Mlp net;
    nn::Standardizer scaler;
    std::vector<std::string> attribute_names;
    std::vector<double> per_attribute_accuracy;  // balanced accuracy at 0.5 on the holdout
    std::vector<double> per_attribute_auc;       // NaN when the holdout lacks a class
    SpectralConfig input_spec;
    PitchRange pitch_range;

    std::size_t num_attributes() const { return attribute_names.size(); }
    double mean_auc() const;

    std::vector<double> logits(const MagIFTensor& t) const;
    nn::Matrix logits_from_descriptors(const nn::Matrix& descriptors) const;

    nlohmann::json to_json() const;
    static TeacherModel from_json(const nlohmann::json& j);
};

void save_teacher(const TeacherModel& m, const std::filesystem::path& path);
TeacherModel load_teacher(const std::filesystem::path& path);

/// Descriptor rows for every clip of a dataset, in manifest order.
struct FeatureTable {
    std::vector<const ManifestEntry*> entries;
    nn::Matrix descriptors;
};
FeatureTable compute_features(const DatasetReader& reader);

TeacherModel train_toy_teacher(const DatasetManifest& manifest, const FeatureTable& features,
                               const TeacherConfig& cfg);
TeacherModel train_toy_teacher(const DatasetReader& reader, const TeacherConfig& cfg);

/// Applies the tempered sigmoid to the model's logits for w.
SoftLabelVector tag(const TeacherModel& model, const Waveform& w, double temperature);

SoftLabelSet label_dataset(const TeacherModel& model, const DatasetReader& reader, double temperature);
SoftLabelSet label_dataset(const TeacherModel& model, const DatasetManifest& manifest,
                           const FeatureTable& features, double temperature);

struct RankedAttribute {
    std::size_t index = 0;
    std::string name;
    double p90 = 0.0;
    double accuracy = 0.0;
    double score = 0.0;
};

struct AttributeRanking {
    std::vector<RankedAttribute> ranked;  // descending by score
    std::size_t selected_top_k = 0;

    std::vector<std::size_t> top_indices(std::size_t k) const;
    nlohmann::json to_json() const;
    static AttributeRanking from_json(const nlohmann::json& j);
};

/// Linear interpolation between order statistics at rank q * (n - 1).
double percentile_linear(std::vector<double> values, double q);

/// Scores sqrt(p90 * acc) per attribute. Ties are broken by ascending
/// attribute index.
AttributeRanking rank_attributes(const SoftLabelSet& labels, std::span<const double> accuracies,
                                 std::size_t top_k = 128);

/// Area under the ROC curve with tied scores counted as one half; NaN when a
/// class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
double balanced_accuracy(std::span<const double> probabilities, std::span<const int> labels);

}  // namespace darksynth
