#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "darksynth/darkgan.hpp"
#include "darksynth/evalkit.hpp"
#include "darksynth/teacher.hpp"

namespace darksynth {

/// Names of the first k ranked attributes, in ranking order.
std::vector<std::string> selected_attributes(const AttributeRanking& ranking, std::size_t k);

/// PIS/IIS over the real clips of src, and KID/FAD between two seeded halves
/// of them: the reference row a perfect generator would score.
MetricReport evaluate_real(const EmbeddingClassifier& clf, const EvalSource& src, std::uint64_t seed);

struct GridConfig {
    std::vector<double> temperatures = {1.0, 1.5, 2.0, 3.0, 5.0};
    bool baseline = true;
    bool real_row = true;
    TrainConfig train;              // temperature is set per cell
    std::size_t attributes = 128;   // conditioned attributes, taken from the ranking
    std::size_t eval_samples = 256;
    std::uint64_t eval_seed = 0;
    ClassifierConfig classifier;

    void validate() const;
};

void to_json(nlohmann::json& j, const GridConfig& c);
void from_json(const nlohmann::json& j, GridConfig& c);

struct GridRow {
    std::string model;
    std::optional<double> temperature;
    MetricReport tr, val;
    double train_seconds = 0.0;
    std::string checkpoint;  // relative to the grid directory; empty for real data
};

struct GridReport {
    std::vector<GridRow> rows;
    nlohmann::json config;

    bool all_finite() const;
    nlohmann::json to_json() const;
    /// Markdown table: one row per model, PIS/IIS/KID/FAD with tr and val columns.
    std::string table() const;
};

using GridLog = std::function<void(const std::string&)>;

/// Trains one model per temperature (plus the pitch-only baseline) and
/// evaluates each on both splits. Cell outputs go to out_dir/<cell>/; a cell
/// whose checkpoint already holds the same training config is reused.
GridReport run_grid(const DatasetReader& reader, const FeatureTable& features, const SoftLabelSet& labels,
                    const AttributeRanking& ranking, const GridConfig& cfg, const std::filesystem::path& out_dir,
                    const GridLog& log = {});

}  // namespace darksynth
