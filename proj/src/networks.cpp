#include "darksynth/networks.hpp"

#include <algorithm>
#include <bit>

#include "darksynth/error.hpp"

namespace darksynth {

namespace {

int log2_exact(int v, const char* what) {
    if (v <= 0 || !std::has_single_bit(static_cast<unsigned>(v))) {
        throw invalid_input(std::string(what) + " must be a power of two, got " + std::to_string(v));
    }
    return std::countr_zero(static_cast<unsigned>(v));
}

}  // namespace

std::vector<int> GanArchitecture::channels() const {
    std::vector<int> out;
    for (int f : feature_maps) out.push_back(std::max(1, f / std::max(1, width_divisor)));
    return out;
}

std::vector<std::pair<int, int>> GanArchitecture::stage_factors() const {
    const int transitions = static_cast<int>(feature_maps.size()) - 1;
    const int lt = log2_exact(frames / seed_frames, "frames / seed_frames");
    const int lf = log2_exact(bins / seed_bins, "bins / seed_bins");
    std::vector<std::pair<int, int>> out;
    for (int j = 0; j < transitions; ++j) {
        const int et = lt / transitions + (j < lt % transitions ? 1 : 0);
        const int ef = lf / transitions + (j < lf % transitions ? 1 : 0);
        out.emplace_back(1 << et, 1 << ef);
    }
    return out;
}

void GanArchitecture::validate() const {
    if (num_attributes < 0 || num_pitches < 1 || latent_dim < 1) {
        throw invalid_input("architecture needs K >= 0, P >= 1 and a positive latent size");
    }
    if (feature_maps.size() < 2) throw invalid_input("feature map schedule needs at least two stages");
    if (std::any_of(feature_maps.begin(), feature_maps.end(), [](int f) { return f < 1; })) {
        throw invalid_input("feature map widths must be positive");
    }
    if (width_divisor < 1) throw invalid_input("width divisor must be >= 1");
    if (seed_frames < 1 || frames % seed_frames != 0) {
        throw invalid_input("frames (" + std::to_string(frames) + ") must be a multiple of seed_frames");
    }
    if (seed_bins < 1 || bins % seed_bins != 0) {
        throw invalid_input("bins (" + std::to_string(bins) + ") must be a multiple of seed_bins");
    }
    stage_factors();
}

void to_json(nlohmann::json& j, const GanArchitecture& a) {
    j = {{"num_attributes", a.num_attributes}, {"num_pitches", a.num_pitches},   {"latent_dim", a.latent_dim},
         {"feature_maps", a.feature_maps},     {"width_divisor", a.width_divisor}, {"seed_frames", a.seed_frames},
         {"seed_bins", a.seed_bins},
         {"frames", a.frames},                 {"bins", a.bins}};
}

void from_json(const nlohmann::json& j, GanArchitecture& a) {
    j.at("num_attributes").get_to(a.num_attributes);
    j.at("num_pitches").get_to(a.num_pitches);
    j.at("latent_dim").get_to(a.latent_dim);
    j.at("feature_maps").get_to(a.feature_maps);
    j.at("width_divisor").get_to(a.width_divisor);
    j.at("seed_frames").get_to(a.seed_frames);
    j.at("seed_bins").get_to(a.seed_bins);
    j.at("frames").get_to(a.frames);
    j.at("bins").get_to(a.bins);
}

}  // namespace darksynth
