#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "darksynth/spectral.hpp"

namespace darksynth {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

enum class Waveshape { AdditiveBright, AdditiveDark, Fm, SquareIsh, Noisy };
inline constexpr int kWaveshapeCount = 5;

std::string to_string(Waveshape w);
Waveshape waveshape_from_string(const std::string& s);
const std::vector<std::string>& waveshape_names();

struct Timbre {
    Waveshape waveshape = Waveshape::AdditiveBright;
    double harmonic_rolloff = 1.0;
    double vibrato_depth = 0.0;  // [0, 1], 1 == half a semitone peak deviation
    double vibrato_rate = 5.0;   // Hz
    double attack = 0.01;        // seconds
    double decay = 1.0;          // seconds, exponential time constant
    double noise_mix = 0.0;      // [0, 1]
};

struct ToyNoteSpec {
    int pitch_midi = 69;
    Timbre timbre;
    double velocity = 1.0;
    std::uint64_t seed = 0;
};

/// Contiguous block of MIDI pitches used as conditioning classes.
struct PitchRange {
    int low = 44;
    int count = 27;

    int high() const { return low + count - 1; }
    bool contains(int midi) const { return midi >= low && midi <= high(); }
    int index_of(int midi) const { return midi - low; }
};

double midi_to_hz(double midi);

void validate(const ToyNoteSpec& spec, const PitchRange& range = {});

/// Deterministic in (spec, sample_rate, duration). Onset at sample 0.
Waveform synth_note(const ToyNoteSpec& spec, int sample_rate = 16000, double duration = 1.0,
                    const PitchRange& range = {});

ToyNoteSpec random_note_spec(int pitch_midi, std::mt19937_64& rng);

/// Names of the analytic toy attributes, in conditioning order.
const std::vector<std::string>& toy_attribute_names();
/// Ground truth for every toy attribute, each in [0, 1].
std::vector<double> ground_truth_attributes(const ToyNoteSpec& spec, const PitchRange& range = {});

enum class Split { Train, Val };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    std::string clip_id;
    std::string wav_path;  // relative to the manifest directory
    int pitch_midi = 0;
    Split split = Split::Train;
    ToyNoteSpec spec;
    std::vector<double> ground_truth;  // aligned with DatasetManifest::attribute_names
};

struct DatasetManifest {
    int schema_version = kSchemaVersion;
    std::string created_with_version = kLibraryVersion;
    SpectralConfig spectral_config;
    PitchRange pitch_range;
    std::vector<std::string> attribute_names;
    std::vector<ManifestEntry> entries;

    std::filesystem::path root;  // directory the manifest lives in; not serialized

    std::vector<const ManifestEntry*> split(Split s) const;
    const ManifestEntry* find(const std::string& clip_id) const;
};

bool operator==(const ManifestEntry& a, const ManifestEntry& b);
bool operator==(const DatasetManifest& a, const DatasetManifest& b);

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct BuildConfig {
    int n_clips = 2700;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    PitchRange pitch_range;
    SpectralConfig spectral;  // normalization is recomputed from the train split
    double val_fraction = 0.1;
};

/// Writes audio/<clip_id>.wav files and manifest.json under cfg.out_dir.
DatasetManifest build_dataset(const BuildConfig& cfg);

struct Clip {
    const ManifestEntry* entry = nullptr;
    Waveform wave;
};

/// Read-only view over a manifest's clips in a seeded order. Audio is read on
/// access, so iteration is cheap to start and safe from several threads.
class DatasetReader {
public:
    DatasetReader(DatasetManifest manifest, std::uint64_t shuffle_seed);

    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return order_.size(); }
    Clip at(std::size_t i) const;

    class iterator {
    public:
        using value_type = Clip;
        using difference_type = std::ptrdiff_t;
        iterator(const DatasetReader* r, std::size_t i) : reader_(r), index_(i) {}
        Clip operator*() const { return reader_->at(index_); }
        iterator& operator++() { ++index_; return *this; }
        bool operator==(const iterator& o) const { return index_ == o.index_; }

    private:
        const DatasetReader* reader_;
        std::size_t index_;
    };
    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, order_.size()}; }

private:
    DatasetManifest manifest_;
    std::vector<std::size_t> order_;
};

DatasetReader load_dataset(const std::filesystem::path& manifest_path, std::uint64_t shuffle_seed = 0);

}  // namespace darksynth
