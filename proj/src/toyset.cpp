#include "darksynth/toyset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "darksynth/error.hpp"
#include "darksynth/io.hpp"
#include "darksynth/wav.hpp"

namespace darksynth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Parameter ranges for randomly drawn notes. Ground-truth normalization uses
// the same bounds so every attribute spans [0, 1].
constexpr double kRolloffMin = 0.4;
constexpr double kRolloffMax = 3.2;
constexpr double kAttackMin = 0.005;
constexpr double kAttackMax = 0.3;
constexpr double kDecayMin = 0.15;
constexpr double kDecayMax = 2.0;
constexpr double kRateMin = 3.0;
constexpr double kRateMax = 8.0;
constexpr double kVelocityMin = 0.25;
constexpr double kNoiseMax = 0.8;

double unit(double v, double lo, double hi) { return std::clamp((v - lo) / (hi - lo), 0.0, 1.0); }

}  // namespace

const std::vector<std::string>& waveshape_names() {
    static const std::vector<std::string> names = {"additive-bright", "additive-dark", "fm",
                                                   "square-ish", "noisy"};
    return names;
}

std::string to_string(Waveshape w) { return waveshape_names()[static_cast<std::size_t>(w)]; }

Waveshape waveshape_from_string(const std::string& s) {
    const auto& names = waveshape_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == s) return static_cast<Waveshape>(i);
    }
    throw validation_error("unknown waveshape '" + s + "'");
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "val"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    throw validation_error("unknown split '" + s + "'");
}

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

void validate(const ToyNoteSpec& spec, const PitchRange& range) {
    if (!range.contains(spec.pitch_midi)) {
        throw invalid_input("pitch " + std::to_string(spec.pitch_midi) + " outside [" +
                            std::to_string(range.low) + ", " + std::to_string(range.high()) + "]");
    }
    const auto& t = spec.timbre;
    auto in = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; };
    if (!(t.harmonic_rolloff > 0.0) || !std::isfinite(t.harmonic_rolloff)) {
        throw invalid_input("harmonic_rolloff must be > 0");
    }
    if (!in(t.vibrato_depth, 0.0, 1.0)) throw invalid_input("vibrato_depth must be in [0, 1]");
    if (!in(t.vibrato_rate, 0.0, 20.0)) throw invalid_input("vibrato_rate must be in [0, 20] Hz");
    if (!in(t.attack, 0.0, 1.0)) throw invalid_input("attack must be in [0, 1] s");
    if (!in(t.decay, 1e-3, 100.0)) throw invalid_input("decay must be in [0.001, 100] s");
    if (!in(t.noise_mix, 0.0, 1.0)) throw invalid_input("noise_mix must be in [0, 1]");
    if (!in(spec.velocity, 0.0, 1.0)) throw invalid_input("velocity must be in [0, 1]");
}

Waveform synth_note(const ToyNoteSpec& spec, int sample_rate, double duration, const PitchRange& range) {
    validate(spec, range);
    Waveform w = Waveform::silence(sample_rate, duration);
    if (spec.velocity == 0.0) return w;

    const auto& t = spec.timbre;
    const double sr = sample_rate;
    const double f0 = midi_to_hz(spec.pitch_midi);
    const double nyquist = 0.5 * sr;
    const double max_ratio = std::pow(2.0, 0.5 * t.vibrato_depth / 12.0);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Harmonic amplitude table for the additive shapes.
    std::vector<double> amps;
    if (t.waveshape != Waveshape::Fm) {
        for (int h = 1; h * f0 * max_ratio < 0.95 * nyquist; ++h) {
            const bool odd_only = t.waveshape == Waveshape::SquareIsh;
            amps.push_back(odd_only && h % 2 == 0 ? 0.0 : std::pow(static_cast<double>(h), -t.harmonic_rolloff));
        }
    }
    const double fm_index = 4.0 / t.harmonic_rolloff;
    const double vib_phase0 = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);

    std::vector<double> tonal(w.samples.size());
    std::vector<double> envelope(w.samples.size());
    double phase = 0.0;
    for (std::size_t n = 0; n < w.samples.size(); ++n) {
        const double time = static_cast<double>(n) / sr;
        const double vib = 0.5 * t.vibrato_depth / 12.0 * std::sin(kTwoPi * t.vibrato_rate * time + vib_phase0);
        double v = 0.0;
        if (t.waveshape == Waveshape::Fm) {
            const double index = fm_index * std::exp(-time / (0.5 * t.decay));
            v = std::sin(phase + index * std::sin(phase));
        } else {
            for (std::size_t h = 0; h < amps.size(); ++h) {
                if (amps[h] != 0.0) v += amps[h] * std::sin(static_cast<double>(h + 1) * phase);
            }
        }
        tonal[n] = v;
        phase += kTwoPi * f0 * std::pow(2.0, vib) / sr;
        if (phase > 1e4) phase = std::fmod(phase, kTwoPi);

        const double attack_gain = t.attack > 0.0 ? std::min(1.0, time / t.attack) : 1.0;
        const double decay_gain = time > t.attack ? std::exp(-(time - t.attack) / t.decay) : 1.0;
        envelope[n] = attack_gain * decay_gain;
    }

    double tonal_peak = 0.0;
    for (double v : tonal) tonal_peak = std::max(tonal_peak, std::abs(v));
    if (tonal_peak > 0.0) {
        for (double& v : tonal) v /= tonal_peak;
    }
    // One-pole smoothed noise keeps the noisy component below the harmonic range.
    double smooth = 0.0;
    double peak = 0.0;
    for (std::size_t n = 0; n < w.samples.size(); ++n) {
        smooth = 0.6 * smooth + 0.4 * gauss(rng);
        const double mixed = (1.0 - t.noise_mix) * tonal[n] + t.noise_mix * 0.5 * smooth;
        w.samples[n] = mixed * envelope[n];
        peak = std::max(peak, std::abs(w.samples[n]));
    }
    const double gain = peak > 0.0 ? 0.8 * spec.velocity / peak : 0.0;
    for (double& v : w.samples) v *= gain;
    return w;
}

ToyNoteSpec random_note_spec(int pitch_midi, std::mt19937_64& rng) {
    auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    ToyNoteSpec s;
    s.pitch_midi = pitch_midi;
    auto& t = s.timbre;
    t.waveshape = static_cast<Waveshape>(std::uniform_int_distribution<int>(0, kWaveshapeCount - 1)(rng));
    switch (t.waveshape) {
    case Waveshape::AdditiveBright: t.harmonic_rolloff = uni(kRolloffMin, 1.2); break;
    case Waveshape::AdditiveDark: t.harmonic_rolloff = uni(1.8, kRolloffMax); break;
    case Waveshape::Fm: t.harmonic_rolloff = uni(0.8, kRolloffMax); break;
    case Waveshape::SquareIsh: t.harmonic_rolloff = uni(0.8, 2.0); break;
    case Waveshape::Noisy: t.harmonic_rolloff = uni(1.0, 2.5); break;
    }
    t.vibrato_depth = uni(0.0, 1.0) < 0.5 ? 0.0 : uni(0.1, 1.0);
    t.vibrato_rate = uni(kRateMin, kRateMax);
    t.attack = uni(kAttackMin, kAttackMax);
    t.decay = uni(kDecayMin, kDecayMax);
    t.noise_mix = t.waveshape == Waveshape::Noisy ? uni(0.5, kNoiseMax) : uni(0.0, 0.3);
    s.velocity = uni(kVelocityMin, 1.0);
    s.seed = rng();
    return s;
}

const std::vector<std::string>& toy_attribute_names() {
    static const std::vector<std::string> names = {
        "bright",      "dark",      "vibrato",  "fast_vibrato", "slow_vibrato",  "noisy",
        "tonal",       "percussive", "swelling", "sustained",    "staccato",      "plucked",
        "pad",         "low_register", "high_register", "loud",   "quiet",         "metallic",
        "hollow",      "breathy",   "harsh",    "warm",         "shimmering",    "bell",
        "organ",       "wobbly",    "bassy",    "piercing",     "gentle",        "punchy",
        "airy",        "muddy"};
    return names;
}

std::vector<double> ground_truth_attributes(const ToyNoteSpec& spec, const PitchRange& range) {
    validate(spec, range);
    const auto& t = spec.timbre;
    const double b = 1.0 - unit(t.harmonic_rolloff, kRolloffMin, kRolloffMax);
    const double vd = t.vibrato_depth;
    const double vr = unit(t.vibrato_rate, kRateMin, kRateMax);
    const double nm = unit(t.noise_mix, 0.0, kNoiseMax);
    const double an = unit(t.attack, kAttackMin, kAttackMax);
    const double dn = unit(t.decay, kDecayMin, kDecayMax);
    const double pn = range.count > 1 ? static_cast<double>(range.index_of(spec.pitch_midi)) / (range.count - 1) : 0.0;
    const double vn = unit(spec.velocity, kVelocityMin, 1.0);
    const double fm = t.waveshape == Waveshape::Fm ? 1.0 : 0.0;
    const double square = t.waveshape == Waveshape::SquareIsh ? 1.0 : 0.0;

    return {
        b,                              // bright
        1.0 - b,                        // dark
        vd,                             // vibrato
        vd * vr,                        // fast_vibrato
        vd * (1.0 - vr),                // slow_vibrato
        nm,                             // noisy
        1.0 - nm,                       // tonal
        1.0 - an,                       // percussive
        an,                             // swelling
        dn,                             // sustained
        1.0 - dn,                       // staccato
        (1.0 - an) * (1.0 - dn),        // plucked
        an * dn,                        // pad
        1.0 - pn,                       // low_register
        pn,                             // high_register
        vn,                             // loud
        1.0 - vn,                       // quiet
        fm * b,                         // metallic
        square * (0.5 + 0.5 * b),       // hollow
        nm * an,                        // breathy
        b * vn,                         // harsh
        (1.0 - b) * dn,                 // warm
        vd * b,                         // shimmering
        fm * (1.0 - an),                // bell
        (1.0 - nm) * dn * (1.0 - vd),   // organ
        vd * (1.0 - b),                 // wobbly
        (1.0 - pn) * (1.0 - b),         // bassy
        pn * b,                         // piercing
        (1.0 - vn) * an,                // gentle
        vn * (1.0 - an),                // punchy
        nm * pn,                        // airy
        (1.0 - pn) * nm,                // muddy
    };
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == s) out.push_back(&e);
    }
    return out;
}

const ManifestEntry* DatasetManifest::find(const std::string& clip_id) const {
    for (const auto& e : entries) {
        if (e.clip_id == clip_id) return &e;
    }
    return nullptr;
}

namespace {

bool same_spec(const ToyNoteSpec& a, const ToyNoteSpec& b) {
    return a.pitch_midi == b.pitch_midi && a.velocity == b.velocity && a.seed == b.seed &&
           a.timbre.waveshape == b.timbre.waveshape && a.timbre.harmonic_rolloff == b.timbre.harmonic_rolloff &&
           a.timbre.vibrato_depth == b.timbre.vibrato_depth && a.timbre.vibrato_rate == b.timbre.vibrato_rate &&
           a.timbre.attack == b.timbre.attack && a.timbre.decay == b.timbre.decay &&
           a.timbre.noise_mix == b.timbre.noise_mix;
}

nlohmann::json spec_to_json(const ToyNoteSpec& s) {
    return {{"pitch_midi", s.pitch_midi},
            {"velocity", s.velocity},
            {"seed", s.seed},
            {"waveshape", to_string(s.timbre.waveshape)},
            {"harmonic_rolloff", s.timbre.harmonic_rolloff},
            {"vibrato_depth", s.timbre.vibrato_depth},
            {"vibrato_rate", s.timbre.vibrato_rate},
            {"attack", s.timbre.attack},
            {"decay", s.timbre.decay},
            {"noise_mix", s.timbre.noise_mix}};
}

ToyNoteSpec spec_from_json(const nlohmann::json& j) {
    ToyNoteSpec s;
    j.at("pitch_midi").get_to(s.pitch_midi);
    j.at("velocity").get_to(s.velocity);
    j.at("seed").get_to(s.seed);
    s.timbre.waveshape = waveshape_from_string(j.at("waveshape").get<std::string>());
    j.at("harmonic_rolloff").get_to(s.timbre.harmonic_rolloff);
    j.at("vibrato_depth").get_to(s.timbre.vibrato_depth);
    j.at("vibrato_rate").get_to(s.timbre.vibrato_rate);
    j.at("attack").get_to(s.timbre.attack);
    j.at("decay").get_to(s.timbre.decay);
    j.at("noise_mix").get_to(s.timbre.noise_mix);
    return s;
}

}  // namespace

bool operator==(const ManifestEntry& a, const ManifestEntry& b) {
    return a.clip_id == b.clip_id && a.wav_path == b.wav_path && a.pitch_midi == b.pitch_midi &&
           a.split == b.split && same_spec(a.spec, b.spec) && a.ground_truth == b.ground_truth;
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.schema_version == b.schema_version && a.created_with_version == b.created_with_version &&
           a.spectral_config == b.spectral_config && a.pitch_range.low == b.pitch_range.low &&
           a.pitch_range.count == b.pitch_range.count && a.attribute_names == b.attribute_names &&
           a.entries == b.entries;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        nlohmann::json gt = nlohmann::json::object();
        for (std::size_t i = 0; i < m.attribute_names.size(); ++i) gt[m.attribute_names[i]] = e.ground_truth[i];
        entries.push_back({{"clip_id", e.clip_id},
                           {"wav_path", e.wav_path},
                           {"pitch_midi", e.pitch_midi},
                           {"split", to_string(e.split)},
                           {"spec", spec_to_json(e.spec)},
                           {"ground_truth_attributes", gt}});
    }
    return {{"schema_version", m.schema_version},
            {"created_with_version", m.created_with_version},
            {"spectral_config", m.spectral_config},
            {"pitch_range", {{"low", m.pitch_range.low}, {"count", m.pitch_range.count}}},
            {"attribute_names", m.attribute_names},
            {"entries", entries}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        j.at("schema_version").get_to(m.schema_version);
        if (m.schema_version != kSchemaVersion) {
            throw compatibility_error("manifest schema_version " + std::to_string(m.schema_version) +
                                      " is not supported (expected " + std::to_string(kSchemaVersion) + ")");
        }
        j.at("created_with_version").get_to(m.created_with_version);
        m.spectral_config = j.at("spectral_config").get<SpectralConfig>();
        j.at("pitch_range").at("low").get_to(m.pitch_range.low);
        j.at("pitch_range").at("count").get_to(m.pitch_range.count);
        j.at("attribute_names").get_to(m.attribute_names);
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            je.at("clip_id").get_to(e.clip_id);
            je.at("wav_path").get_to(e.wav_path);
            je.at("pitch_midi").get_to(e.pitch_midi);
            e.split = split_from_string(je.at("split").get<std::string>());
            e.spec = spec_from_json(je.at("spec"));
            const auto& gt = je.at("ground_truth_attributes");
            for (const auto& name : m.attribute_names) e.ground_truth.push_back(gt.at(name).get<double>());
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    write_json_atomic(path, manifest_to_json(m));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw io_error("manifest not found: " + path.string());
    auto m = manifest_from_json(read_json(path));
    m.root = path.parent_path();
    return m;
}

DatasetManifest build_dataset(const BuildConfig& cfg) {
    const int classes = cfg.pitch_range.count;
    if (classes <= 0) throw invalid_input("pitch range must contain at least one class");
    if (cfg.n_clips < classes) {
        throw invalid_input("n_clips (" + std::to_string(cfg.n_clips) + ") must be >= number of pitch classes (" +
                            std::to_string(classes) + ")");
    }
    cfg.spectral.validate();

    const auto audio_dir = cfg.out_dir / "audio";
    std::error_code ec;
    std::filesystem::create_directories(audio_dir, ec);
    if (ec) throw io_error("cannot create " + audio_dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.spectral_config = cfg.spectral;
    m.pitch_range = cfg.pitch_range;
    m.attribute_names = toy_attribute_names();
    m.root = cfg.out_dir;

    // Balanced per pitch class; remainder clips go to the lowest classes.
    std::vector<int> per_class(static_cast<std::size_t>(classes), cfg.n_clips / classes);
    for (int i = 0; i < cfg.n_clips % classes; ++i) ++per_class[static_cast<std::size_t>(i)];

    std::mt19937_64 rng(cfg.seed);
    int clip_index = 0;
    for (int c = 0; c < classes; ++c) {
        const int count = per_class[static_cast<std::size_t>(c)];
        const int n_val = static_cast<int>(std::lround(cfg.val_fraction * count));
        std::vector<int> slots(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) slots[static_cast<std::size_t>(i)] = i;
        std::shuffle(slots.begin(), slots.end(), rng);
        std::vector<bool> is_val(static_cast<std::size_t>(count), false);
        for (int i = 0; i < n_val; ++i) is_val[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])] = true;

        for (int i = 0; i < count; ++i) {
            ManifestEntry e;
            char id[32];
            std::snprintf(id, sizeof(id), "clip_%05d", clip_index++);
            e.clip_id = id;
            e.wav_path = "audio/" + e.clip_id + ".wav";
            e.pitch_midi = cfg.pitch_range.low + c;
            e.split = is_val[static_cast<std::size_t>(i)] ? Split::Val : Split::Train;
            e.spec = random_note_spec(e.pitch_midi, rng);
            e.ground_truth = ground_truth_attributes(e.spec, cfg.pitch_range);
            m.entries.push_back(std::move(e));
        }
    }

    double log_min = std::numeric_limits<double>::infinity();
    double log_max = -std::numeric_limits<double>::infinity();
    for (const auto& e : m.entries) {
        const auto w = synth_note(e.spec, cfg.spectral.sample_rate, cfg.spectral.duration, cfg.pitch_range);
        const auto bytes = encode_wav(w);
        write_file_atomic(cfg.out_dir / e.wav_path,
                          std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        if (e.split == Split::Train) {
            const auto r = log_magnitude_range(decode_wav(bytes), cfg.spectral);
            log_min = std::min(log_min, r.min);
            log_max = std::max(log_max, r.max);
        }
    }
    if (std::isfinite(log_min) && log_max > log_min) {
        m.spectral_config.norm = {log_min, log_max};
    }
    save_manifest(m, cfg.out_dir / "manifest.json");
    return m;
}

DatasetReader::DatasetReader(DatasetManifest manifest, std::uint64_t shuffle_seed)
    : manifest_(std::move(manifest)) {
    order_.resize(manifest_.entries.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle_seed != 0) {
        std::mt19937_64 rng(shuffle_seed);
        std::shuffle(order_.begin(), order_.end(), rng);
    }
}

Clip DatasetReader::at(std::size_t i) const {
    const auto& e = manifest_.entries[order_.at(i)];
    const auto path = manifest_.root / e.wav_path;
    if (!std::filesystem::exists(path)) {
        throw io_error("missing audio for clip " + e.clip_id + ": " + path.string());
    }
    return {&e, read_wav(path)};
}

DatasetReader load_dataset(const std::filesystem::path& manifest_path, std::uint64_t shuffle_seed) {
    return DatasetReader(load_manifest(manifest_path), shuffle_seed);
}

}  // namespace darksynth
