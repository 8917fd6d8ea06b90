#include <cstring>

#include "darksynth/darkgan.hpp"
#include "darksynth/error.hpp"
#include "darksynth/io.hpp"

namespace darksynth {

namespace {

constexpr char kMagic[8] = {'D', 'K', 'S', 'Y', 'N', 'G', 'E', 'N'};
constexpr int kCheckpointVersion = 1;

}  // namespace

std::string encode_checkpoint(const GeneratorModel& g) {
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& r : g.observed_ranges) ranges.push_back({r.low, r.high});
    const nlohmann::json header = {{"version", kCheckpointVersion},
                                   {"K", g.arch().num_attributes},
                                   {"P", g.arch().num_pitches},
                                   {"spectral_config", g.spectral},
                                   {"T_trained", g.trained_temperature},
                                   {"feature_map_schedule", g.arch().feature_maps},
                                   {"architecture", g.arch()},
                                   {"pitch_range", {{"low", g.pitch_range.low}, {"count", g.pitch_range.count}}},
                                   {"attribute_names", g.attribute_names},
                                   {"defaults", g.defaults},
                                   {"observed_ranges", ranges},
                                   {"parameter_count", g.net.parameter_count()},
                                   {"train_config", g.train_config}};
    const std::string text = header.dump();
    std::string out(kMagic, sizeof kMagic);
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xff));
    out += text;
    for (const auto& block : g.net.parameter_values()) {
        out.append(reinterpret_cast<const char*>(block.data()), block.size() * sizeof(float));
    }
    return out;
}

GeneratorModel decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < sizeof kMagic + 4 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw compatibility_error("not a generator checkpoint (bad magic)");
    }
    std::uint32_t len = 0;
    for (int b = 0; b < 4; ++b) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[sizeof kMagic + b])) << (8 * b);
    const std::size_t body = sizeof kMagic + 4 + len;
    if (bytes.size() < body) throw validation_error("checkpoint header is truncated");
    GeneratorModel g;
    try {
        const auto header = nlohmann::json::parse(bytes.substr(sizeof kMagic + 4, len));
        if (header.at("version").get<int>() != kCheckpointVersion) {
            throw compatibility_error("checkpoint version " + header.at("version").dump() + " is not supported");
        }
        const auto arch = header.at("architecture").get<GanArchitecture>();
        g.net = Generator<float>(arch, 0);
        g.spectral = header.at("spectral_config").get<SpectralConfig>();
        g.pitch_range = {header.at("pitch_range").at("low").get<int>(), header.at("pitch_range").at("count").get<int>()};
        g.attribute_names = header.at("attribute_names").get<std::vector<std::string>>();
        g.trained_temperature = header.at("T_trained").get<double>();
        g.defaults = header.at("defaults").get<std::vector<double>>();
        for (const auto& r : header.at("observed_ranges")) g.observed_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
        g.train_config = header.value("train_config", nlohmann::json::object());
        if (static_cast<int>(g.attribute_names.size()) != arch.num_attributes || g.defaults.size() != g.attribute_names.size()) {
            throw validation_error("checkpoint attribute metadata does not match K");
        }
        if (header.at("K").get<int>() != arch.num_attributes || header.at("P").get<int>() != arch.num_pitches) {
            throw validation_error("checkpoint K/P disagree with its architecture");
        }
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("malformed checkpoint header: ") + e.what());
    }
    const std::size_t expected = g.net.parameter_count() * sizeof(float);
    if (bytes.size() - body != expected) {
        throw validation_error("checkpoint holds " + std::to_string(bytes.size() - body) + " parameter bytes, expected " +
                               std::to_string(expected));
    }
    std::size_t offset = body;
    for (auto& block : g.net.params()) {
        std::memcpy(block.value.data(), bytes.data() + offset, block.value.size() * sizeof(float));
        offset += block.value.size() * sizeof(float);
    }
    return g;
}

void save_checkpoint(const GeneratorModel& g, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(g));
}

GeneratorModel load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw io_error("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file(path));
}

}  // namespace darksynth
