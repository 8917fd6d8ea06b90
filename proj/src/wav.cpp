#include "darksynth/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "darksynth/error.hpp"
#include "darksynth/io.hpp"

namespace darksynth {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xffu));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
    return std::memcmp(b.data() + at, tag, 4) == 0;
}

}  // namespace

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_bytes);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
    put_u16(out, 2);
    put_u16(out, 16);
    put_tag(out, "data");
    put_u32(out, data_bytes);
    for (double s : w.samples) {
        const double c = std::clamp(std::isfinite(s) ? s : 0.0, -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
        put_u16(out, static_cast<std::uint16_t>(q));
    }
    return out;
}

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE")) {
        throw invalid_input("not a RIFF/WAVE stream");
    }
    std::size_t at = 12;
    bool have_fmt = false;
    int sample_rate = 0;
    while (at + 8 <= bytes.size()) {
        const std::uint32_t size = get_u32(bytes, at + 4);
        const std::size_t body = at + 8;
        if (body + size > bytes.size()) throw invalid_input("truncated WAV chunk");
        if (tag_is(bytes, at, "fmt ")) {
            if (size < 16) throw invalid_input("short fmt chunk");
            const auto format = get_u16(bytes, body);
            const auto channels = get_u16(bytes, body + 2);
            const auto bits = get_u16(bytes, body + 14);
            if (format != 1 || channels != 1 || bits != 16) {
                throw invalid_input("only mono PCM16 WAV is supported");
            }
            sample_rate = static_cast<int>(get_u32(bytes, body + 4));
            have_fmt = true;
        } else if (tag_is(bytes, at, "data")) {
            if (!have_fmt) throw invalid_input("data chunk before fmt chunk");
            Waveform w;
            w.sample_rate = sample_rate;
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto q = static_cast<std::int16_t>(get_u16(bytes, body + 2 * i));
                w.samples[i] = static_cast<double>(q) / 32767.0;
            }
            return w;
        }
        at = body + size + (size & 1u);
    }
    throw invalid_input("WAV stream has no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
    const auto bytes = encode_wav(w);
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_wav(bytes);
}

}  // namespace darksynth
