#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "darksynth/spectral.hpp"

namespace darksynth {

/// RIFF/WAVE, PCM16, mono.
std::vector<std::uint8_t> encode_wav(const Waveform& w);
Waveform decode_wav(std::span<const std::uint8_t> bytes);

void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

}  // namespace darksynth
