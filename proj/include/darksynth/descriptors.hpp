#pragma once

#include <vector>

#include "darksynth/spectral.hpp"

namespace darksynth {

/// Fixed-length audio descriptor vector computed from a MagIF tensor: band
/// log-spectrum, loudness envelope, pitch salience, harmonic profile,
/// brightness trajectory, noisiness and vibrato statistics. This is the
/// front end shared by the toy tagger and the evaluation classifier.
std::vector<double> audio_descriptors(const MagIFTensor& t, const SpectralConfig& cfg);

std::size_t descriptor_size();

}  // namespace darksynth
