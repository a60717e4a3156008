#pragma once

#include <string>

#include "wsed/audio.hpp"

namespace wsed {

// Reads a RIFF/WAVE file. Accepts mono 16-bit signed PCM or 32-bit float;
// anything else (including multichannel audio) is rejected.
AudioClip read_wav(const std::string& path);

// Writes mono 16-bit signed PCM, clamping samples to [-1, 1].
void write_wav(const std::string& path, const AudioClip& clip);

}  // namespace wsed
