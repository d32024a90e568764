// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "abt/dsp.hpp"

namespace abt {

/// Reads a RIFF/WAVE file. Accepts 16-bit PCM and 32-bit IEEE float;
/// multi-channel input is mixed to mono by averaging. Throws UserError on
/// malformed or unsupported files.
Waveform read_wav(const std::string& path);

/// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] before
/// quantization so synthetic clips round-trip deterministically.
void write_wav_pcm16(const std::string& path, const Waveform& w);

}  // namespace abt
