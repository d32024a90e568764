// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/wav.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "abt/common.hpp"

namespace abt {

namespace {

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw UserError("not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    uint32_t len = read_u32(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + len > bytes.size()) len = static_cast<uint32_t>(bytes.size() - body);
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }

  if (rate == 0 || channels == 0 || data == nullptr) {
    throw UserError("malformed wav file: " + path);
  }
  const bool pcm16 = (format == 1 && bits == 16);
  const bool f32 = (format == 3 && bits == 32);
  if (!pcm16 && !f32) {
    throw UserError("unsupported wav encoding (want 16-bit PCM or 32-bit float): " + path);
  }

  const size_t bytes_per_sample = bits / 8;
  const size_t frame_bytes = bytes_per_sample * channels;
  const size_t n_frames = frame_bytes == 0 ? 0 : data_len / frame_bytes;

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += static_cast<double>(v);
      }
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void write_wav_pcm16(const std::string& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw UserError("write_wav: invalid sample rate");
  std::string out;
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_bytes = n * 2;
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put_u32(out, 36 + data_bytes);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(w.sample_rate));
  put_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits
  out.append("data");
  put_u32(out, data_bytes);
  for (double s : w.samples) {
    // Symmetric 1/32768 scale so read(write(x)) is within half an LSB.
    const auto q = static_cast<int32_t>(std::lround(std::clamp(s, -1.0, 1.0) * 32768.0));
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(std::clamp(q, -32768, 32767))));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UserError("cannot write wav file: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw UserError("short write: " + path);
}

}  // namespace abt
