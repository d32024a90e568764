// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "abt/common.hpp"

using nlohmann::json;

namespace abt {

namespace {

constexpr char kMagic[8] = {'A', 'B', 'T', 'C', 'K', 'P', 'T', '1'};

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

uint32_t read_u32_le(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

uint32_t crc32_ieee(const void* data, size_t n, uint32_t seed) {
  static const std::array<uint32_t, 256> table = make_crc_table();
  uint32_t c = seed ^ 0xffffffffu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  // Tensor directory: offsets are relative to the blob section start.
  json dir = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * sizeof(double);
    dir.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }

  json header;
  header["format_version"] = ckpt.format_version;
  header["config"] = ckpt.config;
  header["epoch"] = ckpt.epoch;
  header["step"] = ckpt.step;
  header["extra"] = ckpt.extra;
  header["tensors"] = dir;
  const std::string header_str = header.dump();

  std::string out;
  out.reserve(16 + header_str.size() + offset + 4);
  out.append(kMagic, sizeof(kMagic));
  append_u64(out, header_str.size());
  out.append(header_str);
  for (const auto& [name, t] : ckpt.tensors) {
    (void)name;
    const auto* bytes = reinterpret_cast<const char*>(t.data.data());
    out.append(bytes, t.data.size() * sizeof(double));  // little-endian host
  }
  append_u32(out, crc32_ieee(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UserError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw UserError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UserError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < sizeof(kMagic) + 8 + 4 ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw UserError("corrupt checkpoint: " + path);
  }
  const uint32_t stored_crc = read_u32_le(p + bytes.size() - 4);
  const uint32_t actual_crc = crc32_ieee(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual_crc) throw UserError("corrupt checkpoint: " + path);

  const uint64_t header_len = read_u64(p + 8);
  const size_t header_off = 16;
  if (header_off + header_len + 4 > bytes.size()) throw UserError("corrupt checkpoint: " + path);

  json header;
  try {
    header = json::parse(bytes.begin() + header_off,
                         bytes.begin() + static_cast<std::ptrdiff_t>(header_off + header_len));
  } catch (const json::exception&) {
    throw UserError("corrupt checkpoint: " + path);
  }

  Checkpoint ckpt;
  ckpt.format_version = header.at("format_version").get<int>();
  if (ckpt.format_version != Checkpoint::kFormatVersion) {
    throw UserError("incompatible checkpoint format_version " +
                    std::to_string(ckpt.format_version) + " (expected " +
                    std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  ckpt.config = header.at("config");
  ckpt.epoch = header.at("epoch").get<int64_t>();
  ckpt.step = header.at("step").get<int64_t>();
  ckpt.extra = header.at("extra");

  const size_t blob_off = header_off + header_len;
  const size_t blob_len = bytes.size() - 4 - blob_off;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const uint64_t off = entry.at("offset").get<uint64_t>();
    const uint64_t nbytes = entry.at("nbytes").get<uint64_t>();
    if (off + nbytes > blob_len) throw UserError("corrupt checkpoint: " + path);
    Tensor t(shape);
    if (static_cast<uint64_t>(t.numel()) * sizeof(double) != nbytes) {
      throw UserError("corrupt checkpoint: " + path);
    }
    std::memcpy(t.data.data(), bytes.data() + blob_off + off, nbytes);
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

uint64_t checkpoint_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UserError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size());
}

}  // namespace abt
