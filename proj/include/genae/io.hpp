#pragma once

// Binary file formats: WAV audio, latent (GENAL) and token (GENAT)
// containers, and model checkpoints (.genck). All little-endian. Writes go to
// a temporary file in the destination directory and are renamed into place.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <json.hpp>
#include <string>
#include <unistd.h>
#include <vector>

#include "genae/dsp.hpp"
#include "genae/layers.hpp"

namespace genae {

namespace io {

// ---------------------------------------------------------------------------
// Byte buffers

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                   std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                      std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    Raw r = std::bit_cast<Raw>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(r >> (8 * i)));
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string what) : buf_(std::move(data)), what_(std::move(what)) {}

  std::size_t size() const { return buf_.size(); }
  std::size_t offset() const { return pos_; }

  // Throws a truncation error naming the byte count the file would need.
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      throw FormatError(what_ + ": truncated file, expected at least " + std::to_string(pos_ + n) + " bytes, got " +
                        std::to_string(buf_.size()));
  }
  void expect_total(std::size_t total) const {
    if (buf_.size() < total)
      throw FormatError(what_ + ": truncated file, expected " + std::to_string(total) + " bytes, got " +
                        std::to_string(buf_.size()));
    if (buf_.size() > total)
      throw FormatError(what_ + ": trailing data, expected " + std::to_string(total) + " bytes, got " +
                        std::to_string(buf_.size()));
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U le() {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                   std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                      std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(U));
    Raw r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r |= static_cast<Raw>(static_cast<Raw>(buf_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<U>(r);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic(const std::string& m) {
    if (buf_.size() < m.size() || std::memcmp(buf_.data(), m.data(), m.size()) != 0)
      throw FormatError(what_ + ": bad magic, expected \"" + m + "\"");
    pos_ = m.size();
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + p.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// Write to a sibling temporary, then rename over the destination.
inline void atomic_write(const std::filesystem::path& p, const std::vector<std::uint8_t>& data) {
  auto dir = p.parent_path();
  if (!dir.empty() && !std::filesystem::exists(dir)) std::filesystem::create_directories(dir);
  auto tmp = p;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw FormatError("write failed for '" + p.string() + "'");
    }
  }
  std::filesystem::rename(tmp, p);
}

inline void atomic_write_text(const std::filesystem::path& p, const std::string& s) {
  atomic_write(p, std::vector<std::uint8_t>(s.begin(), s.end()));
}

}  // namespace io

// ---------------------------------------------------------------------------
// WAV

enum class WavEncoding { pcm16, float32 };

inline std::vector<std::uint8_t> encode_wav(const AudioBuffer& a, WavEncoding enc = WavEncoding::pcm16) {
  a.validate();
  const std::uint16_t ch = static_cast<std::uint16_t>(a.num_channels());
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t block = ch * (bits / 8u);
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(a.length()) * block;
  if (data_bytes > 0xffffffffull - 36) throw FormatError("wav: audio too long for RIFF");
  io::ByteWriter w;
  w.str("RIFF");
  w.le<std::uint32_t>(static_cast<std::uint32_t>(36 + data_bytes));
  w.str("WAVE");
  w.str("fmt ");
  w.le<std::uint32_t>(16);
  w.le<std::uint16_t>(enc == WavEncoding::pcm16 ? 1 : 3);
  w.le<std::uint16_t>(ch);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(a.sample_rate));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(a.sample_rate) * block);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(block));
  w.le<std::uint16_t>(bits);
  w.str("data");
  w.le<std::uint32_t>(static_cast<std::uint32_t>(data_bytes));
  for (std::size_t i = 0; i < a.length(); ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const float x = a.channels[c][i];
      if (enc == WavEncoding::float32) {
        w.le<float>(x);
      } else {
        const double s = std::clamp(std::nearbyint(static_cast<double>(x) * 32768.0), -32768.0, 32767.0);
        w.le<std::int16_t>(static_cast<std::int16_t>(s));
      }
    }
  return std::move(w.buffer());
}

inline AudioBuffer decode_wav(std::vector<std::uint8_t> bytes, const std::string& name = "wav") {
  io::ByteReader r(std::move(bytes), name);
  r.magic("RIFF");
  r.le<std::uint32_t>();
  if (r.str(4) != "WAVE") throw FormatError(name + ": not a WAVE file");
  std::uint16_t tag = 0, ch = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    const std::string id = r.str(4);
    const std::uint32_t len = r.le<std::uint32_t>();
    if (id == "fmt ") {
      r.need(len);
      tag = r.le<std::uint16_t>();
      ch = r.le<std::uint16_t>();
      rate = r.le<std::uint32_t>();
      r.le<std::uint32_t>();
      r.le<std::uint16_t>();
      bits = r.le<std::uint16_t>();
      std::size_t used = 16;
      if (tag == 0xFFFE && len >= 26) {
        r.le<std::uint16_t>();
        r.le<std::uint16_t>();
        r.le<std::uint32_t>();
        tag = r.le<std::uint16_t>();
        used = 26;
      }
      std::vector<std::uint8_t> skip(len - used + (len & 1));
      if (!skip.empty()) r.bytes(skip.data(), skip.size());
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(name + ": data chunk before fmt chunk");
      if (ch == 0) throw FormatError(name + ": zero channels");
      const bool pcm = tag == 1 && (bits == 16 || bits == 24 || bits == 32);
      const bool flt = tag == 3 && bits == 32;
      if (!pcm && !flt)
        throw FormatError(name + ": unsupported encoding (tag " + std::to_string(tag) + ", " + std::to_string(bits) +
                          " bits)");
      r.need(len);
      const std::size_t bps = bits / 8u, frames = len / (bps * ch);
      AudioBuffer a;
      a.sample_rate = static_cast<int>(rate);
      a.channels.assign(ch, std::vector<float>(frames));
      for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t c = 0; c < ch; ++c) {
          float v;
          if (flt) {
            v = r.le<float>();
          } else if (bits == 16) {
            v = static_cast<float>(r.le<std::int16_t>()) / 32768.0f;
          } else if (bits == 24) {
            std::uint8_t b[3];
            r.bytes(b, 3);
            std::int32_t s = static_cast<std::int32_t>(static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                                       (static_cast<std::uint32_t>(b[2]) << 16));
            if (s & 0x800000) s -= 0x1000000;
            v = static_cast<float>(static_cast<double>(s) / 8388608.0);
          } else {
            v = static_cast<float>(static_cast<double>(r.le<std::int32_t>()) / 2147483648.0);
          }
          a.channels[c][i] = v;
        }
      return a;
    } else {
      std::vector<std::uint8_t> skip(len + (len & 1));
      r.bytes(skip.data(), skip.size());
    }
  }
}

inline void write_wav(const std::filesystem::path& p, const AudioBuffer& a, WavEncoding enc = WavEncoding::pcm16) {
  io::atomic_write(p, encode_wav(a, enc));
}

inline AudioBuffer read_wav(const std::filesystem::path& p) { return decode_wav(io::read_file(p), p.string()); }

// ---------------------------------------------------------------------------
// Latent and token containers

inline constexpr std::uint16_t kContainerVersion = 1;

struct LatentFile {
  double rate = 0;
  std::uint32_t dim = 0;
  std::vector<FormatToken> formats;           // one per channel stream
  std::uint64_t original_length = 0;          // samples before padding
  std::uint64_t frames = 0;
  std::vector<std::vector<float>> channels;   // [channel][frames * dim]
};

struct TokenFile {
  double rate = 0;
  std::uint16_t n_codebooks = 0;
  std::uint16_t entries = 0;
  std::vector<FormatToken> formats;
  std::uint64_t original_length = 0;
  std::uint64_t frames = 0;
  std::vector<std::vector<std::uint16_t>> channels;  // [channel][frames * n_codebooks]
};

namespace io {
inline FormatToken read_format(ByteReader& r) {
  const auto v = r.le<std::uint8_t>();
  if (v >= kFormatCount) throw FormatError("container: unknown format token id " + std::to_string(v));
  return static_cast<FormatToken>(v);
}
inline void check_version(ByteReader& r, const std::string& what) {
  const auto v = r.le<std::uint16_t>();
  if (v != kContainerVersion)
    throw IncompatibleError(what + ": unsupported version " + std::to_string(v) + " (expected " +
                            std::to_string(kContainerVersion) + ")");
}
}  // namespace io

inline std::vector<std::uint8_t> encode_latents(const LatentFile& f) {
  if (f.formats.size() != f.channels.size() || f.channels.empty())
    throw std::invalid_argument("latent file: one format token per channel required");
  io::ByteWriter w;
  w.str("GENAL");
  w.le<std::uint16_t>(kContainerVersion);
  w.le<double>(f.rate);
  w.le<std::uint32_t>(f.dim);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(f.channels.size()));
  for (auto t : f.formats) w.le<std::uint8_t>(static_cast<std::uint8_t>(t));
  w.le<std::uint64_t>(f.original_length);
  w.le<std::uint64_t>(f.frames);
  for (const auto& c : f.channels) {
    if (c.size() != f.frames * f.dim) throw std::invalid_argument("latent file: channel size mismatch");
    for (float v : c) w.le<float>(v);
  }
  return std::move(w.buffer());
}

inline LatentFile decode_latents(std::vector<std::uint8_t> bytes, const std::string& name = "latent file") {
  io::ByteReader r(std::move(bytes), name);
  r.magic("GENAL");
  io::check_version(r, name);
  LatentFile f;
  f.rate = r.le<double>();
  f.dim = r.le<std::uint32_t>();
  const auto ch = r.le<std::uint16_t>();
  if (ch == 0) throw FormatError(name + ": zero channels");
  for (std::size_t c = 0; c < ch; ++c) f.formats.push_back(io::read_format(r));
  f.original_length = r.le<std::uint64_t>();
  f.frames = r.le<std::uint64_t>();
  r.expect_total(r.offset() + static_cast<std::size_t>(ch) * f.frames * f.dim * 4);
  f.channels.assign(ch, std::vector<float>(f.frames * f.dim));
  for (auto& c : f.channels)
    for (auto& v : c) v = r.le<float>();
  return f;
}

inline std::vector<std::uint8_t> encode_tokens(const TokenFile& f) {
  if (f.formats.size() != f.channels.size() || f.channels.empty())
    throw std::invalid_argument("token file: one format token per channel required");
  io::ByteWriter w;
  w.str("GENAT");
  w.le<std::uint16_t>(kContainerVersion);
  w.le<double>(f.rate);
  w.le<std::uint16_t>(f.n_codebooks);
  w.le<std::uint16_t>(f.entries);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(f.channels.size()));
  for (auto t : f.formats) w.le<std::uint8_t>(static_cast<std::uint8_t>(t));
  w.le<std::uint64_t>(f.original_length);
  w.le<std::uint64_t>(f.frames);
  for (const auto& c : f.channels) {
    if (c.size() != f.frames * f.n_codebooks) throw std::invalid_argument("token file: channel size mismatch");
    for (auto v : c) w.le<std::uint16_t>(v);
  }
  return std::move(w.buffer());
}

inline TokenFile decode_tokens(std::vector<std::uint8_t> bytes, const std::string& name = "token file") {
  io::ByteReader r(std::move(bytes), name);
  r.magic("GENAT");
  io::check_version(r, name);
  TokenFile f;
  f.rate = r.le<double>();
  f.n_codebooks = r.le<std::uint16_t>();
  f.entries = r.le<std::uint16_t>();
  const auto ch = r.le<std::uint16_t>();
  if (ch == 0) throw FormatError(name + ": zero channels");
  for (std::size_t c = 0; c < ch; ++c) f.formats.push_back(io::read_format(r));
  f.original_length = r.le<std::uint64_t>();
  f.frames = r.le<std::uint64_t>();
  r.expect_total(r.offset() + static_cast<std::size_t>(ch) * f.frames * f.n_codebooks * 2);
  f.channels.assign(ch, std::vector<std::uint16_t>(f.frames * f.n_codebooks));
  for (auto& c : f.channels)
    for (auto& v : c) {
      v = r.le<std::uint16_t>();
      if (f.entries != 0 && v >= f.entries)
        throw FormatError(name + ": code " + std::to_string(v) + " out of range (entries " + std::to_string(f.entries) +
                          ")");
    }
  return f;
}

inline void write_latents(const std::filesystem::path& p, const LatentFile& f) { io::atomic_write(p, encode_latents(f)); }
inline LatentFile read_latents(const std::filesystem::path& p) { return decode_latents(io::read_file(p), p.string()); }
inline void write_tokens(const std::filesystem::path& p, const TokenFile& f) { io::atomic_write(p, encode_tokens(f)); }
inline TokenFile read_tokens(const std::filesystem::path& p) { return decode_tokens(io::read_file(p), p.string()); }

// ---------------------------------------------------------------------------
// Checkpoints: magic "GENAE", u32 version, u32 record length, JSON record,
// u32 tensor count, then per tensor: u32 name length, name, u32 rank,
// u64 extents, float32 data.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json record;  // configuration and metadata
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

inline std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& record, const ParamList<float>& params) {
  io::ByteWriter w;
  w.str("GENAE");
  w.le<std::uint32_t>(kCheckpointVersion);
  const std::string js = record.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(js.size()));
  w.str(js);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.str(p.name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) w.le<std::uint64_t>(e);
    for (float v : p.tensor.data()) w.le<float>(v);
  }
  return std::move(w.buffer());
}

inline Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& name = "checkpoint") {
  io::ByteReader r(std::move(bytes), name);
  r.magic("GENAE");
  const auto ver = r.le<std::uint32_t>();
  if (ver != kCheckpointVersion)
    throw IncompatibleError(name + ": unsupported checkpoint version " + std::to_string(ver));
  Checkpoint ck;
  const auto jl = r.le<std::uint32_t>();
  try {
    ck.record = nlohmann::json::parse(r.str(jl));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(name + ": malformed configuration record: " + e.what());
  }
  const auto n = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto nl = r.le<std::uint32_t>();
    std::string pname = r.str(nl);
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw FormatError(name + ": tensor '" + pname + "' has implausible rank " + std::to_string(rank));
    Shape s(rank);
    for (auto& e : s) e = static_cast<std::size_t>(r.le<std::uint64_t>());
    const std::size_t count = numel(s);
    r.need(count * 4);
    std::vector<float> v(count);
    for (auto& x : v) x = r.le<float>();
    ck.tensors.emplace_back(std::move(pname), Tensor<float>(std::move(s), std::move(v)));
  }
  if (r.offset() != r.size())
    throw FormatError(name + ": trailing data, expected " + std::to_string(r.offset()) + " bytes, got " +
                      std::to_string(r.size()));
  return ck;
}

// Copies checkpoint tensors into params by name; every param must be present
// with a matching shape.
inline void load_params(const Checkpoint& ck, const ParamList<float>& params, const std::string& what = "checkpoint") {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [n, t] : ck.tensors) by_name[n] = &t;
  for (auto p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IncompatibleError(what + ": missing parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw IncompatibleError(what + ": parameter '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                              ", model expects " + shape_str(p.tensor.shape()));
    std::copy(it->second->data().begin(), it->second->data().end(), p.tensor.values().begin());
  }
}

inline void write_checkpoint(const std::filesystem::path& p, const nlohmann::json& record,
                             const ParamList<float>& params) {
  io::atomic_write(p, encode_checkpoint(record, params));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& p) {
  return decode_checkpoint(io::read_file(p), p.string());
}

}  // namespace genae
