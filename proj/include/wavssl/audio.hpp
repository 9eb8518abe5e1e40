// wavssl/audio.hpp
//
// Mono waveform container, RIFF/WAVE reading and writing (PCM16 and IEEE
// float32), Kaiser windowed-sinc resampling and dataset manifests.

// Copyright 2026  The wavssl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wavssl/tensor.hpp"

namespace wavssl {

class AudioFormatError : public std::runtime_error {
 public:
  explicit AudioFormatError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class ManifestError : public std::runtime_error {
 public:
  explicit ManifestError(const std::string& what) : std::runtime_error(what) {}
};

/// Mono waveform; samples nominally in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  std::uint32_t sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  double rms() const {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (double s : samples) acc += s * s;
    return std::sqrt(acc / static_cast<double>(samples.size()));
  }

  double energy() const {
    double acc = 0.0;
    for (double s : samples) acc += s * s;
    return acc;
  }
};

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void push_u32le(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}
inline void push_u16le(std::vector<unsigned char>& v, std::uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

}  // namespace detail

inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw AudioFormatError(path + ": missing RIFF/WAVE header");
  }

  std::uint16_t audio_format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    char id[5] = {0};
    std::memcpy(id, bytes.data() + pos, 4);
    const std::uint32_t chunk_size = detail::read_u32le(bytes.data() + pos + 4);
    pos += 8;
    if (pos + chunk_size > bytes.size()) {
      throw AudioFormatError(path + ": truncated '" + id + "' chunk");
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw AudioFormatError(path + ": short 'fmt ' chunk");
      audio_format = detail::read_u16le(bytes.data() + pos);
      channels = detail::read_u16le(bytes.data() + pos + 2);
      sample_rate = detail::read_u32le(bytes.data() + pos + 4);
      bits = detail::read_u16le(bytes.data() + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + pos;
      data_size = chunk_size;
    }
    pos += chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }

  if (!have_fmt) throw AudioFormatError(path + ": no 'fmt ' chunk");
  if (data == nullptr) throw AudioFormatError(path + ": no 'data' chunk");
  if (channels != 1) {
    throw AudioFormatError(path + ": expected mono, 'fmt ' chunk declares " +
                           std::to_string(channels) + " channels");
  }
  if (sample_rate == 0) throw AudioFormatError(path + ": zero sample rate in 'fmt ' chunk");

  AudioBuffer out;
  out.sample_rate = sample_rate;
  if (audio_format == 1 && bits == 16) {
    const std::size_t n = data_size / 2;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int16_t s = static_cast<std::int16_t>(detail::read_u16le(data + 2 * i));
      out.samples[i] = static_cast<double>(s) / 32768.0;
    }
  } else if (audio_format == 3 && bits == 32) {
    const std::size_t n = data_size / 4;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::uint32_t u = detail::read_u32le(data + 4 * i);
      std::memcpy(&f, &u, 4);
      out.samples[i] = static_cast<double>(f);
    }
  } else {
    throw AudioFormatError(path + ": unsupported codec in 'fmt ' chunk (format " +
                           std::to_string(audio_format) + ", " + std::to_string(bits) + " bit)");
  }
  for (double s : out.samples) {
    if (!std::isfinite(s)) throw AudioFormatError(path + ": non-finite sample in 'data' chunk");
  }
  return out;
}

/// Writes `buffer` to a WAV file. Returns the number of samples clamped when
/// encoding to PCM16 (the clipping record demanded by the write path).
inline std::size_t write_wav(const AudioBuffer& buffer, const std::string& path,
                             WavEncoding encoding = WavEncoding::pcm16) {
  std::vector<unsigned char> payload;
  std::size_t clipped = 0;
  if (encoding == WavEncoding::pcm16) {
    payload.reserve(buffer.samples.size() * 2);
    for (double s : buffer.samples) {
      double scaled = std::nearbyint(s * 32768.0);
      if (scaled > 32767.0) {
        scaled = 32767.0;
        ++clipped;
      } else if (scaled < -32768.0) {
        scaled = -32768.0;
        ++clipped;
      }
      detail::push_u16le(payload, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    }
  } else {
    payload.reserve(buffer.samples.size() * 4);
    for (double s : buffer.samples) {
      const float f = static_cast<float>(s);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      detail::push_u32le(payload, u);
    }
  }

  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t block_align = bits / 8;
  std::vector<unsigned char> out;
  out.reserve(44 + payload.size());
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::push_u32le(out, static_cast<std::uint32_t>(36 + payload.size()));
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  detail::push_u32le(out, 16);
  detail::push_u16le(out, encoding == WavEncoding::pcm16 ? 1 : 3);
  detail::push_u16le(out, 1);  // mono
  detail::push_u32le(out, buffer.sample_rate);
  detail::push_u32le(out, buffer.sample_rate * block_align);
  detail::push_u16le(out, block_align);
  detail::push_u16le(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::push_u32le(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
  return clipped;
}

namespace detail {

inline double bessel_i0(double x) {
  // power series; converges quickly for the argument range Kaiser needs
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-14) break;
  }
  return sum;
}

}  // namespace detail

/// Band-limited resampling: windowed sinc with a Kaiser window (beta = 8.6),
/// cutoff at 0.95 of the Nyquist frequency of the lower rate.
inline AudioBuffer resample(const AudioBuffer& in, std::uint32_t target_rate) {
  if (target_rate == 0) throw ContractError("resample: target rate must be positive");
  if (target_rate == in.sample_rate) return in;
  const double ratio = static_cast<double>(target_rate) / in.sample_rate;
  const std::size_t out_len =
      static_cast<std::size_t>(std::llround(static_cast<double>(in.samples.size()) * ratio));
  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.assign(out_len, 0.0);
  if (in.samples.empty() || out_len == 0) return out;

  constexpr double beta = 8.6;
  constexpr int base_half = 32;
  const double stretch = std::max(1.0, 1.0 / ratio);   // widen kernel when downsampling
  const double cutoff = 0.95 * 0.5 * std::min(1.0, ratio);  // cycles per input sample
  const double half = base_half * stretch;
  const double inv_i0 = 1.0 / detail::bessel_i0(beta);
  const auto& x = in.samples;
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());

  for (std::size_t n = 0; n < out_len; ++n) {
    const double pos = static_cast<double>(n) / ratio;
    const auto k0 = static_cast<std::ptrdiff_t>(std::ceil(pos - half));
    const auto k1 = static_cast<std::ptrdiff_t>(std::floor(pos + half));
    double acc = 0.0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(k0, 0); k <= std::min(k1, n_in - 1); ++k) {
      const double d = static_cast<double>(k) - pos;
      const double u = 2.0 * cutoff * d;
      const double sinc = u == 0.0 ? 1.0 : std::sin(M_PI * u) / (M_PI * u);
      const double t = d / half;
      const double win = detail::bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - t * t))) * inv_i0;
      acc += x[static_cast<std::size_t>(k)] * 2.0 * cutoff * sinc * win;
    }
    out.samples[n] = acc;
  }
  return out;
}

struct ManifestEntry {
  std::string path;
  std::size_t num_samples = 0;
};

/// Manifest format: first line is the root directory, every further line is
/// `relative_path<TAB>num_samples`. With `strict`, each file is opened and
/// its length checked against the declared count.
inline std::vector<ManifestEntry> load_manifest(const std::string& path, bool strict = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::string root;
  if (!std::getline(in, root)) {
    throw ManifestError(path + ":1: empty manifest, expected root directory line");
  }
  if (!root.empty() && root.back() == '\r') root.pop_back();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ManifestError(path + ":" + std::to_string(line_no) + ": expected TAB separator");
    }
    const std::string rel = line.substr(0, tab);
    const std::string count_str = line.substr(tab + 1);
    std::size_t parsed = 0;
    std::size_t count = 0;
    try {
      count = std::stoull(count_str, &parsed);
    } catch (const std::exception&) {
      parsed = 0;
    }
    if (parsed != count_str.size() || count_str.empty()) {
      throw ManifestError(path + ":" + std::to_string(line_no) + ": non-numeric sample count '" +
                          count_str + "'");
    }
    std::filesystem::path joined = std::filesystem::path(rel).is_absolute()
                                       ? std::filesystem::path(rel)
                                       : std::filesystem::path(root) / rel;
    entries.push_back(ManifestEntry{joined.string(), count});
  }
  if (strict) {
    for (const auto& e : entries) {
      const AudioBuffer b = read_wav(e.path);
      if (b.samples.size() != e.num_samples) {
        throw ManifestError(path + ": " + e.path + " declares " + std::to_string(e.num_samples) +
                            " samples but holds " + std::to_string(b.samples.size()));
      }
    }
  }
  return entries;
}

}  // namespace wavssl
