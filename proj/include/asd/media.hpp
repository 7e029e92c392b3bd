// SPDX-License-Identifier: Apache-2.0
//
// In-memory images and waveforms plus the small file formats used for media
// on disk: binary PPM (P6, possibly several images concatenated in one file)
// and 16-bit PCM mono WAV.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>
#include <vector>

#include "asd/errors.hpp"

namespace asd {

/// Interleaved RGB, values in [0,1], row-major.
struct RgbImage {
  int width = 0, height = 0;
  std::vector<float> data;

  RgbImage() = default;
  RgbImage(int w, int h, float fill = 0.f) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  float* at(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* at(int x, int y) const { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Single channel, values in [0,1], row-major.
struct GrayImage {
  int width = 0, height = 0;
  std::vector<float> data;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.f) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct Waveform {
  int sample_rate = 16000;
  std::vector<float> samples;
};

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

// ------------------------------------------------------------------- PPM

inline void write_ppm(std::ostream& out, const RgbImage& img) {
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace detail {

inline int read_ppm_int(std::istream& in) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw ParseError("malformed PPM header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;  // the single whitespace after the number has been consumed
}

}  // namespace detail

/// Reads every image of a P6 stream (one or more concatenated images).
inline std::vector<RgbImage> read_ppm_stream(std::istream& in) {
  std::vector<RgbImage> out;
  while (true) {
    int c = in.get();
    while (c != EOF && std::isspace(c)) c = in.get();
    if (c == EOF) break;
    if (c != 'P' || in.get() != '6') throw ParseError("not a binary PPM (P6) stream");
    const int w = detail::read_ppm_int(in), h = detail::read_ppm_int(in), maxv = detail::read_ppm_int(in);
    if (w <= 0 || h <= 0 || maxv != 255) throw ParseError("unsupported PPM dimensions or depth");
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ParseError("truncated PPM data");
    RgbImage img(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.f;
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<RgbImage> read_ppm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  return read_ppm_stream(in);
}

// ------------------------------------------------------------------- WAV

namespace detail {

inline void put_u32(std::ostream& o, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  o.write(b, 4);
}
inline void put_u16(std::ostream& o, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  o.write(b, 2);
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

inline void write_wav(std::ostream& out, const Waveform& w) {
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  out.write("RIFF", 4);
  detail::put_u32(out, 36 + 2 * n);
  out.write("WAVEfmt ", 8);
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out.write("data", 4);
  detail::put_u32(out, 2 * n);
  for (float s : w.samples) {
    // Same scale as the reader, so samples on the 1/32768 grid round-trip exactly.
    const long q = std::clamp(std::lround(static_cast<double>(s) * 32768.0), -32768L, 32767L);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
}

/// Reads 16-bit PCM WAV; multi-channel input is averaged to mono.
inline Waveform read_wav(std::istream& in) {
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw ParseError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0, bits = 0;
  Waveform w;
  bool have_fmt = false;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t size = detail::get_u32(buf.data() + pos + 4);
    const std::uint8_t* body = buf.data() + pos + 8;
    if (pos + 8 + size > buf.size()) throw ParseError("truncated WAV chunk");
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
      if (size < 16 || detail::get_u16(body) != 1) throw ParseError("only PCM WAV is supported");
      channels = detail::get_u16(body + 2);
      w.sample_rate = static_cast<int>(detail::get_u32(body + 4));
      bits = detail::get_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      if (!have_fmt || bits != 16 || channels < 1) throw ParseError("only 16-bit PCM WAV is supported");
      const std::size_t frames = size / (2u * channels);
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        float acc = 0;
        for (int c = 0; c < channels; ++c)
          acc += static_cast<std::int16_t>(detail::get_u16(body + 2 * (i * channels + c))) / 32768.f;
        w.samples[i] = acc / channels;
      }
      return w;
    }
    pos += 8 + size + (size & 1);
  }
  throw ParseError("WAV file has no data chunk");
}

inline Waveform read_wav_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  return read_wav(in);
}

}  // namespace asd
