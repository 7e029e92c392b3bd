// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container. Layout (all integers little-endian):
//
//   "ASDCKPT\0"  u32 version  u64 len  <spec JSON, len bytes>
//   u32 n_arrays, then per array:
//     u32 name_len <name>  u32 rank  u64 dims[rank]  f64 values[prod(dims)]
//
// The spec JSON is dumped with sorted keys, so identical parameters always
// produce identical bytes.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asd/errors.hpp"
#include "asd/model.hpp"

namespace asd {

inline constexpr char kCheckpointMagic[8] = {'A', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  return {
      {"modalities", to_string(s.modalities)},
      {"head", to_string(s.head)},
      {"stack_depth", s.stack_depth},
      {"stem_channels", s.tower.stem_channels},
      {"block_channels", s.tower.block_channels},
      {"block_strides", s.tower.block_strides},
      {"embedding_dim", s.tower.embedding_dim},
      {"fusion_hidden", s.fusion_hidden},
      {"aux_hidden", s.aux_hidden},
      {"gru_units", s.gru_units},
      {"visual_size", s.visual_size},
      {"mel_bins", s.mel_bins},
      {"mel_frames", s.mel_frames},
      {"aux_weight_audio", s.aux_weight_audio},
      {"aux_weight_visual", s.aux_weight_visual},
      {"l2_weight", s.l2_weight},
  };
}

/// Missing keys keep their defaults, so partial configs are accepted.
inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  try {
    if (j.contains("variant")) s = ModelSpec::from_variant(j.at("variant").get<std::string>());
    if (j.contains("modalities") || j.contains("head")) {
      const std::string mod = j.value("modalities", to_string(s.modalities));
      const std::string head = j.value("head", to_string(s.head));
      s = ModelSpec::from_variant(mod + "-" + head + "-f" + std::to_string(j.value("stack_depth", s.stack_depth)), s);
    }
    s.stack_depth = j.value("stack_depth", s.stack_depth);
    s.tower.stem_channels = j.value("stem_channels", s.tower.stem_channels);
    s.tower.block_channels = j.value("block_channels", s.tower.block_channels);
    s.tower.block_strides = j.value("block_strides", s.tower.block_strides);
    s.tower.embedding_dim = j.value("embedding_dim", s.tower.embedding_dim);
    s.fusion_hidden = j.value("fusion_hidden", s.fusion_hidden);
    s.aux_hidden = j.value("aux_hidden", s.aux_hidden);
    s.gru_units = j.value("gru_units", s.gru_units);
    s.visual_size = j.value("visual_size", s.visual_size);
    s.mel_bins = j.value("mel_bins", s.mel_bins);
    s.mel_frames = j.value("mel_frames", s.mel_frames);
    s.aux_weight_audio = j.value("aux_weight_audio", s.aux_weight_audio);
    s.aux_weight_visual = j.value("aux_weight_visual", s.aux_weight_visual);
    s.l2_weight = j.value("l2_weight", s.l2_weight);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad model spec: ") + e.what());
  }
  s.validate();
  return s;
}

struct Checkpoint {
  ModelSpec spec;
  std::vector<double> params;  ///< flat, in the model's layout order

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void put_le(std::ostream& o, std::uint64_t v, int bytes) {
  char b[8];
  for (int i = 0; i < bytes; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  o.write(b, bytes);
}

inline std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), bytes);
  if (in.gcount() != bytes) throw ParseError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const AsdModel<double> model(ck.spec);
  const auto& layout = model.layout();
  if (ck.params.size() != layout.total())
    throw ValidationError("checkpoint has " + std::to_string(ck.params.size()) + " parameters, spec expects " +
                          std::to_string(layout.total()));
  out.write(kCheckpointMagic, 8);
  detail::put_le(out, kCheckpointVersion, 4);
  const std::string js = spec_to_json(ck.spec).dump();
  detail::put_le(out, js.size(), 8);
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  detail::put_le(out, layout.entries().size(), 4);
  for (const auto& e : layout.entries()) {
    detail::put_le(out, e.name.size(), 4);
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_le(out, e.shape.size(), 4);
    for (auto d : e.shape) detail::put_le(out, static_cast<std::uint64_t>(d), 8);
    for (std::size_t i = 0; i < e.size; ++i) detail::put_le(out, std::bit_cast<std::uint64_t>(ck.params[e.offset + i]), 8);
  }
  if (!out) throw Error("checkpoint write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw ParseError("not a checkpoint file");
  const auto version = detail::get_le(in, 4);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto js_len = detail::get_le(in, 8);
  if (js_len > (1u << 20)) throw ParseError("corrupt checkpoint header");
  std::string js(js_len, '\0');
  in.read(js.data(), static_cast<std::streamsize>(js_len));
  if (static_cast<std::uint64_t>(in.gcount()) != js_len) throw ParseError("truncated checkpoint");
  Checkpoint ck;
  try {
    ck.spec = spec_from_json(nlohmann::json::parse(js));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint spec: ") + e.what());
  }
  const AsdModel<double> model(ck.spec);
  const auto& layout = model.layout();
  ck.params.assign(layout.total(), 0.0);
  const auto n = detail::get_le(in, 4);
  if (n != layout.entries().size()) throw ParseError("checkpoint array count does not match its spec");
  for (const auto& e : layout.entries()) {
    const auto name_len = detail::get_le(in, 4);
    if (name_len > 4096) throw ParseError("corrupt checkpoint array name");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (name != e.name) throw ParseError("checkpoint array '" + name + "' where '" + e.name + "' was expected");
    const auto rank = detail::get_le(in, 4);
    if (rank != e.shape.size()) throw ParseError("rank mismatch for " + name);
    for (auto d : e.shape)
      if (detail::get_le(in, 8) != static_cast<std::uint64_t>(d)) throw ParseError("shape mismatch for " + name);
    for (std::size_t i = 0; i < e.size; ++i) ck.params[e.offset + i] = std::bit_cast<double>(detail::get_le(in, 8));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  return read_checkpoint(in);
}

inline std::string checkpoint_bytes(const Checkpoint& ck) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, ck);
  return os.str();
}

}  // namespace asd
