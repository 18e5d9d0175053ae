#pragma once
//
// On-disk formats.
//
// Model container (little-endian throughout):
//
//   "RCAM" | u16 version | u32 header length | header (UTF-8 JSON)
//   | payload: f32 per element, tensors in manifest order | u32 CRC32(payload)
//
// The header carries the architecture, training snapshot and a tensor
// manifest [{name, dims}], so a container is loadable without outside
// configuration.
//
// Frames are binary PPM (P6, maxval 255) named frame_00000.ppm, ... with
// contiguous indices; a byte v maps to v/255.
//

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "repcam/metrics.hpp"
#include "repcam/repcam.hpp"
#include "repcam/tensor.hpp"
#include "repcam/tvp.hpp"

namespace repcam {

using json = nlohmann::json;

enum class ModelIoErrc { io, bad_magic, unsupported_version, malformed_header, truncated, crc_mismatch, bad_manifest };

inline const char* to_string(ModelIoErrc e) {
  switch (e) {
    case ModelIoErrc::io: return "io";
    case ModelIoErrc::bad_magic: return "bad magic";
    case ModelIoErrc::unsupported_version: return "unsupported version";
    case ModelIoErrc::malformed_header: return "malformed header";
    case ModelIoErrc::truncated: return "truncated";
    case ModelIoErrc::crc_mismatch: return "CRC mismatch";
    case ModelIoErrc::bad_manifest: return "bad manifest";
  }
  return "?";
}

class ModelIoError : public std::runtime_error {
 public:
  ModelIoError(ModelIoErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ModelIoErrc code() const { return code_; }

 private:
  ModelIoErrc code_;
};

class FrameError : public std::runtime_error {
 public:
  FrameError(std::size_t index, const std::string& what)
      : std::runtime_error("frame " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'R', 'C', 'A', 'M'};

struct NamedTensor {
  std::string name;
  Tensor4 tensor;
};

struct ModelContainer {
  json header = json::object();
  std::vector<NamedTensor> tensors;

  const Tensor4& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.tensor;
    throw ModelIoError(ModelIoErrc::bad_manifest, "no tensor named '" + name + "'");
  }
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}
inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in blocks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelIoError(ModelIoErrc::io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelIoError(ModelIoErrc::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelIoError(ModelIoErrc::io, "short write to " + path.string());
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const ModelContainer& model) {
  json header = model.header;
  json manifest = json::array();
  for (const auto& t : model.tensors) {
    const auto& s = t.tensor.shape();
    manifest.push_back({{"name", t.name}, {"dims", {s.n, s.c, s.h, s.w}}});
  }
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put_u16(out, kFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  for (const auto& t : model.tensors)
    for (float v : t.tensor.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  const auto crc = detail::crc32_of(std::span<const std::uint8_t>(out).subspan(payload_start));
  detail::put_u32(out, crc);
  return out;
}

inline ModelContainer deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw ModelIoError(ModelIoErrc::bad_magic, "not a RepCaM model container");
  if (bytes.size() < 10) throw ModelIoError(ModelIoErrc::truncated, "file ends inside the preamble");
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kFormatVersion)
    throw ModelIoError(ModelIoErrc::unsupported_version,
                       "version " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
  const std::size_t header_len = detail::get_u32(bytes, 6);
  if (bytes.size() < 10 + header_len) throw ModelIoError(ModelIoErrc::truncated, "file ends inside the header");

  ModelContainer model;
  try {
    model.header = json::parse(bytes.begin() + 10, bytes.begin() + 10 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw ModelIoError(ModelIoErrc::malformed_header, e.what());
  }
  if (!model.header.contains("tensors") || !model.header["tensors"].is_array())
    throw ModelIoError(ModelIoErrc::malformed_header, "missing tensor manifest");

  std::vector<std::pair<std::string, Shape4>> manifest;
  std::size_t elements = 0;
  try {
    for (const auto& entry : model.header["tensors"]) {
      const auto dims = entry.at("dims").get<std::vector<std::size_t>>();
      if (dims.size() != 4) throw ModelIoError(ModelIoErrc::bad_manifest, "tensor dims must have rank 4");
      const Shape4 s{dims[0], dims[1], dims[2], dims[3]};
      manifest.emplace_back(entry.at("name").get<std::string>(), s);
      elements += s.numel();
    }
  } catch (const json::exception& e) {
    throw ModelIoError(ModelIoErrc::malformed_header, e.what());
  }

  const std::size_t payload_start = 10 + header_len;
  const std::size_t payload_len = elements * 4;
  if (bytes.size() < payload_start + payload_len + 4)
    throw ModelIoError(ModelIoErrc::truncated, "payload needs " + std::to_string(payload_len) + " bytes plus CRC, file has " +
                                                   std::to_string(bytes.size() - payload_start));
  if (bytes.size() != payload_start + payload_len + 4)
    throw ModelIoError(ModelIoErrc::bad_manifest, "trailing bytes after CRC");
  const auto payload = bytes.subspan(payload_start, payload_len);
  if (detail::crc32_of(payload) != detail::get_u32(bytes, payload_start + payload_len))
    throw ModelIoError(ModelIoErrc::crc_mismatch, "payload checksum does not match");

  std::size_t at = 0;
  for (auto& [name, shape] : manifest) {
    std::vector<float> data(shape.numel());
    for (auto& v : data) {
      v = std::bit_cast<float>(detail::get_u32(payload, at));
      at += 4;
    }
    model.tensors.push_back({name, Tensor4(shape, std::move(data))});
  }
  model.header.erase("tensors");
  return model;
}

inline void save_model(const std::filesystem::path& path, const ModelContainer& model) {
  detail::write_file(path, serialize_model(model));
}

inline ModelContainer load_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return deserialize_model(bytes);
}

// ---------------------------------------------------------------------------
// Networks and prompts <-> containers

inline json to_json(const NetConfig& c) {
  return {{"channels", c.channels}, {"blocks", c.blocks}, {"branches", c.branches},
          {"scale", c.scale},       {"global_skip", c.global_skip}};
}

inline NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  c.channels = j.at("channels").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.branches = j.at("branches").get<std::size_t>();
  c.scale = j.at("scale").get<int>();
  c.global_skip = j.at("global_skip").get<bool>();
  return c;
}

struct LoadedModel {
  RepCamNet<float> net;
  std::vector<Tvp<float>> tvps;
  json header;
};

// source_branches: branch count the weights were trained with (differs from
// net.config.branches after fusion).
inline ModelContainer to_container(const RepCamNet<float>& net, const std::vector<Tvp<float>>& tvps,
                                   const json& training = json::object(), std::size_t source_branches = 0) {
  ModelContainer m;
  json arch = to_json(net.config);
  arch["merge"] = "sum";
  arch["multibranch_convs_per_block"] = 2;
  arch["branch_layout"] = "branch i: i 1x1 convs then one 3x3 conv; input zero-padded before the 1x1 chain";
  m.header["format"] = "repcam-model";
  m.header["architecture"] = arch;
  m.header["fused"] = is_single_branch(net);
  m.header["source_branches"] = source_branches ? source_branches : net.config.branches;
  m.header["param_count"] = param_count(net);
  m.header["training"] = training;
  json tvp_info = {{"count", tvps.size()}};
  if (!tvps.empty()) {
    tvp_info["height"] = tvps.front().height();
    tvp_info["width"] = tvps.front().width();
  }
  m.header["tvp"] = tvp_info;
  for_each_param(net, [&](const std::string& name, const Tensor4& t) { m.tensors.push_back({name, t}); });
  for (const auto& p : tvps) m.tensors.push_back({"tvp." + std::to_string(p.chunk), p.values});
  return m;
}

inline LoadedModel from_container(const ModelContainer& m) {
  LoadedModel out;
  out.header = m.header;
  try {
    out.net = build_backbone<float>(net_config_from_json(m.header.at("architecture")), 0);
  } catch (const json::exception& e) {
    throw ModelIoError(ModelIoErrc::malformed_header, e.what());
  }
  for_each_param(out.net, [&](const std::string& name, Tensor4& t) {
    const Tensor4& src = m.get(name);
    if (src.shape() != t.shape())
      throw ModelIoError(ModelIoErrc::bad_manifest, name + " has dims " + src.shape().str() + ", expected " + t.shape().str());
    t = src;
  });
  for (const auto& nt : m.tensors) {
    if (nt.name.rfind("tvp.", 0) != 0) continue;
    out.tvps.push_back(Tvp<float>{nt.tensor, std::stoul(nt.name.substr(4))});
  }
  std::sort(out.tvps.begin(), out.tvps.end(), [](const auto& a, const auto& b) { return a.chunk < b.chunk; });
  return out;
}

inline LoadedModel load_network(const std::filesystem::path& path) { return from_container(load_model(path)); }

// ---------------------------------------------------------------------------
// PPM frames

inline std::vector<std::uint8_t> encode_ppm(const Tensor4& frame) {
  const auto& s = frame.shape();
  detail::require(s.n == 1 && s.c == 3, "encode_ppm: expected a (1,3,H,W) frame, got " + s.str());
  const std::string head = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.reserve(out.size() + 3 * s.plane());
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(to_byte(frame.at(0, c, y, x)));
  return out;
}

// Throws std::runtime_error on malformed input; callers add the frame index.
inline Tensor4 decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string& why) { throw std::runtime_error("malformed PPM: " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("expected a number");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) fail("dimension too large");
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail("magic is not P6");
  pos = 2;
  const std::size_t w = read_int();
  const std::size_t h = read_int();
  const std::size_t maxval = read_int();
  if (maxval != 255) fail("maxval " + std::to_string(maxval) + " (only 255 supported)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing separator after header");
  ++pos;
  if (w == 0 || h == 0) fail("zero dimension");
  if (bytes.size() - pos < 3 * w * h) fail("pixel data truncated");
  Tensor4 out({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(0, c, y, x) = static_cast<float>(bytes[pos++] / 255.0);
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const Tensor4& frame) {
  detail::write_file(path, encode_ppm(frame));
}

inline Tensor4 read_ppm(const std::filesystem::path& path) { return decode_ppm(detail::read_file(path)); }

inline std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu.ppm", index);
  return buf;
}

inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("frame directory " + dir.string() + " does not exist");
  static const std::regex pattern(R"(frame_(\d+)\.ppm)");
  std::vector<std::pair<std::size_t, std::filesystem::path>> found;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoul(m[1].str()), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < found.size(); ++i) {
    if (found[i].first != i) throw FrameError(i, "missing from " + dir.string() + " (indices must be contiguous from 0)");
    out.push_back(found[i].second);
  }
  if (out.empty()) throw std::runtime_error("no frames in " + dir.string());
  return out;
}

inline std::vector<Tensor4> read_frames(const std::filesystem::path& dir) {
  std::vector<Tensor4> frames;
  const auto paths = list_frames(dir);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    try {
      frames.push_back(read_ppm(paths[i]));
    } catch (const ModelIoError& e) {
      throw FrameError(i, e.what());
    } catch (const std::runtime_error& e) {
      throw FrameError(i, e.what());
    }
    if (frames[i].shape() != frames.front().shape())
      throw FrameError(i, "dims " + frames[i].shape().str() + " differ from frame 0 " + frames.front().shape().str());
  }
  return frames;
}

inline void write_frames(const std::filesystem::path& dir, std::span<const Tensor4> frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) write_ppm(dir / frame_name(i), frames[i]);
}

// ---------------------------------------------------------------------------
// Synthetic test video

struct SynthConfig {
  std::size_t frames = 16;
  std::size_t height = 96;
  std::size_t width = 96;
  int shift_x = 1;  // background content displacement per frame
  int shift_y = 0;
  std::size_t block = 24;  // side of the moving texture block
  int block_vx = 2;
  int block_vy = 1;
  std::uint64_t seed = 1;
};

inline json to_json(const SynthConfig& c) {
  return {{"frames", c.frames},   {"height", c.height}, {"width", c.width},
          {"shift_x", c.shift_x}, {"shift_y", c.shift_y}, {"block", c.block},
          {"block_vx", c.block_vx}, {"block_vy", c.block_vy}, {"seed", c.seed}};
}

// Panning sinusoidal gradients plus a moving periodic high-frequency texture
// block; scene parameters are redrawn at the midpoint frame. Frames are
// quantized to the 8-bit grid so they survive a PPM round trip unchanged.
inline std::vector<Tensor4> generate_synthetic_video(const SynthConfig& cfg) {
  detail::require(cfg.frames >= 1 && cfg.height >= cfg.block && cfg.width >= cfg.block,
                  "synthetic video: frame smaller than texture block");
  constexpr double kTwoPi = 6.283185307179586;
  struct Scene {
    double fx1, fy1, fx2, fy2;
    double phase1[3], phase2[3], amp1[3], amp2[3], base[3];
    std::vector<double> tile;  // 3 x tile_n x tile_n
    std::size_t tile_n;
    double bx, by;
  };
  auto make_scene = [&](std::uint64_t salt) {
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + salt);
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * detail::unit_uniform(rng); };
    Scene s{};
    const double period1 = u(5.0, 9.0), angle1 = u(0.0, kTwoPi);
    const double period2 = u(12.0, 20.0), angle2 = u(0.0, kTwoPi);
    s.fx1 = std::cos(angle1) / period1;
    s.fy1 = std::sin(angle1) / period1;
    s.fx2 = std::cos(angle2) / period2;
    s.fy2 = std::sin(angle2) / period2;
    for (int c = 0; c < 3; ++c) {
      s.phase1[c] = u(0.0, kTwoPi);
      s.phase2[c] = u(0.0, kTwoPi);
      s.amp1[c] = u(0.12, 0.2);
      s.amp2[c] = u(0.1, 0.18);
      s.base[c] = u(0.4, 0.6);
    }
    s.tile_n = 4 + static_cast<std::size_t>(rng() % 3);
    s.tile.resize(3 * s.tile_n * s.tile_n);
    for (auto& v : s.tile) v = u(0.05, 0.95);
    s.bx = u(0.0, static_cast<double>(cfg.width - cfg.block));
    s.by = u(0.0, static_cast<double>(cfg.height - cfg.block));
    return s;
  };
  const Scene scenes[2] = {make_scene(1), make_scene(2)};
  const std::size_t mid = cfg.frames / 2;

  std::vector<Tensor4> out;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const bool second = cfg.frames > 1 && t >= mid;
    const Scene& s = scenes[second ? 1 : 0];
    const auto local_t = static_cast<double>(second ? t - mid : t);
    Tensor4 f({1, 3, cfg.height, cfg.width});
    // Block origin wraps inside the frame so it never leaves the picture.
    const auto span_x = static_cast<long>(cfg.width - cfg.block + 1);
    const auto span_y = static_cast<long>(cfg.height - cfg.block + 1);
    const long bx = ((static_cast<long>(s.bx) + cfg.block_vx * static_cast<long>(local_t)) % span_x + span_x) % span_x;
    const long by = ((static_cast<long>(s.by) + cfg.block_vy * static_cast<long>(local_t)) % span_y + span_y) % span_y;
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double X = static_cast<double>(x) - cfg.shift_x * local_t;
        const double Y = static_cast<double>(y) - cfg.shift_y * local_t;
        const auto in_block = static_cast<long>(x) >= bx && static_cast<long>(x) < bx + static_cast<long>(cfg.block) &&
                              static_cast<long>(y) >= by && static_cast<long>(y) < by + static_cast<long>(cfg.block);
        for (std::size_t c = 0; c < 3; ++c) {
          double v;
          if (in_block) {
            const std::size_t ty = static_cast<std::size_t>(static_cast<long>(y) - by) % s.tile_n;
            const std::size_t tx = static_cast<std::size_t>(static_cast<long>(x) - bx) % s.tile_n;
            v = s.tile[(c * s.tile_n + ty) * s.tile_n + tx];
          } else {
            v = s.base[c] + s.amp1[c] * std::sin(kTwoPi * (s.fx1 * X + s.fy1 * Y) + s.phase1[c]) +
                s.amp2[c] * std::sin(kTwoPi * (s.fx2 * X + s.fy2 * Y) + s.phase2[c]);
          }
          f.at(0, c, y, x) = static_cast<float>(v);
        }
      }
    out.push_back(quantize_8bit(f));
  }
  return out;
}

}  // namespace repcam
