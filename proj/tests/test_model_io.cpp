#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "repcam/fuse.hpp"
#include "repcam/model_io.hpp"
#include "test_util.hpp"

using namespace repcam;
using repcam::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("repcam_test_model_io_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<float> flatten(const RepCamNet<float>& net) {
  std::vector<float> out;
  for_each_param(net, [&](const std::string&, const Tensor4& t) { out.insert(out.end(), t.data().begin(), t.data().end()); });
  return out;
}

}  // namespace

TEST(ModelContainer, RoundTripDefaultNetBitEqual) {
  const auto net = build_backbone<float>({}, 11);
  std::vector<Tvp<float>> tvps;
  std::mt19937_64 rng(1);
  for (std::size_t k = 0; k < 3; ++k) tvps.push_back({random_tensor<float>({1, 3, 8, 8}, rng), k});
  const auto path = scratch("rt") / "model.rcam";
  save_model(path, to_container(net, tvps, {{"lr", 5e-5}}));
  const auto loaded = load_network(path);
  EXPECT_EQ(loaded.net.config, net.config);
  EXPECT_EQ(flatten(loaded.net), flatten(net));
  ASSERT_EQ(loaded.tvps.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(loaded.tvps[k].values, tvps[k].values);
    EXPECT_EQ(loaded.tvps[k].chunk, k);
  }
  EXPECT_EQ(loaded.header["training"]["lr"], 5e-5);
  // Saving the loaded model again reproduces the file byte for byte.
  EXPECT_EQ(serialize_model(to_container(loaded.net, loaded.tvps, loaded.header["training"])),
            detail::read_file(path));
}

TEST(ModelContainer, PayloadLengthMatchesManifest) {
  const auto net = build_backbone<float>({4, 1, 2, 2, true}, 2);
  const auto bytes = serialize_model(to_container(net, {}));
  const std::size_t header_len = detail::get_u32(bytes, 6);
  EXPECT_EQ(bytes.size(), 10 + header_len + param_count(net) * 4 + 4);
}

TEST(ModelContainer, LittleEndianFloats) {
  ModelContainer m;
  m.tensors.push_back({"x", Tensor4({1, 1, 1, 1}, 1.0f)});
  const auto bytes = serialize_model(m);
  const std::size_t at = 10 + detail::get_u32(bytes, 6);
  // 1.0f = 0x3F800000
  EXPECT_EQ(bytes[at], 0x00);
  EXPECT_EQ(bytes[at + 1], 0x00);
  EXPECT_EQ(bytes[at + 2], 0x80);
  EXPECT_EQ(bytes[at + 3], 0x3F);
}

namespace {

ModelIoErrc error_code(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_model(bytes);
  } catch (const ModelIoError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ModelIoErrc::io;
}

}  // namespace

TEST(ModelContainer, DistinctErrors) {
  const auto good = serialize_model(to_container(build_backbone<float>({4, 1, 2, 2, true}, 3), {}));
  auto flipped = good;
  flipped[flipped.size() - 20] ^= 0x01;
  EXPECT_EQ(error_code(flipped), ModelIoErrc::crc_mismatch);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(error_code(magic), ModelIoErrc::bad_magic);
  auto version = good;
  version[4] = 2;
  EXPECT_EQ(error_code(version), ModelIoErrc::unsupported_version);
  EXPECT_EQ(error_code({good.begin(), good.end() - 9}), ModelIoErrc::truncated);
  EXPECT_EQ(error_code({good.begin(), good.begin() + 20}), ModelIoErrc::truncated);
  auto header = good;
  header[10] = '!';
  EXPECT_EQ(error_code(header), ModelIoErrc::malformed_header);
  EXPECT_THROW(load_model(scratch("missing") / "nope.rcam"), ModelIoError);
}

TEST(ModelContainer, FusedHeaderRecordsTopology) {
  const auto net = build_backbone<float>({8, 2, 3, 2, true}, 4);
  const auto fused = fuse_network(net);
  const auto m = deserialize_model(serialize_model(to_container(fused, {}, {}, net.config.branches)));
  EXPECT_EQ(m.header["architecture"]["branches"], 1);
  EXPECT_EQ(m.header["architecture"]["merge"], "sum");
  EXPECT_EQ(m.header["source_branches"], 3);
  EXPECT_EQ(m.header["fused"], true);
  EXPECT_EQ(m.header["param_count"], expected_param_count({8, 2, 1, 2, true}));
}

TEST(Ppm, ByteRoundTripAndRounding) {
  Tensor4 f({1, 3, 16, 16});
  std::size_t i = 0;
  for (auto& v : f.data()) v = static_cast<float>((i++ * 37 % 256) / 255.0);
  EXPECT_EQ(decode_ppm(encode_ppm(f)), f);
  const Tensor4 black({1, 3, 4, 5}, 0.0f), white({1, 3, 4, 5}, 1.0f);
  EXPECT_EQ(decode_ppm(encode_ppm(black)), black);
  EXPECT_EQ(decode_ppm(encode_ppm(white)), white);
  const auto half = encode_ppm(Tensor4({1, 3, 1, 1}, 0.5f));
  EXPECT_EQ(half.back(), 128);
}

TEST(Ppm, RejectsMalformed) {
  const std::string p3 = "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(decode_ppm(std::vector<std::uint8_t>(p3.begin(), p3.end())), std::runtime_error);
  const std::string deep = "P6\n1 1\n65535\n";
  EXPECT_THROW(decode_ppm(std::vector<std::uint8_t>(deep.begin(), deep.end())), std::runtime_error);
  const std::string shortdata = "P6\n2 2\n255\nabc";
  EXPECT_THROW(decode_ppm(std::vector<std::uint8_t>(shortdata.begin(), shortdata.end())), std::runtime_error);
  const std::string comment = "P6\n# hi\n1 1\n255\nabc";
  EXPECT_NO_THROW(decode_ppm(std::vector<std::uint8_t>(comment.begin(), comment.end())));
}

TEST(FrameStore, RoundTripAndErrorsNameIndex) {
  const auto dir = scratch("frames");
  std::mt19937_64 rng(5);
  std::vector<Tensor4> frames;
  for (int k = 0; k < 3; ++k) frames.push_back(quantize_8bit(random_tensor<float>({1, 3, 6, 8}, rng, 0.0, 1.0)));
  write_frames(dir, frames);
  EXPECT_EQ(read_frames(dir), frames);

  write_ppm(dir / frame_name(1), Tensor4({1, 3, 6, 9}));
  try {
    read_frames(dir);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.index(), 1u);
  }
  fs::remove(dir / frame_name(1));
  try {
    read_frames(dir);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.index(), 1u);
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  SynthConfig cfg;
  cfg.frames = 4;
  const auto a = generate_synthetic_video(cfg);
  const auto b = generate_synthetic_video(cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 2;
  EXPECT_NE(generate_synthetic_video(cfg)[0], a[0]);
}

TEST(Synthetic, TranslationPeakAtConfiguredShift) {
  SynthConfig cfg;
  cfg.frames = 6;
  cfg.shift_x = 2;
  cfg.shift_y = 1;
  const auto v = generate_synthetic_video(cfg);
  // Correlate the green channel of frames 1 and 2 over shifts in [-4,4]
  // using the mean squared difference on the overlap.
  int best_dx = 99, best_dy = 99;
  double best = 1e9;
  for (int dy = -4; dy <= 4; ++dy)
    for (int dx = -4; dx <= 4; ++dx) {
      double acc = 0.0;
      std::size_t n = 0;
      for (int y = 8; y < 88; ++y)
        for (int x = 8; x < 88; ++x) {
          const double d = v[2].at(0, 1, y + dy, x + dx) - v[1].at(0, 1, y, x);
          acc += d * d;
          ++n;
        }
      if (acc / n < best) {
        best = acc / n;
        best_dx = dx;
        best_dy = dy;
      }
    }
  EXPECT_EQ(best_dx, 2);
  EXPECT_EQ(best_dy, 1);
}

TEST(Synthetic, SceneChangeEnergySpike) {
  SynthConfig cfg;
  cfg.frames = 16;
  const auto v = generate_synthetic_video(cfg);
  std::vector<double> energy;
  for (std::size_t t = 1; t < v.size(); ++t) energy.push_back(mse(v[t], v[t - 1]));
  const auto peak = std::max_element(energy.begin(), energy.end()) - energy.begin();
  EXPECT_EQ(static_cast<std::size_t>(peak) + 1, cfg.frames / 2);
  for (std::size_t i = 0; i < energy.size(); ++i)
    if (i + 1 != cfg.frames / 2) EXPECT_LT(energy[i] * 2, energy[static_cast<std::size_t>(peak)]);
}
