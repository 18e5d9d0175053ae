#pragma once
//
// The `repcam` command line tool.
//
// Exit codes: 0 success, 1 usage, 2 validation or verification failure,
// 3 numeric failure. Every subcommand writes a manifest.json describing the
// run next to its outputs; `repcam rerun <manifest>` replays it.
//

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "repcam/fuse.hpp"
#include "repcam/metrics.hpp"
#include "repcam/model_io.hpp"
#include "repcam/pipeline.hpp"

namespace repcam::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kSeedEnv = "REPCAM_SEED";

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kNumeric = 3 };

// Raised for failed checks that are not usage errors (verify-fuse gap).
struct VerifyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t default_seed() {
  if (const char* s = std::getenv(kSeedEnv)) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw CLI::ValidationError(kSeedEnv, std::string("not an unsigned integer: ") + s);
    }
  }
  return 1;
}

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// Manifest next to an output: inside it for directories, <file>.manifest.json
// for files.
inline fs::path manifest_path(const fs::path& output, bool is_dir) {
  return is_dir ? output / "manifest.json" : fs::path(output.string() + ".manifest.json");
}

struct Manifest {
  std::string subcommand;
  json config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<std::string> argv;  // canonical arguments, seed pinned

  json to_json() const {
    return {{"tool", "repcam"},   {"tool_version", kToolVersion}, {"subcommand", subcommand},
            {"config", config},   {"seed", config.value("seed", json())}, {"inputs", inputs},
            {"outputs", outputs}, {"argv", argv}};
  }
};

inline void write_manifest(const fs::path& output, bool is_dir, const Manifest& m) {
  write_json(manifest_path(output, is_dir), m.to_json());
}

// Canonical argv: every option spelled out so a rerun does not depend on
// defaults or the environment.
inline std::vector<std::string> canonical_argv(const CLI::App& sub) {
  std::vector<std::string> out{sub.get_name()};
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
    const std::string flag = opt->get_name(false, true);
    if (flag.rfind("--", 0) != 0) continue;
    if (opt->get_type_size() == 0) {
      if (opt->count() > 0) out.push_back(flag);
      continue;
    }
    if (opt->count() > 0) {
      out.push_back(flag);
      for (const auto& r : opt->reduced_results()) out.push_back(r);
    } else if (!opt->get_default_str().empty()) {
      out.push_back(flag);
      out.push_back(opt->get_default_str());
    }
  }
  return out;
}

inline void log(const std::string& msg) { std::cerr << msg << "\n"; }

inline std::vector<std::uint64_t> frame_file_sizes(const std::vector<fs::path>& paths) {
  std::vector<std::uint64_t> out;
  for (const auto& p : paths) out.push_back(fs::file_size(p));
  return out;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; exceptions are
// rethrown on the caller's thread.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Chunked video on disk: hr/, lr/, chunks.json

inline json chunks_json(const ChunkedVideo& v) {
  json spans = json::array();
  for (const auto& c : v.chunks) spans.push_back({c.begin, c.end});
  return {{"scale", v.scale}, {"frames", v.frames()}, {"chunks", spans}};
}

inline std::vector<ChunkSpan> chunks_from_json(const json& j) {
  std::vector<ChunkSpan> out;
  for (const auto& s : j.at("chunks")) out.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  return out;
}

// HR frames -> crop to a multiple of s -> chunk -> LR on the 8-bit grid
// (the same values a client reads back from the delivered PPM frames).
inline ChunkedVideo prepare_video(std::vector<Tensor4> frames, std::size_t chunks, int scale) {
  for (auto& f : frames) f = crop_to_multiple(f, scale);
  auto v = make_lr(chunk_video(std::move(frames), chunks), scale);
  for (auto& f : v.lr) f = quantize_8bit(f);
  return v;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
};

inline int cmd_synth(const SynthArgs& a, Manifest m) {
  const auto frames = generate_synthetic_video(a.cfg);
  write_frames(a.out, frames);
  m.config = to_json(a.cfg);
  m.outputs = {a.out};
  write_manifest(a.out, true, m);
  log("synth: wrote " + std::to_string(frames.size()) + " frames to " + a.out);
  return kOk;
}

struct ChunkArgs {
  std::string frames, out;
  std::size_t chunks = 9;
  int scale = 2;
};

inline int cmd_chunk(const ChunkArgs& a, Manifest m) {
  const auto v = prepare_video(read_frames(a.frames), a.chunks, a.scale);
  const fs::path out(a.out);
  write_frames(out / "hr", v.hr);
  write_frames(out / "lr", v.lr);
  write_json(out / "chunks.json", chunks_json(v));
  m.config = {{"chunks", a.chunks}, {"scale", a.scale}};
  m.inputs = {a.frames};
  m.outputs = {(out / "hr").string(), (out / "lr").string(), (out / "chunks.json").string()};
  write_manifest(out, true, m);
  log("chunk: " + std::to_string(v.frames()) + " frames in " + std::to_string(v.chunks.size()) + " chunks, LR " +
      v.lr.front().shape().str());
  return kOk;
}

struct TrainArgs {
  std::string frames, out, log_file;
  std::size_t chunks = 9;
  NetConfig net;
  TrainConfig train;
  bool no_tvp = false;
  bool baseline_per_chunk = false;
  std::string sampler = "loss";
};

inline json training_header(const TrainConfig& tc, const ChunkedVideo& v) {
  json h = to_json(tc);
  h["video"] = chunks_json(v);
  h["lr_dims"] = {v.lr.front().shape().h, v.lr.front().shape().w};
  return h;
}

inline int cmd_train(TrainArgs a, Manifest m) {
  a.train.sampler = sampler_from_string(a.sampler);
  a.train.use_tvp = !a.no_tvp && !a.baseline_per_chunk;
  const auto video = prepare_video(read_frames(a.frames), a.chunks, a.net.scale);
  const fs::path out(a.out);
  const fs::path log_path = a.log_file.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log_file);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream records(log_path, std::ios::trunc);
  if (!records) throw std::runtime_error("cannot write " + log_path.string());

  m.config = {{"net", to_json(a.net)}, {"train", to_json(a.train)}, {"chunks", a.chunks},
              {"baseline_per_chunk", a.baseline_per_chunk}, {"seed", a.train.seed}};
  m.inputs = {a.frames};

  if (a.baseline_per_chunk) {
    const auto nets = train_baseline_per_chunk(video, a.net, a.train, [&](std::size_t k, const TrainRecord& r) {
      json j = to_json(r);
      j["chunk"] = k;
      records << j.dump() << "\n";
      log("train[chunk " + std::to_string(k) + "] it " + std::to_string(r.iteration) + " loss " +
          std::to_string(r.loss) + " psnr " + std::to_string(r.psnr_eval));
    });
    fs::create_directories(out);
    for (std::size_t k = 0; k < nets.size(); ++k) {
      auto tc = a.train;
      tc.seed = a.train.seed + k;
      json h = training_header(tc, video.chunk(k));
      h["baseline_chunk"] = k;
      h["baseline_span"] = {video.chunks[k].begin, video.chunks[k].end};
      const auto path = out / ("model_" + std::to_string(k) + ".rcam");
      save_model(path, to_container(nets[k], {}, h));
      m.outputs.push_back(path.string());
    }
    m.outputs.push_back(log_path.string());
    write_manifest(out, true, m);
    log("train: wrote " + std::to_string(nets.size()) + " per-chunk models to " + a.out);
    return kOk;
  }

  auto net = build_backbone<float>(a.net, a.train.seed);
  auto tvps = a.train.use_tvp ? make_tvps(video.chunks.size(), a.train.tvp_size) : std::vector<Tvp<float>>{};
  const auto res = train(net, tvps, video, a.train, [&](const TrainRecord& r) {
    records << to_json(r).dump() << "\n";
    log("train: epoch " + std::to_string(r.epoch) + " it " + std::to_string(r.iteration) + " loss " +
        std::to_string(r.loss) + " psnr_eval " + std::to_string(r.psnr_eval));
  });
  save_model(out, to_container(net, tvps, training_header(a.train, video)));
  m.outputs = {a.out, log_path.string()};
  write_manifest(out, false, m);
  log("train: " + std::to_string(res.iterations) + " iterations, " + std::to_string(param_count(net)) +
      " parameters, wrote " + a.out);
  return kOk;
}

struct FuseArgs {
  std::string model, out;
};

inline int cmd_fuse(const FuseArgs& a, Manifest m) {
  const auto loaded = load_network(a.model);
  const auto fused = fuse_network(loaded.net);
  const std::size_t source = loaded.header.value("source_branches", loaded.net.config.branches);
  save_model(a.out, to_container(fused, loaded.tvps, loaded.header.value("training", json::object()), source));
  std::cout << "parameters before: " << param_count(loaded.net) << "\n"
            << "parameters after:  " << param_count(fused) << "\n";
  m.config = {{"source_branches", source}};
  m.inputs = {a.model};
  m.outputs = {a.out};
  write_manifest(a.out, false, m);
  return kOk;
}

struct VerifyArgs {
  std::string model, fused, lr_dir;
  double tolerance = 1e-4;
  std::size_t samples = 20;
  std::size_t size = 24;
  std::uint64_t seed = 1;
  std::string report;
};

inline int cmd_verify(const VerifyArgs& a, Manifest m) {
  const auto multi = load_network(a.model);
  const auto fused = load_network(a.fused);
  detail::require(multi.net.config.scale == fused.net.config.scale && multi.net.config.channels == fused.net.config.channels &&
                      multi.net.config.blocks == fused.net.config.blocks,
                  "verify-fuse: the two models have different architectures");
  detail::require(is_single_branch(fused.net), "verify-fuse: second model is not single-branch");
  std::vector<Tensor4> inputs;
  if (!a.lr_dir.empty()) {
    inputs = read_frames(a.lr_dir);
  } else {
    std::mt19937_64 rng(a.seed);
    for (std::size_t i = 0; i < a.samples; ++i) {
      Tensor4 x({1, 3, a.size, a.size});
      for (auto& v : x.data()) v = static_cast<float>(detail::unit_uniform(rng));
      inputs.push_back(std::move(x));
    }
  }
  double gap = 0.0, psnr_gap = 0.0;
  for (const auto& x : inputs) {
    const auto ya = sr_forward(multi.net, x);
    const auto yb = sr_forward(fused.net, x);
    gap = std::max(gap, static_cast<double>(max_abs_diff(ya, yb)));
    const auto ref = bicubic_resize(x, Scale::up(multi.net.config.scale));
    const double pa = psnr(clamp01(ya), clamp01(ref)), pb = psnr(clamp01(yb), clamp01(ref));
    if (std::isfinite(pa) && std::isfinite(pb)) psnr_gap = std::max(psnr_gap, std::abs(pa - pb));
  }
  const bool pass = gap <= a.tolerance;
  std::cout << "max |fused - multi-branch|: " << gap << " (tolerance " << a.tolerance << ")\n"
            << "max PSNR gap: " << psnr_gap << " dB\n"
            << (pass ? "PASS" : "FAIL") << "\n";
  const fs::path report = a.report.empty() ? fs::path(a.fused + ".verify.json") : fs::path(a.report);
  write_json(report, {{"max_abs_gap", gap}, {"max_psnr_gap_db", psnr_gap}, {"tolerance", a.tolerance},
                      {"inputs", inputs.size()}, {"pass", pass}});
  m.config = {{"tolerance", a.tolerance}, {"samples", a.samples}, {"size", a.size}, {"seed", a.seed}};
  m.inputs = {a.model, a.fused};
  if (!a.lr_dir.empty()) m.inputs.push_back(a.lr_dir);
  m.outputs = {report.string()};
  write_manifest(report, false, m);
  if (!pass) throw VerifyFailure("fused model deviates by " + std::to_string(gap));
  return kOk;
}

// Chunk spans from the model header; every frame uses the single prompt (or
// none) when the header carries no chunk table.
inline std::vector<ChunkSpan> model_chunks(const LoadedModel& m, std::size_t frames) {
  const auto& t = m.header.value("training", json::object());
  if (t.contains("video")) {
    auto spans = chunks_from_json(t["video"]);
    detail::require(!spans.empty() && spans.back().end == frames,
                    "model was trained on " + std::to_string(spans.empty() ? 0 : spans.back().end) +
                        " frames, input has " + std::to_string(frames));
    return spans;
  }
  return {{0, frames}};
}

struct InferArgs {
  std::string model, lr_dir, out;
  bool no_tvp = false;
  std::size_t parallel = 1;
};

inline int cmd_infer(const InferArgs& a, Manifest m) {
  const auto model = load_network(a.model);
  ChunkedVideo v;
  v.lr = read_frames(a.lr_dir);
  v.hr.resize(v.lr.size());
  v.chunks = model_chunks(model, v.lr.size());
  v.scale = model.net.config.scale;
  const std::vector<Tvp<float>> none;
  const auto& tvps = a.no_tvp ? none : model.tvps;
  detail::require(tvps.empty() || tvps.size() == v.chunks.size(),
                  "model carries " + std::to_string(tvps.size()) + " prompts for " + std::to_string(v.chunks.size()) +
                      " chunks");
  fs::create_directories(a.out);
  parallel_for(v.lr.size(), a.parallel, [&](std::size_t f) {
    write_ppm(fs::path(a.out) / frame_name(f), clamp01(super_resolve(model.net, tvps, v, f)));
  });
  m.config = {{"use_tvp", !a.no_tvp}, {"parallel_frames", a.parallel}};
  m.inputs = {a.model, a.lr_dir};
  m.outputs = {a.out};
  write_manifest(a.out, true, m);
  log("infer: wrote " + std::to_string(v.lr.size()) + " SR frames to " + a.out);
  return kOk;
}

struct EvalArgs {
  std::string sr_dir, hr_dir, lr_dir, model, records;
  bool quantize = false;
  bool no_tvp = false;
  std::size_t parallel = 1;
};

inline int cmd_eval(const EvalArgs& a, Manifest m) {
  const auto hr = read_frames(a.hr_dir);
  std::vector<Tensor4> lr;
  if (!a.lr_dir.empty()) lr = read_frames(a.lr_dir);
  std::vector<Tensor4> sr(hr.size());
  int scale = 0;
  if (!a.model.empty()) {
    detail::require(!lr.empty(), "eval --model needs --lr");
    const auto model = load_network(a.model);
    ChunkedVideo v;
    v.lr = lr;
    v.hr.resize(lr.size());
    v.chunks = model_chunks(model, lr.size());
    v.scale = scale = model.net.config.scale;
    const std::vector<Tvp<float>> none;
    const auto& tvps = a.no_tvp ? none : model.tvps;
    parallel_for(lr.size(), a.parallel, [&](std::size_t f) { sr[f] = clamp01(super_resolve(model.net, tvps, v, f)); });
  } else {
    detail::require(!a.sr_dir.empty(), "eval needs --sr or --model");
    sr = read_frames(a.sr_dir);
  }
  detail::require(sr.size() == hr.size(), "eval: " + std::to_string(sr.size()) + " SR frames vs " +
                                              std::to_string(hr.size()) + " HR frames");
  if (!lr.empty()) {
    detail::require(lr.size() == hr.size(), "eval: LR and HR frame counts differ");
    scale = static_cast<int>(hr.front().shape().h / lr.front().shape().h);
  }
  std::vector<json> rows(hr.size());
  parallel_for(hr.size(), a.parallel, [&](std::size_t f) {
    const Tensor4 s = a.quantize ? quantize_8bit(sr[f]) : sr[f];
    json r = {{"frame", f}, {"psnr", psnr(s, hr[f])}, {"ssim", ssim(s, hr[f])}};
    if (!lr.empty()) r["consistency"] = consistency(lr[f], s, scale);
    rows[f] = r;
  });
  double mp = 0, ms = 0, mc = 0;
  const fs::path records = a.records.empty()
                               ? (a.model.empty() ? fs::path(a.sr_dir) / "eval.jsonl" : fs::path(a.model + ".eval.jsonl"))
                               : fs::path(a.records);
  if (records.has_parent_path()) fs::create_directories(records.parent_path());
  std::ofstream rec(records, std::ios::trunc);
  std::printf("%6s %10s %8s %12s\n", "frame", "PSNR(dB)", "SSIM", "consistency");
  for (const auto& r : rows) {
    rec << r.dump() << "\n";
    const double c = r.value("consistency", std::nan(""));
    std::printf("%6zu %10.4f %8.4f %12.6f\n", r["frame"].get<std::size_t>(), r["psnr"].get<double>(),
                r["ssim"].get<double>(), c);
    mp += r["psnr"].get<double>();
    ms += r["ssim"].get<double>();
    mc += c;
  }
  const double n = static_cast<double>(rows.size());
  json summary = {{"summary", true}, {"psnr", mp / n}, {"ssim", ms / n}, {"frames", rows.size()},
                  {"quantize_8bit", a.quantize}};
  if (!lr.empty()) summary["consistency"] = mc / n;
  rec << summary.dump() << "\n";
  std::printf("%6s %10.4f %8.4f %12.6f\n", "mean", mp / n, ms / n, lr.empty() ? std::nan("") : mc / n);
  m.config = {{"quantize_8bit", a.quantize}, {"use_tvp", !a.no_tvp}, {"parallel_frames", a.parallel}};
  m.inputs = {a.hr_dir};
  for (const auto& p : {a.sr_dir, a.lr_dir, a.model})
    if (!p.empty()) m.inputs.push_back(p);
  m.outputs = {records.string()};
  write_manifest(records, false, m);
  return kOk;
}

struct CostArgs {
  std::string lr_dir, model, baseline_dir, size_file, records;
  std::size_t chunks = 0;  // 0: take the chunk table from the model
};

inline int cmd_cost(const CostArgs& a, Manifest m) {
  for (const auto& p : {a.lr_dir, a.model})
    if (!fs::exists(p)) throw std::runtime_error("missing file: " + p);
  const auto container = load_model(a.model);
  const auto model = from_container(container);
  const auto lr_paths = list_frames(a.lr_dir);
  std::vector<ChunkSpan> spans =
      a.chunks ? chunk_bounds(lr_paths.size(), a.chunks) : model_chunks(model, lr_paths.size());
  const auto frame_sizes = frame_file_sizes(lr_paths);
  std::vector<std::uint64_t> lr_bytes;
  for (const auto& s : spans)
    lr_bytes.push_back(std::accumulate(frame_sizes.begin() + static_cast<std::ptrdiff_t>(s.begin),
                                       frame_sizes.begin() + static_cast<std::ptrdiff_t>(s.end), std::uint64_t{0}));
  std::vector<std::uint64_t> tvp_bytes;
  for (const auto& p : model.tvps) tvp_bytes.push_back(4 * p.values.numel());
  if (tvp_bytes.empty()) tvp_bytes.assign(spans.size(), 0);
  detail::require(tvp_bytes.size() == spans.size(), "cost-report: model has " + std::to_string(model.tvps.size()) +
                                                        " prompts for " + std::to_string(spans.size()) + " chunks");
  const std::uint64_t file_bytes = fs::file_size(a.model);
  const std::uint64_t tvp_total = std::accumulate(tvp_bytes.begin(), tvp_bytes.end(), std::uint64_t{0});
  std::uint64_t shared = file_bytes - tvp_total;  // container minus prompt payload

  std::vector<std::uint64_t> per_chunk;
  bool per_chunk_measured = false;
  if (!a.baseline_dir.empty()) {
    for (std::size_t k = 0; k < spans.size(); ++k) {
      const auto p = fs::path(a.baseline_dir) / ("model_" + std::to_string(k) + ".rcam");
      if (!fs::exists(p)) throw std::runtime_error("missing file: " + p.string());
      per_chunk.push_back(fs::file_size(p));
    }
    per_chunk_measured = true;
  } else {
    per_chunk.assign(spans.size(), shared);
  }
  if (!a.size_file.empty()) {
    const auto j = read_json(a.size_file);
    if (j.contains("lr_bytes")) lr_bytes = j["lr_bytes"].get<std::vector<std::uint64_t>>();
    if (j.contains("model_bytes")) shared = j["model_bytes"].get<std::uint64_t>();
    if (j.contains("tvp_bytes")) tvp_bytes = j["tvp_bytes"].get<std::vector<std::uint64_t>>();
    if (j.contains("per_chunk_model_bytes")) {
      per_chunk = j["per_chunk_model_bytes"].get<std::vector<std::uint64_t>>();
      per_chunk_measured = true;
    } else if (!per_chunk_measured) {
      per_chunk.assign(spans.size(), shared);
    }
  }
  const std::vector<CostReport> reports{
      make_cost_report(DeliveryScheme::per_chunk_models, lr_bytes, per_chunk),
      make_cost_report(DeliveryScheme::shared_model, lr_bytes, {shared}),
      make_cost_report(DeliveryScheme::shared_model_tvp, lr_bytes, {shared}, tvp_bytes)};

  const fs::path records = a.records.empty() ? fs::path(a.model + ".cost.jsonl") : fs::path(a.records);
  if (records.has_parent_path()) fs::create_directories(records.parent_path());
  std::ofstream rec(records, std::ios::trunc);
  std::printf("%-18s %6s %14s %14s %14s  %s\n", "scheme", "chunks", "lr_bytes", "model_bytes", "total_bytes",
              "LR+MODEL (TOTAL) MB");
  for (const auto& r : reports) {
    std::printf("%-18s %6zu %14llu %14llu %14llu  %s\n", to_string(r.scheme), r.chunks(),
                static_cast<unsigned long long>(r.lr_total()), static_cast<unsigned long long>(r.model_total()),
                static_cast<unsigned long long>(r.total()), r.format().c_str());
    rec << json{{"scheme", to_string(r.scheme)}, {"chunks", r.chunks()},         {"lr_bytes", r.lr_bytes},
                {"model_bytes", r.model_bytes},  {"tvp_bytes", r.tvp_bytes},     {"lr_total", r.lr_total()},
                {"model_total", r.model_total()}, {"total", r.total()},          {"formatted", r.format()},
                {"per_chunk_sizes_measured", r.scheme == DeliveryScheme::per_chunk_models ? per_chunk_measured : true}}
               .dump()
        << "\n";
  }
  if (!per_chunk_measured) std::printf("(per-chunk-models assumes each chunk model is the size of the shared model)\n");
  m.config = {{"chunks", spans.size()}};
  m.inputs = {a.lr_dir, a.model};
  for (const auto& p : {a.baseline_dir, a.size_file})
    if (!p.empty()) m.inputs.push_back(p);
  m.outputs = {records.string()};
  write_manifest(records, false, m);
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args);

inline int cmd_rerun(const std::string& manifest_file) {
  const auto j = read_json(manifest_file);
  if (!j.contains("argv") || !j["argv"].is_array() || j["argv"].empty())
    throw CLI::ValidationError("rerun", manifest_file + " has no argv");
  return run(j["argv"].get<std::vector<std::string>>());
}

inline int run(std::vector<std::string> args) {
  CLI::App app{"Content-aware video super-resolution with re-parameterizable branches and per-chunk prompts", "repcam"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::uint64_t env_seed = 1;
  try {
    env_seed = default_seed();
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  }

  SynthArgs synth;
  synth.cfg.seed = env_seed;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic test video");
  s_synth->add_option("--out", synth.out, "output frame directory")->required();
  s_synth->add_option("--frames", synth.cfg.frames, "frame count")->capture_default_str()->check(CLI::PositiveNumber);
  s_synth->add_option("--height", synth.cfg.height, "frame height")->capture_default_str()->check(CLI::PositiveNumber);
  s_synth->add_option("--width", synth.cfg.width, "frame width")->capture_default_str()->check(CLI::PositiveNumber);
  s_synth->add_option("--shift-x", synth.cfg.shift_x, "background motion per frame")->capture_default_str();
  s_synth->add_option("--shift-y", synth.cfg.shift_y, "background motion per frame")->capture_default_str();
  s_synth->add_option("--block", synth.cfg.block, "texture block side")->capture_default_str();
  s_synth->add_option("--seed", synth.cfg.seed, "seed (default $REPCAM_SEED or 1)")->capture_default_str();

  ChunkArgs chunk;
  auto* s_chunk = app.add_subcommand("chunk", "crop, split into chunks and write HR/LR frame sets");
  s_chunk->add_option("--frames", chunk.frames, "HR frame directory")->required()->check(CLI::ExistingDirectory);
  s_chunk->add_option("--out", chunk.out, "output directory")->required();
  s_chunk->add_option("--chunks", chunk.chunks, "chunk count")->capture_default_str()->check(CLI::PositiveNumber);
  s_chunk->add_option("--scale", chunk.scale, "SR scale")->capture_default_str()->check(CLI::IsMember({2, 3, 4}));

  TrainArgs tr;
  tr.train.seed = env_seed;
  auto* s_train = app.add_subcommand("train", "train a multi-branch model and per-chunk prompts");
  s_train->add_option("--frames", tr.frames, "HR frame directory")->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--out", tr.out, "model container (directory with --baseline-per-chunk)")->required();
  s_train->add_option("--log", tr.log_file, "metrics records (default <out>.log.jsonl)");
  s_train->add_option("--scale", tr.net.scale, "SR scale")->capture_default_str()->check(CLI::IsMember({2, 3, 4}));
  s_train->add_option("--chunks", tr.chunks, "chunk count")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--branches", tr.net.branches, "parallel branches per conv")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--channels", tr.net.channels, "feature channels")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--blocks", tr.net.blocks, "residual blocks")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--tvp-size", tr.train.tvp_size, "prompt side in LR pixels")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_flag("--no-tvp", tr.no_tvp, "train without prompts");
  s_train->add_option("--sampler", tr.sampler, "patch sampler")->capture_default_str()->check(CLI::IsMember({"uniform", "loss"}));
  s_train->add_flag("--baseline-per-chunk", tr.baseline_per_chunk, "one single-branch model per chunk, no prompts");
  s_train->add_option("--seed", tr.train.seed, "seed (default $REPCAM_SEED or 1)")->capture_default_str();
  s_train->add_option("--epochs", tr.train.epochs, "epochs")->capture_default_str();
  s_train->add_option("--iterations", tr.train.iterations, "iterations (overrides --epochs when > 0)")->capture_default_str();
  s_train->add_option("--batch", tr.train.batch, "patches per batch")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--patch", tr.train.patch, "HR patch side")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--lr", tr.train.lr, "learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--decay-epoch", tr.train.decay_epoch, "epoch of the learning-rate decay")->capture_default_str();
  s_train->add_option("--decay-factor", tr.train.decay_factor, "learning-rate decay factor")->capture_default_str();
  s_train->add_option("--log-every", tr.train.log_every, "iterations between records (0: per epoch)")->capture_default_str();
  s_train->add_flag("--no-global-skip", [&](std::int64_t) { tr.net.global_skip = false; }, "drop the bicubic skip");

  FuseArgs fu;
  auto* s_fuse = app.add_subcommand("fuse", "collapse branches into a single-branch model");
  s_fuse->add_option("--model", fu.model, "trained container")->required()->check(CLI::ExistingFile);
  s_fuse->add_option("--out", fu.out, "fused container")->required();

  VerifyArgs ve;
  ve.seed = env_seed;
  auto* s_verify = app.add_subcommand("verify-fuse", "check a fused model against its source");
  s_verify->add_option("--model", ve.model, "multi-branch container")->required()->check(CLI::ExistingFile);
  s_verify->add_option("--fused", ve.fused, "fused container")->required()->check(CLI::ExistingFile);
  s_verify->add_option("--lr", ve.lr_dir, "LR frames to test on (default: random inputs)")->check(CLI::ExistingDirectory);
  s_verify->add_option("--tolerance", ve.tolerance, "max elementwise gap")->capture_default_str();
  s_verify->add_option("--samples", ve.samples, "random inputs")->capture_default_str()->check(CLI::PositiveNumber);
  s_verify->add_option("--size", ve.size, "random input side")->capture_default_str()->check(CLI::PositiveNumber);
  s_verify->add_option("--seed", ve.seed, "seed (default $REPCAM_SEED or 1)")->capture_default_str();
  s_verify->add_option("--report", ve.report, "report file (default <fused>.verify.json)");

  InferArgs in;
  auto* s_infer = app.add_subcommand("infer", "super-resolve LR frames");
  s_infer->add_option("--model", in.model, "model container")->required()->check(CLI::ExistingFile);
  s_infer->add_option("--lr", in.lr_dir, "LR frame directory")->required()->check(CLI::ExistingDirectory);
  s_infer->add_option("--out", in.out, "SR frame directory")->required();
  s_infer->add_flag("--no-tvp", in.no_tvp, "ignore prompts");
  s_infer->add_option("--parallel-frames", in.parallel, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "PSNR, SSIM and consistency against HR");
  s_eval->add_option("--hr", ev.hr_dir, "HR frame directory")->required()->check(CLI::ExistingDirectory);
  s_eval->add_option("--sr", ev.sr_dir, "SR frame directory")->check(CLI::ExistingDirectory);
  s_eval->add_option("--lr", ev.lr_dir, "LR frame directory (enables consistency)")->check(CLI::ExistingDirectory);
  s_eval->add_option("--model", ev.model, "super-resolve --lr in float instead of reading --sr")->check(CLI::ExistingFile);
  s_eval->add_option("--records", ev.records, "records file");
  s_eval->add_flag("--quantize-8bit", ev.quantize, "round SR output to 8 bits first");
  s_eval->add_flag("--no-tvp", ev.no_tvp, "ignore prompts (with --model)");
  s_eval->add_option("--parallel-frames", ev.parallel, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  CostArgs co;
  auto* s_cost = app.add_subcommand("cost-report", "delivery cost under each scheme");
  s_cost->add_option("--lr", co.lr_dir, "LR frame directory")->required();
  s_cost->add_option("--model", co.model, "shared (fused) model container")->required();
  s_cost->add_option("--baseline-dir", co.baseline_dir, "per-chunk models from train --baseline-per-chunk");
  s_cost->add_option("--size-file", co.size_file, "JSON overriding measured sizes")->check(CLI::ExistingFile);
  s_cost->add_option("--chunks", co.chunks, "chunk count (default: from the model)")->capture_default_str();
  s_cost->add_option("--records", co.records, "records file (default <model>.cost.jsonl)");

  std::string rerun_manifest;
  auto* s_rerun = app.add_subcommand("rerun", "replay a run from its manifest");
  s_rerun->add_option("manifest", rerun_manifest, "manifest.json")->required()->check(CLI::ExistingFile);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  Manifest m;
  m.subcommand = sub->get_name();
  m.argv = canonical_argv(*sub);
  try {
    if (sub == s_synth) return cmd_synth(synth, m);
    if (sub == s_chunk) return cmd_chunk(chunk, m);
    if (sub == s_train) return cmd_train(tr, m);
    if (sub == s_fuse) return cmd_fuse(fu, m);
    if (sub == s_verify) return cmd_verify(ve, m);
    if (sub == s_infer) return cmd_infer(in, m);
    if (sub == s_eval) return cmd_eval(ev, m);
    if (sub == s_cost) return cmd_cost(co, m);
    if (sub == s_rerun) return cmd_rerun(rerun_manifest);
  } catch (const NumericError& e) {
    const fs::path dump = fs::temp_directory_path() / ("repcam-numeric-failure-" + m.subcommand + ".json");
    try {
      write_json(dump, {{"error", e.what()}, {"argv", m.argv}});
    } catch (...) {
    }
    std::cerr << "numeric failure: " << e.what() << "\ndiagnostics: " << dump.string() << "\n";
    return kNumeric;
  } catch (const VerifyFailure& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kValidation;
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kUsage;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace repcam::cli
