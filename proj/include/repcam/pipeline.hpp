#pragma once
//
// Content-aware training: chunking, LR generation, patch sampling and the
// joint Adam loop over network weights and per-chunk prompts.
//

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "repcam/error.hpp"
#include "repcam/grad.hpp"
#include "repcam/metrics.hpp"
#include "repcam/repcam.hpp"
#include "repcam/tensor.hpp"
#include "repcam/tvp.hpp"

namespace repcam {

struct ChunkSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool operator==(const ChunkSpan&) const = default;
};

// Chunk k holds frames [floor(kF/N), floor((k+1)F/N)).
inline std::vector<ChunkSpan> chunk_bounds(std::size_t frames, std::size_t n) {
  detail::require(n >= 1, "chunk count must be at least 1");
  detail::require(n <= frames, "chunk count " + std::to_string(n) + " exceeds frame count " + std::to_string(frames));
  std::vector<ChunkSpan> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back({k * frames / n, (k + 1) * frames / n});
  return out;
}

struct ChunkedVideo {
  std::vector<Tensor4> hr;
  std::vector<Tensor4> lr;  // empty until make_lr
  std::vector<ChunkSpan> chunks;
  int scale = 1;

  std::size_t frames() const { return hr.size(); }
  std::size_t chunk_of(std::size_t frame) const {
    for (std::size_t k = 0; k < chunks.size(); ++k)
      if (frame >= chunks[k].begin && frame < chunks[k].end) return k;
    throw ShapeError("frame " + std::to_string(frame) + " outside every chunk");
  }
  // Frames of one chunk as a standalone single-chunk video.
  ChunkedVideo chunk(std::size_t k) const {
    ChunkedVideo out;
    const auto& c = chunks.at(k);
    out.hr.assign(hr.begin() + static_cast<std::ptrdiff_t>(c.begin), hr.begin() + static_cast<std::ptrdiff_t>(c.end));
    if (!lr.empty())
      out.lr.assign(lr.begin() + static_cast<std::ptrdiff_t>(c.begin), lr.begin() + static_cast<std::ptrdiff_t>(c.end));
    out.chunks = {{0, c.size()}};
    out.scale = scale;
    return out;
  }
};

inline ChunkedVideo chunk_video(std::vector<Tensor4> frames, std::size_t n) {
  detail::require(!frames.empty(), "chunk_video: no frames");
  for (const auto& f : frames)
    detail::require(f.shape() == frames.front().shape(), "chunk_video: frames differ in dims");
  ChunkedVideo v;
  v.chunks = chunk_bounds(frames.size(), n);
  v.hr = std::move(frames);
  return v;
}

// Top-left crop so both spatial dims are multiples of s.
inline Tensor4 crop_to_multiple(const Tensor4& frame, int s) {
  const auto& sh = frame.shape();
  const auto su = static_cast<std::size_t>(s);
  return crop(frame, 0, 0, sh.h / su * su, sh.w / su * su);
}

inline ChunkedVideo make_lr(ChunkedVideo v, int s) {
  detail::require(supported_scale(Scale::down(s)), "make_lr: unsupported scale " + std::to_string(s));
  const auto& sh = v.hr.front().shape();
  detail::require(sh.h % static_cast<std::size_t>(s) == 0 && sh.w % static_cast<std::size_t>(s) == 0,
                  "make_lr: HR dims " + sh.str() + " not divisible by " + std::to_string(s) + " (crop first)");
  v.lr.clear();
  for (const auto& f : v.hr) v.lr.push_back(bicubic_resize(f, Scale::down(s)));
  v.scale = s;
  return v;
}

enum class SamplerKind { uniform, loss_weighted };

inline const char* to_string(SamplerKind k) { return k == SamplerKind::uniform ? "uniform" : "loss"; }

inline SamplerKind sampler_from_string(const std::string& s) {
  if (s == "uniform") return SamplerKind::uniform;
  if (s == "loss" || s == "loss-weighted") return SamplerKind::loss_weighted;
  throw ShapeError("unknown sampler '" + s + "' (expected uniform or loss)");
}

// HR origin of one training patch.
struct PatchRef {
  std::size_t frame = 0;
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t cell = 0;
  bool operator==(const PatchRef&) const = default;
};

namespace detail {

// Unbiased draw from [0, n) that does not depend on the standard library's
// distribution implementation.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

}  // namespace detail

// Patch sampler. The loss-weighted strategy keeps an EMA of per-patch L1
// loss on a grid of 48-pixel HR cells (cell chosen by patch center) and
// draws cells with probability proportional to EMA + floor, floor = 10% of
// the mean EMA; the patch origin is then uniform inside the cell.
class PatchSampler {
 public:
  PatchSampler(const ChunkedVideo& video, std::size_t patch, SamplerKind kind, std::size_t cell_size = 48,
               double decay = 0.9, double floor_fraction = 0.1)
      : kind_(kind), decay_(decay), floor_fraction_(floor_fraction) {
    detail::require(video.frames() > 0, "sampler: empty video");
    detail::require(patch > 0 && cell_size > 0, "sampler: patch and cell size must be positive");
    const auto& s = video.hr.front().shape();
    const auto step = static_cast<std::size_t>(video.scale);
    detail::require(patch % step == 0, "sampler: patch " + std::to_string(patch) + " not a multiple of scale");
    detail::require(patch <= s.h && patch <= s.w,
                    "sampler: patch " + std::to_string(patch) + " larger than frame " + s.str());
    for (std::size_t y = 0; y + patch <= s.h; y += step) ys_.push_back(y);
    for (std::size_t x = 0; x + patch <= s.w; x += step) xs_.push_back(x);
    frames_ = video.frames();
    // Group aligned origins by the cell their center falls into.
    auto group = [&](const std::vector<std::size_t>& origins) {
      std::vector<std::vector<std::size_t>> cells;
      for (auto o : origins) {
        const std::size_t c = (o + patch / 2) / cell_size;
        if (cells.size() <= c) cells.resize(c + 1);
        cells[c].push_back(o);
      }
      std::erase_if(cells, [](const auto& v) { return v.empty(); });
      return cells;
    };
    cell_ys_ = group(ys_);
    cell_xs_ = group(xs_);
    ema_.assign(frames_ * cell_ys_.size() * cell_xs_.size(), 1.0);
  }

  SamplerKind kind() const { return kind_; }
  std::size_t aligned_positions() const { return frames_ * ys_.size() * xs_.size(); }
  std::size_t cells() const { return ema_.size(); }
  const std::vector<double>& ema() const { return ema_; }
  void set_ema(std::vector<double> e) {
    detail::require(e.size() == ema_.size(), "sampler: EMA size mismatch");
    ema_ = std::move(e);
  }

  std::vector<double> probabilities() const {
    const double mean = std::accumulate(ema_.begin(), ema_.end(), 0.0) / static_cast<double>(ema_.size());
    const double floor = floor_fraction_ * mean;
    std::vector<double> p(ema_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = ema_[i] + floor);
    for (auto& v : p) v /= total;
    return p;
  }

  std::vector<PatchRef> sample(std::size_t batch, std::mt19937_64& rng) const {
    std::vector<PatchRef> out;
    out.reserve(batch);
    if (kind_ == SamplerKind::uniform) {
      for (std::size_t b = 0; b < batch; ++b) {
        PatchRef r;
        r.frame = detail::uniform_index(rng, frames_);
        r.y = ys_[detail::uniform_index(rng, ys_.size())];
        r.x = xs_[detail::uniform_index(rng, xs_.size())];
        r.cell = cell_index(r.frame, r.y, r.x);
        out.push_back(r);
      }
      return out;
    }
    const auto p = probabilities();
    std::vector<double> cdf(p.size());
    std::partial_sum(p.begin(), p.end(), cdf.begin());
    for (std::size_t b = 0; b < batch; ++b) {
      const double u = detail::unit_uniform(rng) * cdf.back();
      const auto cell = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      const std::size_t c = std::min(cell, p.size() - 1);
      const std::size_t per_frame = cell_ys_.size() * cell_xs_.size();
      const std::size_t frame = c / per_frame;
      const std::size_t cy = (c % per_frame) / cell_xs_.size();
      const std::size_t cx = c % cell_xs_.size();
      const auto& cys = cell_ys_[cy];
      const auto& cxs = cell_xs_[cx];
      PatchRef r{frame, cys[detail::uniform_index(rng, cys.size())], cxs[detail::uniform_index(rng, cxs.size())], c};
      out.push_back(r);
    }
    return out;
  }

  void update(const PatchRef& r, double loss) { ema_[r.cell] = decay_ * ema_[r.cell] + (1.0 - decay_) * loss; }

 private:
  std::size_t cell_index(std::size_t frame, std::size_t y, std::size_t x) const {
    auto find = [](const std::vector<std::vector<std::size_t>>& cells, std::size_t o) {
      for (std::size_t c = 0; c < cells.size(); ++c)
        if (std::find(cells[c].begin(), cells[c].end(), o) != cells[c].end()) return c;
      return std::size_t{0};
    };
    return (frame * cell_ys_.size() + find(cell_ys_, y)) * cell_xs_.size() + find(cell_xs_, x);
  }

  SamplerKind kind_;
  double decay_;
  double floor_fraction_;
  std::size_t frames_ = 0;
  std::vector<std::size_t> ys_, xs_;
  std::vector<std::vector<std::size_t>> cell_ys_, cell_xs_;
  std::vector<double> ema_;
};

struct TrainConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t decay_epoch = 200;
  double decay_factor = 0.5;
  std::size_t batch = 64;
  std::size_t epochs = 1;
  std::size_t iterations = 0;  // nonzero overrides epochs
  std::size_t patch = 48;
  std::size_t tvp_size = 48;
  bool use_tvp = true;
  SamplerKind sampler = SamplerKind::loss_weighted;
  std::uint64_t seed = 1;
  std::size_t eval_stride = 10;  // held-out frames: every eval_stride-th
  std::size_t log_every = 0;     // iterations between log records; 0 = once per epoch
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"optimizer", "adam"},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"decay_epoch", c.decay_epoch},
          {"decay_factor", c.decay_factor},
          {"loss", "l1"},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"iterations", c.iterations},
          {"patch", c.patch},
          {"tvp_size", c.tvp_size},
          {"use_tvp", c.use_tvp},
          {"sampler", to_string(c.sampler)},
          {"seed", c.seed},
          {"eval_stride", c.eval_stride},
          {"log_every", c.log_every}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.decay_epoch = j.value("decay_epoch", c.decay_epoch);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.iterations = j.value("iterations", c.iterations);
  c.patch = j.value("patch", c.patch);
  c.tvp_size = j.value("tvp_size", c.tvp_size);
  c.use_tvp = j.value("use_tvp", c.use_tvp);
  c.sampler = sampler_from_string(j.value("sampler", std::string(to_string(c.sampler))));
  c.seed = j.value("seed", c.seed);
  c.eval_stride = j.value("eval_stride", c.eval_stride);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

inline std::size_t iterations_per_epoch(std::size_t aligned_positions, std::size_t batch) {
  return (aligned_positions + batch - 1) / batch;
}

// Adam over a fixed list of float tensors.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor4*>& params, const std::vector<const Tensor4*>& grads, double lr) {
    detail::require(params.size() == grads.size(), "adam: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->numel(), 0.0f);
        v_.emplace_back(p->numel(), 0.0f);
      }
    }
    detail::require(m_.size() == params.size(), "adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k]->data();
      const auto g = grads[k]->data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<float>(b1_ * m[i] + (1.0 - b1_) * gi);
        v[i] = static_cast<float>(b2_ * v[i] + (1.0 - b2_) * gi * gi);
        const double mh = m[i] / c1, vh = v[i] / c2;
        p[i] = static_cast<float>(p[i] - lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainRecord {
  std::size_t epoch = 0;
  std::size_t iteration = 0;  // iterations completed
  double loss = 0.0;          // mean batch L1 since the previous record
  double psnr_eval = 0.0;     // held-out frames, prompted, clamped to [0,1]
  double lr = 0.0;
};

inline nlohmann::json to_json(const TrainRecord& r) {
  return {{"epoch", r.epoch}, {"iteration", r.iteration}, {"loss", r.loss}, {"psnr_eval", r.psnr_eval}, {"lr", r.lr}};
}

struct TrainResult {
  std::vector<TrainRecord> log;
  std::size_t iterations = 0;
  std::size_t iterations_per_epoch = 0;
};

inline std::vector<Tvp<float>> make_tvps(std::size_t chunks, std::size_t size) {
  std::vector<Tvp<float>> out;
  for (std::size_t k = 0; k < chunks; ++k) out.push_back(Tvp<float>::zeros(size, size, k));
  return out;
}

inline std::vector<std::size_t> eval_frames(std::size_t frames, std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < frames; f += std::max<std::size_t>(stride, 1)) out.push_back(f);
  return out;
}

// SR output for one LR frame with its chunk's prompt (if any).
inline Tensor4 super_resolve(const RepCamNet<float>& net, const std::vector<Tvp<float>>& tvps,
                             const ChunkedVideo& video, std::size_t frame) {
  const Tensor4& lr = video.lr.at(frame);
  if (tvps.empty()) return sr_forward(net, lr);
  return sr_forward(net, apply_tvp(lr, tvps.at(video.chunk_of(frame))));
}

// Mean full-frame L1 (unclamped) and PSNR (clamped) over the given frames.
struct FrameScores {
  double l1 = 0.0;
  double psnr = 0.0;
  double bicubic_psnr = 0.0;
};

inline FrameScores score_frames(const RepCamNet<float>& net, const std::vector<Tvp<float>>& tvps,
                                const ChunkedVideo& video, const std::vector<std::size_t>& frames) {
  FrameScores s;
  for (auto f : frames) {
    const Tensor4 sr = super_resolve(net, tvps, video, f);
    const Tensor4& hr = video.hr[f];
    double acc = 0.0;
    for (std::size_t i = 0; i < sr.numel(); ++i) acc += std::abs(static_cast<double>(sr.data()[i]) - hr.data()[i]);
    s.l1 += acc / static_cast<double>(sr.numel());
    s.psnr += psnr(clamp01(sr), hr);
    s.bicubic_psnr += psnr(clamp01(bicubic_resize(video.lr[f], Scale::up(video.scale))), hr);
  }
  const auto n = static_cast<double>(frames.size());
  s.l1 /= n;
  s.psnr /= n;
  s.bicubic_psnr /= n;
  return s;
}

inline std::vector<std::size_t> all_frames(const ChunkedVideo& v) {
  std::vector<std::size_t> out(v.frames());
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

// Joint training of net and prompts. tvps must be empty when cfg.use_tvp is
// false, otherwise hold one prompt per chunk.
inline TrainResult train(RepCamNet<float>& net, std::vector<Tvp<float>>& tvps, const ChunkedVideo& video,
                         const TrainConfig& cfg, const std::function<void(const TrainRecord&)>& on_record = {}) {
  detail::require(!video.lr.empty(), "train: video has no LR frames (run make_lr)");
  detail::require(net.config.scale == video.scale, "train: net scale " + std::to_string(net.config.scale) +
                                                       " does not match video scale " + std::to_string(video.scale));
  detail::require(cfg.batch > 0, "train: batch must be positive");
  if (cfg.use_tvp) {
    detail::require(tvps.size() == video.chunks.size(), "train: need one prompt per chunk, have " +
                                                            std::to_string(tvps.size()) + " for " +
                                                            std::to_string(video.chunks.size()) + " chunks");
  } else {
    detail::require(tvps.empty(), "train: prompts given but use_tvp is off");
  }
  const auto s = static_cast<std::size_t>(video.scale);
  const auto& lr_shape = video.lr.front().shape();
  std::vector<TvpOffsets> offsets;
  for (const auto& p : tvps) offsets.push_back(center_offsets(lr_shape.h, lr_shape.w, p.height(), p.width()));

  PatchSampler sampler(video, cfg.patch, cfg.sampler);
  std::mt19937_64 rng(cfg.seed ^ 0x5A4D504C45525321ull);
  Adam adam(cfg.beta1, cfg.beta2, cfg.eps);

  TrainResult result;
  result.iterations_per_epoch = iterations_per_epoch(sampler.aligned_positions(), cfg.batch);
  const std::size_t total = cfg.iterations ? cfg.iterations : cfg.epochs * result.iterations_per_epoch;
  const std::size_t log_every = cfg.log_every ? cfg.log_every : result.iterations_per_epoch;
  const auto held_out = eval_frames(video.frames(), cfg.eval_stride);
  const std::size_t lp = cfg.patch / s;

  std::vector<Tensor4*> params;
  for_each_param(net, [&](const std::string&, Tensor4& t) { params.push_back(&t); });
  for (auto& p : tvps) params.push_back(&p.values);

  double loss_acc = 0.0;
  std::size_t loss_count = 0;
  double last_grad_norm = 0.0;
  for (std::size_t it = 0; it < total; ++it) {
    const std::size_t epoch = it / result.iterations_per_epoch;
    const double lr_now = cfg.lr * (epoch >= cfg.decay_epoch ? cfg.decay_factor : 1.0);
    const auto refs = sampler.sample(cfg.batch, rng);

    std::vector<Tensor4> lr_items, hr_items;
    std::vector<PromptUse> uses;
    for (const auto& r : refs) {
      lr_items.push_back(crop(video.lr[r.frame], r.y / s, r.x / s, lp, lp));
      hr_items.push_back(crop(video.hr[r.frame], r.y, r.x, cfg.patch, cfg.patch));
      if (cfg.use_tvp) {
        const std::size_t k = video.chunk_of(r.frame);
        uses.push_back({static_cast<std::ptrdiff_t>(k),
                        static_cast<std::ptrdiff_t>(offsets[k].dh) - static_cast<std::ptrdiff_t>(r.y / s),
                        static_cast<std::ptrdiff_t>(offsets[k].dw) - static_cast<std::ptrdiff_t>(r.x / s)});
      }
    }
    const Tensor4 lr_batch = stack_batch<float>(lr_items);
    const Tensor4 hr_batch = stack_batch<float>(hr_items);

    Tape<float> tape;
    TapeOps<float> ops(tape);
    NodeId x = tape.leaf(lr_batch, false);
    std::vector<NodeId> prompt_nodes;
    if (cfg.use_tvp) {
      for (const auto& p : tvps) prompt_nodes.push_back(ops.param(p.values));
      x = ad::apply_prompts(tape, x, prompt_nodes, uses);
    }
    const NodeId y = sr_forward(ops, net, x);
    const NodeId target = tape.leaf(hr_batch, false);
    const NodeId loss = ad::l1_loss(tape, y, target);
    const double loss_value = tape.value(loss).data()[0];
    if (!std::isfinite(loss_value)) {
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << it << " (epoch " << epoch << "); lr " << lr_now
          << "; gradient norm at previous step " << last_grad_norm;
      throw NumericError(msg.str());
    }
    const auto grads = tape.backward(loss);

    std::vector<const Tensor4*> gptrs;
    double sq = 0.0;
    for (auto* p : params) {
      const Tensor4& g = grads[ops.node_of(*p)];
      for (float v : g.data()) sq += static_cast<double>(v) * v;
      gptrs.push_back(&g);
    }
    last_grad_norm = std::sqrt(sq);
    if (!std::isfinite(last_grad_norm)) {
      std::ostringstream msg;
      msg << "non-finite gradient at iteration " << it << "; lr " << lr_now << "; loss " << loss_value;
      throw NumericError(msg.str());
    }
    adam.step(params, gptrs, lr_now);

    if (sampler.kind() == SamplerKind::loss_weighted) {
      const Tensor4& out = tape.value(y);
      const std::size_t per = out.shape().c * out.shape().plane();
      for (std::size_t b = 0; b < refs.size(); ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i)
          acc += std::abs(static_cast<double>(out.data()[b * per + i]) - hr_batch.data()[b * per + i]);
        sampler.update(refs[b], acc / static_cast<double>(per));
      }
    }

    loss_acc += loss_value;
    ++loss_count;
    if ((it + 1) % log_every == 0 || it + 1 == total) {
      TrainRecord rec;
      rec.epoch = epoch;
      rec.iteration = it + 1;
      rec.loss = loss_acc / static_cast<double>(loss_count);
      rec.psnr_eval = score_frames(net, tvps, video, held_out).psnr;
      rec.lr = lr_now;
      result.log.push_back(rec);
      if (on_record) on_record(rec);
      loss_acc = 0.0;
      loss_count = 0;
    }
  }
  result.iterations = total;
  return result;
}

// One independent single-branch, prompt-free model per chunk; chunk k uses
// seed + k for both initialization and sampling.
inline std::vector<RepCamNet<float>> train_baseline_per_chunk(
    const ChunkedVideo& video, NetConfig net_config, TrainConfig cfg,
    const std::function<void(std::size_t, const TrainRecord&)>& on_record = {}) {
  net_config.branches = 1;
  cfg.use_tvp = false;
  const std::uint64_t base_seed = cfg.seed;
  std::vector<RepCamNet<float>> nets;
  for (std::size_t k = 0; k < video.chunks.size(); ++k) {
    cfg.seed = base_seed + k;
    auto net = build_backbone<float>(net_config, cfg.seed);
    std::vector<Tvp<float>> none;
    train(net, none, video.chunk(k), cfg, [&](const TrainRecord& r) {
      if (on_record) on_record(k, r);
    });
    nets.push_back(std::move(net));
  }
  return nets;
}

}  // namespace repcam
