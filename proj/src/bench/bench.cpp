#include "catdet/bench/bench.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <thread>

#include "catdet/common/errors.hpp"
#include "catdet/common/hash.hpp"
#include "catdet/data/evaluation.hpp"
#include "catdet/detector/backbone.hpp"
#include "catdet/detector/train.hpp"

namespace catdet::bench {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string environment_note() {
  std::string compiler;
#if defined(__clang__)
  compiler = "clang " + std::to_string(__clang_major__) + "." + std::to_string(__clang_minor__);
#elif defined(__GNUC__)
  compiler = "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
  compiler = "unknown compiler";
#endif
  return compiler + "; 1 timing thread; " + std::to_string(std::thread::hardware_concurrency()) +
         " hardware threads; float64 CPU";
}

std::size_t tokens(int height, int width) {
  const std::size_t s = det::BackboneParams::kStride;
  return (static_cast<std::size_t>(height) / s) * (static_cast<std::size_t>(width) / s);
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fixed(*v, 6) : ""; }

}  // namespace

std::size_t count_params(const num::ParamRegistry& reg) { return reg.count_params(); }

std::size_t count_params(const det::Detector& model) { return count_params(model.params()); }

std::size_t count_cat_params(const det::Detector& model) {
  num::ParamRegistry reg;
  model.cat_params().register_into(reg, "cat.");
  return count_params(reg);
}

std::size_t cat_params_closed_form(const cat::CatConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t f = cfg.ffn_width();
  std::size_t per_stream = 4 * d * d + (d * f + f + f * d + d) + 4 * d;
  if (cfg.projection_bias) per_stream += 4 * d;
  const bool one = cfg.mode == cat::StreamMode::kOneStream || cfg.tie_streams;
  return cfg.layers * (one ? 1 : 2) * per_stream;
}

nlohmann::json BenchReport::to_json() const {
  return {{"config_hash", config_hash},
          {"d_model", d_model},
          {"heads", heads},
          {"layers", layers},
          {"mode", mode},
          {"target_tokens", target_tokens},
          {"query_tokens", query_tokens},
          {"params", params},
          {"cat_params", cat_params},
          {"warmup", warmup},
          {"iters", iters},
          {"elapsed_seconds", elapsed_seconds},
          {"fps", fps},
          {"started", started},
          {"finished", finished},
          {"environment", environment}};
}

InputPair synthetic_pair(const det::DetectorConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x62656e63ULL));
  auto fill = [&](int side) {
    data::Image img(side, side);
    for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng() & 0xff);
    return img;
  };
  InputPair p;
  p.target = fill(static_cast<int>(cfg.image_size));
  p.query = fill(static_cast<int>(cfg.query_size));
  return p;
}

BenchReport measure_fps(const det::Detector& model, const InputPair& input, std::size_t warmup,
                        std::size_t iters, const std::string& config_hash) {
  if (iters < kMinIters) throw ConfigError("measure_fps: iters " + std::to_string(iters) + " < " + std::to_string(kMinIters));
  if (warmup < kMinWarmup) throw ConfigError("measure_fps: warmup " + std::to_string(warmup) + " < " + std::to_string(kMinWarmup));
  const auto& cfg = model.config();
  BenchReport r;
  r.config_hash = config_hash;
  r.d_model = cfg.cat.d_model;
  r.heads = cfg.cat.heads;
  r.layers = cfg.cat.layers;
  r.mode = cat::mode_name(cfg.cat.mode);
  r.target_tokens = tokens(input.target.height(), input.target.width());
  r.query_tokens = tokens(static_cast<int>(cfg.query_size), static_cast<int>(cfg.query_size));
  r.params = count_params(model);
  r.cat_params = count_cat_params(model);
  r.warmup = warmup;
  r.iters = iters;
  r.environment = environment_note();

  for (std::size_t i = 0; i < warmup; ++i) (void)model.detect(input.target, input.query);
  r.started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < iters; ++i) (void)model.detect(input.target, input.query);
  const auto t1 = std::chrono::steady_clock::now();
  r.finished = utc_now();
  r.elapsed_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.fps = static_cast<double>(iters) / r.elapsed_seconds;
  return r;
}

std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::kLayers: return "layers";
    case Axis::kDm: return "d_m";
    case Axis::kStream: return "stream";
  }
  return "?";
}

Axis parse_axis(std::string_view s) {
  if (s == "layers") return Axis::kLayers;
  if (s == "d_m" || s == "dm") return Axis::kDm;
  if (s == "stream") return Axis::kStream;
  throw ConfigError("unknown ablation axis '" + std::string(s) + "' (layers, d_m, stream)");
}

std::vector<std::string> axis_values(const config::RunConfig& cfg, Axis axis) {
  std::vector<std::string> out;
  switch (axis) {
    case Axis::kLayers:
      for (auto v : cfg.bench.layer_values) out.push_back(std::to_string(v));
      break;
    case Axis::kDm:
      for (auto v : cfg.bench.dm_values) out.push_back(std::to_string(v));
      break;
    case Axis::kStream:
      out = cfg.bench.stream_values;
      break;
  }
  return out;
}

config::RunConfig apply_axis(const config::RunConfig& cfg, Axis axis, const std::string& value) {
  auto out = cfg;
  auto as_size = [&] {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != value.size() || v == 0) {
      throw ConfigError(std::string(axis_name(axis)) + " value '" + value + "' is not a positive integer");
    }
    return static_cast<std::size_t>(v);
  };
  switch (axis) {
    case Axis::kLayers: out.model.cat.layers = as_size(); break;
    case Axis::kDm: out.model.cat.d_model = as_size(); break;
    case Axis::kStream: out.model.cat.mode = cat::parse_mode(value); break;
  }
  out.model.validate();
  return out;
}

std::vector<AblationRow> run_ablation(const data::Dataset& ds, const config::RunConfig& cfg, Axis axis,
                                      const std::vector<std::string>& values,
                                      const std::vector<std::uint64_t>& seeds, const AblationOptions& opt) {
  std::vector<AblationRow> rows;
  for (const auto& value : values) {
    for (auto seed : seeds) {
      auto run = apply_axis(cfg, axis, value);
      run.seed = seed;
      run.data = ds.config;
      const auto hash = run.hash();
      const std::string tag = std::string(axis_name(axis)) + "=" + value + " seed " + std::to_string(seed);
      det::Detector model(run.model, run.seed);
      if (run.bench.train) {
        const auto ckpt = opt.cache_dir.empty() ? std::filesystem::path{} : opt.cache_dir / (run.training_hash() + ".ckpt");
        if (!ckpt.empty() && std::filesystem::exists(ckpt)) {
          det::load_model(model, ckpt);
          if (opt.log) *opt.log << tag << ": cached " << ckpt.string() << '\n';
        } else {
          det::Trainer trainer(model, ds, run.train_config());
          while (!trainer.finished()) {
            const auto rec = trainer.run_epoch();
            if (opt.log) {
              *opt.log << tag << " epoch " << rec.epoch << " loss " << fixed(rec.loss, 5) << " ("
                       << fixed(rec.seconds, 1) << "s)" << std::endl;
            }
          }
          if (!ckpt.empty()) {
            std::filesystem::create_directories(opt.cache_dir);
            det::save_model(model, ckpt);
          }
        }
      }
      const auto timing =
          measure_fps(model, synthetic_pair(run.model, seed), run.bench.warmup, run.bench.iters, hash);
      for (auto split : run.bench.splits) {
        AblationRow row;
        row.config_hash = hash;
        row.axis = axis_name(axis);
        row.value = value;
        row.seed = seed;
        row.split = data::split_name(split);
        row.fps = timing.fps;
        row.params = timing.params;
        if (run.bench.train) {
          data::ProtocolOptions po;
          po.n_queries = run.eval.n_queries;
          po.workers = opt.eval_workers;
          const auto rep = data::evaluation_protocol(
              ds, split, [&](const data::OneShotSample& s, const data::Image& q) { return model.detect(s.target, q); },
              po);
          row.ap = rep.mean_ap;
          row.ap50 = rep.mean_ap50;
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << kAblationHeader << '\n';
  for (const auto& r : rows) {
    os << r.config_hash << ',' << r.axis << ',' << r.value << ',' << r.seed << ',' << r.split << ','
       << fmt_opt(r.ap) << ',' << fmt_opt(r.ap50) << ',' << fixed(r.fps, 4) << ',' << r.params << '\n';
  }
}

}  // namespace catdet::bench
