#include "catdet/cat/cat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "catdet/common/errors.hpp"
#include "catdet/data/image.hpp"
#include "catdet/numerics/ops.hpp"

namespace catdet::cat {

std::string_view mode_name(StreamMode m) {
  return m == StreamMode::kTwoStream ? "two_stream" : "one_stream";
}

StreamMode parse_mode(std::string_view s) {
  if (s == "two_stream" || s == "two") return StreamMode::kTwoStream;
  if (s == "one_stream" || s == "one") return StreamMode::kOneStream;
  throw ConfigError("unknown stream mode '" + std::string(s) + "'");
}

std::string_view variant_name(LayerVariant v) {
  return v == LayerVariant::kParallel ? "parallel" : "alternating";
}

LayerVariant parse_variant(std::string_view s) {
  if (s == "parallel") return LayerVariant::kParallel;
  if (s == "alternating") return LayerVariant::kAlternating;
  throw ConfigError("unknown layer variant '" + std::string(s) + "'");
}

void CatConfig::validate() const {
  if (layers < 1) throw ConfigError("CAT needs at least one layer");
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (d_model % 4 != 0) throw ConfigError("d_model must be divisible by 4");
}

StreamParams StreamParams::init(num::Initializer& init, const CatConfig& cfg) {
  StreamParams p;
  p.mha = attn::MultiHeadParams::init(init, cfg.d_model, cfg.heads, cfg.projection_bias);
  p.ffn = attn::FfnParams::init(init, cfg.d_model, cfg.ffn_width());
  p.norm1_gamma = init.constant({cfg.d_model}, 1.0);
  p.norm1_beta = init.constant({cfg.d_model}, 0.0);
  p.norm2_gamma = init.constant({cfg.d_model}, 1.0);
  p.norm2_beta = init.constant({cfg.d_model}, 0.0);
  return p;
}

void StreamParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  mha.register_into(reg, prefix + "mha.");
  ffn.register_into(reg, prefix + "ffn.");
  reg.add(prefix + "norm1.gamma", norm1_gamma);
  reg.add(prefix + "norm1.beta", norm1_beta);
  reg.add(prefix + "norm2.gamma", norm2_gamma);
  reg.add(prefix + "norm2.beta", norm2_beta);
}

CatLayerParams CatLayerParams::init(num::Initializer& init, const CatConfig& cfg) {
  CatLayerParams p;
  p.tie_streams = cfg.tie_streams;
  p.has_q_stream = cfg.mode == StreamMode::kTwoStream;
  p.t_stream = StreamParams::init(init, cfg);
  if (p.has_q_stream) {
    // Tensor copies share storage, so tying is aliasing.
    p.q_stream = cfg.tie_streams ? p.t_stream : StreamParams::init(init, cfg);
  }
  return p;
}

void CatLayerParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  t_stream.register_into(reg, prefix + "t.");
  if (has_q_stream) q_stream.register_into(reg, prefix + "q.");
}

CatParams CatParams::init(num::Initializer& init, const CatConfig& cfg) {
  cfg.validate();
  CatParams p;
  p.cfg = cfg;
  for (std::size_t i = 0; i < cfg.layers; ++i) p.layers.push_back(CatLayerParams::init(init, cfg));
  return p;
}

void CatParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].register_into(reg, prefix + "layer" + std::to_string(i) + ".");
  }
}

CompressParams CompressParams::init(num::Initializer& init, std::size_t in_channels, std::size_t d_model) {
  const std::size_t fan3 = in_channels * 9;
  return {init.uniform_fan_in({d_model, in_channels, 3, 3}, fan3), init.uniform_fan_in({d_model}, fan3),
          init.uniform_fan_in({d_model, d_model, 1, 1}, d_model), init.uniform_fan_in({d_model}, d_model)};
}

void CompressParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + "conv3.w", conv3_w);
  reg.add(prefix + "conv3.b", conv3_b);
  reg.add(prefix + "conv1.w", conv1_w);
  reg.add(prefix + "conv1.b", conv1_b);
}

SpatialFeature compress_channels(const SpatialFeature& feat, const CompressParams& p) {
  if (feat.data.rank() != 3 || feat.channels() != p.in_channels()) {
    throw DimensionError("compress_channels: feature " + num::shape_str(feat.data.shape()) +
                         " does not have " + std::to_string(p.in_channels()) + " channels");
  }
  auto mid = num::conv2d(feat.data, p.conv3_w, p.conv3_b, 1, 1);
  return {num::conv2d(mid, p.conv1_w, p.conv1_b, 1, 0), feat.stride};
}

Tensor stream_forward(const Tensor& x, const Tensor& p_x, const Tensor& y, const Tensor& p_y,
                      const StreamParams& p, double ln_eps) {
  if (x.dim(1) != p.mha.d_model || y.dim(1) != p.mha.d_model) {
    throw DimensionError("CAT layer: inputs " + num::shape_str(x.shape()) + " and " +
                         num::shape_str(y.shape()) + " do not match d_model " +
                         std::to_string(p.mha.d_model));
  }
  auto xp = num::add(x, p_x);
  auto attended = attn::multi_head_attention(xp, num::add(y, p_y), y, p.mha);
  auto mid = num::layer_norm(num::add(xp, attended), p.norm1_gamma, p.norm1_beta, ln_eps);
  return num::layer_norm(num::add(mid, attn::ffn(mid, p.ffn)), p.norm2_gamma, p.norm2_beta, ln_eps);
}

LayerOutput cat_layer_forward(const Tensor& x_t, const Tensor& x_q, const Tensor& p_t, const Tensor& p_q,
                              const CatLayerParams& params, StreamMode mode, LayerVariant variant,
                              double ln_eps) {
  LayerOutput out;
  out.y_t = stream_forward(x_t, p_t, x_q, p_q, params.t_stream, ln_eps);
  if (mode == StreamMode::kOneStream) {
    out.y_q = x_q;
    return out;
  }
  if (!params.has_q_stream) throw ConfigError("two-stream forward on parameters built for one stream");
  const Tensor& kv = variant == LayerVariant::kParallel ? x_t : out.y_t;
  out.y_q = stream_forward(x_q, p_q, kv, p_t, params.q_stream, ln_eps);
  return out;
}

CatOutput cat_forward(const SpatialFeature& phi_t, const SpatialFeature& phi_q, const CatParams& params,
                      enc::PositionEncodingCache& pe_cache, bool keep_maps) {
  const auto& cfg = params.cfg;
  if (phi_t.channels() != cfg.d_model || phi_q.channels() != cfg.d_model) {
    throw DimensionError("cat_forward: features have " + std::to_string(phi_t.channels()) + " and " +
                         std::to_string(phi_q.channels()) + " channels, expected " +
                         std::to_string(cfg.d_model));
  }
  const auto ht = phi_t.height(), wt = phi_t.width(), hq = phi_q.height(), wq = phi_q.width();
  const Tensor& p_t = pe_cache.get(ht, wt, cfg.d_model).values;
  const Tensor& p_q = pe_cache.get(hq, wq, cfg.d_model).values;

  CatOutput out;
  Tensor x_t = num::flatten_spatial(phi_t.data);
  Tensor x_q = num::flatten_spatial(phi_q.data);
  if (keep_maps) out.target_maps.push_back(phi_t);
  for (const auto& layer : params.layers) {
    auto y = cat_layer_forward(x_t, x_q, p_t, p_q, layer, cfg.mode, cfg.variant, cfg.ln_eps);
    x_t = y.y_t;
    x_q = y.y_q;
    if (keep_maps) out.target_maps.push_back({num::unflatten_spatial(x_t, ht, wt), phi_t.stride});
  }
  out.f_t = {num::unflatten_spatial(x_t, ht, wt), phi_t.stride};
  out.f_q = cfg.mode == StreamMode::kOneStream ? phi_q
                                               : SpatialFeature{num::unflatten_spatial(x_q, hq, wq), phi_q.stride};
  return out;
}

Tensor response_map(const SpatialFeature& feat) {
  const auto C = feat.channels(), H = feat.height(), W = feat.width();
  const auto v = feat.data.data();
  std::vector<double> norms(H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) norms[i] += v[c * H * W + i] * v[c * H * W + i];
  }
  for (auto& n : norms) n = std::sqrt(n);
  const auto [lo, hi] = std::minmax_element(norms.begin(), norms.end());
  const double mn = *lo, range = *hi - *lo;
  for (auto& n : norms) n = range > 0.0 ? (n - mn) / range : 0.0;
  return Tensor::from({H, W}, std::move(norms));
}

double focus_ratio(const Tensor& map, std::size_t stride, const std::vector<Box>& boxes) {
  if (map.rank() != 2) throw DimensionError("focus_ratio: map must be [H x W]");
  const std::size_t h = map.dim(0), w = map.dim(1);
  const auto v = map.data();
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * static_cast<double>(stride);
      const double y = (static_cast<double>(r) + 0.5) * static_cast<double>(stride);
      const bool inside = std::any_of(boxes.begin(), boxes.end(),
                                      [&](const Box& b) { return x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2; });
      if (inside) {
        in_sum += v[r * w + c];
        ++in_n;
      } else {
        out_sum += v[r * w + c];
        ++out_n;
      }
    }
  }
  if (in_n == 0 || out_n == 0 || out_sum == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (in_sum / static_cast<double>(in_n)) / (out_sum / static_cast<double>(out_n));
}

void write_response_pgm(const std::filesystem::path& path, const Tensor& map) {
  const auto d = map.data();
  data::write_pgm(path, static_cast<int>(map.dim(0)), static_cast<int>(map.dim(1)),
                  std::vector<double>(d.begin(), d.end()));
}

void write_response_csv(const std::filesystem::path& path, const Tensor& map) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << std::setprecision(17);
  for (std::size_t r = 0; r < map.dim(0); ++r) {
    for (std::size_t c = 0; c < map.dim(1); ++c) f << (c ? "," : "") << map.at({r, c});
    f << '\n';
  }
}

}  // namespace catdet::cat
