#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "catdet/attention/attention.hpp"
#include "catdet/common/box.hpp"
#include "catdet/encoding/position_encoding.hpp"
#include "catdet/numerics/params.hpp"
#include "catdet/numerics/spatial.hpp"

namespace catdet::cat {

using num::SpatialFeature;
using num::Tensor;

enum class StreamMode { kTwoStream, kOneStream };
enum class LayerVariant { kParallel, kAlternating };

std::string_view mode_name(StreamMode m);
StreamMode parse_mode(std::string_view s);  // "two_stream" | "one_stream"
std::string_view variant_name(LayerVariant v);
LayerVariant parse_variant(std::string_view s);  // "parallel" | "alternating"

struct CatConfig {
  std::size_t d_model = 256;
  std::size_t heads = 8;
  std::size_t layers = 4;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  StreamMode mode = StreamMode::kTwoStream;
  LayerVariant variant = LayerVariant::kParallel;
  bool tie_streams = false;
  bool projection_bias = false;
  double ln_eps = 1e-5;
  double pe_temperature = enc::kDefaultTemperature;

  std::size_t ffn_width() const { return d_ff == 0 ? 4 * d_model : d_ff; }
  void validate() const;
};

// One direction of a layer: x attends to y.
struct StreamParams {
  attn::MultiHeadParams mha;
  attn::FfnParams ffn;
  Tensor norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;

  static StreamParams init(num::Initializer& init, const CatConfig& cfg);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

struct CatLayerParams {
  StreamParams t_stream;  // target queries, query-image keys/values
  StreamParams q_stream;  // mirrored; aliases t_stream when tied, unused in one-stream mode
  bool tie_streams = false;
  bool has_q_stream = true;

  static CatLayerParams init(num::Initializer& init, const CatConfig& cfg);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

struct CatParams {
  CatConfig cfg;
  std::vector<CatLayerParams> layers;

  static CatParams init(num::Initializer& init, const CatConfig& cfg);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

// 3x3 conv (pad 1) followed by a 1x1 conv, no activation in between.
// Kernels are stored [out x in x kh x kw].
struct CompressParams {
  Tensor conv3_w, conv3_b, conv1_w, conv1_b;

  std::size_t in_channels() const { return conv3_w.dim(1); }
  std::size_t d_model() const { return conv1_w.dim(0); }

  static CompressParams init(num::Initializer& init, std::size_t in_channels, std::size_t d_model);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

SpatialFeature compress_channels(const SpatialFeature& feat, const CompressParams& p);

// Norm2(x~ + FFN(x~)) with x~ = Norm1(x + p_x + MHA(x + p_x, y + p_y, y)).
Tensor stream_forward(const Tensor& x, const Tensor& p_x, const Tensor& y, const Tensor& p_y,
                      const StreamParams& p, double ln_eps);

struct LayerOutput {
  Tensor y_t;
  Tensor y_q;
};

LayerOutput cat_layer_forward(const Tensor& x_t, const Tensor& x_q, const Tensor& p_t,
                              const Tensor& p_q, const CatLayerParams& params, StreamMode mode,
                              LayerVariant variant = LayerVariant::kParallel, double ln_eps = 1e-5);

struct CatOutput {
  SpatialFeature f_t;
  SpatialFeature f_q;
  // Target sequence entering the stack followed by each layer's output (N + 1 entries),
  // filled only when requested.
  std::vector<SpatialFeature> target_maps;
};

CatOutput cat_forward(const SpatialFeature& phi_t, const SpatialFeature& phi_q, const CatParams& params,
                      enc::PositionEncodingCache& pe_cache, bool keep_maps = false);

// Per-cell L2 norm across channels, min-max normalized to [0,1]. A constant
// norm field maps to all zeros. Result is [H x W] without gradient.
Tensor response_map(const SpatialFeature& feat);

// Mean response over cells whose centers fall inside any box, divided by the
// mean over the remaining cells. NaN when either set is empty or the outside
// mean is zero.
double focus_ratio(const Tensor& map, std::size_t stride, const std::vector<Box>& boxes);

void write_response_pgm(const std::filesystem::path& path, const Tensor& map);
void write_response_csv(const std::filesystem::path& path, const Tensor& map);

}  // namespace catdet::cat
