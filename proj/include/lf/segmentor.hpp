#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lf/layers.hpp"

namespace lf {

/// Architecture of the segmentation network: UNet encoder/decoder with a
/// chain of hourglass modules at the bottleneck.
struct SegMentorConfig {
  int input_size = 64;                          // full-scale reference value: 512
  int in_channels = 3;
  std::vector<int> encoder_channels = {4, 8, 16};  // full-scale: {16, 64, 128}
  int hourglass_count = 1;                      // 0 = plain UNet
  int hourglass_depth = 2;                      // pooling levels inside a module
  int bottleneck_out_multiplier = 2;            // first module: 128 -> 256

  void validate() const {
    if (static_cast<int>(encoder_channels.size()) != 3) {
      throw ConfigError("SegMentorConfig: encoder_channels must have 3 entries, got " +
                        std::to_string(encoder_channels.size()));
    }
    for (std::size_t i = 0; i < encoder_channels.size(); ++i) {
      if (encoder_channels[i] <= 0) throw ConfigError("SegMentorConfig: encoder_channels must be positive");
      if (i > 0 && encoder_channels[i] <= encoder_channels[i - 1]) {
        throw ConfigError("SegMentorConfig: encoder_channels must be strictly increasing");
      }
    }
    if (hourglass_count < 0) throw ConfigError("SegMentorConfig: hourglass_count must be >= 0");
    if (hourglass_depth < 1) throw ConfigError("SegMentorConfig: hourglass_depth must be >= 1");
    if (bottleneck_out_multiplier != 2) {
      throw ConfigError("SegMentorConfig: bottleneck_out_multiplier must be 2");
    }
    const int divisor = 1 << (3 + hourglass_depth);
    if (input_size <= 0 || input_size % divisor != 0) {
      throw ConfigError("SegMentorConfig: input_size " + std::to_string(input_size) +
                        " must be divisible by 2^(3+hourglass_depth) = " + std::to_string(divisor));
    }
    if (in_channels <= 0) throw ConfigError("SegMentorConfig: in_channels must be positive");
  }
};

inline nlohmann::json segmentor_config_to_json(const SegMentorConfig& c) {
  return nlohmann::json{{"input_size", c.input_size},
                        {"encoder_channels", c.encoder_channels},
                        {"hourglass_count", c.hourglass_count},
                        {"hourglass_depth", c.hourglass_depth}};
}

inline SegMentorConfig segmentor_config_from_json(const nlohmann::json& j) {
  SegMentorConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.hourglass_count = j.at("hourglass_count").get<int>();
  c.hourglass_depth = j.at("hourglass_depth").get<int>();
  c.validate();
  return c;
}

/// Three conv3x3+bn layers with an identity skip from block input to output
/// (1x1 projection when the channel counts differ).
struct ResidualBlock {
  ConvBnRelu conv1;
  ConvBnRelu conv2;
  Conv2dLayer conv3;
  BatchNorm2dLayer bn3;
  std::optional<Conv2dLayer> proj;

  ResidualBlock() = default;

  ResidualBlock(ParamStore& store, const std::string& prefix, int cin, int cout, Rng& rng) {
    conv1 = ConvBnRelu(store, prefix + ".conv1", cin, cout, rng);
    conv2 = ConvBnRelu(store, prefix + ".conv2", cout, cout, rng);
    conv3 = Conv2dLayer(store, prefix + ".conv3.conv", cout, cout, 3, 1, 1, false, rng);
    bn3 = BatchNorm2dLayer(store, prefix + ".conv3.bn", cout);
    if (cin != cout) proj = Conv2dLayer(store, prefix + ".proj", cin, cout, 1, 1, 0, false, rng);
  }

  Tensor operator()(const Tensor& x, Mode mode) const {
    Tensor main = bn3(conv3(conv2(conv1(x, mode), mode)), mode);
    Tensor skip = proj ? (*proj)(x) : x;
    return relu(add(main, skip));
  }
};

/// Symmetric encode-decode module with processed long skips: each level's
/// skip passes through one residual block before concatenation back in.
struct HourglassModule {
  std::vector<ResidualBlock> down;
  std::vector<ResidualBlock> skips;
  ResidualBlock bottleneck;
  std::vector<ResidualBlock> up;  // up[l] consumes level l (up[0] topmost)
  int depth = 0;

  HourglassModule() = default;

  HourglassModule(ParamStore& store, const std::string& prefix, int cin, int cout, int depth_,
                  Rng& rng)
      : depth(depth_) {
    for (int l = 0; l < depth; ++l) {
      down.emplace_back(store, prefix + ".down" + std::to_string(l), cin, cin, rng);
      skips.emplace_back(store, prefix + ".skip" + std::to_string(l), cin, cin, rng);
    }
    bottleneck = ResidualBlock(store, prefix + ".bottleneck", cin, cin, rng);
    for (int l = 0; l < depth; ++l) {
      const int out_ch = l == 0 ? cout : cin;
      up.emplace_back(store, prefix + ".up" + std::to_string(l), 2 * cin, out_ch, rng);
    }
  }

  Tensor operator()(const Tensor& x, Mode mode) const {
    std::vector<Tensor> skip_feats;
    Tensor cur = x;
    for (int l = 0; l < depth; ++l) {
      Tensor pre = down[static_cast<std::size_t>(l)](cur, mode);
      skip_feats.push_back(skips[static_cast<std::size_t>(l)](pre, mode));
      cur = maxpool2d(pre);
    }
    cur = bottleneck(cur, mode);
    for (int l = depth - 1; l >= 0; --l) {
      cur = upsample2x(cur);
      cur = concat_channels(cur, skip_feats[static_cast<std::size_t>(l)]);
      cur = up[static_cast<std::size_t>(l)](cur, mode);
    }
    return cur;
  }
};

/// Shapes observed during a traced forward pass (paper-scale contract checks).
struct SegmentorTrace {
  std::vector<int> bottleneck_in;   // entering the hourglass chain
  std::vector<int> chain_out;       // leaving the chain, before the exit adapter
};

/// The segmentation network. Parameter names partition into encoder.*,
/// hourglass.k.* (plus hourglass.adapter.* once a module exists), decoder.*.
class SegmentorModel {
 public:
  SegmentorModel(const SegmentorModel&) = delete;
  SegmentorModel& operator=(const SegmentorModel&) = delete;
  SegmentorModel(SegmentorModel&&) = default;
  SegmentorModel& operator=(SegmentorModel&&) = default;

  explicit SegmentorModel(const SegMentorConfig& config, int seed) : config_(config) {
    config_.validate();
    Rng rng = Rng(static_cast<std::uint64_t>(seed)).split(0x5e6);
    const auto& ch = config_.encoder_channels;
    enc_.resize(3);
    for (int b = 0; b < 3; ++b) {
      const int cin = b == 0 ? config_.in_channels : ch[static_cast<std::size_t>(b - 1)];
      const int cout = ch[static_cast<std::size_t>(b)];
      const std::string p = "encoder.block" + std::to_string(b + 1);
      enc_[static_cast<std::size_t>(b)].c1 = ConvBnRelu(store_, p + ".conv1", cin, cout, rng);
      enc_[static_cast<std::size_t>(b)].c2 = ConvBnRelu(store_, p + ".conv2", cout, cout, rng);
    }
    const int c1 = ch[0], c2 = ch[1], c3 = ch[2];
    dec_.resize(3);
    dec_[0].c1 = ConvBnRelu(store_, "decoder.block1.conv1", 2 * c3, c3, rng);
    dec_[0].c2 = ConvBnRelu(store_, "decoder.block1.conv2", c3, c3, rng);
    dec_[1].c1 = ConvBnRelu(store_, "decoder.block2.conv1", c3 + c2, c2, rng);
    dec_[1].c2 = ConvBnRelu(store_, "decoder.block2.conv2", c2, c2, rng);
    dec_[2].c1 = ConvBnRelu(store_, "decoder.block3.conv1", c2 + c1, c1, rng);
    dec_[2].c2 = ConvBnRelu(store_, "decoder.block3.conv2", c1, c1, rng);
    head_ = Conv2dLayer(store_, "decoder.head", c1, 1, 1, 1, 0, true, rng);

    grow_rng_ = rng.split(0x469);
    const int n = config_.hourglass_count;
    config_.hourglass_count = 0;
    for (int k = 0; k < n; ++k) grow_hourglass(k);
  }

  const SegMentorConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  int hourglass_count() const { return static_cast<int>(hourglass_.size()); }

  /// Appends hourglass module `position` (must equal the current count).
  /// Existing parameters are untouched; the new module is freshly initialized.
  /// Growing from 0 also creates the 1x1 exit adapter (hourglass.adapter).
  void grow_hourglass(int position) {
    if (position != hourglass_count()) {
      throw ContractError("grow_hourglass: position " + std::to_string(position) +
                          " but model has " + std::to_string(hourglass_count()) + " modules");
    }
    const int c3 = config_.encoder_channels[2];
    const int wide = config_.bottleneck_out_multiplier * c3;
    Rng rng = grow_rng_.split(static_cast<std::uint64_t>(position));
    const int cin = position == 0 ? c3 : wide;
    hourglass_.emplace_back(store_, "hourglass." + std::to_string(position), cin, wide,
                            config_.hourglass_depth, rng);
    if (position == 0) {
      adapter_ = Conv2dLayer(store_, "hourglass.adapter", wide, c3, 1, 1, 0, true, rng);
    }
    config_.hourglass_count = hourglass_count();
  }

  /// Maps [N,3,S,S] -> [N,1,S,S] with values in (0,1).
  Tensor forward(const Tensor& batch, Mode mode, SegmentorTrace* trace = nullptr) const {
    if (batch.rank() != 4 || batch.dim(1) != config_.in_channels ||
        batch.dim(2) != config_.input_size || batch.dim(3) != config_.input_size) {
      throw DimensionError("segmentor forward: expected [N," + std::to_string(config_.in_channels) +
                           "," + std::to_string(config_.input_size) + "," +
                           std::to_string(config_.input_size) + "], got " +
                           shape_str(batch.shape()));
    }
    std::vector<Tensor> enc_feats;
    Tensor cur = batch;
    for (const auto& block : enc_) {
      Tensor pre = block.c2(block.c1(cur, mode), mode);
      enc_feats.push_back(pre);
      cur = maxpool2d(pre);
    }
    if (trace) trace->bottleneck_in = cur.shape();
    for (const auto& hg : hourglass_) cur = hg(cur, mode);
    if (trace) trace->chain_out = cur.shape();
    if (adapter_) cur = (*adapter_)(cur);
    // each decoder block: upsample, merge the matching encoder skip, 2x conv.
    cur = concat_channels(upsample2x(cur), enc_feats[2]);
    cur = dec_[0].c2(dec_[0].c1(cur, mode), mode);
    cur = concat_channels(upsample2x(cur), enc_feats[1]);
    cur = dec_[1].c2(dec_[1].c1(cur, mode), mode);
    cur = concat_channels(upsample2x(cur), enc_feats[0]);
    cur = dec_[2].c2(dec_[2].c1(cur, mode), mode);
    return sigmoid(head_(cur));
  }

 private:
  struct DoubleConv {
    ConvBnRelu c1, c2;
  };

  SegMentorConfig config_;
  ParamStore store_;
  std::vector<DoubleConv> enc_;
  std::vector<HourglassModule> hourglass_;
  std::optional<Conv2dLayer> adapter_;
  std::vector<DoubleConv> dec_;
  Conv2dLayer head_;
  Rng grow_rng_ = Rng(0);
};

inline SegmentorModel build_segmentor(const SegMentorConfig& config, int seed) {
  return SegmentorModel(config, seed);
}

inline Tensor forward_segmentor(const SegmentorModel& model, const Tensor& batch,
                                Mode mode = Mode::kEval) {
  return model.forward(batch, mode);
}

}  // namespace lf
