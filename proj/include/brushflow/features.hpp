#pragma once

// Feature extractors for the style and content losses.
//
// FeatureExtractor is the capability the losses depend on: per-layer feature
// maps of a single-channel (luminance) image plus the vector-Jacobian product
// back to that image. ConvBankExtractor is the built-in implementation: a
// fixed, seed-deterministic stack of 3x3 convolutions with half-wave
// rectification and 2x average pooling between layers. A pretrained network
// can be adapted to the same interface.

#include "brushflow/image.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace brushflow {

struct FeatureMap {
  int channels = 0;
  int width = 0;
  int height = 0;
  std::vector<double> data;  // channel-major: data[(c * height + y) * width + x]

  FeatureMap() = default;
  FeatureMap(int c, int w, int h)
      : channels(c), width(w), height(h), data(static_cast<std::size_t>(c) * w * h, 0.0) {}

  double& at(int c, int x, int y) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  [[nodiscard]] double at(int c, int x, int y) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  [[nodiscard]] std::size_t spatial() const { return static_cast<std::size_t>(width) * height; }
  [[nodiscard]] bool empty() const { return data.empty(); }
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  [[nodiscard]] virtual std::size_t layer_count() const = 0;
  [[nodiscard]] virtual std::vector<int> channel_counts() const = 0;

  /// Features of every layer for a single-channel image.
  [[nodiscard]] virtual std::vector<FeatureMap> forward(const Image& luma) const = 0;

  /// d loss / d luma from d loss / d features; an empty map means zero
  /// gradient for that layer.
  [[nodiscard]] virtual Image backward(const Image& luma,
                                       const std::vector<FeatureMap>& feature_grads) const = 0;
};

class ConvBankExtractor final : public FeatureExtractor {
 public:
  explicit ConvBankExtractor(std::uint64_t seed = 0, std::vector<int> channels = {8, 16, 16})
      : channels_(std::move(channels)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    int in = 1;
    for (const int out : channels_) {
      Layer layer{in, out, std::vector<double>(static_cast<std::size_t>(out) * in * 9)};
      const double gain = std::sqrt(2.0 / (9.0 * in));
      for (double& w : layer.weights) w = gain * normal(rng);
      layers_.push_back(std::move(layer));
      in = out;
    }
  }

  [[nodiscard]] std::size_t layer_count() const override { return layers_.size(); }
  [[nodiscard]] std::vector<int> channel_counts() const override { return channels_; }

  [[nodiscard]] std::vector<FeatureMap> forward(const Image& luma) const override {
    return run(luma).activations;
  }

  [[nodiscard]] Image backward(const Image& luma,
                               const std::vector<FeatureMap>& feature_grads) const override {
    const Trace trace = run(luma);
    FeatureMap upstream;  // gradient w.r.t. the input of the current layer's successor
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
      const FeatureMap& act = trace.activations[l];
      FeatureMap dact(act.channels, act.width, act.height);
      if (l < static_cast<int>(feature_grads.size()) && !feature_grads[l].empty())
        dact.data = feature_grads[l].data;
      if (!upstream.empty()) {
        // Average-pool backward: each pooled cell spreads its gradient evenly.
        for (int c = 0; c < upstream.channels; ++c)
          for (int y = 0; y < upstream.height; ++y)
            for (int x = 0; x < upstream.width; ++x) {
              const double g = 0.25 * upstream.at(c, x, y);
              dact.at(c, 2 * x, 2 * y) += g;
              dact.at(c, 2 * x + 1, 2 * y) += g;
              dact.at(c, 2 * x, 2 * y + 1) += g;
              dact.at(c, 2 * x + 1, 2 * y + 1) += g;
            }
      }
      for (std::size_t i = 0; i < dact.data.size(); ++i)
        if (!(act.data[i] > 0.0)) dact.data[i] = 0.0;
      upstream = conv_backward(layers_[l], dact);
    }
    Image out(luma.width(), luma.height(), 1);
    for (int y = 0; y < luma.height(); ++y)
      for (int x = 0; x < luma.width(); ++x) out.at(x, y) = upstream.at(0, x, y);
    return out;
  }

 private:
  struct Layer {
    int in_channels;
    int out_channels;
    std::vector<double> weights;  // [out][in][ky][kx]

    [[nodiscard]] double w(int o, int i, int ky, int kx) const {
      return weights[((static_cast<std::size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx];
    }
  };

  struct Trace {
    std::vector<FeatureMap> activations;  // post-rectification output of every layer
  };

  static FeatureMap conv_forward(const Layer& layer, const FeatureMap& in) {
    FeatureMap out(layer.out_channels, in.width, in.height);
    for (int o = 0; o < layer.out_channels; ++o)
      for (int i = 0; i < layer.in_channels; ++i)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double w = layer.w(o, i, ky, kx);
            for (int y = 0; y < in.height; ++y) {
              const int sy = y + ky - 1;
              if (sy < 0 || sy >= in.height) continue;
              for (int x = 0; x < in.width; ++x) {
                const int sx = x + kx - 1;
                if (sx < 0 || sx >= in.width) continue;
                out.at(o, x, y) += w * in.at(i, sx, sy);
              }
            }
          }
    return out;
  }

  static FeatureMap conv_backward(const Layer& layer, const FeatureMap& dout) {
    FeatureMap din(layer.in_channels, dout.width, dout.height);
    for (int o = 0; o < layer.out_channels; ++o)
      for (int i = 0; i < layer.in_channels; ++i)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double w = layer.w(o, i, ky, kx);
            for (int y = 0; y < dout.height; ++y) {
              const int sy = y + ky - 1;
              if (sy < 0 || sy >= dout.height) continue;
              for (int x = 0; x < dout.width; ++x) {
                const int sx = x + kx - 1;
                if (sx < 0 || sx >= dout.width) continue;
                din.at(i, sx, sy) += w * dout.at(o, x, y);
              }
            }
          }
    return din;
  }

  static FeatureMap average_pool(const FeatureMap& in) {
    FeatureMap out(in.channels, in.width / 2, in.height / 2);
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
          out.at(c, x, y) = 0.25 * (in.at(c, 2 * x, 2 * y) + in.at(c, 2 * x + 1, 2 * y) +
                                    in.at(c, 2 * x, 2 * y + 1) + in.at(c, 2 * x + 1, 2 * y + 1));
    return out;
  }

  [[nodiscard]] Trace run(const Image& luma) const {
    if (luma.channels() != 1) throw std::invalid_argument("feature extractor expects one channel");
    FeatureMap input(1, luma.width(), luma.height());
    for (int y = 0; y < luma.height(); ++y)
      for (int x = 0; x < luma.width(); ++x) input.at(0, x, y) = luma.at(x, y);
    Trace trace;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (input.width < 1 || input.height < 1)
        throw std::invalid_argument("image too small for the feature extractor depth");
      FeatureMap act = conv_forward(layers_[l], input);
      for (double& v : act.data) v = v < 0.0 ? 0.0 : v;  // NaN passes through
      if (l + 1 < layers_.size()) input = average_pool(act);
      trace.activations.push_back(std::move(act));
    }
    return trace;
  }

  std::vector<int> channels_;
  std::vector<Layer> layers_;
};

}  // namespace brushflow
