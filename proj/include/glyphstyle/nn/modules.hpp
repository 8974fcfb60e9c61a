#pragma once

#include <functional>
#include <string>
#include <vector>

#include "glyphstyle/core/autodiff.hpp"
#include "glyphstyle/core/rng.hpp"

namespace glyphstyle {

/// Callback receiving every trainable parameter with a stable slash-separated
/// name. Used for optimizers, checkpoints and parameter-partition checks.
template <class T>
using ParamVisitor = std::function<void(const std::string&, const Var<T>&)>;

namespace init {

/// Convolution/linear weights ~ N(0, 0.02^2), biases 0, norm gain 1 / bias 0.
template <class T>
Var<T> conv_weight(std::vector<int> shape, Rng& rng) {
  return make_leaf(rng.normal_tensor<T>(std::move(shape), 0.0, 0.02), true);
}
template <class T>
Var<T> zeros_param(std::vector<int> shape) {
  return make_leaf(Tensor<T>(std::move(shape)), true);
}
template <class T>
Var<T> ones_param(std::vector<int> shape) {
  return make_leaf(Tensor<T>(std::move(shape), T(1)), true);
}

}  // namespace init

template <class T>
struct Conv2dLayer {
  Var<T> weight, bias;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
      : weight(init::conv_weight<T>({cout, cin, k, k}, rng)),
        bias(init::zeros_param<T>({cout})),
        stride(stride_),
        pad(pad_) {}

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) const {
    f(prefix + "/weight", weight);
    f(prefix + "/bias", bias);
  }
};

template <class T>
struct ConvTr2dLayer {
  Var<T> weight, bias;
  int stride = 1, pad = 0;

  ConvTr2dLayer() = default;
  ConvTr2dLayer(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
      : weight(init::conv_weight<T>({cin, cout, k, k}, rng)),
        bias(init::zeros_param<T>({cout})),
        stride(stride_),
        pad(pad_) {}

  Var<T> operator()(const Var<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) const {
    f(prefix + "/weight", weight);
    f(prefix + "/bias", bias);
  }
};

template <class T>
struct InstanceNormLayer {
  Var<T> gain, bias;

  InstanceNormLayer() = default;
  explicit InstanceNormLayer(int c)
      : gain(init::ones_param<T>({c})), bias(init::zeros_param<T>({c})) {}

  Var<T> operator()(const Var<T>& x) const { return instance_norm(x, gain, bias); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) const {
    f(prefix + "/gain", gain);
    f(prefix + "/bias", bias);
  }
};

template <class T>
struct LinearLayer {
  Var<T> weight, bias;

  LinearLayer() = default;
  LinearLayer(int din, int dout, Rng& rng)
      : weight(init::conv_weight<T>({dout, din}, rng)), bias(init::zeros_param<T>({dout})) {}

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) const {
    f(prefix + "/weight", weight);
    f(prefix + "/bias", bias);
  }
};

/// Pre-activation residual block: x + conv(relu(norm(conv(relu(norm(x)))))).
/// Both convolutions are 3x3 stride-1 with matching channel count, so the
/// shortcut is the identity.
template <class T>
struct ResBlock {
  InstanceNormLayer<T> norm1, norm2;
  Conv2dLayer<T> conv1, conv2;

  ResBlock() = default;
  ResBlock(int c, Rng& rng)
      : norm1(c), norm2(c), conv1(c, c, 3, 1, 1, rng), conv2(c, c, 3, 1, 1, rng) {}

  Var<T> operator()(const Var<T>& x) const {
    auto h = conv1(relu(norm1(x)));
    h = conv2(relu(norm2(h)));
    return add(x, h);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& f) const {
    norm1.visit(prefix + "/norm1", f);
    conv1.visit(prefix + "/conv1", f);
    norm2.visit(prefix + "/norm2", f);
    conv2.visit(prefix + "/conv2", f);
  }
};

}  // namespace glyphstyle
