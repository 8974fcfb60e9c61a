#pragma once

#include <array>
#include <string>
#include <vector>

#include "glyphstyle/nn/adam.hpp"
#include "glyphstyle/nn/archive.hpp"
#include "glyphstyle/nn/modules.hpp"

namespace glyphstyle {

inline constexpr int kImageSize = 64;
inline constexpr int kStyleDim = 128;
inline constexpr int kContentChannels = 512;
inline constexpr int kContentSpatial = 2;   // 64 / 2^5
inline constexpr int kPatchGrid = 4;        // discriminator score map
inline constexpr std::array<int, 5> kEncoderWidths{32, 64, 128, 256, 512};

template <class T>
struct ContentEncoding {
  Var<T> code;                // [N, 512, 2, 2]
  std::vector<Var<T>> skips;  // stage outputs at 32,16,8,4,2
};

template <class T>
struct StyleDist {
  Var<T> mu;     // [N, 128]
  Var<T> sigma;  // [N, 128], strictly positive
};

namespace detail {

/// Encoder stage: stride-2 4x4 convolution, instance norm, ReLU, then one
/// residual block at the new resolution.
template <class T>
struct DownBlock {
  Conv2dLayer<T> conv;
  InstanceNormLayer<T> norm;
  ResBlock<T> res;

  DownBlock() = default;
  DownBlock(int cin, int cout, Rng& rng)
      : conv(cin, cout, 4, 2, 1, rng), norm(cout), res(cout, rng) {}

  Var<T> operator()(const Var<T>& x) const { return res(relu(norm(conv(x)))); }

  void visit(const std::string& p, const ParamVisitor<T>& f) const {
    conv.visit(p + "/conv", f);
    norm.visit(p + "/norm", f);
    res.visit(p + "/res", f);
  }
};

/// Shared 5-stage trunk used by both encoders: 64 -> 2 spatially.
template <class T>
struct EncoderTrunk {
  std::vector<DownBlock<T>> stages;

  EncoderTrunk() = default;
  explicit EncoderTrunk(Rng& rng) {
    int cin = 1;
    for (int cout : kEncoderWidths) {
      stages.emplace_back(cin, cout, rng);
      cin = cout;
    }
  }

  void visit(const std::string& p, const ParamVisitor<T>& f) const {
    for (std::size_t i = 0; i < stages.size(); ++i)
      stages[i].visit(p + "/stage" + std::to_string(i), f);
  }
};

template <class T>
void check_glyph_batch(const Var<T>& x, const char* who) {
  const auto& s = x->value.shape();
  check(s.size() == 4 && s[1] == 1 && s[2] == kImageSize && s[3] == kImageSize,
        std::string(who) + ": expected [N,1,64,64], got " + Tensor<T>::shape_str(s));
}

}  // namespace detail

/// Content encoder E_c: maps a glyph to a spatial identity code plus the
/// stack of intermediate features consumed by the decoders' skip links.
template <class T>
struct ContentEncoder {
  detail::EncoderTrunk<T> trunk;

  ContentEncoder() = default;
  explicit ContentEncoder(Rng& rng) : trunk(rng) {}

  ContentEncoding<T> operator()(const Var<T>& image) const {
    detail::check_glyph_batch(image, "ContentEncoder");
    ContentEncoding<T> out;
    Var<T> h = image;
    int res = kImageSize;
    for (const auto& stage : trunk.stages) {
      h = stage(h);
      res /= 2;
      check(h->value.dim(2) == res && h->value.dim(3) == res,
            "ContentEncoder: stage resolution drifted");
      out.skips.push_back(h);
    }
    out.code = h;
    check(out.code->value.dim(1) == kContentChannels &&
              out.code->value.dim(2) == kContentSpatial,
          "ContentEncoder: bad code shape");
    check(out.code->value.all_finite(), "ContentEncoder: non-finite content code");
    return out;
  }

  void visit(const std::string& p, const ParamVisitor<T>& f) const { trunk.visit(p, f); }
};

/// Style encoder E_f: same trunk shape as E_c with independent parameters,
/// followed by a fully connected head producing mu and sigma.
template <class T>
struct StyleEncoder {
  detail::EncoderTrunk<T> trunk;
  LinearLayer<T> head;
  static constexpr T kSigmaFloor = T(1e-6);

  StyleEncoder() = default;
  explicit StyleEncoder(Rng& rng)
      : trunk(rng),
        head(kContentChannels * kContentSpatial * kContentSpatial, 2 * kStyleDim, rng) {}

  StyleDist<T> operator()(const Var<T>& image) const {
    detail::check_glyph_batch(image, "StyleEncoder");
    Var<T> h = image;
    for (const auto& stage : trunk.stages) h = stage(h);
    const int n = h->value.dim(0);
    h = reshape(h, {n, kContentChannels * kContentSpatial * kContentSpatial});
    Var<T> out = head(h);
    StyleDist<T> d;
    d.mu = slice_cols(out, 0, kStyleDim);
    d.sigma = add_scalar(softplus(slice_cols(out, kStyleDim, kStyleDim)), kSigmaFloor);
    check(d.mu->value.all_finite() && d.sigma->value.all_finite(),
          "StyleEncoder: non-finite style stats");
    return d;
  }

  void visit(const std::string& p, const ParamVisitor<T>& f) const {
    trunk.visit(p, f);
    head.visit(p + "/head", f);
  }
};

/// z = mu + sigma (.) eps, with noise supplied by the caller.
template <class T>
Var<T> reparameterize(const StyleDist<T>& d, const Var<T>& eps) {
  check(eps->value.same_shape(d.mu->value), "reparameterize: eps shape mismatch");
  return add(d.mu, mul(d.sigma, eps));
}

/// Draw from a font's style prior N(y*1, I): z = y*1 + eps.
template <class T>
Tensor<T> sample_style_prior(const std::vector<int>& labels, const Tensor<T>& eps) {
  check(eps.rank() == 2 && eps.dim(1) == kStyleDim &&
            eps.dim(0) == static_cast<int>(labels.size()),
        "sample_style_prior: eps shape mismatch");
  Tensor<T> z = eps;
  for (int i = 0; i < eps.dim(0); ++i) {
    check(labels[i] >= 0, "sample_style_prior: negative font label");
    for (int j = 0; j < kStyleDim; ++j)
      z[i * kStyleDim + j] += static_cast<T>(labels[i]);
  }
  return z;
}

namespace detail {

/// Decoder stage: stride-2 4x4 deconvolution to the next resolution, then the
/// same-resolution encoder feature joins by channel concatenation, a 1x1
/// convolution folds the pair back to the mirror width, and a residual block
/// refines. Skips come from the content encoder only.
template <class T>
struct UpBlock {
  ConvTr2dLayer<T> deconv;
  InstanceNormLayer<T> norm1;
  Conv2dLayer<T> merge;
  InstanceNormLayer<T> norm2;
  ResBlock<T> res;

  UpBlock() = default;
  UpBlock(int cin, int cout, Rng& rng)
      : deconv(cin, cout, 4, 2, 1, rng),
        norm1(cout),
        merge(2 * cout, cout, 1, 1, 0, rng),
        norm2(cout),
        res(cout, rng) {}

  Var<T> operator()(const Var<T>& x, const Var<T>& skip) const {
    Var<T> h = relu(norm1(deconv(x)));
    check(h->value.dim(2) == skip->value.dim(2) && h->value.dim(1) == skip->value.dim(1),
          "UpBlock: skip feature does not match stage resolution");
    h = concat_channels(h, skip);
    h = relu(norm2(merge(h)));
    return res(h);
  }

  void visit(const std::string& p, const ParamVisitor<T>& f) const {
    deconv.visit(p + "/deconv", f);
    norm1.visit(p + "/norm1", f);
    merge.visit(p + "/merge", f);
    norm2.visit(p + "/norm2", f);
    res.visit(p + "/res", f);
  }
};

}  // namespace detail

/// Decoder (G_X or G_Y): tiles the style code over the content grid, fuses by
/// a stride-1 convolution, runs 4 up-sampling stages (2->4->8->16->32), and a
/// final stride-2 transposed-convolution output layer to 64x64 with tanh.
template <class T>
struct Decoder {
  Conv2dLayer<T> fuse;
  InstanceNormLayer<T> fuse_norm;
  std::vector<detail::UpBlock<T>> ups;
  ConvTr2dLayer<T> out;

  Decoder() = default;
  explicit Decoder(Rng& rng)
      : fuse(kContentChannels + kStyleDim, kContentChannels, 3, 1, 1, rng),
        fuse_norm(kContentChannels),
        out(kEncoderWidths[0], 1, 4, 2, 1, rng) {
    int cin = kContentChannels;
    for (int i = static_cast<int>(kEncoderWidths.size()) - 2; i >= 0; --i) {
      ups.emplace_back(cin, kEncoderWidths[static_cast<std::size_t>(i)], rng);
      cin = kEncoderWidths[static_cast<std::size_t>(i)];
    }
  }

  Var<T> operator()(const Var<T>& content, const Var<T>& style,
                    const std::vector<Var<T>>& skips) const {
    const auto& cs = content->value.shape();
    check(cs.size() == 4 && cs[1] == kContentChannels && cs[2] == kContentSpatial &&
              cs[3] == kContentSpatial,
          "Decoder: bad content shape " + Tensor<T>::shape_str(cs));
    check(style->value.rank() == 2 && style->value.dim(1) == kStyleDim,
          "Decoder: bad style shape");
    check(style->value.dim(0) == cs[0], "Decoder: batch mismatch content/style");
    check(skips.size() == kEncoderWidths.size(), "Decoder: expected 5 skip levels");

    Var<T> h = concat_channels(content, tile_spatial(style, kContentSpatial, kContentSpatial));
    h = relu(fuse_norm(fuse(h)));
    // Skip levels arrive ordered 32,16,8,4,2; stages consume 4,8,16,32.
    for (std::size_t i = 0; i < ups.size(); ++i) {
      const auto& skip = skips[skips.size() - 2 - i];
      h = ups[i](h, skip);
    }
    Var<T> img = tanh_act(out(h));
    const auto& os = img->value.shape();
    check(os[1] == 1 && os[2] == kImageSize && os[3] == kImageSize,
          "Decoder: bad output shape " + Tensor<T>::shape_str(os));
    return img;
  }

  void visit(const std::string& p, const ParamVisitor<T>& f) const {
    fuse.visit(p + "/fuse", f);
    fuse_norm.visit(p + "/fuse_norm", f);
    for (std::size_t i = 0; i < ups.size(); ++i)
      ups[i].visit(p + "/up" + std::to_string(i), f);
    out.visit(p + "/out", f);
  }
};

/// Conditional patch discriminator: condition and candidate concatenate on
/// channels, four stride-2 blocks reach 4x4, and a 1x1 convolution emits one
/// real/fake logit per patch. No normalization in the first block.
template <class T>
struct Discriminator {
  std::vector<Conv2dLayer<T>> convs;
  std::vector<InstanceNormLayer<T>> norms;  // for blocks 1..3
  Conv2dLayer<T> head;
  static constexpr T kLeak = T(0.2);
  static constexpr std::array<int, 4> kWidths{32, 64, 128, 256};

  Discriminator() = default;
  explicit Discriminator(Rng& rng) {
    int cin = 2;
    for (std::size_t i = 0; i < kWidths.size(); ++i) {
      convs.emplace_back(cin, kWidths[i], 4, 2, 1, rng);
      if (i > 0) norms.emplace_back(kWidths[i]);
      cin = kWidths[i];
    }
    head = Conv2dLayer<T>(cin, 1, 1, 1, 0, rng);
  }

  Var<T> operator()(const Var<T>& condition, const Var<T>& candidate) const {
    detail::check_glyph_batch(condition, "Discriminator(condition)");
    detail::check_glyph_batch(candidate, "Discriminator(candidate)");
    Var<T> h = concat_channels(condition, candidate);
    for (std::size_t i = 0; i < convs.size(); ++i) {
      h = convs[i](h);
      if (i > 0) h = norms[i - 1](h);
      h = leaky_relu(h, kLeak);
    }
    Var<T> logits = head(h);
    const auto& s = logits->value.shape();
    check(s[1] == 1 && s[2] == kPatchGrid && s[3] == kPatchGrid,
          "Discriminator: bad score map shape " + Tensor<T>::shape_str(s));
    return logits;
  }

  void visit(const std::string& p, const ParamVisitor<T>& f) const {
    for (std::size_t i = 0; i < convs.size(); ++i)
      convs[i].visit(p + "/block" + std::to_string(i) + "/conv", f);
    for (std::size_t i = 0; i < norms.size(); ++i)
      norms[i].visit(p + "/block" + std::to_string(i + 1) + "/norm", f);
    head.visit(p + "/headconv", f);
  }
};

/// The full six-subnet bundle. One content encoder and one style encoder are
/// shared by both translation directions; decoders and discriminators are
/// per-direction with independent parameters.
template <class T>
struct GlyphGan {
  ContentEncoder<T> content_enc;   // E_c
  StyleEncoder<T> style_enc;       // E_f
  Decoder<T> dec_stylize;          // G_Y: standard -> styled
  Decoder<T> dec_destylize;        // G_X: styled -> standard
  Discriminator<T> disc_styled;    // D_Y
  Discriminator<T> disc_standard;  // D_X

  GlyphGan() = default;
  explicit GlyphGan(std::uint64_t seed) {
    Rng rng(seed);
    content_enc = ContentEncoder<T>(rng);
    style_enc = StyleEncoder<T>(rng);
    dec_stylize = Decoder<T>(rng);
    dec_destylize = Decoder<T>(rng);
    disc_styled = Discriminator<T>(rng);
    disc_standard = Discriminator<T>(rng);
  }

  void visit(const ParamVisitor<T>& f) const {
    content_enc.visit("E_c", f);
    style_enc.visit("E_f", f);
    dec_stylize.visit("G_Y", f);
    dec_destylize.visit("G_X", f);
    disc_styled.visit("D_Y", f);
    disc_standard.visit("D_X", f);
  }

  std::vector<Var<T>> generator_params() const {
    std::vector<Var<T>> out;
    auto take = [&out](const std::string&, const Var<T>& v) { out.push_back(v); };
    content_enc.visit("E_c", take);
    style_enc.visit("E_f", take);
    dec_stylize.visit("G_Y", take);
    dec_destylize.visit("G_X", take);
    return out;
  }

  std::vector<Var<T>> discriminator_params() const {
    std::vector<Var<T>> out;
    auto take = [&out](const std::string&, const Var<T>& v) { out.push_back(v); };
    disc_styled.visit("D_Y", take);
    disc_standard.visit("D_X", take);
    return out;
  }

  std::vector<Var<T>> all_params() const {
    auto out = generator_params();
    auto d = discriminator_params();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }

  void save_params(TensorArchive& a) const {
    visit([&a](const std::string& name, const Var<T>& v) { a.put(name, v->value); });
  }

  void load_params(const TensorArchive& a) {
    visit([&a](const std::string& name, const Var<T>& v) {
      Tensor<T> t = a.template get<T>(name);
      check(t.same_shape(v->value), "checkpoint: shape mismatch for " + name);
      v->value = std::move(t);
    });
  }

  void set_trainable(bool trainable) {
    visit([trainable](const std::string&, const Var<T>& v) { v->requires_grad = trainable; });
  }
};

}  // namespace glyphstyle
