#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "glyphstyle/core/autodiff.hpp"

namespace glyphstyle {

/// Relative weights of the objective terms.
struct LossWeights {
  double lambda_pix = 30.0;
  double lambda_con = 5.0;
  double lambda_pri = 5.0;
  double lambda_lab = 1.0;
  double lambda_reg = 1.0;
  double lambda_kl = 0.01;

  void validate() const {
    check(lambda_pix >= 0 && lambda_con >= 0 && lambda_pri >= 0 && lambda_lab >= 0 &&
              lambda_reg >= 0 && lambda_kl >= 0,
          "LossWeights: weights must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_pix", w.lambda_pix}, {"lambda_con", w.lambda_con},
       {"lambda_pri", w.lambda_pri}, {"lambda_lab", w.lambda_lab},
       {"lambda_reg", w.lambda_reg}, {"lambda_kl", w.lambda_kl}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w.lambda_pix = j.value("lambda_pix", w.lambda_pix);
  w.lambda_con = j.value("lambda_con", w.lambda_con);
  w.lambda_pri = j.value("lambda_pri", w.lambda_pri);
  w.lambda_lab = j.value("lambda_lab", w.lambda_lab);
  w.lambda_reg = j.value("lambda_reg", w.lambda_reg);
  w.lambda_kl = j.value("lambda_kl", w.lambda_kl);
}

/// Scalar value of every objective term for one step. Fields are absent when
/// the corresponding mechanism is switched off.
struct LossReport {
  std::optional<double> gan_xy, gan_yx, gan_sam;
  std::optional<double> d_xy, d_yx, d_sam;
  std::optional<double> pixel, content, kl_source, kl_target, label, regression, prior;
  std::optional<double> total_g, total_d;

  std::vector<std::pair<std::string, std::optional<double>>> fields() const {
    return {{"gan_xy", gan_xy},     {"gan_yx", gan_yx},   {"gan_sam", gan_sam},
            {"d_xy", d_xy},         {"d_yx", d_yx},       {"d_sam", d_sam},
            {"pixel", pixel},       {"content", content}, {"kl_source", kl_source},
            {"kl_target", kl_target}, {"label", label},   {"regression", regression},
            {"prior", prior},       {"total_g", total_g}, {"total_d", total_d}};
  }

  /// Name of the first non-finite term, if any.
  std::optional<std::string> first_nonfinite() const {
    for (const auto& [name, v] : fields())
      if (v && !std::isfinite(*v)) return name;
    return std::nullopt;
  }
};

inline void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json::object();
  for (const auto& [name, v] : r.fields())
    if (v) j[name] = *v;
}

inline void from_json(const nlohmann::json& j, LossReport& r) {
  auto pick = [&j](const char* k) -> std::optional<double> {
    if (j.contains(k)) return j.at(k).get<double>();
    return std::nullopt;
  };
  r.gan_xy = pick("gan_xy");
  r.gan_yx = pick("gan_yx");
  r.gan_sam = pick("gan_sam");
  r.d_xy = pick("d_xy");
  r.d_yx = pick("d_yx");
  r.d_sam = pick("d_sam");
  r.pixel = pick("pixel");
  r.content = pick("content");
  r.kl_source = pick("kl_source");
  r.kl_target = pick("kl_target");
  r.label = pick("label");
  r.regression = pick("regression");
  r.prior = pick("prior");
  r.total_g = pick("total_g");
  r.total_d = pick("total_d");
}

namespace lossdetail {

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean_all(square(sub(a, b)));
}

template <class T>
Var<T> mae(const Var<T>& a, const Var<T>& b) {
  return mean_all(abs_val(sub(a, b)));
}

/// [N,D] constant where row i is filled with labels[i].
template <class T>
Var<T> label_rows(const std::vector<int>& labels, int dims) {
  Tensor<T> t({static_cast<int>(labels.size()), dims});
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int j = 0; j < dims; ++j) t[static_cast<std::int64_t>(i) * dims + j] =
        static_cast<T>(labels[i]);
  return constant(std::move(t));
}

}  // namespace lossdetail

template <class T>
struct AdversarialLosses {
  Var<T> d_loss;  // push real logits up, fake logits down
  Var<T> g_loss;  // non-saturating: push fake logits up
};

/// Cross-entropy patch-GAN objective on raw logits, mean over patches and
/// batch. d = softplus(-real) + softplus(fake); g = softplus(-fake).
template <class T>
AdversarialLosses<T> adversarial_losses(const Var<T>& real_logits,
                                        const Var<T>& fake_logits) {
  check(real_logits->value.same_shape(fake_logits->value),
        "adversarial_losses: logit map shape mismatch");
  AdversarialLosses<T> out;
  out.d_loss =
      add(mean_all(softplus(neg(real_logits))), mean_all(softplus(fake_logits)));
  out.g_loss = mean_all(softplus(neg(fake_logits)));
  return out;
}

/// Squared-error reconstruction terms, one per generated/reference pair.
/// The sampled-path pair drops out when the style prior is disabled.
template <class T>
Var<T> pixel_loss(const Var<T>& fake_y, const Var<T>& ref_y, const Var<T>& sam_y,
                  const Var<T>& fake_x, const Var<T>& ref_x) {
  Var<T> l = add(lossdetail::mse(fake_y, ref_y), lossdetail::mse(fake_x, ref_x));
  if (sam_y) l = add(l, lossdetail::mse(sam_y, ref_y));
  return l;
}

/// Re-encoded content codes must land on the codes of the images that
/// supplied the content.
template <class T>
Var<T> content_consistency_loss(const Var<T>& re_fake_x, const Var<T>& re_fake_y,
                                const Var<T>& re_sam_y, const Var<T>& code_x,
                                const Var<T>& code_y) {
  Var<T> l =
      add(lossdetail::mse(re_fake_x, code_y), lossdetail::mse(re_fake_y, code_x));
  if (re_sam_y) l = add(l, lossdetail::mse(re_sam_y, code_x));
  return l;
}

/// KL divergence from N(mu, diag(sigma^2)) to the font prior N(y*1, I):
/// 0.5 * sum_i [(mu_i - y)^2 + sigma_i^2 - log(sigma_i^2) - 1], batch-mean.
template <class T>
Var<T> kl_loss(const Var<T>& mu, const Var<T>& sigma, const std::vector<int>& labels) {
  check(mu->value.rank() == 2 && mu->value.same_shape(sigma->value),
        "kl_loss: mu/sigma must be matching [N,D]");
  check(static_cast<int>(labels.size()) == mu->value.dim(0),
        "kl_loss: label count mismatch");
  for (std::int64_t i = 0; i < sigma->value.size(); ++i)
    check(sigma->value[i] > T(0), "kl_loss: sigma must be strictly positive");
  const int n = mu->value.dim(0), d = mu->value.dim(1);
  Var<T> y = lossdetail::label_rows<T>(labels, d);
  Var<T> terms = add_scalar(
      sub(add(square(sub(mu, y)), square(sigma)), scale(log_val(sigma), T(2))), T(-1));
  return scale(sum_all(terms), T(0.5) / static_cast<T>(n));
}

/// Pull source-font style means to 0 and target-font means to their labels:
/// mean|mu_x| + mean|mu_y - y|.
template <class T>
Var<T> label_loss(const Var<T>& mu_x, const Var<T>& mu_y, const std::vector<int>& labels) {
  check(mu_x->value.rank() == 2 && mu_y->value.rank() == 2, "label_loss: rank-2 inputs");
  check(static_cast<int>(labels.size()) == mu_y->value.dim(0),
        "label_loss: label count mismatch");
  for (int y : labels) check(y >= 1, "label_loss: target labels must be >= 1");
  Var<T> y = lossdetail::label_rows<T>(labels, mu_y->value.dim(1));
  return add(mean_all(abs_val(mu_x)), mean_all(abs_val(sub(mu_y, y))));
}

/// L1 regression of re-encoded style onto the codes that drove generation.
/// The sampled path regresses onto the encoded target style.
template <class T>
Var<T> latent_regression_loss(const Var<T>& re_mu_x, const Var<T>& re_mu_y,
                              const Var<T>& re_mu_sam, const Var<T>& z_x,
                              const Var<T>& z_y) {
  Var<T> l = add(lossdetail::mae(re_mu_x, z_x), lossdetail::mae(re_mu_y, z_y));
  if (re_mu_sam) l = add(l, lossdetail::mae(re_mu_sam, z_y));
  return l;
}

/// Anchor the live content code of a styled glyph to the frozen encoder's
/// code of the standard-font rendering. The prior side never receives
/// gradient.
template <class T>
Var<T> content_prior_loss(const Var<T>& code_target, const Var<T>& code_prior) {
  return lossdetail::mse(code_target, detach(code_prior));
}

/// All term variables of one step; absent mechanisms stay null.
template <class T>
struct LossTerms {
  Var<T> gan_xy, gan_yx, gan_sam;
  Var<T> d_xy, d_yx, d_sam;
  Var<T> pixel, content, kl_source, kl_target, label, regression, prior;
};

template <class T>
struct TotalLoss {
  Var<T> total_g;  // weighted generator objective (null if no g terms)
  Var<T> total_d;  // sum of discriminator terms (null if no d terms)
  LossReport report;
};

/// Combines term variables into the two optimized objectives and a scalar
/// report. total_g = gan terms + weighted reconstruction/consistency terms;
/// total_d = sum of discriminator terms.
template <class T>
TotalLoss<T> total_loss(const LossTerms<T>& t, const LossWeights& w) {
  w.validate();
  TotalLoss<T> out;
  auto acc = [](Var<T>& into, const Var<T>& term, double lambda) {
    if (!term) return;
    Var<T> scaled = (lambda == 1.0) ? term : scale(term, static_cast<T>(lambda));
    into = into ? add(into, scaled) : scaled;
  };
  acc(out.total_g, t.gan_xy, 1.0);
  acc(out.total_g, t.gan_yx, 1.0);
  acc(out.total_g, t.gan_sam, 1.0);
  acc(out.total_g, t.pixel, w.lambda_pix);
  acc(out.total_g, t.content, w.lambda_con);
  acc(out.total_g, t.kl_source, w.lambda_kl);
  acc(out.total_g, t.kl_target, w.lambda_kl);
  acc(out.total_g, t.label, w.lambda_lab);
  acc(out.total_g, t.regression, w.lambda_reg);
  acc(out.total_g, t.prior, w.lambda_pri);
  acc(out.total_d, t.d_xy, 1.0);
  acc(out.total_d, t.d_yx, 1.0);
  acc(out.total_d, t.d_sam, 1.0);

  auto val = [](const Var<T>& v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return static_cast<double>(v->value[0]);
  };
  out.report.gan_xy = val(t.gan_xy);
  out.report.gan_yx = val(t.gan_yx);
  out.report.gan_sam = val(t.gan_sam);
  out.report.d_xy = val(t.d_xy);
  out.report.d_yx = val(t.d_yx);
  out.report.d_sam = val(t.d_sam);
  out.report.pixel = val(t.pixel);
  out.report.content = val(t.content);
  out.report.kl_source = val(t.kl_source);
  out.report.kl_target = val(t.kl_target);
  out.report.label = val(t.label);
  out.report.regression = val(t.regression);
  out.report.prior = val(t.prior);
  out.report.total_g = val(out.total_g);
  out.report.total_d = val(out.total_d);
  return out;
}

}  // namespace glyphstyle
