#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "glyphstyle/data/dataset.hpp"
#include "glyphstyle/loss/losses.hpp"
#include "glyphstyle/net/subnets.hpp"
#include "glyphstyle/train/config.hpp"

namespace glyphstyle {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Frozen content-prior encoder: the content encoder of a model pre-trained on
// a structurally simple font pair, reused read-only to anchor the live
// content space during main training.
// ---------------------------------------------------------------------------

template <class T>
struct ContentPrior {
  ContentEncoder<T> encoder;
  nlohmann::json meta;

  static ContentPrior load(const std::filesystem::path& path) {
    TensorArchive a = TensorArchive::load(path);
    check(a.meta.value("kind", "") == "content_prior",
          "content prior: " + path.string() + " is not a content-prior artifact");
    ContentPrior p;
    Rng scratch(0);
    p.encoder = ContentEncoder<T>(scratch);
    p.encoder.visit("E_c", [&a](const std::string& name, const Var<T>& v) {
      Tensor<T> t = a.template get<T>(name);
      check(t.same_shape(v->value), "content prior: shape mismatch for " + name);
      v->value = std::move(t);
      v->requires_grad = false;
    });
    p.meta = a.meta;
    return p;
  }

  static void save(const ContentEncoder<T>& enc, nlohmann::json meta,
                   const std::filesystem::path& path) {
    TensorArchive a;
    meta["kind"] = "content_prior";
    meta["dtype"] = std::is_same_v<T, float> ? "f32" : "f64";
    a.meta = std::move(meta);
    enc.visit("E_c", [&a](const std::string& name, const Var<T>& v) { a.put(name, v->value); });
    a.save(path);
  }
};

// ---------------------------------------------------------------------------
// Trainer: owns the six subnets, the two optimizers (strict parameter
// partition) and the RNG streams. One step = one discriminator update
// followed by one generator update on the same batch.
// ---------------------------------------------------------------------------

template <class T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const GlyphStore& store)
      : cfg_(std::move(cfg)),
        store_(&store),
        model_(cfg_.seed),
        data_rng_(cfg_.seed),
        model_rng_(cfg_.seed + 0x9e3779b97f4a7c15ull) {
    cfg_.validate();
    config_hash_ = cfg_.hash(store.manifest().content_hash);
    gen_opt_ = Adam<T>(model_.generator_params(), cfg_.adam_beta1, cfg_.adam_beta2);
    disc_opt_ = Adam<T>(model_.discriminator_params(), cfg_.adam_beta1, cfg_.adam_beta2);
    for (const auto& f : store.manifest().fonts) fonts_.push_back(f);
    if (cfg_.use_cpm) {
      check(!cfg_.cpm_artifact.empty(),
            "trainer: use_cpm requires a content-prior artifact path");
      prior_ = ContentPrior<T>::load(cfg_.cpm_artifact);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  GlyphGan<T>& model() { return model_; }
  const GlyphGan<T>& model() const { return model_; }
  Adam<T>& gen_opt() { return gen_opt_; }
  Adam<T>& disc_opt() { return disc_opt_; }
  Rng& data_rng() { return data_rng_; }
  Rng& model_rng() { return model_rng_; }
  int epoch() const { return epoch_; }
  std::int64_t global_step() const { return global_step_; }
  const std::string& config_hash() const { return config_hash_; }
  const std::vector<FontEntry>& fonts() const { return fonts_; }
  const ContentPrior<T>* content_prior() const { return prior_ ? &*prior_ : nullptr; }

  /// Register a font beyond the training set (fine-tuning). Labels and names
  /// must not collide with the existing table.
  void add_font(const FontEntry& f) {
    for (const auto& e : fonts_) {
      check(e.label != f.label,
            "finetune: font label collision on " + std::to_string(f.label));
      check(e.name != f.name, "finetune: font name collision on " + f.name);
    }
    fonts_.push_back(f);
  }

  /// One pass over the training characters, one paired sample per target
  /// font per character on average.
  int steps_per_epoch() const {
    const int chars = static_cast<int>(store_->manifest().train_chars.size());
    const int targets = std::max(1, store_->font_count() - 1);
    return std::max(1, chars * targets / cfg_.batch_size);
  }

  /// Full graph update on one batch: discriminators first, then the
  /// generator partition, per-step learning rate supplied by the schedule.
  LossReport train_step(const std::vector<PairedSample>& batch, double lr) {
    auto bt = to_batch_tensors<T>(batch);
    return train_step(bt, lr);
  }

  LossReport train_step(const BatchTensors<T>& bt, double lr) {
    const int n = bt.source.dim(0);
    auto source = constant(bt.source);          // I^X: font 0, char A
    auto target = constant(bt.target);          // I^Y: font y, char B
    auto source_ref = constant(bt.source_ref);  // font 0, char B
    auto target_ref = constant(bt.target_ref);  // font y, char A

    // ---- generator-side forward graph -----------------------------------
    auto enc_x = model_.content_enc(source);
    auto enc_y = model_.content_enc(target);
    auto dist_x = model_.style_enc(source);
    auto dist_y = model_.style_enc(target);
    auto eps_x = constant(model_rng_.template normal_tensor<T>({n, kStyleDim}));
    auto eps_y = constant(model_rng_.template normal_tensor<T>({n, kStyleDim}));
    auto z_x = reparameterize(dist_x, eps_x);
    auto z_y = reparameterize(dist_y, eps_y);

    // exchange: content of the other image, own style
    auto fake_x = model_.dec_destylize(enc_y.code, z_x, enc_y.skips);
    auto fake_y = model_.dec_stylize(enc_x.code, z_y, enc_x.skips);
    Var<T> sam_y;
    if (cfg_.use_fcm) {
      auto eps_s = model_rng_.template normal_tensor<T>({n, kStyleDim});
      auto z_sample = constant(sample_style_prior<T>(bt.labels, eps_s));
      sam_y = model_.dec_stylize(enc_x.code, z_sample, enc_x.skips);
    }

    // re-encode generated images for consistency/regression terms
    auto re_content_x = model_.content_enc(fake_x).code;
    auto re_content_y = model_.content_enc(fake_y).code;
    Var<T> re_content_s = sam_y ? model_.content_enc(sam_y).code : Var<T>{};
    auto re_style_x = model_.style_enc(fake_x).mu;
    auto re_style_y = model_.style_enc(fake_y).mu;
    Var<T> re_style_s = sam_y ? model_.style_enc(sam_y).mu : Var<T>{};

    Var<T> prior_term;
    if (cfg_.use_cpm) {
      auto prior_code = prior_->encoder(source_ref).code;  // frozen
      prior_term = content_prior_loss(enc_y.code, prior_code);
    }

    // ---- discriminator update -------------------------------------------
    auto real_logits_y = model_.disc_styled(source, target_ref);
    auto real_logits_x = model_.disc_standard(target, source_ref);
    LossTerms<T> terms;
    terms.d_xy = adversarial_losses(real_logits_y,
                                    model_.disc_styled(source, detach(fake_y)))
                     .d_loss;
    terms.d_yx = adversarial_losses(real_logits_x,
                                    model_.disc_standard(target, detach(fake_x)))
                     .d_loss;
    if (sam_y)
      terms.d_sam = adversarial_losses(real_logits_y,
                                       model_.disc_styled(source, detach(sam_y)))
                        .d_loss;
    auto d_total = total_loss(terms, cfg_.weights);
    abort_on_nonfinite(d_total.report);
    backward(d_total.total_d);
    disc_opt_.step(lr);
    zero_all_grads();

    // ---- generator update (scored by the freshly updated discriminators) ----
    terms.gan_xy =
        adversarial_losses(real_logits_y, model_.disc_styled(source, fake_y)).g_loss;
    terms.gan_yx =
        adversarial_losses(real_logits_x, model_.disc_standard(target, fake_x)).g_loss;
    if (sam_y)
      terms.gan_sam =
          adversarial_losses(real_logits_y, model_.disc_styled(source, sam_y)).g_loss;
    terms.pixel = pixel_loss(fake_y, target_ref, sam_y, fake_x, source_ref);
    terms.content = content_consistency_loss(re_content_x, re_content_y, re_content_s,
                                             enc_x.code, enc_y.code);
    if (cfg_.use_fcm) {
      terms.kl_source = kl_loss(dist_x.mu, dist_x.sigma, std::vector<int>(n, 0));
      terms.kl_target = kl_loss(dist_y.mu, dist_y.sigma, bt.labels);
    }
    terms.label = label_loss(dist_x.mu, dist_y.mu, bt.labels);
    terms.regression = latent_regression_loss(re_style_x, re_style_y, re_style_s, z_x, z_y);
    terms.prior = prior_term;

    auto g_total = total_loss(terms, cfg_.weights);
    abort_on_nonfinite(g_total.report);
    backward(g_total.total_g);
    gen_opt_.step(lr);
    zero_all_grads();

    ++global_step_;
    return g_total.report;
  }

  /// Full training run with per-epoch checkpoints (last + best by the
  /// de-stylization eval) and a JSONL loss log. Set resume=true to continue
  /// from <checkpoint_dir>/ckpt_last.gsar.
  void train(bool resume = false) {
    namespace fs = std::filesystem;
    check(!cfg_.checkpoint_dir.empty(), "trainer: checkpoint_dir not set");
    fs::create_directories(cfg_.checkpoint_dir);
    const fs::path log_path = fs::path(cfg_.checkpoint_dir) / "loss_log.jsonl";

    if (resume) {
      load_state(fs::path(cfg_.checkpoint_dir) / "ckpt_last.gsar");
    } else {
      nlohmann::json hdr;
      hdr["type"] = "config";
      hdr["config"] = cfg_;
      hdr["config_hash"] = config_hash_;
      hdr["steps_per_epoch"] = steps_per_epoch();
      std::ofstream log(log_path, std::ios::trunc);
      check(log.good(), "trainer: cannot write " + log_path.string());
      log << hdr.dump() << "\n";
    }

    std::ofstream log(log_path, std::ios::app);
    const int spe = steps_per_epoch();
    for (int epoch = epoch_ + 1; epoch <= cfg_.epochs; ++epoch) {
      const double lr = cfg_.lr_at_epoch(epoch);
      for (int s = 0; s < spe; ++s) {
        auto batch = sample_batch(*store_, cfg_.batch_size, Split::train, data_rng_);
        LossReport rep = train_step(batch, lr);
        nlohmann::json rec = rep;
        rec["type"] = "step";
        rec["step"] = global_step_;
        rec["epoch"] = epoch;
        rec["lr"] = lr;
        log << rec.dump() << "\n";
        log.flush();
      }
      epoch_ = epoch;
      if (epoch % cfg_.checkpoint_every == 0 || epoch == cfg_.epochs) {
        const double eval = destylize_eval();
        save_state(fs::path(cfg_.checkpoint_dir) / "ckpt_last.gsar", eval);
        if (eval < best_eval_) {
          best_eval_ = eval;
          save_state(fs::path(cfg_.checkpoint_dir) / "ckpt_best.gsar", eval);
        }
      }
    }
  }

  // ---- inference paths ---------------------------------------------------

  /// De-stylize: decode content with the standard-font prior mean (z = 0).
  Tensor<T> destylize(const Tensor<T>& images) {
    auto img = constant(images);
    auto enc = model_.content_enc(img);
    auto z = constant(Tensor<T>({images.dim(0), kStyleDim}));
    return model_.dec_destylize(enc.code, z, enc.skips)->value;
  }

  /// Stylize with style encoded from reference glyphs (deterministic: z = mu).
  Tensor<T> stylize_with_reference(const Tensor<T>& sources, const Tensor<T>& refs) {
    auto src = constant(sources);
    auto enc = model_.content_enc(src);
    auto dist = model_.style_enc(constant(refs));
    return model_.dec_stylize(enc.code, dist.mu, enc.skips)->value;
  }

  /// Stylize with a style drawn from the font prior: z = y*1 + eps.
  Tensor<T> stylize_with_prior(const Tensor<T>& sources, const std::vector<int>& labels,
                               const Tensor<T>& eps) {
    auto src = constant(sources);
    auto enc = model_.content_enc(src);
    auto z = constant(sample_style_prior<T>(labels, eps));
    return model_.dec_stylize(enc.code, z, enc.skips)->value;
  }

  // ---- checkpointing ------------------------------------------------------

  void save_state(const std::filesystem::path& path, double eval) const {
    TensorArchive a;
    model_.save_params(a);
    save_adam(a, "adam_g", gen_opt_, [this](const ParamVisitor<T>& f) {
      model_.content_enc.visit("E_c", f);
      model_.style_enc.visit("E_f", f);
      model_.dec_stylize.visit("G_Y", f);
      model_.dec_destylize.visit("G_X", f);
    });
    save_adam(a, "adam_d", disc_opt_, [this](const ParamVisitor<T>& f) {
      model_.disc_styled.visit("D_Y", f);
      model_.disc_standard.visit("D_X", f);
    });
    nlohmann::json meta;
    meta["kind"] = "checkpoint";
    meta["version"] = kCheckpointVersion;
    meta["dtype"] = std::is_same_v<T, float> ? "f32" : "f64";
    meta["config"] = cfg_;
    meta["config_hash"] = config_hash_;
    meta["epoch"] = epoch_;
    meta["global_step"] = global_step_;
    meta["best_eval"] = best_eval_ == std::numeric_limits<double>::infinity()
                            ? nlohmann::json()
                            : nlohmann::json(best_eval_);
    meta["last_eval"] = eval;
    meta["data_rng"] = data_rng_.state();
    meta["model_rng"] = model_rng_.state();
    meta["adam_g_steps"] = gen_opt_.step_count();
    meta["adam_d_steps"] = disc_opt_.step_count();
    nlohmann::json jf = nlohmann::json::array();
    for (const auto& f : fonts_)
      jf.push_back({{"name", f.name}, {"label", f.label}, {"file", f.file}});
    meta["fonts"] = jf;
    a.meta = meta;
    a.save(path);
  }

  void load_state(const std::filesystem::path& path) {
    TensorArchive a = TensorArchive::load(path);
    check(a.meta.value("kind", "") == "checkpoint",
          "trainer: " + path.string() + " is not a checkpoint");
    const std::string got = a.meta.value("config_hash", "");
    check(got == config_hash_,
          "trainer: checkpoint config hash " + got + " does not match current " +
              config_hash_ + "; refusing to resume");
    model_.load_params(a);
    load_adam(a, "adam_g", gen_opt_, a.meta.value("adam_g_steps", std::int64_t{0}),
              [this](const ParamVisitor<T>& f) {
                model_.content_enc.visit("E_c", f);
                model_.style_enc.visit("E_f", f);
                model_.dec_stylize.visit("G_Y", f);
                model_.dec_destylize.visit("G_X", f);
              });
    load_adam(a, "adam_d", disc_opt_, a.meta.value("adam_d_steps", std::int64_t{0}),
              [this](const ParamVisitor<T>& f) {
                model_.disc_styled.visit("D_Y", f);
                model_.disc_standard.visit("D_X", f);
              });
    epoch_ = a.meta.value("epoch", 0);
    global_step_ = a.meta.value("global_step", std::int64_t{0});
    if (a.meta.contains("best_eval") && !a.meta["best_eval"].is_null())
      best_eval_ = a.meta["best_eval"].get<double>();
    data_rng_.set_state(a.meta.at("data_rng").get<std::string>());
    model_rng_.set_state(a.meta.at("model_rng").get<std::string>());
  }

  /// Mean de-stylization L1 (on the [0,1] scale) over capped test chars and
  /// all target fonts; falls back to +inf when the test split cannot score.
  double destylize_eval() {
    const auto chars = store_->manifest().codepoints(Split::test);
    const int fonts = store_->font_count();
    if (chars.empty() || fonts < 2) return std::numeric_limits<double>::infinity();
    const int take = std::min<int>(cfg_.eval_max_chars, static_cast<int>(chars.size()));
    double acc = 0.0;
    std::int64_t count = 0;
    for (int ci = 0; ci < take; ++ci) {
      for (int y = 1; y < fonts; ++y) {
        Tensor<T> in({1, 1, 64, 64});
        Tensor<T> ref({1, 1, 64, 64});
        const auto& styled = store_->image(y, chars[static_cast<std::size_t>(ci)]);
        const auto& standard = store_->image(0, chars[static_cast<std::size_t>(ci)]);
        for (std::int64_t i = 0; i < 64 * 64; ++i) {
          in[i] = static_cast<T>(styled.pixels[i]);
          ref[i] = static_cast<T>(standard.pixels[i]);
        }
        Tensor<T> out = destylize(in);
        for (std::int64_t i = 0; i < out.size(); ++i)
          acc += std::abs(static_cast<double>(out[i]) - static_cast<double>(ref[i])) / 2.0;
        count += out.size();
      }
    }
    return acc / static_cast<double>(count);
  }

 private:
  void zero_all_grads() {
    for (auto& p : model_.all_params()) p->zero_grad();
  }

  static void abort_on_nonfinite(const LossReport& rep) {
    if (auto bad = rep.first_nonfinite())
      throw TrainError("non-finite loss term: " + *bad);
  }

  template <class VisitFn>
  static void save_adam(TensorArchive& a, const std::string& prefix, const Adam<T>& opt,
                        VisitFn visit_partition) {
    std::vector<std::string> names;
    visit_partition([&names](const std::string& n, const Var<T>&) { names.push_back(n); });
    const auto& m = opt.moments1();
    const auto& v = opt.moments2();
    check(names.size() == m.size(), "checkpoint: optimizer/parameter count mismatch");
    for (std::size_t i = 0; i < names.size(); ++i) {
      a.put(prefix + "/m/" + names[i], m[i]);
      a.put(prefix + "/v/" + names[i], v[i]);
    }
  }

  template <class VisitFn>
  static void load_adam(const TensorArchive& a, const std::string& prefix, Adam<T>& opt,
                        std::int64_t steps, VisitFn visit_partition) {
    std::vector<std::string> names;
    visit_partition([&names](const std::string& n, const Var<T>&) { names.push_back(n); });
    auto& m = opt.moments1();
    auto& v = opt.moments2();
    check(names.size() == m.size(), "checkpoint: optimizer/parameter count mismatch");
    for (std::size_t i = 0; i < names.size(); ++i) {
      m[i] = a.template get<T>(prefix + "/m/" + names[i]);
      v[i] = a.template get<T>(prefix + "/v/" + names[i]);
    }
    opt.set_step_count(steps);
  }

  TrainConfig cfg_;
  const GlyphStore* store_;
  GlyphGan<T> model_;
  Adam<T> gen_opt_, disc_opt_;
  Rng data_rng_, model_rng_;
  std::optional<ContentPrior<T>> prior_;
  std::vector<FontEntry> fonts_;
  std::string config_hash_;
  int epoch_ = 0;
  std::int64_t global_step_ = 0;
  double best_eval_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Content-prior pre-training: train the full graph on exactly two
// structurally simple fonts with the prior term switched off, then freeze
// and export the content encoder.
// ---------------------------------------------------------------------------

template <class T>
void pretrain_content_prior(const GlyphStore& store, TrainConfig cfg,
                            const std::filesystem::path& artifact_path) {
  check(store.font_count() == 2,
        "pretrain: expects exactly two fonts (standard + one simple target)");
  cfg.use_cpm = false;  // the prior does not exist yet, regardless of caller flags
  cfg.cpm_artifact.clear();
  Trainer<T> trainer(cfg, store);
  trainer.train(false);
  nlohmann::json meta;
  meta["pretrain_fonts"] = {store.manifest().fonts[0].name,
                            store.manifest().fonts[1].name};
  meta["epochs"] = cfg.epochs;
  meta["config_hash"] = trainer.config_hash();
  ContentPrior<T>::save(trainer.model().content_enc, meta, artifact_path);
}

// ---------------------------------------------------------------------------
// Fine-tuning on a new font: the new font takes the next unused label, and
// training continues on pairs drawn from {standard font, new font} with all
// subnets trainable. `pair_store` is a two-font dataset (labels 0 and 1)
// whose target-font samples get relabeled to the new label on the fly.
// ---------------------------------------------------------------------------

template <class T>
int finetune_on_new_font(Trainer<T>& trainer, const GlyphStore& pair_store, int epochs,
                         double lr) {
  check(pair_store.font_count() == 2, "finetune: pair dataset must hold exactly 2 fonts");
  check(epochs >= 1, "finetune: epochs must be >= 1");
  const int new_label = static_cast<int>(trainer.fonts().size());
  const auto& nf = pair_store.manifest().fonts[1];
  trainer.add_font({nf.name, new_label, nf.file});

  const int chars = static_cast<int>(pair_store.manifest().train_chars.size());
  const int spe = std::max(1, chars / trainer.config().batch_size);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (int s = 0; s < spe; ++s) {
      auto batch = sample_batch(pair_store, trainer.config().batch_size, Split::train,
                                trainer.data_rng());
      auto bt = to_batch_tensors<T>(batch);
      for (int& l : bt.labels) l = new_label;
      trainer.train_step(bt, lr);
    }
  }
  return new_label;
}

}  // namespace glyphstyle
