#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "glyphstyle/net/subnets.hpp"
#include "test_helpers.hpp"

using namespace glyphstyle;

namespace {

template <class T>
Var<T> random_glyph_batch(int n, Rng& rng) {
  Tensor<T> t = rng.uniform_tensor<T>({n, 1, kImageSize, kImageSize}, -1.0, 1.0);
  return constant(std::move(t));
}

template <class T>
void zero_param(const Var<T>& p) {
  p->value.fill(T(0));
}

}  // namespace

TEST_CASE("shape chain over randomized batch sizes") {
  GlyphGan<float> model(123);
  Rng rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 8));
    auto img = random_glyph_batch<float>(n, rng);

    auto enc = model.content_enc(img);
    REQUIRE(enc.code->value.shape() == std::vector<int>{n, 512, 2, 2});
    REQUIRE(enc.skips.size() == 5);
    int res = 32;
    for (const auto& s : enc.skips) {
      CHECK(s->value.dim(2) == res);
      CHECK(s->value.dim(3) == res);
      res /= 2;
    }

    auto dist = model.style_enc(img);
    REQUIRE(dist.mu->value.shape() == std::vector<int>{n, 128});
    REQUIRE(dist.sigma->value.shape() == std::vector<int>{n, 128});
    for (std::int64_t i = 0; i < dist.sigma->value.size(); ++i)
      CHECK(dist.sigma->value[i] > 0.0f);

    auto eps = constant(rng.normal_tensor<float>({n, kStyleDim}));
    auto z = reparameterize(dist, eps);
    auto out = model.dec_stylize(enc.code, z, enc.skips);
    REQUIRE(out->value.shape() == std::vector<int>{n, 1, 64, 64});
    for (std::int64_t i = 0; i < out->value.size(); ++i) {
      CHECK(out->value[i] <= 1.0f);
      CHECK(out->value[i] >= -1.0f);
    }

    auto logits = model.disc_styled(img, out);
    REQUIRE(logits->value.shape() == std::vector<int>{n, 1, 4, 4});
  }
}

TEST_CASE("encoders reject wrong input shapes") {
  GlyphGan<float> model(5);
  auto bad = constant(Tensor<float>({2, 1, 32, 32}));
  CHECK_THROWS_AS(model.content_enc(bad), std::invalid_argument);
  CHECK_THROWS_AS(model.style_enc(bad), std::invalid_argument);
  auto bad3 = constant(Tensor<float>({2, 3, 64, 64}));
  CHECK_THROWS_AS(model.disc_styled(bad3, bad3), std::invalid_argument);
}

TEST_CASE("forward passes are deterministic") {
  GlyphGan<float> model(42);
  Rng rng(9);
  auto img = random_glyph_batch<float>(3, rng);
  auto c1 = model.content_enc(img).code->value;
  auto c2 = model.content_enc(img).code->value;
  for (std::int64_t i = 0; i < c1.size(); ++i) REQUIRE(c1[i] == c2[i]);

  auto enc = model.content_enc(img);
  auto z = constant(rng.normal_tensor<float>({3, kStyleDim}));
  auto o1 = model.dec_destylize(enc.code, z, enc.skips)->value;
  auto o2 = model.dec_destylize(enc.code, z, enc.skips)->value;
  for (std::int64_t i = 0; i < o1.size(); ++i) REQUIRE(o1[i] == o2[i]);
}

TEST_CASE("zeroed final content stage yields an all-zero code") {
  GlyphGan<float> model(77);
  auto& stage5 = model.content_enc.trunk.stages.back();
  zero_param(stage5.conv.weight);
  zero_param(stage5.conv.bias);
  // Residual path past a zeroed stride-2 conv stays zero because every bias
  // downstream is zero-initialized.
  auto ones = constant(Tensor<float>({2, 1, 64, 64}, 1.0f));
  auto enc = model.content_enc(ones);
  for (std::int64_t i = 0; i < enc.code->value.size(); ++i)
    REQUIRE(enc.code->value[i] == 0.0f);
}

TEST_CASE("zeroed style head yields mu=0 and sigma=softplus(0)+floor") {
  GlyphGan<float> model(78);
  zero_param(model.style_enc.head.weight);
  zero_param(model.style_enc.head.bias);
  Rng rng(10);
  auto img = random_glyph_batch<float>(2, rng);
  auto dist = model.style_enc(img);
  const float expect_sigma = std::log(2.0f) + 1e-6f;
  for (std::int64_t i = 0; i < dist.mu->value.size(); ++i) {
    REQUIRE(dist.mu->value[i] == 0.0f);
    REQUIRE(dist.sigma->value[i] == Catch::Approx(expect_sigma).epsilon(1e-6));
  }
}

TEST_CASE("zeroed decoder output layer yields tanh(0)=0 images") {
  GlyphGan<float> model(79);
  zero_param(model.dec_stylize.out.weight);
  zero_param(model.dec_stylize.out.bias);
  Rng rng(11);
  auto img = random_glyph_batch<float>(2, rng);
  auto enc = model.content_enc(img);
  auto z = constant(rng.normal_tensor<float>({2, kStyleDim}));
  auto out = model.dec_stylize(enc.code, z, enc.skips);
  for (std::int64_t i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == 0.0f);
}

TEST_CASE("zeroed discriminator head yields zero logits") {
  GlyphGan<float> model(80);
  zero_param(model.disc_standard.head.weight);
  zero_param(model.disc_standard.head.bias);
  Rng rng(12);
  auto a = random_glyph_batch<float>(2, rng);
  auto b = random_glyph_batch<float>(2, rng);
  auto logits = model.disc_standard(a, b);
  for (std::int64_t i = 0; i < logits->value.size(); ++i) REQUIRE(logits->value[i] == 0.0f);
}

TEST_CASE("discriminator scores have no cross-sample coupling") {
  GlyphGan<float> model(81);
  Rng rng(13);
  Tensor<float> cond = rng.uniform_tensor<float>({3, 1, 64, 64}, -1.0, 1.0);
  Tensor<float> cand = rng.uniform_tensor<float>({3, 1, 64, 64}, -1.0, 1.0);
  auto scores = model.disc_styled(constant(cond), constant(cand))->value;

  // reverse the batch
  auto rev = [](const Tensor<float>& t) {
    Tensor<float> r = t;
    const std::int64_t stride = t.size() / t.dim(0);
    for (int i = 0; i < t.dim(0); ++i)
      std::copy_n(t.data() + i * stride, stride,
                  r.data() + (t.dim(0) - 1 - i) * stride);
    return r;
  };
  auto scores_rev =
      model.disc_styled(constant(rev(cond)), constant(rev(cand)))->value;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 16; ++j)
      REQUIRE(scores[i * 16 + j] == scores_rev[(2 - i) * 16 + j]);
}

TEST_CASE("reparameterize arithmetic") {
  auto mk = [](double v) { return constant(Tensor<double>({1, 128}, v)); };
  StyleDist<double> d{mk(2.0), mk(3.0)};
  auto z = reparameterize(d, mk(1.0));
  for (std::int64_t i = 0; i < z->value.size(); ++i)
    CHECK(z->value[i] == Catch::Approx(5.0));

  StyleDist<double> d0{mk(0.7), mk(1.0)};
  auto z0 = reparameterize(d0, mk(0.0));
  for (std::int64_t i = 0; i < z0->value.size(); ++i)
    CHECK(z0->value[i] == Catch::Approx(0.7));

  auto eps = constant(Tensor<double>({1, 64}, 0.0));
  CHECK_THROWS_AS(reparameterize(d, eps), std::invalid_argument);
}

TEST_CASE("style prior sampling is label-shifted noise") {
  Tensor<float> eps0({2, 128}, 0.0f);
  auto z = sample_style_prior<float>({0, 3}, eps0);
  for (int j = 0; j < 128; ++j) {
    CHECK(z[j] == 0.0f);
    CHECK(z[128 + j] == 3.0f);
  }
  Tensor<float> eps_half({1, 128}, 0.5f);
  auto z1 = sample_style_prior<float>({1}, eps_half);
  for (int j = 0; j < 128; ++j) CHECK(z1[j] == 1.5f);
}

TEST_CASE("initialization is seed-deterministic with calibrated spread") {
  GlyphGan<float> a(1000), b(1000), c(1001);
  bool all_equal = true, any_diff = false;
  std::vector<Var<float>> pa = a.all_params(), pb = b.all_params(), pc = c.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::int64_t j = 0; j < pa[i]->value.size(); ++j) {
      if (pa[i]->value[j] != pb[i]->value[j]) all_equal = false;
      if (pa[i]->value[j] != pc[i]->value[j]) any_diff = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff);

  // sampled std of conv weights within [0.015, 0.025] over a large sample
  double sum = 0.0, sq = 0.0;
  std::int64_t count = 0;
  a.content_enc.visit("E_c", [&](const std::string& name, const Var<float>& p) {
    if (name.find("/weight") == std::string::npos) return;
    for (std::int64_t j = 0; j < p->value.size(); ++j) {
      sum += p->value[j];
      sq += static_cast<double>(p->value[j]) * p->value[j];
      ++count;
    }
  });
  REQUIRE(count >= 10000);
  const double mean = sum / static_cast<double>(count);
  const double stddev = std::sqrt(sq / static_cast<double>(count) - mean * mean);
  CHECK(stddev > 0.015);
  CHECK(stddev < 0.025);
}

TEST_CASE("parameter partitions are disjoint and encoders are shared") {
  GlyphGan<float> model(2024);
  auto gen = model.generator_params();
  auto disc = model.discriminator_params();
  std::set<const void*> gset, dset;
  for (const auto& p : gen) gset.insert(p.get());
  for (const auto& p : disc) dset.insert(p.get());
  CHECK(gset.size() == gen.size());
  CHECK(dset.size() == disc.size());
  for (const void* p : dset) CHECK(gset.count(p) == 0);

  // E_c appears exactly once in the generator partition (shared across both
  // translation directions rather than duplicated per direction).
  std::vector<Var<float>> ec;
  model.content_enc.visit("E_c", [&](const std::string&, const Var<float>& p) {
    ec.push_back(p);
  });
  std::size_t hits = 0;
  for (const auto& p : ec) hits += gset.count(p.get());
  CHECK(hits == ec.size());
}

TEST_CASE("decoder input contracts") {
  GlyphGan<float> model(3);
  Rng rng(14);
  auto img = random_glyph_batch<float>(2, rng);
  auto enc = model.content_enc(img);
  auto bad_style = constant(Tensor<float>({2, 64}));
  CHECK_THROWS_AS(model.dec_stylize(enc.code, bad_style, enc.skips),
                  std::invalid_argument);
  auto good_style = constant(Tensor<float>({2, 128}));
  auto short_skips = enc.skips;
  short_skips.pop_back();
  CHECK_THROWS_AS(model.dec_stylize(enc.code, good_style, short_skips),
                  std::invalid_argument);
}
