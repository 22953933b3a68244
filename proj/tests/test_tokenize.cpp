#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/synthetic.h"
#include "core/tokenize.h"
#include "support/oracles.h"

using namespace avfuse;

namespace {

Tensor<double> identity_proj(index_t d) {
  Tensor<double> w = Tensor<double>::zeros({d, d});
  for (index_t i = 0; i < d; ++i) w.data_mut()[i * d + i] = 1.0;
  return w;
}

}  // namespace

TEST_CASE("image patch counts") {
  Rng rng(1);
  auto img = oracles::random_tensor({2, 3, 64, 64}, rng, false);
  auto w = identity_proj(8 * 8 * 3);
  auto b = Tensor<double>::zeros({8 * 8 * 3});
  auto tb = patchify_image(img, 8, w, b);
  CHECK(tb.n_tokens() == 64);
  CHECK(tb.grid_rows == 8);
  CHECK(tb.grid_cols == 8);

  auto big = Tensor<double>::zeros({1, 3, 224, 224});
  auto wb = identity_proj(16 * 16 * 3);
  auto bb = Tensor<double>::zeros({16 * 16 * 3});
  auto tb2 = patchify_image(big, 16, wb, bb);
  CHECK(tb2.n_tokens() == 196);

  CHECK_THROWS_AS(patchify_image(img, 7, w, b), ConfigError);
}

TEST_CASE("image patchify round trip under identity projection") {
  Rng rng(2);
  auto img = oracles::random_tensor({2, 3, 16, 16}, rng, false);
  auto w = identity_proj(8 * 8 * 3);
  auto b = Tensor<double>::zeros({8 * 8 * 3});
  auto tb = patchify_image(img, 8, w, b);
  auto back = unpatchify_image(tb.tokens, tb.grid_rows, tb.grid_cols, 8, 3);
  for (index_t i = 0; i < img.numel(); ++i) CHECK(back.data()[i] == doctest::Approx(img.data()[i]));
}

TEST_CASE("spectrogram padding and token counts") {
  auto spec = Tensor<double>::zeros({1, 1, 128, 196});
  auto w = identity_proj(16 * 16);
  auto b = Tensor<double>::zeros({16 * 16});
  auto tb = patchify_spectrogram(spec, 16, w, b);
  CHECK(tb.grid_rows == 8);
  CHECK(tb.grid_cols == 13);  // 196 zero-padded to 208
  CHECK(tb.n_tokens() == 104);

  auto small = Tensor<double>::zeros({1, 1, 32, 48});
  auto w8 = identity_proj(64);
  auto b8 = Tensor<double>::zeros({64});
  auto tb2 = patchify_spectrogram(small, 8, w8, b8);
  CHECK(tb2.grid_rows == 4);
  CHECK(tb2.grid_cols == 6);
  CHECK(tb2.n_tokens() == 24);

  auto bad = Tensor<double>::zeros({1, 1, 30, 48});
  CHECK_THROWS_AS(patchify_spectrogram(bad, 8, w8, b8), ConfigError);
}

TEST_CASE("all-zero spectrogram tokens equal the projection bias") {
  Rng rng(3);
  auto spec = Tensor<double>::zeros({1, 1, 16, 24});
  auto w = oracles::random_tensor({64, 32}, rng, false);
  auto b = oracles::random_tensor({32}, rng, false);
  auto tb = patchify_spectrogram(spec, 8, w, b);
  for (index_t t = 0; t < tb.n_tokens(); ++t)
    for (index_t j = 0; j < 32; ++j)
      CHECK(tb.tokens.at({0, t, j}) == doctest::Approx(b.data()[j]));
}

TEST_CASE("spectrogram round trip excludes the padded region") {
  Rng rng(4);
  auto spec = oracles::random_tensor({2, 1, 16, 21}, rng, false);
  auto raw = spectrogram_patches(spec, 8);
  CHECK(raw.dim(1) == 2 * 3);  // 16/8 x ceil(21/8)
  auto back = unpatchify_spectrogram(raw, 2, 3, 8, 21);
  CHECK(back.shape() == Shape{2, 1, 16, 21});
  for (index_t i = 0; i < spec.numel(); ++i)
    CHECK(back.data()[i] == doctest::Approx(spec.data()[i]));
}

TEST_CASE("token count formula holds over random valid configurations") {
  Rng rng(5);
  for (int round = 0; round < 25; ++round) {
    index_t patch = 1 + rng.uniform_int(6);
    index_t gr = 1 + rng.uniform_int(5), gc = 1 + rng.uniform_int(5);
    index_t c = 1 + rng.uniform_int(3);
    auto img = Tensor<double>::zeros({1, c, gr * patch, gc * patch});
    CHECK(image_patches(img, patch).dim(1) == gr * gc);

    index_t t = 1 + rng.uniform_int(40);
    auto spec = Tensor<double>::zeros({1, 1, gr * patch, t});
    index_t expect_cols = (t + patch - 1) / patch;
    CHECK(spectrogram_patches(spec, patch).dim(1) == gr * expect_cols);
  }
}

TEST_CASE("sincos positional embedding") {
  auto one = sincos_pos_embed<double>(1, 1, 16);
  CHECK(one.shape() == Shape{1, 16});
  for (double v : one.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  auto grid = sincos_pos_embed<double>(1, 2, 16);
  double max_diff = 0;
  for (index_t j = 0; j < 16; ++j)
    max_diff = std::max(max_diff, std::fabs(grid.at({0, j}) - grid.at({1, j})));
  CHECK(max_diff > 1e-3);

  auto again = sincos_pos_embed<double>(1, 2, 16);
  for (index_t i = 0; i < grid.numel(); ++i) CHECK(grid.data()[i] == again.data()[i]);

  CHECK_THROWS_AS(sincos_pos_embed<double>(2, 2, 18), ConfigError);
}

TEST_CASE("synthetic batches are deterministic and jointly labeled") {
  SyntheticSpec spec;
  spec.image_size = 16;
  spec.spec_bins = 8;
  spec.spec_frames = 12;
  auto a = generate_synthetic_batch<float>(spec, 8, uint64_t(42));
  auto b = generate_synthetic_batch<float>(spec, 8, uint64_t(42));
  REQUIRE(a.size() == 8);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].class_id == b[i].class_id);
    CHECK(a[i].cross_label == b[i].cross_label);
    CHECK(a[i].cross_label == (a[i].visual_factor + a[i].audio_factor) % spec.classes);
    for (index_t j = 0; j < a[i].image.numel(); ++j)
      CHECK(a[i].image.data()[j] == b[i].image.data()[j]);
    for (index_t j = 0; j < a[i].spectrogram.numel(); ++j)
      CHECK(a[i].spectrogram.data()[j] == b[i].spectrogram.data()[j]);
  }
  CHECK_THROWS_AS(([&] {
                    SyntheticSpec bad = spec;
                    bad.classes = 1;
                    generate_synthetic_batch<float>(bad, 1, uint64_t(1));
                  }()),
                  ConfigError);
}
