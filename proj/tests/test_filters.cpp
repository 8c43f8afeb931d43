#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "portdet/filters.hpp"

using namespace portdet;

namespace {

Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(c, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_diff(const Tensor& t, const oracle::Field& f) {
  REQUIRE(t.channels == f.c);
  REQUIRE(t.height == f.h);
  REQUIRE(t.width == f.w);
  double m = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) m = std::max(m, std::abs(t.data[i] - f.v[i]));
  return m;
}

InputFrame random_frame(int w, int h, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  InputFrame f(w, h, c);
  for (auto& v : f.data) v = u(rng);
  return f;
}

// Two-layer fixture: 3x3 conv (pad 1, bias -0.5) followed by the sigmoid.
CnnWeights micro_network() {
  CnnWeights w;
  w.modality = Modality::event;
  Layer conv;
  conv.kind = LayerKind::conv;
  conv.out_channels = conv.in_channels = 1;
  conv.kh = conv.kw = 3;
  conv.stride = 1;
  conv.padding = 1;
  conv.bias = {-0.5f};
  conv.weights = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f};
  Layer sig;
  sig.kind = LayerKind::sigmoid;
  sig.out_channels = sig.in_channels = 1;
  sig.kh = sig.kw = 1;
  w.layers = {conv, sig};
  return w;
}

}  // namespace

TEST_CASE("conv2d small cases") {
  Tensor x(1, 3, 4);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<float>(i) * 0.1f;
  const std::vector<float> identity = {0, 0, 0, 0, 1, 0, 0, 0, 0};
  const float zero = 0.0f;
  Tensor y = conv2d(x, identity, std::span<const float>(&zero, 1), 1, 3, 3, 1, 1);
  CHECK(y.data == x.data);

  Tensor one(1, 1, 1, 0.7f);
  const float w = 2.0f, b = -0.3f;
  Tensor z = conv2d(one, std::span<const float>(&w, 1), std::span<const float>(&b, 1), 1, 1, 1, 1, 0);
  CHECK(z.data[0] == doctest::Approx(2.0f * 0.7f - 0.3f));
}

TEST_CASE("conv2d matches nested-loop oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    std::uniform_int_distribution<int> dim(1, 16), ch(1, 4), kk(1, 5), st(1, 3), pd(0, 2);
    const int c = ch(rng), o = ch(rng), k = kk(rng), s = st(rng), p = pd(rng);
    const int h = std::max(dim(rng), k), w = std::max(dim(rng), k);
    const Tensor x = random_tensor(c, h, w, rng);
    const auto kern = random_vec(static_cast<std::size_t>(o) * c * k * k, rng);
    const auto bias = random_vec(o, rng);
    const Tensor y = conv2d(x, kern, bias, o, k, k, s, p);
    CHECK(y.height == (h + 2 * p - k) / s + 1);
    CHECK(max_diff(y, oracle::conv(oracle::to_field(x), kern, bias, o, k, k, s, p)) < 1e-6 * (c * k * k));
  }
  // 4x4 input, 3x3 kernel, the literal spec shape.
  const Tensor x = random_tensor(1, 4, 4, rng);
  const auto kern = random_vec(9, rng);
  const auto bias = random_vec(1, rng);
  CHECK(max_diff(conv2d(x, kern, bias, 1, 3, 3, 1, 0), oracle::conv(oracle::to_field(x), kern, bias, 1, 3, 3, 1, 0)) <
        1e-6);
}

TEST_CASE("maxpool2") {
  Tensor c(2, 4, 6, 0.25f);
  CHECK(maxpool2(c).data == std::vector<float>(2 * 2 * 3, 0.25f));
  Tensor b(1, 2, 2);
  b.data = {1, 2, 3, 4};
  CHECK(maxpool2(b).data == std::vector<float>{4});
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = random_tensor(3, 2 * (1 + t % 7), 2 * (1 + t % 5), rng);
    CHECK(max_diff(maxpool2(x), oracle::maxpool(oracle::to_field(x))) == 0.0);
  }
}

TEST_CASE("deconv2d small cases and oracles") {
  Tensor one(1, 1, 1, 3.0f);
  const std::vector<float> k = {1, 2, 3, 4};
  const float zero = 0.0f;
  CHECK(deconv2d(one, k, std::span<const float>(&zero, 1), 1, 2, 2, 2, 0).data == std::vector<float>{3, 6, 9, 12});

  Tensor z(2, 3, 3);
  const std::vector<float> bias = {0.5f, -1.0f};
  const Tensor out = deconv2d(z, std::vector<float>(2 * 2 * 16, 1.0f), bias, 2, 4, 4, 2, 1);
  CHECK(out.height == 6);
  CHECK(out.width == 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      CHECK(out.at(0, y, x) == 0.5f);
      CHECK(out.at(1, y, x) == -1.0f);
    }

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<int> dim(1, 12), ch(1, 4), kk(2, 5), st(1, 3);
    const int c = ch(rng), o = ch(rng), kz = kk(rng), s = st(rng);
    const int p = std::uniform_int_distribution<int>(0, (kz - 1) / 2)(rng);
    const Tensor x = random_tensor(c, dim(rng), dim(rng), rng);
    const auto kern = random_vec(static_cast<std::size_t>(o) * c * kz * kz, rng);
    const auto b = random_vec(o, rng);
    const Tensor y = deconv2d(x, kern, b, o, kz, kz, s, p);
    CHECK(max_diff(y, oracle::deconv(oracle::to_field(x), kern, b, o, kz, kz, s, p)) < 1e-6 * (c * kz * kz));

    // Adjoint of the strided convolution with the channel-swapped kernel:
    // <deconv(x), g> == <x, conv(g)> for zero bias.
    std::vector<float> swapped(kern.size());
    for (int oo = 0; oo < o; ++oo)
      for (int cc = 0; cc < c; ++cc)
        for (int i = 0; i < kz * kz; ++i)
          swapped[(static_cast<std::size_t>(cc) * o + oo) * kz * kz + i] =
              kern[(static_cast<std::size_t>(oo) * c + cc) * kz * kz + i];
    const std::vector<float> zo(o, 0.0f), zc(c, 0.0f);
    const Tensor dx = deconv2d(x, kern, zo, o, kz, kz, s, p);
    const Tensor g = random_tensor(o, dx.height, dx.width, rng);
    const oracle::Field cg = oracle::conv(oracle::to_field(g), swapped, zc, c, kz, kz, s, p);
    if (cg.h != x.height || cg.w != x.width) continue;
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < dx.data.size(); ++i) lhs += static_cast<double>(dx.data[i]) * g.data[i];
    for (std::size_t i = 0; i < x.data.size(); ++i) rhs += static_cast<double>(x.data[i]) * cg.v[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
  }
}

TEST_CASE("no reads outside the window footprint") {
  // A single NaN may only contaminate outputs whose window covers it.
  std::mt19937_64 rng(9);
  Tensor x = random_tensor(2, 9, 11, rng);
  const int py = 0, px = 10;
  x.at(1, py, px) = NAN;
  const int k = 3, s = 2, p = 1;
  const auto kern = random_vec(2 * 2 * k * k, rng);
  const auto bias = random_vec(2, rng);
  const Tensor y = conv2d(x, kern, bias, 2, k, k, s, p);
  for (int o = 0; o < 2; ++o)
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx) {
        const bool covers = py >= yy * s - p && py < yy * s - p + k && px >= xx * s - p && px < xx * s - p + k;
        CHECK(std::isnan(y.at(o, yy, xx)) == covers);
      }
  const Tensor d = deconv2d(x, random_vec(2 * 2 * 16, rng), bias, 2, 4, 4, 2, 1);
  for (int yy = 0; yy < d.height; ++yy)
    for (int xx = 0; xx < d.width; ++xx) {
      const bool covers = yy - (py * 2 - 1) >= 0 && yy - (py * 2 - 1) < 4 && xx - (px * 2 - 1) >= 0 &&
                          xx - (px * 2 - 1) < 4;
      CHECK(std::isnan(d.at(0, yy, xx)) == covers);
    }

  // Zero padding equals an explicitly zero-bordered input.
  Tensor clean = random_tensor(1, 6, 6, rng);
  Tensor bordered(1, 8, 8, 0.0f);
  for (int yy = 0; yy < 6; ++yy)
    for (int xx = 0; xx < 6; ++xx) bordered.at(0, yy + 1, xx + 1) = clean.at(0, yy, xx);
  const auto k9 = random_vec(9, rng);
  const float b0 = 0.0f;
  CHECK(conv2d(clean, k9, std::span<const float>(&b0, 1), 1, 3, 3, 1, 1).data ==
        conv2d(bordered, k9, std::span<const float>(&b0, 1), 1, 3, 3, 1, 0).data);
}

TEST_CASE("forward pass matches oracle on random networks") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    const Modality m = trial % 2 ? Modality::rgb : Modality::event;
    std::uniform_int_distribution<int> width(1, 6), side(1, 4);
    CnnWeights w = make_reference_weights(m, FilterTarget::ring, {width(rng), width(rng), width(rng)}, rng());
    for (auto& l : w.layers)
      for (auto& b : l.bias) b = std::uniform_real_distribution<float>(-0.2f, 0.2f)(rng);
    w.validate();
    CHECK(w.is_reference_architecture());
    const InputFrame f = random_frame(8 * side(rng), 8 * side(rng), static_cast<int>(m), rng);
    const Tensor out = forward(w, Tensor::from_frame(f));
    const oracle::Field ref = oracle::forward(w, oracle::to_field(Tensor::from_frame(f)));
    CHECK(max_diff(out, ref) < 1e-5);
    for (float v : out.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("micro-network fixture") {
  const CnnWeights w = micro_network();
  w.validate();
  CHECK_FALSE(w.is_reference_architecture());
  InputFrame f(8, 8, 1, 0.0f);
  f.at(0, 3, 4) = 1.0f;
  f.at(0, 0, 0) = 0.5f;
  const MaskImage m = run_filter(FilterKind::cnn(std::make_shared<CnnWeights>(w)), f);
  // Hand-computed: sigmoid(-0.5 + sum of kernel taps over the lit pixels).
  CHECK(m.at(3, 4) == doctest::Approx(0.5).epsilon(1e-5));                  // centre tap 0.5
  CHECK(m.at(2, 4) == doctest::Approx(0.52497918747894).epsilon(1e-5));     // tap 0.6
  CHECK(m.at(3, 3) == doctest::Approx(0.574442516811659).epsilon(1e-5));    // tap 0.8
  CHECK(m.at(4, 5) == doctest::Approx(0.401312339887548).epsilon(1e-5));    // tap 0.1
  CHECK(m.at(0, 0) == doctest::Approx(0.43782349911420193).epsilon(1e-5));  // 0.5 * 0.5
  CHECK(m.at(1, 1) == doctest::Approx(0.389360766050778).epsilon(1e-5));    // 0.5 * 0.1
  CHECK(m.at(7, 7) == doctest::Approx(0.3775406687981454).epsilon(1e-5));   // bias only
}

TEST_CASE("zero head gives a uniform half mask") {
  CnnWeights w = make_reference_weights(Modality::rgb, FilterTarget::reflector, {4, 4, 4}, 1);
  auto& head = w.layers[9];
  std::fill(head.weights.begin(), head.weights.end(), 0.0f);
  std::fill(head.bias.begin(), head.bias.end(), 0.0f);
  std::mt19937_64 rng(2);
  const MaskImage m = run_filter(FilterKind::cnn(std::make_shared<CnnWeights>(w)), random_frame(37, 21, 3, rng));
  CHECK(m.width == 37);
  CHECK(m.height == 21);
  for (float v : m.data) CHECK(v == 0.5f);
}

TEST_CASE("run_filter rejects mismatched weights") {
  auto w = std::make_shared<CnnWeights>(make_reference_weights(Modality::event, FilterTarget::ring, {2, 2, 2}));
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(run_filter(FilterKind::cnn(w), random_frame(16, 16, 3, rng)), ConfigError);
  FilterKind k = FilterKind::cnn(w);
  k.target = FilterTarget::reflector;
  CHECK_THROWS_AS(run_filter(k, random_frame(16, 16, 1, rng)), ConfigError);
  CHECK_THROWS_AS(run_filter(FilterKind::cnn(nullptr), random_frame(16, 16, 1, rng)), ConfigError);
  CHECK_NOTHROW(run_filter(FilterKind::cnn(w), random_frame(16, 16, 1, rng)));
}

TEST_CASE("translation by the pooling stride is equivariant on the interior") {
  CnnWeights w = make_reference_weights(Modality::event, FilterTarget::ring, {4, 6, 8}, 17);
  std::mt19937_64 rng(4);
  for (auto& l : w.layers)
    for (auto& b : l.bias) b = std::uniform_real_distribution<float>(-0.1f, 0.1f)(rng);
  const int n = 96;
  const InputFrame big = random_frame(n + 16, n + 24, 1, rng);
  // a is a window of big; b is the same window moved by (8, 16).
  const int dx = 8, dy = 16;
  InputFrame a(n, n, 1), b(n, n, 1);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      a.at(0, x, y) = big.at(0, x + dx, y + dy);
      b.at(0, x, y) = big.at(0, x, y);
    }
  const Tensor oa = forward(w, Tensor::from_frame(a));
  const Tensor ob = forward(w, Tensor::from_frame(b));
  const int margin = 32;
  double worst = 0.0, spread = 0.0;
  for (int y = margin; y < n - margin - dy; ++y)
    for (int x = margin; x < n - margin - dx; ++x) {
      worst = std::max(worst, static_cast<double>(std::abs(oa.at(0, y, x) - ob.at(0, y + dy, x + dx))));
      spread = std::max(spread, static_cast<double>(std::abs(oa.at(0, y, x) - oa.at(0, margin, margin))));
    }
  CHECK(spread > 1e-3);  // the output is not constant
  CHECK(worst < 1e-5);
}

TEST_CASE("weight file round trip and load errors") {
  const CnnWeights w = make_reference_weights(Modality::rgb, FilterTarget::reflector, {16, 32, 64}, 7);
  CHECK(w.parameter_count() > 50000);
  const auto bytes = serialize_weights(w);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "PORTCNN1");
  CHECK(bytes[8] == 1);
  CHECK(bytes[12] == 3);
  CHECK(bytes[13] == 1);
  CHECK(bytes[14] == 11);
  const std::size_t expected = 8 + 4 + 1 + 1 + 4 + 11 * (1 + 6 * 4) + 4 * w.parameter_count() + 4;
  CHECK(bytes.size() == expected);

  const CnnWeights back = parse_weights(bytes);
  CHECK(back.modality == w.modality);
  CHECK(back.target == w.target);
  REQUIRE(back.layers.size() == w.layers.size());
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    CHECK(back.layers[i].weights == w.layers[i].weights);
    CHECK(back.layers[i].bias == w.layers[i].bias);
  }

  const auto path = (std::filesystem::temp_directory_path() / "portdet_weights_test.bin").string();
  save_weights(path, w);
  CHECK(load_weights(path).parameter_count() == w.parameter_count());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_weights(path), IoError);

  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      parse_weights(b);
    } catch (const WeightLoadError& e) {
      return static_cast<int>(e.kind);
    }
    return -1;
  };
  auto magic = bytes;
  magic[3] ^= 0x01;
  CHECK(kind_of(magic) == static_cast<int>(WeightError::bad_magic));

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK(kind_of(truncated) == static_cast<int>(WeightError::truncated));
  CHECK(kind_of(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10)) ==
        static_cast<int>(WeightError::truncated));

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK(kind_of(flipped) == static_cast<int>(WeightError::checksum));

  CnnWeights broken = w;
  broken.layers[2].in_channels = 15;
  broken.layers[2].weights.resize(broken.layers[2].weight_count());
  CHECK(kind_of(serialize_weights(broken)) == static_cast<int>(WeightError::shape_chain));

  auto version = bytes;
  version[8] = 2;
  CHECK(kind_of(version) == static_cast<int>(WeightError::bad_version));
}

TEST_CASE("shape chain validation") {
  CnnWeights w = make_reference_weights(Modality::event, FilterTarget::ring, {2, 3, 4});
  CHECK_NOTHROW(w.validate());
  CHECK(w.spatial_quantum() == 8);

  CnnWeights no_sigmoid = w;
  no_sigmoid.layers.pop_back();
  CHECK_THROWS_AS(no_sigmoid.validate(), WeightLoadError);

  CnnWeights missing_up = w;
  missing_up.layers.erase(missing_up.layers.begin() + 8);
  missing_up.layers[8].in_channels = 3;
  missing_up.layers[8].weights.resize(missing_up.layers[8].weight_count());
  CHECK_THROWS_AS(missing_up.validate(), WeightLoadError);

  CnnWeights wrong_modality = w;
  wrong_modality.modality = Modality::rgb;
  CHECK_THROWS_AS(wrong_modality.validate(), WeightLoadError);

  CnnWeights odd_conv = w;
  odd_conv.layers[0].padding = 0;
  CHECK_THROWS_AS(odd_conv.validate(), WeightLoadError);
}

TEST_CASE("classical filter basics") {
  InputFrame black(346, 260, 3, 0.0f);
  for (auto t : {FilterTarget::ring, FilterTarget::reflector}) {
    const MaskImage m = run_filter(FilterKind::classical(t), black);
    for (float v : m.data) CHECK(v == 0.0f);
  }
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const InputFrame noise = random_frame(346, 260, trial % 2 ? 3 : 1, rng);
    for (auto t : {FilterTarget::ring, FilterTarget::reflector}) {
      const MaskImage m = classical_filter(noise, t);
      int above = 0;
      for (float v : m.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        above += v > 0.5f;
      }
      CHECK(above < 0.05 * static_cast<double>(m.size()));
    }
  }
  const InputFrame f = random_frame(64, 48, 3, rng);
  CHECK(classical_filter(f, FilterTarget::ring) == classical_filter(f, FilterTarget::ring));
}
