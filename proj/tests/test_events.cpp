#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "portdet/errors.hpp"
#include "portdet/events.hpp"

using namespace portdet;

namespace {

EventStream random_stream(std::size_t n, int w, int h, std::mt19937_64& rng) {
  EventStream s;
  s.width = w;
  s.height = h;
  std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1), dt(0, 3);
  std::bernoulli_distribution pol(0.5);
  std::uint64_t t = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    t += static_cast<std::uint64_t>(dt(rng));
    s.events.push_back({t, static_cast<std::uint16_t>(ux(rng)), static_cast<std::uint16_t>(uy(rng)),
                        static_cast<std::int8_t>(pol(rng) ? 1 : -1)});
  }
  return s;
}

std::string tmp(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("histograms stride by N and drop the partial window") {
  std::mt19937_64 rng(1);
  const EventStream s = random_stream(70000, 346, 260, rng);
  const auto hs = build_histograms(s, kDefaultEventsPerHistogram);
  REQUIRE(hs.size() == 2);
  for (const auto& h : hs) CHECK(h.total() == 35000);
  CHECK(hs[0].t_start == s.events[0].t_us);
  CHECK(hs[0].t_end == s.events[34999].t_us);
  CHECK(hs[1].t_start == s.events[35000].t_us);
  CHECK(hs[0].t_start <= hs[0].t_end);

  EventStream short_stream = s;
  short_stream.events.resize(34999);
  CHECK(build_histograms(short_stream, 35000).empty());

  EventStream tiny = s;
  tiny.events.resize(5);
  const auto ones = build_histograms(tiny, 1);
  REQUIRE(ones.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(ones[i].total() == 1);
    CHECK(ones[i].at(tiny.events[i].x, tiny.events[i].y) == 1);
  }
  CHECK_THROWS_AS(build_histograms(s, 0), ConfigError);
}

TEST_CASE("unsorted or out-of-range streams are rejected") {
  std::mt19937_64 rng(2);
  EventStream s = random_stream(100, 10, 10, rng);
  std::swap(s.events[10].t_us, s.events[50].t_us);
  s.events[50].t_us += 100;
  CHECK_THROWS_AS(build_histograms(s, 10), FormatError);
  EventStream bad = random_stream(10, 10, 10, rng);
  bad.events[3].x = 10;
  CHECK_THROWS_AS(build_histograms(bad, 1), FormatError);
}

TEST_CASE("histograms ignore polarity") {
  std::mt19937_64 rng(3);
  const EventStream s = random_stream(5000, 40, 30, rng);
  EventStream flipped = s;
  for (auto& e : flipped.events) e.polarity = static_cast<std::int8_t>(-e.polarity);
  const auto a = build_histograms(s, 700), b = build_histograms(flipped, 700);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].counts == b[i].counts);
}

TEST_CASE("histogram_to_frame clamps and normalizes") {
  EventHistogram h;
  h.width = 3;
  h.height = 1;
  h.counts = {0, 5, 2};
  const InputFrame f = histogram_to_frame(h, 5);
  CHECK(f.channels == 1);
  CHECK(f.at(0, 0, 0) == 0.0f);
  CHECK(f.at(0, 1, 0) == 1.0f);
  h.counts = {9, 4, 2};
  const InputFrame g = histogram_to_frame(h, 4);
  CHECK(g.at(0, 0, 0) == 1.0f);
  CHECK(g.at(0, 2, 0) == 0.5f);
  CHECK_THROWS_AS(histogram_to_frame(h, 0), ConfigError);
}

TEST_CASE("simulator: static scene and exact threshold multiples") {
  std::mt19937_64 rng(4);
  MaskImage a(20, 10, 0.3f);
  EventSimConfig cfg;
  CHECK(simulate_events(a, a, 0, 1000, cfg, rng).empty());

  MaskImage b = a;
  const double eps = cfg.epsilon;
  b.at(4, 5) = static_cast<float>((0.3f + eps) * std::exp(3 * cfg.contrast) - eps);
  b.at(7, 2) = static_cast<float>((0.3f + eps) * std::exp(-2 * cfg.contrast) - eps);
  const auto ev = simulate_events(a, b, 100, 200, cfg, rng);
  int up = 0, down = 0;
  for (const auto& e : ev) {
    CHECK(e.t_us > 100);
    CHECK(e.t_us <= 200);
    if (e.x == 4 && e.y == 5) up += e.polarity == 1 ? 1 : -100;
    else if (e.x == 7 && e.y == 2) down += e.polarity == -1 ? 1 : -100;
    else FAIL("event at an unchanged pixel");
  }
  CHECK(up == 3);
  CHECK(down == 2);
}

TEST_CASE("simulator matches per-pixel log-difference oracle on a moving edge") {
  const int w = 64, h = 16;
  EventSimConfig cfg;
  auto render = [&](double edge) {
    MaskImage m(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // Soft ramp edge of width 4 px.
        const double v = std::clamp((x - edge) / 4.0 + 0.5, 0.0, 1.0);
        m.at(x, y) = static_cast<float>(0.1 + 0.8 * v);
      }
    return m;
  };
  std::mt19937_64 rng(5);
  for (int step = 0; step < 10; ++step) {
    const MaskImage a = render(10.0 + 3.3 * step), b = render(10.0 + 3.3 * (step + 1));
    const auto ev = simulate_events(a, b, 1000 * step, 1000 * (step + 1), cfg, rng);
    std::vector<int> got(w * h, 0);
    for (const auto& e : ev) got[e.y * w + e.x] += e.polarity;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d = std::log(b.at(x, y) + cfg.epsilon) - std::log(a.at(x, y) + cfg.epsilon);
        const int k = static_cast<int>(std::floor(std::abs(d) / cfg.contrast + 1e-6));
        CHECK(got[y * w + x] == (d > 0 ? k : -k));
      }
    for (std::size_t i = 1; i < ev.size(); ++i) CHECK(ev[i - 1].t_us <= ev[i].t_us);
  }
}

TEST_CASE("stateful simulator accumulates sub-threshold changes") {
  EventSimConfig cfg;
  MaskImage m(1, 1, 0.2f);
  EventSimulator sim(m, cfg);
  std::mt19937_64 rng(6);
  int total = 0;
  double level = std::log(0.2 + cfg.epsilon);
  for (int i = 1; i <= 10; ++i) {
    level += 0.6 * cfg.contrast;
    m.at(0, 0) = static_cast<float>(std::exp(level) - cfg.epsilon);
    total += static_cast<int>(sim.step(m, 100 * (i - 1), 100 * i, rng).size());
  }
  CHECK(total == 6);
}

TEST_CASE("simulator noise is seeded and roughly Poisson") {
  EventSimConfig cfg;
  cfg.noise_rate_hz = 2.0;
  MaskImage a(100, 100, 0.5f);
  std::mt19937_64 r1(9), r2(9);
  const auto e1 = simulate_events(a, a, 0, 1000000, cfg, r1);
  const auto e2 = simulate_events(a, a, 0, 1000000, cfg, r2);
  CHECK(e1 == e2);
  // Expected 2 events per pixel over one second.
  CHECK(std::abs(static_cast<double>(e1.size()) - 20000.0) < 5 * std::sqrt(20000.0));
  cfg.contrast = 0.0;
  CHECK_THROWS_AS(simulate_events(a, a, 0, 10, cfg, r1), ConfigError);
}

TEST_CASE("PORTEVT1 and CSV round trips") {
  std::mt19937_64 rng(7);
  const EventStream s = random_stream(1234, 346, 260, rng);
  const auto bin = tmp("portdet_events.bin");
  write_events(bin, s);
  CHECK(std::filesystem::file_size(bin) == 28 + 16 * 1234);
  const EventStream back = read_events(bin);
  CHECK(back.width == 346);
  CHECK(back.height == 260);
  CHECK(back.events == s.events);

  {
    std::fstream f(bin, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(2);
    f.put('X');
  }
  CHECK_THROWS_AS(read_events(bin), FormatError);
  std::filesystem::remove(bin);

  const auto csv = tmp("portdet_events.csv");
  write_events_csv(csv, s);
  CHECK(read_events_csv(csv, 346, 260).events == s.events);
  {
    std::ofstream f(csv);
    f << "10,1,2,0\n20,3,4,1\n";
  }
  const EventStream c = read_events_csv(csv, 5, 5);
  REQUIRE(c.events.size() == 2);
  CHECK(c.events[0].polarity == -1);
  CHECK(c.events[1].polarity == 1);
  {
    std::ofstream f(csv);
    f << "10,1,2\n";
  }
  CHECK_THROWS_AS(read_events_csv(csv, 5, 5), FormatError);
  std::filesystem::remove(csv);
}
