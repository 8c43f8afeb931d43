#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "portdet/image.hpp"

namespace portdet {

struct EventRecord {
  std::uint64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;  // +1 brighter, -1 darker

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct EventStream {
  int width = 0;
  int height = 0;
  std::vector<EventRecord> events;

  // Throws FormatError on out-of-range coordinates, bad polarity or
  // decreasing timestamps.
  void validate() const;
};

struct EventHistogram {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> counts;  // row-major
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;

  std::uint32_t at(int x, int y) const { return counts[static_cast<std::size_t>(y) * width + x]; }
  std::uint64_t total() const;
};

inline constexpr std::size_t kDefaultEventsPerHistogram = 35000;
inline constexpr int kDefaultCountClamp = 5;

// Non-overlapping windows of exactly n events, polarity ignored; a trailing
// partial window is dropped. Throws ConfigError for n == 0 and FormatError
// for an invalid stream.
std::vector<EventHistogram> build_histograms(const EventStream& stream, std::size_t n);

// min(count, c_max) / c_max. Throws ConfigError for c_max < 1.
InputFrame histogram_to_frame(const EventHistogram& h, int c_max = kDefaultCountClamp);

struct EventSimConfig {
  double contrast = 0.2;
  double epsilon = 1.0 / 255.0;
  // Poisson noise events per pixel per second.
  double noise_rate_hz = 0.0;

  void validate() const;
};

// Contrast-threshold sensor. Each pixel keeps the log intensity at which it
// last fired; a step emits one event per full threshold crossing and moves
// the reference by the crossed amount.
class EventSimulator {
 public:
  EventSimulator(const MaskImage& initial, const EventSimConfig& cfg);

  // Events for the transition to `next` over (t_a, t_b], sorted by time.
  std::vector<EventRecord> step(const MaskImage& next, std::uint64_t t_a, std::uint64_t t_b, std::mt19937_64& rng);

 private:
  EventSimConfig cfg_;
  int width_, height_;
  std::vector<double> reference_;
};

// Stateless pairwise form: k = floor(|log(I_b + eps) - log(I_a + eps)| / C)
// events per pixel with the sign of the change, crossing times linearly
// interpolated in (t_a, t_b].
std::vector<EventRecord> simulate_events(const MaskImage& a, const MaskImage& b, std::uint64_t t_a,
                                         std::uint64_t t_b, const EventSimConfig& cfg, std::mt19937_64& rng);

// PORTEVT1 binary layout.
void write_events(const std::string& path, const EventStream& s);
EventStream read_events(const std::string& path);
// `t_us,x,y,p` with an optional header line; the sensor size is not stored.
EventStream read_events_csv(const std::string& path, int width, int height);
void write_events_csv(const std::string& path, const EventStream& s);

}  // namespace portdet
