#include "portdet/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "portdet/errors.hpp"

namespace portdet {

namespace {

constexpr char kMagic[8] = {'P', 'O', 'R', 'T', 'E', 'V', 'T', '1'};
constexpr std::uint32_t kEventFormatVersion = 1;

template <class T>
void put_le(std::ostream& os, T v) {
  char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(b, sizeof(T));
}

template <class T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void EventStream::validate() const {
  if (width <= 0 || height <= 0 || width > 65535 || height > 65535) throw FormatError("bad event sensor size");
  std::uint64_t last = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.x >= width || e.y >= height)
      throw FormatError("event " + std::to_string(i) + " outside the sensor");
    if (e.polarity != 1 && e.polarity != -1) throw FormatError("event " + std::to_string(i) + " has bad polarity");
    if (e.t_us < last) throw FormatError("event stream not sorted by time at index " + std::to_string(i));
    last = e.t_us;
  }
}

std::uint64_t EventHistogram::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

std::vector<EventHistogram> build_histograms(const EventStream& stream, std::size_t n) {
  if (n == 0) throw ConfigError("events per histogram must be at least 1");
  stream.validate();
  std::vector<EventHistogram> out;
  const std::size_t windows = stream.events.size() / n;
  out.reserve(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    EventHistogram h;
    h.width = stream.width;
    h.height = stream.height;
    h.counts.assign(static_cast<std::size_t>(h.width) * h.height, 0);
    const auto first = stream.events.begin() + static_cast<std::ptrdiff_t>(w * n);
    h.t_start = first->t_us;
    h.t_end = (first + static_cast<std::ptrdiff_t>(n - 1))->t_us;
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(n); ++it)
      ++h.counts[static_cast<std::size_t>(it->y) * h.width + it->x];
    out.push_back(std::move(h));
  }
  return out;
}

InputFrame histogram_to_frame(const EventHistogram& h, int c_max) {
  if (c_max < 1) throw ConfigError("count clamp must be at least 1");
  InputFrame f(h.width, h.height, 1);
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    f.data[i] = static_cast<float>(std::min<std::uint32_t>(h.counts[i], static_cast<std::uint32_t>(c_max))) /
                static_cast<float>(c_max);
  return f;
}

void EventSimConfig::validate() const {
  if (!(contrast > 0.0)) throw ConfigError("event contrast threshold must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("event log epsilon must be positive");
  if (!(noise_rate_hz >= 0.0)) throw ConfigError("event noise rate must be non-negative");
}

EventSimulator::EventSimulator(const MaskImage& initial, const EventSimConfig& cfg)
    : cfg_(cfg), width_(initial.width), height_(initial.height), reference_(initial.size()) {
  cfg_.validate();
  for (std::size_t i = 0; i < initial.size(); ++i) reference_[i] = std::log(initial.data[i] + cfg_.epsilon);
}

std::vector<EventRecord> EventSimulator::step(const MaskImage& next, std::uint64_t t_a, std::uint64_t t_b,
                                              std::mt19937_64& rng) {
  if (next.width != width_ || next.height != height_) throw ConfigError("event simulator frame size changed");
  if (t_b <= t_a) throw ConfigError("event simulator needs t_a < t_b");
  const double span = static_cast<double>(t_b - t_a);
  std::vector<EventRecord> out;
  auto stamp = [&](double frac) {
    const auto dt = static_cast<std::uint64_t>(std::llround(frac * span));
    return t_a + std::clamp<std::uint64_t>(dt, 1, t_b - t_a);
  };
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
      const double target = std::log(next.data[i] + cfg_.epsilon);
      const double delta = target - reference_[i];
      // Intensities are float32; the slack keeps exact multiples of C from
      // rounding down.
      const auto k = static_cast<long>(std::floor(std::abs(delta) / cfg_.contrast + 1e-6));
      if (k == 0) continue;
      const std::int8_t pol = delta > 0 ? 1 : -1;
      for (long j = 1; j <= k; ++j)
        out.push_back({stamp(static_cast<double>(j) * cfg_.contrast / std::abs(delta)), static_cast<std::uint16_t>(x),
                       static_cast<std::uint16_t>(y), pol});
      reference_[i] += pol * static_cast<double>(k) * cfg_.contrast;
    }
  if (cfg_.noise_rate_hz > 0.0) {
    std::poisson_distribution<int> count(cfg_.noise_rate_hz * span * 1e-6);
    std::uniform_real_distribution<double> when(0.0, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        for (int c = count(rng); c > 0; --c)
          out.push_back({stamp(when(rng)), static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                         static_cast<std::int8_t>(sign(rng) ? 1 : -1)});
  }
  std::stable_sort(out.begin(), out.end(), [](const EventRecord& a, const EventRecord& b) { return a.t_us < b.t_us; });
  return out;
}

std::vector<EventRecord> simulate_events(const MaskImage& a, const MaskImage& b, std::uint64_t t_a,
                                         std::uint64_t t_b, const EventSimConfig& cfg, std::mt19937_64& rng) {
  if (!a.same_shape(b)) throw ConfigError("event simulation frames differ in size");
  EventSimulator sim(a, cfg);
  return sim.step(b, t_a, t_b, rng);
}

void write_events(const std::string& path, const EventStream& s) {
  s.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(f, kEventFormatVersion);
  put_le<std::uint32_t>(f, static_cast<std::uint32_t>(s.width));
  put_le<std::uint32_t>(f, static_cast<std::uint32_t>(s.height));
  put_le<std::uint64_t>(f, s.events.size());
  for (const auto& e : s.events) {
    put_le<std::uint64_t>(f, e.t_us);
    put_le<std::uint16_t>(f, e.x);
    put_le<std::uint16_t>(f, e.y);
    put_le<std::uint8_t>(f, static_cast<std::uint8_t>(e.polarity));
    const char pad[3] = {0, 0, 0};
    f.write(pad, 3);
  }
  if (!f) throw IoError("write failed: " + path);
}

EventStream read_events(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = 8 + 4 + 4 + 4 + 8;
  if (b.size() < 8 || std::memcmp(b.data(), kMagic, 8) != 0) throw FormatError(path + ": not a PORTEVT1 file");
  if (b.size() < header) throw FormatError(path + ": truncated header");
  if (get_le<std::uint32_t>(&b[8]) != kEventFormatVersion) throw FormatError(path + ": unsupported version");
  EventStream s;
  s.width = static_cast<int>(get_le<std::uint32_t>(&b[12]));
  s.height = static_cast<int>(get_le<std::uint32_t>(&b[16]));
  const auto n = get_le<std::uint64_t>(&b[20]);
  if ((b.size() - header) / 16 != n || (b.size() - header) % 16 != 0)
    throw FormatError(path + ": event count does not match file size");
  s.events.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const unsigned char* p = &b[header + 16 * i];
    s.events[i] = {get_le<std::uint64_t>(p), get_le<std::uint16_t>(p + 8), get_le<std::uint16_t>(p + 10),
                   static_cast<std::int8_t>(p[12])};
  }
  s.validate();
  return s;
}

EventStream read_events_csv(const std::string& path, int width, int height) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  EventStream s;
  s.width = width;
  s.height = height;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
    long long v[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int k = 0; k < 4; ++k) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [q, ec] = std::from_chars(p, end, v[k]);
      if (ec != std::errc()) throw FormatError(path + ":" + std::to_string(lineno) + ": bad event line");
      p = q;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (k < 3) {
        if (p == end || *p != ',') throw FormatError(path + ":" + std::to_string(lineno) + ": expected t_us,x,y,p");
        ++p;
      }
    }
    if (v[0] < 0 || v[1] < 0 || v[2] < 0 || v[1] > 65535 || v[2] > 65535)
      throw FormatError(path + ":" + std::to_string(lineno) + ": value out of range");
    // Polarity may be written as 0/1 or -1/+1.
    const std::int8_t pol = v[3] > 0 ? 1 : -1;
    s.events.push_back({static_cast<std::uint64_t>(v[0]), static_cast<std::uint16_t>(v[1]),
                        static_cast<std::uint16_t>(v[2]), pol});
  }
  s.validate();
  return s;
}

void write_events_csv(const std::string& path, const EventStream& s) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "t_us,x,y,p\n";
  for (const auto& e : s.events) f << e.t_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.polarity) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace portdet
