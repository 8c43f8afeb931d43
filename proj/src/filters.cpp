#include "portdet/filters.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

namespace portdet {

namespace {

constexpr char kMagic[8] = {'P', 'O', 'R', 'T', 'C', 'N', 'N', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void floats(std::vector<float>& out, std::size_t n) {
    if (n > (end_ - pos_) / 4) throw WeightLoadError(WeightError::truncated, "weight file truncated inside a tensor");
    out.resize(n);
    for (auto& f : out) f = std::bit_cast<float>(u32());
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (end_ - pos_ < n) throw WeightLoadError(WeightError::truncated, "weight file truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

[[noreturn]] void chain_error(std::size_t i, const std::string& msg) {
  throw WeightLoadError(WeightError::shape_chain, "layer " + std::to_string(i) + ": " + msg);
}

float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

// numpy-style reflect (edge not repeated); clamps for tiny images.
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Separable box mean over a (2r+1)^2 window, borders replicated.
MaskImage box_mean(const MaskImage& in, int r) {
  const int w = in.width, h = in.height;
  MaskImage tmp(w, h), out(w, h);
  const float norm = 1.0f / static_cast<float>(2 * r + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int k = -r; k <= r; ++k) s += in.at(std::clamp(x + k, 0, w - 1), y);
      tmp.at(x, y) = s * norm;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int k = -r; k <= r; ++k) s += tmp.at(x, std::clamp(y + k, 0, h - 1));
      out.at(x, y) = s * norm;
    }
  return out;
}

template <class Pick>
MaskImage rank3(const MaskImage& in, Pick pick) {
  const int w = in.width, h = in.height;
  MaskImage tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      tmp.at(x, y) = pick(pick(in.at(std::max(x - 1, 0), y), in.at(x, y)), in.at(std::min(x + 1, w - 1), y));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(x, y) = pick(pick(tmp.at(x, std::max(y - 1, 0)), tmp.at(x, y)), tmp.at(x, std::min(y + 1, h - 1)));
  return out;
}

MaskImage opening3(const MaskImage& in) {
  const auto mn = [](float a, float b) { return std::min(a, b); };
  const auto mx = [](float a, float b) { return std::max(a, b); };
  return rank3(rank3(in, mn), mx);
}

float quantile(std::vector<float> v, double q) {
  if (v.empty()) return 0.0f;
  const auto k = static_cast<std::size_t>(std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

// Responses below the noise floor never count as detections.
constexpr float kResponseFloor = 0.02f;

MaskImage scale_by_threshold(const MaskImage& response, double q_low, double q_high) {
  const float t = std::max({quantile(response.data, q_low), 0.3f * quantile(response.data, q_high), kResponseFloor});
  MaskImage out(response.width, response.height);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::clamp(response.data[i] / (2.0f * t), 0.0f, 1.0f);
  return out;
}

}  // namespace

Tensor Tensor::from_frame(const InputFrame& f) {
  Tensor t(f.channels, f.height, f.width);
  t.data = f.data;
  return t;
}

Tensor conv2d(const Tensor& in, std::span<const float> kernel, std::span<const float> bias, int out_ch, int kh,
              int kw, int stride, int padding) {
  const int oh = (in.height + 2 * padding - kh) / stride + 1;
  const int ow = (in.width + 2 * padding - kw) / stride + 1;
  Tensor out(out_ch, std::max(oh, 0), std::max(ow, 0));
  for (int o = 0; o < out_ch; ++o) {
    float* dst = &out.data[static_cast<std::size_t>(o) * out.height * out.width];
    std::fill(dst, dst + static_cast<std::size_t>(out.height) * out.width, bias[o]);
    for (int c = 0; c < in.channels; ++c) {
      const float* src = &in.data[static_cast<std::size_t>(c) * in.height * in.width];
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          const float wv = kernel[((static_cast<std::size_t>(o) * in.channels + c) * kh + i) * kw + j];
          for (int y = 0; y < out.height; ++y) {
            const int sy = y * stride - padding + i;
            if (sy < 0 || sy >= in.height) continue;
            float* drow = dst + static_cast<std::size_t>(y) * out.width;
            const float* srow = src + static_cast<std::size_t>(sy) * in.width;
            for (int x = 0; x < out.width; ++x) {
              const int sx = x * stride - padding + j;
              if (sx >= 0 && sx < in.width) drow[x] += wv * srow[sx];
            }
          }
        }
    }
  }
  return out;
}

Tensor maxpool2(const Tensor& in) {
  Tensor out(in.channels, in.height / 2, in.width / 2);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = std::max({in.at(c, 2 * y, 2 * x), in.at(c, 2 * y, 2 * x + 1), in.at(c, 2 * y + 1, 2 * x),
                                    in.at(c, 2 * y + 1, 2 * x + 1)});
  return out;
}

Tensor deconv2d(const Tensor& in, std::span<const float> kernel, std::span<const float> bias, int out_ch, int kh,
                int kw, int stride, int padding) {
  const int oh = (in.height - 1) * stride - 2 * padding + kh;
  const int ow = (in.width - 1) * stride - 2 * padding + kw;
  Tensor out(out_ch, std::max(oh, 0), std::max(ow, 0));
  for (int o = 0; o < out_ch; ++o) {
    float* dst = &out.data[static_cast<std::size_t>(o) * out.height * out.width];
    std::fill(dst, dst + static_cast<std::size_t>(out.height) * out.width, bias[o]);
    for (int c = 0; c < in.channels; ++c) {
      const float* src = &in.data[static_cast<std::size_t>(c) * in.height * in.width];
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          const float wv = kernel[((static_cast<std::size_t>(o) * in.channels + c) * kh + i) * kw + j];
          for (int y = 0; y < in.height; ++y) {
            const int dy = y * stride - padding + i;
            if (dy < 0 || dy >= out.height) continue;
            float* drow = dst + static_cast<std::size_t>(dy) * out.width;
            const float* srow = src + static_cast<std::size_t>(y) * in.width;
            for (int x = 0; x < in.width; ++x) {
              const int dx = x * stride - padding + j;
              if (dx >= 0 && dx < out.width) drow[dx] += wv * srow[x];
            }
          }
        }
    }
  }
  return out;
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.data) v = std::max(v, 0.0f);
}

void sigmoid_inplace(Tensor& t) {
  for (auto& v : t.data) v = sigmoid(v);
}

const char* to_string(FilterTarget t) { return t == FilterTarget::ring ? "ring" : "reflector"; }
const char* to_string(Modality m) { return m == Modality::event ? "event" : "rgb"; }

std::size_t CnnWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight_count() + l.bias_count();
  return n;
}

int CnnWeights::spatial_quantum() const {
  int q = 1;
  for (const auto& l : layers)
    if (l.kind == LayerKind::maxpool) q *= 2;
  return q;
}

void CnnWeights::validate() const {
  if (modality != Modality::event && modality != Modality::rgb)
    throw WeightLoadError(WeightError::shape_chain, "unknown modality");
  if (target != FilterTarget::ring && target != FilterTarget::reflector)
    throw WeightLoadError(WeightError::shape_chain, "unknown target");
  if (layers.empty()) throw WeightLoadError(WeightError::shape_chain, "no layers");
  std::uint32_t ch = static_cast<std::uint32_t>(modality);
  long down = 1, up = 1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.in_channels != ch) chain_error(i, "expects " + std::to_string(l.in_channels) + " channels, gets " + std::to_string(ch));
    if (l.out_channels == 0) chain_error(i, "zero output channels");
    if (l.bias.size() != l.bias_count() || l.weights.size() != l.weight_count()) chain_error(i, "tensor size mismatch");
    switch (l.kind) {
      case LayerKind::conv:
        if (l.stride != 1 || l.kh != l.kw || l.kh != 2 * l.padding + 1) chain_error(i, "conv must preserve size");
        break;
      case LayerKind::deconv:
        if (l.stride < 1 || l.kh != l.kw || l.kh < 2 * l.padding || l.kh - 2 * l.padding != l.stride)
          chain_error(i, "deconv must scale size by its stride");
        up *= l.stride;
        break;
      case LayerKind::maxpool:
        if (l.out_channels != l.in_channels || l.kh != 2 || l.kw != 2 || l.stride != 2 || l.padding != 0)
          chain_error(i, "maxpool must be 2x2 stride 2");
        down *= 2;
        break;
      case LayerKind::sigmoid:
        if (l.out_channels != l.in_channels || l.kh != 1 || l.kw != 1 || l.stride != 1 || l.padding != 0)
          chain_error(i, "bad sigmoid dims");
        if (i + 1 != layers.size()) chain_error(i, "sigmoid must be last");
        break;
    }
    if (up > down) chain_error(i, "upsampling exceeds pooling");
    ch = l.out_channels;
  }
  if (up != down) throw WeightLoadError(WeightError::shape_chain, "output not at input resolution");
  if (ch != 1) throw WeightLoadError(WeightError::shape_chain, "output must have one channel");
  if (layers.back().kind != LayerKind::sigmoid) throw WeightLoadError(WeightError::shape_chain, "missing sigmoid");
}

bool CnnWeights::is_reference_architecture() const {
  if (layers.size() != 11) return false;
  for (int i = 0; i < 3; ++i) {
    const Layer& c = layers[2 * i];
    if (c.kind != LayerKind::conv || c.kh != 3 || layers[2 * i + 1].kind != LayerKind::maxpool) return false;
  }
  for (int i = 6; i < 9; ++i)
    if (layers[i].kind != LayerKind::deconv) return false;
  return layers[9].kind == LayerKind::conv && layers[9].kh == 1 && layers[10].kind == LayerKind::sigmoid;
}

CnnWeights make_reference_weights(Modality modality, FilterTarget target, std::array<int, 3> widths,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CnnWeights w;
  w.modality = modality;
  w.target = target;
  auto tensor_layer = [&](LayerKind kind, std::uint32_t out, std::uint32_t in, std::uint32_t k, std::uint32_t stride,
                          std::uint32_t pad) {
    Layer l;
    l.kind = kind;
    l.out_channels = out;
    l.in_channels = in;
    l.kh = l.kw = k;
    l.stride = stride;
    l.padding = pad;
    const double fan_in = static_cast<double>(in) * k * k;
    std::normal_distribution<float> he(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    l.bias.assign(out, 0.0f);
    l.weights.resize(l.weight_count());
    for (auto& v : l.weights) v = he(rng);
    w.layers.push_back(std::move(l));
  };
  auto shape_layer = [&](LayerKind kind, std::uint32_t c, std::uint32_t k, std::uint32_t stride) {
    Layer l;
    l.kind = kind;
    l.out_channels = l.in_channels = c;
    l.kh = l.kw = k;
    l.stride = stride;
    w.layers.push_back(std::move(l));
  };
  std::uint32_t ch = static_cast<std::uint32_t>(modality);
  for (int width : widths) {
    tensor_layer(LayerKind::conv, static_cast<std::uint32_t>(width), ch, 3, 1, 1);
    shape_layer(LayerKind::maxpool, static_cast<std::uint32_t>(width), 2, 2);
    ch = static_cast<std::uint32_t>(width);
  }
  for (int i = 2; i >= 0; --i) {
    tensor_layer(LayerKind::deconv, static_cast<std::uint32_t>(widths[i]), ch, 4, 2, 1);
    ch = static_cast<std::uint32_t>(widths[i]);
  }
  tensor_layer(LayerKind::conv, 1, ch, 1, 1, 0);
  shape_layer(LayerKind::sigmoid, 1, 1, 1);
  return w;
}

std::vector<std::uint8_t> serialize_weights(const CnnWeights& w) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kWeightFormatVersion);
  out.push_back(static_cast<std::uint8_t>(w.modality));
  out.push_back(static_cast<std::uint8_t>(w.target));
  put_u32(out, static_cast<std::uint32_t>(w.layers.size()));
  for (const Layer& l : w.layers) {
    out.push_back(static_cast<std::uint8_t>(l.kind));
    put_u32(out, l.out_channels);
    put_u32(out, l.in_channels);
    put_u32(out, l.kh);
    put_u32(out, l.kw);
    put_u32(out, l.stride);
    put_u32(out, l.padding);
    for (float f : l.bias) put_f32(out, f);
    for (float f : l.weights) put_f32(out, f);
  }
  put_u32(out, static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size()))));
  return out;
}

CnnWeights parse_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw WeightLoadError(WeightError::bad_magic, "not a PORTCNN1 file");
  if (bytes.size() < sizeof kMagic + 4) throw WeightLoadError(WeightError::truncated, "weight file truncated");
  // The last four bytes are the checksum; everything before is payload.
  Reader r(bytes, bytes.size() - 4);
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kWeightFormatVersion)
    throw WeightLoadError(WeightError::bad_version, "unsupported weight format version " + std::to_string(version));
  CnnWeights w;
  w.modality = static_cast<Modality>(r.u8());
  w.target = static_cast<FilterTarget>(r.u8());
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Layer l;
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::sigmoid))
      throw WeightLoadError(WeightError::bad_layer_kind, "unknown layer kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.out_channels = r.u32();
    l.in_channels = r.u32();
    l.kh = r.u32();
    l.kw = r.u32();
    l.stride = r.u32();
    l.padding = r.u32();
    r.floats(l.bias, l.bias_count());
    r.floats(l.weights, l.weight_count());
    w.layers.push_back(std::move(l));
  }
  if (r.pos() != bytes.size() - 4) throw WeightLoadError(WeightError::checksum, "trailing bytes before checksum");
  const auto stored = static_cast<std::uint32_t>(bytes[r.pos()]) | static_cast<std::uint32_t>(bytes[r.pos() + 1]) << 8 |
                      static_cast<std::uint32_t>(bytes[r.pos() + 2]) << 16 |
                      static_cast<std::uint32_t>(bytes[r.pos() + 3]) << 24;
  const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(r.pos())));
  if (stored != actual) throw WeightLoadError(WeightError::checksum, "weight file checksum mismatch");
  w.validate();
  return w;
}

void save_weights(const std::string& path, const CnnWeights& w) {
  const auto bytes = serialize_weights(w);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

CnnWeights load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_weights(bytes);
}

Tensor forward(const CnnWeights& w, const Tensor& input) {
  Tensor x = input;
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const Layer& l = w.layers[i];
    const bool next_sigmoid = i + 1 < w.layers.size() && w.layers[i + 1].kind == LayerKind::sigmoid;
    const int oc = static_cast<int>(l.out_channels), k = static_cast<int>(l.kh), kx = static_cast<int>(l.kw);
    const int s = static_cast<int>(l.stride), p = static_cast<int>(l.padding);
    switch (l.kind) {
      case LayerKind::conv:
        x = conv2d(x, l.weights, l.bias, oc, k, kx, s, p);
        if (!next_sigmoid) relu_inplace(x);
        break;
      case LayerKind::deconv:
        x = deconv2d(x, l.weights, l.bias, oc, k, kx, s, p);
        if (!next_sigmoid) relu_inplace(x);
        break;
      case LayerKind::maxpool:
        x = maxpool2(x);
        break;
      case LayerKind::sigmoid:
        sigmoid_inplace(x);
        break;
    }
  }
  return x;
}

MaskImage run_cnn(const CnnWeights& w, const InputFrame& frame) {
  if (frame.channels != static_cast<int>(w.modality))
    throw ConfigError(std::string("weights expect ") + to_string(w.modality) + " input with " +
                      std::to_string(static_cast<int>(w.modality)) + " channel(s), frame has " +
                      std::to_string(frame.channels));
  const int q = w.spatial_quantum();
  const int pw = (frame.width + q - 1) / q * q, ph = (frame.height + q - 1) / q * q;
  Tensor in(frame.channels, ph, pw);
  for (int c = 0; c < frame.channels; ++c)
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        in.at(c, y, x) = frame.at(c, reflect_index(x, frame.width), reflect_index(y, frame.height));
  const Tensor out = forward(w, in);
  MaskImage m(frame.width, frame.height);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) m.at(x, y) = std::clamp(out.at(0, y, x), 0.0f, 1.0f);
  return m;
}

MaskImage classical_filter(const InputFrame& frame, FilterTarget target) {
  const MaskImage lum = frame.luminance();
  if (target == FilterTarget::ring) {
    // No pre-blur: blurring widens the 2 px band past the opening's reach.
    const MaskImage open = opening3(lum);
    MaskImage response(lum.width, lum.height);
    for (std::size_t i = 0; i < lum.data.size(); ++i) response.data[i] = std::max(lum.data[i] - open.data[i], 0.0f);
    return scale_by_threshold(response, 0.97, 0.999);
  }
  const MaskImage open = opening3(box_mean(lum, 1));
  const MaskImage local = box_mean(open, 10);
  MaskImage response(lum.width, lum.height);
  for (std::size_t i = 0; i < lum.data.size(); ++i) response.data[i] = std::max(open.data[i] - local.data[i], 0.0f);
  return scale_by_threshold(response, 0.99, 0.9995);
}

MaskImage run_filter(const FilterKind& kind, const InputFrame& frame) {
  frame.validate();
  if (kind.tag == FilterKind::Tag::classical) return classical_filter(frame, kind.target);
  if (!kind.weights) throw ConfigError("cnn filter requested without weights");
  if (kind.weights->target != kind.target)
    throw ConfigError(std::string("weights are for the ") + to_string(kind.weights->target) + " target, requested " +
                      to_string(kind.target));
  return run_cnn(*kind.weights, frame);
}

}  // namespace portdet
