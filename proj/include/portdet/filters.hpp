#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "portdet/errors.hpp"
#include "portdet/image.hpp"

namespace portdet {

// Channel-major feature map.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  static Tensor from_frame(const InputFrame& f);
};

// Cross-correlation. kernel is (out_ch, in_ch, kh, kw) row-major; output size
// per axis is floor((in + 2 pad - k) / stride) + 1. Zero padding.
Tensor conv2d(const Tensor& input, std::span<const float> kernel, std::span<const float> bias, int out_channels,
              int kh, int kw, int stride, int padding);

// 2x2 window, stride 2. Odd trailing rows/columns are dropped.
Tensor maxpool2(const Tensor& input);

// Transposed convolution, kernel (out_ch, in_ch, kh, kw); output size per axis
// is (in - 1) stride - 2 pad + k.
Tensor deconv2d(const Tensor& input, std::span<const float> kernel, std::span<const float> bias, int out_channels,
                int kh, int kw, int stride, int padding);

void relu_inplace(Tensor& t);
void sigmoid_inplace(Tensor& t);

enum class LayerKind : std::uint8_t { conv = 0, maxpool = 1, deconv = 2, sigmoid = 3 };
enum class Modality : std::uint8_t { event = 1, rgb = 3 };
enum class FilterTarget : std::uint8_t { ring = 0, reflector = 1 };

const char* to_string(FilterTarget t);
const char* to_string(Modality m);

// conv and deconv carry tensors; maxpool is (C, C, 2, 2) stride 2 and sigmoid
// is (C, C, 1, 1) stride 1, both without tensors.
struct Layer {
  LayerKind kind = LayerKind::conv;
  std::uint32_t out_channels = 0;
  std::uint32_t in_channels = 0;
  std::uint32_t kh = 0;
  std::uint32_t kw = 0;
  std::uint32_t stride = 1;
  std::uint32_t padding = 0;
  std::vector<float> bias;
  std::vector<float> weights;

  bool has_tensors() const { return kind == LayerKind::conv || kind == LayerKind::deconv; }
  std::size_t weight_count() const {
    return has_tensors() ? static_cast<std::size_t>(out_channels) * in_channels * kh * kw : 0;
  }
  std::size_t bias_count() const { return has_tensors() ? out_channels : 0; }
};

enum class WeightError { bad_magic, bad_version, truncated, checksum, shape_chain, bad_layer_kind };

struct WeightLoadError : FormatError {
  WeightLoadError(WeightError k, const std::string& what) : FormatError(what), kind(k) {}
  WeightError kind;
};

inline constexpr std::uint32_t kWeightFormatVersion = 1;

// Layer list of a filter network. ReLU follows every conv/deconv that is not
// immediately followed by the sigmoid layer.
struct CnnWeights {
  Modality modality = Modality::rgb;
  FilterTarget target = FilterTarget::ring;
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  // Total pooling stride; inputs are padded to a multiple of it.
  int spatial_quantum() const;
  // Throws WeightLoadError(shape_chain) unless channels chain from the
  // modality to a single output channel, every conv keeps the spatial size,
  // every deconv multiplies it by its stride, pooling and upsampling cancel,
  // and the network ends in a sigmoid.
  void validate() const;
  // 3 x (conv 3x3 + maxpool) then 3 x deconv then 1x1 conv + sigmoid.
  bool is_reference_architecture() const;
};

// Reference architecture with He-initialized random weights; widths are the
// three encoder channel counts, mirrored by the decoder.
CnnWeights make_reference_weights(Modality modality, FilterTarget target, std::array<int, 3> widths = {16, 32, 64},
                                  std::uint64_t seed = 0);

// PORTCNN1 layout, little endian, trailing CRC-32 over every preceding byte.
std::vector<std::uint8_t> serialize_weights(const CnnWeights& w);
CnnWeights parse_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::string& path, const CnnWeights& w);
CnnWeights load_weights(const std::string& path);

// Runs the network on a feature map whose size is a multiple of spatial_quantum().
Tensor forward(const CnnWeights& w, const Tensor& input);

// Reflect-pads to the spatial quantum, runs the network and crops back.
MaskImage run_cnn(const CnnWeights& w, const InputFrame& frame);

// CNN-free baseline. Ring: white top-hat of the luminance (bright
// structures narrower than 3 px). Reflector: bright compact blobs, i.e. the
// 3x3 opening of the lightly blurred luminance minus its local mean. Both responses are scaled by a
// threshold taken from a high quantile of the response, so the mask is 0.5
// at the threshold and saturates at twice it.
MaskImage classical_filter(const InputFrame& frame, FilterTarget target);

struct FilterKind {
  enum class Tag { classical, cnn };
  Tag tag = Tag::classical;
  FilterTarget target = FilterTarget::ring;
  std::shared_ptr<const CnnWeights> weights;

  static FilterKind classical(FilterTarget t) { return {Tag::classical, t, nullptr}; }
  static FilterKind cnn(std::shared_ptr<const CnnWeights> w) {
    const FilterTarget t = w ? w->target : FilterTarget::ring;
    return {Tag::cnn, t, std::move(w)};
  }
};

// Output in [0, 1], same size as the frame. Throws ConfigError on a
// weights/modality or weights/target mismatch.
MaskImage run_filter(const FilterKind& kind, const InputFrame& frame);

}  // namespace portdet
