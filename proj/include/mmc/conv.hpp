#pragma once

#include "mmc/nn.hpp"

namespace mmc::nn {

/// Channels-last image: data is (h*w) x channels, row index y*w + x.
struct Image {
  int h = 0;
  int w = 0;
  Mat data;

  Image() = default;
  Image(int h_, int w_, int channels) : h(h_), w(w_), data(Mat::Zero(h_ * w_, channels)) {}
  Image(int h_, int w_, Mat d) : h(h_), w(w_), data(std::move(d)) {}

  int channels() const { return static_cast<int>(data.cols()); }
  double& at(int y, int x, int c) { return data(y * w + x, c); }
  double at(int y, int x, int c) const { return data(y * w + x, c); }
};

struct ConvCache {
  int in_h = 0;
  int in_w = 0;
  Mat cols;
};

/// 1x1 or 3x3 convolution with zero padding and optional stride.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int ksize, int stride,
         Rng& rng, int group = 0);

  Image forward(const Image& x, ConvCache* cache) const;
  Image backward(const ConvCache& cache, const Image& dy);

  int in_channels() const { return in_ch_; }
  int out_channels() const { return static_cast<int>(weight.value.cols()); }
  int ksize() const { return ksize_; }
  int stride() const { return stride_; }
  size_t num_parameters() const { return weight.value.size() + bias.value.size(); }
  void collect(ParamList& out);

  ParamTensor weight;  // (ksize*ksize*in) x out, rows ordered (ky, kx, channel)
  ParamTensor bias;

 private:
  int in_ch_ = 0;
  int ksize_ = 1;
  int stride_ = 1;
};

/// Half-pixel-centered bilinear resize (edges clamped).
Image resize_bilinear(const Image& x, int out_h, int out_w);
/// Adjoint of resize_bilinear for an input of size in_h x in_w.
Image resize_bilinear_backward(const Image& dy, int in_h, int in_w);

Image concat_channels(const Image& a, const Image& b);
/// Splits channels [0, first) and [first, end).
std::pair<Image, Image> split_channels(const Image& x, int first);

}  // namespace mmc::nn
