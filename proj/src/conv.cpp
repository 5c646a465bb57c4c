#include "mmc/conv.hpp"

#include "mmc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmc::nn {

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int ksize, int stride,
               Rng& rng, int group)
    : weight(name + ".weight", ksize * ksize * in_channels, out_channels, group),
      bias(name + ".bias", 1, out_channels, group),
      in_ch_(in_channels),
      ksize_(ksize),
      stride_(stride) {
  if (ksize != 1 && ksize != 3) throw std::invalid_argument("Conv2d: kernel size must be 1 or 3");
  if (stride < 1) throw std::invalid_argument("Conv2d: stride must be >= 1");
  const int fan_in = ksize * ksize * in_channels;
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = normal(rng);
}

Image Conv2d::forward(const Image& x, ConvCache* cache) const {
  if (x.channels() != in_ch_) throw std::invalid_argument("Conv2d(" + weight.name + "): channel mismatch");
  const int ho = kernels::conv_out_size(x.h, stride_);
  const int wo = kernels::conv_out_size(x.w, stride_);
  Image y;
  y.h = ho;
  y.w = wo;
  if (ksize_ == 1 && stride_ == 1) {
    y.data = x.data * weight.value;
    if (cache) {
      cache->in_h = x.h;
      cache->in_w = x.w;
      cache->cols = x.data;
    }
  } else {
    Mat cols(static_cast<Eigen::Index>(ho) * wo, static_cast<Eigen::Index>(ksize_) * ksize_ * in_ch_);
    kernels::im2col(x.data.data(), x.h, x.w, in_ch_, ksize_, stride_, cols.data());
    y.data = cols * weight.value;
    if (cache) {
      cache->in_h = x.h;
      cache->in_w = x.w;
      cache->cols = std::move(cols);
    }
  }
  y.data.rowwise() += bias.value.row(0);
  return y;
}

Image Conv2d::backward(const ConvCache& cache, const Image& dy) {
  weight.grad.noalias() += cache.cols.transpose() * dy.data;
  bias.grad.row(0) += dy.data.colwise().sum();
  Mat dcols = dy.data * weight.value.transpose();
  if (ksize_ == 1 && stride_ == 1) return Image(cache.in_h, cache.in_w, std::move(dcols));
  Image dx(cache.in_h, cache.in_w, in_ch_);
  kernels::col2im(dcols.data(), cache.in_h, cache.in_w, in_ch_, ksize_, stride_, dx.data.data());
  return dx;
}

void Conv2d::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

namespace {

struct Tap {
  int i0;
  int i1;
  double f;  // weight of i1
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Image resize_bilinear(const Image& x, int out_h, int out_w) {
  const auto ty = bilinear_taps(x.h, out_h);
  const auto tx = bilinear_taps(x.w, out_w);
  Image y(out_h, out_w, x.channels());
  for (int oy = 0; oy < out_h; ++oy) {
    const Tap& a = ty[oy];
    for (int ox = 0; ox < out_w; ++ox) {
      const Tap& b = tx[ox];
      y.data.row(oy * out_w + ox) =
          (1 - a.f) * ((1 - b.f) * x.data.row(a.i0 * x.w + b.i0) + b.f * x.data.row(a.i0 * x.w + b.i1)) +
          a.f * ((1 - b.f) * x.data.row(a.i1 * x.w + b.i0) + b.f * x.data.row(a.i1 * x.w + b.i1));
    }
  }
  return y;
}

Image resize_bilinear_backward(const Image& dy, int in_h, int in_w) {
  const auto ty = bilinear_taps(in_h, dy.h);
  const auto tx = bilinear_taps(in_w, dy.w);
  Image dx(in_h, in_w, dy.channels());
  for (int oy = 0; oy < dy.h; ++oy) {
    const Tap& a = ty[oy];
    for (int ox = 0; ox < dy.w; ++ox) {
      const Tap& b = tx[ox];
      const auto g = dy.data.row(oy * dy.w + ox);
      dx.data.row(a.i0 * in_w + b.i0) += (1 - a.f) * (1 - b.f) * g;
      dx.data.row(a.i0 * in_w + b.i1) += (1 - a.f) * b.f * g;
      dx.data.row(a.i1 * in_w + b.i0) += a.f * (1 - b.f) * g;
      dx.data.row(a.i1 * in_w + b.i1) += a.f * b.f * g;
    }
  }
  return dx;
}

Image concat_channels(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("concat_channels: size mismatch");
  Image out(a.h, a.w, a.channels() + b.channels());
  out.data.leftCols(a.channels()) = a.data;
  out.data.rightCols(b.channels()) = b.data;
  return out;
}

std::pair<Image, Image> split_channels(const Image& x, int first) {
  Image a(x.h, x.w, Mat(x.data.leftCols(first)));
  Image b(x.h, x.w, Mat(x.data.rightCols(x.channels() - first)));
  return {std::move(a), std::move(b)};
}

}  // namespace mmc::nn
