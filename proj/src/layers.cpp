// Copyright 2026 The incrseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "incrseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

namespace incrseg {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void he_init(Parameter& p, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : p.value) v = static_cast<float>(stddev * standard_normal(rng));
}

}  // namespace

void im2col(const float* src, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, float* cols) {
  const auto ih = static_cast<long>(h), iw = static_cast<long>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = src + ch * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long y = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          float* out = row + oy * wo;
          if (y < 0 || y >= ih) {
            std::fill(out, out + wo, 0.0f);
            continue;
          }
          const float* in = plane + y * iw;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long x = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            out[ox] = (x >= 0 && x < iw) ? in[x] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, float* dst) {
  const auto ih = static_cast<long>(h), iw = static_cast<long>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    float* plane = dst + ch * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long y = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (y < 0 || y >= ih) continue;
          float* out = plane + y * iw;
          const float* in = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long x = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (x >= 0 && x < iw) out[x] += in[ox];
          }
        }
      }
    }
  }
}

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, bool bias, std::uint64_t seed)
    : weight(name + "/weight", out_channels * in_channels * kernel * kernel),
      in_(in_channels), out_(out_channels), k_(kernel), has_bias_(bias) {
  he_init(weight, in_channels * kernel * kernel, seed);
  if (has_bias_) this->bias = Parameter(name + "/bias", out_channels);
}

FTensor Conv2d::run(const FTensor& x, std::vector<float>* cols_cache) const {
  if (x.c() != in_) throw UsageError(weight.name + ": channel mismatch");
  const std::size_t n = x.n(), h = x.h(), w = x.w(), hw = h * w;
  const std::size_t rows = in_ * k_ * k_;
  FTensor y(n, out_, h, w);
  ConstMapMat wmat(weight.value.data(), static_cast<long>(out_), static_cast<long>(rows));
  std::vector<float> local;
  if (k_ != 1) {
    if (cols_cache) {
      cols_cache->resize(n * rows * hw);
    } else {
      local.resize(rows * hw);
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    const float* col = x.sample(s).data();
    if (k_ != 1) {
      float* buf = cols_cache ? cols_cache->data() + s * rows * hw : local.data();
      im2col(x.sample(s).data(), in_, h, w, k_, 1, k_ / 2, h, w, buf);
      col = buf;
    }
    ConstMapMat cmat(col, static_cast<long>(rows), static_cast<long>(hw));
    MapMat ymat(y.sample(s).data(), static_cast<long>(out_), static_cast<long>(hw));
    ymat.noalias() = wmat * cmat;
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) ymat.row(static_cast<long>(o)).array() += bias.value[o];
    }
  }
  return y;
}

FTensor Conv2d::forward(const FTensor& x) const { return run(x, nullptr); }

FTensor Conv2d::train_forward(const FTensor& x) {
  cached_n_ = x.n();
  cached_h_ = x.h();
  cached_w_ = x.w();
  if (k_ == 1) cols_ = x.values();
  return run(x, k_ == 1 ? nullptr : &cols_);
}

FTensor Conv2d::backward(const FTensor& dy) {
  const std::size_t n = cached_n_, h = cached_h_, w = cached_w_, hw = h * w;
  const std::size_t rows = in_ * k_ * k_;
  FTensor dx(n, in_, h, w);
  ConstMapMat wmat(weight.value.data(), static_cast<long>(out_), static_cast<long>(rows));
  MapMat dw(weight.grad.data(), static_cast<long>(out_), static_cast<long>(rows));
  std::vector<float> dcol(k_ == 1 ? 0 : rows * hw);
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat dymat(dy.sample(s).data(), static_cast<long>(out_), static_cast<long>(hw));
    ConstMapMat cmat(cols_.data() + s * rows * hw, static_cast<long>(rows), static_cast<long>(hw));
    dw.noalias() += dymat * cmat.transpose();
    if (has_bias_) {
      // Plain sequential sums: vectorized reductions round differently with
      // the buffer's alignment, which would break run-to-run reproducibility.
      const float* d = dy.sample(s).data();
      for (std::size_t o = 0; o < out_; ++o) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < hw; ++i) acc += d[o * hw + i];
        bias.grad[o] += acc;
      }
    }
    if (k_ == 1) {
      MapMat dxmat(dx.sample(s).data(), static_cast<long>(in_), static_cast<long>(hw));
      dxmat.noalias() = wmat.transpose() * dymat;
    } else {
      MapMat dcmat(dcol.data(), static_cast<long>(rows), static_cast<long>(hw));
      dcmat.noalias() = wmat.transpose() * dymat;
      col2im(dcol.data(), in_, h, w, k_, 1, k_ / 2, h, w, dx.sample(s).data());
    }
  }
  return dx;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

void Conv2d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

// --- Deconv2d ---------------------------------------------------------------

Deconv2d::Deconv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                   std::uint64_t seed)
    : weight(name + "/weight", in_channels * out_channels * kKernel * kKernel),
      in_(in_channels), out_(out_channels) {
  // Each output pixel receives (k/stride)^2 taps per input channel.
  he_init(weight, in_channels * kKernel * kKernel / (kStride * kStride), seed);
}

FTensor Deconv2d::forward(const FTensor& x) const {
  if (x.c() != in_) throw UsageError(weight.name + ": channel mismatch");
  const std::size_t n = x.n(), h = x.h(), w = x.w(), hw = h * w;
  const std::size_t rows = out_ * kKernel * kKernel;
  FTensor y(n, out_, 2 * h, 2 * w);
  ConstMapMat wmat(weight.value.data(), static_cast<long>(in_), static_cast<long>(rows));
  std::vector<float> cols(rows * hw);
  for (std::size_t s = 0; s < n; ++s) {
    ConstMapMat xmat(x.sample(s).data(), static_cast<long>(in_), static_cast<long>(hw));
    MapMat cmat(cols.data(), static_cast<long>(rows), static_cast<long>(hw));
    cmat.noalias() = wmat.transpose() * xmat;
    col2im(cols.data(), out_, 2 * h, 2 * w, kKernel, kStride, kPad, h, w, y.sample(s).data());
  }
  return y;
}

FTensor Deconv2d::train_forward(const FTensor& x) {
  input_ = x;
  return forward(x);
}

FTensor Deconv2d::backward(const FTensor& dy) {
  const std::size_t n = input_.n(), h = input_.h(), w = input_.w(), hw = h * w;
  const std::size_t rows = out_ * kKernel * kKernel;
  FTensor dx(n, in_, h, w);
  ConstMapMat wmat(weight.value.data(), static_cast<long>(in_), static_cast<long>(rows));
  MapMat dw(weight.grad.data(), static_cast<long>(in_), static_cast<long>(rows));
  std::vector<float> dcol(rows * hw);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(dy.sample(s).data(), out_, 2 * h, 2 * w, kKernel, kStride, kPad, h, w, dcol.data());
    ConstMapMat dcmat(dcol.data(), static_cast<long>(rows), static_cast<long>(hw));
    ConstMapMat xmat(input_.sample(s).data(), static_cast<long>(in_), static_cast<long>(hw));
    dw.noalias() += xmat * dcmat.transpose();
    MapMat dxmat(dx.sample(s).data(), static_cast<long>(in_), static_cast<long>(hw));
    dxmat.noalias() = wmat * dcmat;
  }
  return dx;
}

void Deconv2d::collect(std::vector<Parameter*>& out) { out.push_back(&weight); }
void Deconv2d::collect(std::vector<const Parameter*>& out) const { out.push_back(&weight); }

// --- BatchNorm2d ------------------------------------------------------------

BatchNorm2d::BatchNorm2d(const std::string& name, std::size_t channels, float mom)
    : gamma(name + "/gamma", channels),
      beta(name + "/beta", channels),
      running_mean(name + "/running_mean", channels, false),
      running_var(name + "/running_var", channels, false),
      momentum(mom) {
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0f);
  std::fill(running_var.value.begin(), running_var.value.end(), 1.0f);
}

FTensor BatchNorm2d::forward(const FTensor& x) const {
  FTensor y = x;
  for (std::size_t c = 0; c < x.c(); ++c) {
    const float scale = gamma.value[c] / std::sqrt(running_var.value[c] + kEpsilon);
    const float shift = beta.value[c] - running_mean.value[c] * scale;
    for (std::size_t s = 0; s < x.n(); ++s) {
      for (float& v : y.channel(s, c)) v = v * scale + shift;
    }
  }
  return y;
}

FTensor BatchNorm2d::train_forward(const FTensor& x) {
  const std::size_t channels = x.c(), count = x.n() * x.plane();
  xhat_ = FTensor(x.n(), channels, x.h(), x.w());
  inv_std_.assign(channels, 0.0f);
  FTensor y(x.n(), channels, x.h(), x.w());
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t s = 0; s < x.n(); ++s) {
      for (float v : x.channel(s, c)) {
        sum += v;
        sq += static_cast<double>(v) * v;
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
    const auto inv = static_cast<float>(1.0 / std::sqrt(var + kEpsilon));
    inv_std_[c] = inv;
    running_mean.value[c] = momentum * running_mean.value[c] + (1.0f - momentum) * static_cast<float>(mean);
    running_var.value[c] = momentum * running_var.value[c] + (1.0f - momentum) * static_cast<float>(var);
    const auto m = static_cast<float>(mean);
    for (std::size_t s = 0; s < x.n(); ++s) {
      auto in = x.channel(s, c);
      auto xh = xhat_.channel(s, c);
      auto out = y.channel(s, c);
      for (std::size_t i = 0; i < in.size(); ++i) {
        xh[i] = (in[i] - m) * inv;
        out[i] = gamma.value[c] * xh[i] + beta.value[c];
      }
    }
  }
  return y;
}

FTensor BatchNorm2d::backward(const FTensor& dy) {
  const std::size_t channels = dy.c();
  const auto count = static_cast<double>(dy.n() * dy.plane());
  FTensor dx(dy.n(), channels, dy.h(), dy.w());
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < dy.n(); ++s) {
      auto g = dy.channel(s, c);
      auto xh = xhat_.channel(s, c);
      for (std::size_t i = 0; i < g.size(); ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
      }
    }
    gamma.grad[c] += static_cast<float>(sum_dy_xhat);
    beta.grad[c] += static_cast<float>(sum_dy);
    const float k = gamma.value[c] * inv_std_[c];
    const auto mean_dy = static_cast<float>(sum_dy / count);
    const auto mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
    for (std::size_t s = 0; s < dy.n(); ++s) {
      auto g = dy.channel(s, c);
      auto xh = xhat_.channel(s, c);
      auto out = dx.channel(s, c);
      for (std::size_t i = 0; i < g.size(); ++i) {
        out[i] = k * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&gamma, &beta, &running_mean, &running_var});
}

void BatchNorm2d::collect(std::vector<const Parameter*>& out) const {
  out.insert(out.end(), {&gamma, &beta, &running_mean, &running_var});
}

// --- Relu / MaxPool2 --------------------------------------------------------

FTensor Relu::forward(FTensor x) {
  for (float& v : x.values()) v = std::max(v, 0.0f);
  return x;
}

FTensor Relu::train_forward(FTensor x) {
  active_.resize(x.size());
  auto& vals = x.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    active_[i] = vals[i] > 0.0f;
    if (!active_[i]) vals[i] = 0.0f;
  }
  return x;
}

FTensor Relu::backward(FTensor dy) const {
  auto& vals = dy.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!active_[i]) vals[i] = 0.0f;
  }
  return dy;
}

FTensor MaxPool2::forward(const FTensor& x) {
  FTensor y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (std::size_t s = 0; s < x.n(); ++s) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t oy = 0; oy < y.h(); ++oy) {
        for (std::size_t ox = 0; ox < y.w(); ++ox) {
          y(s, c, oy, ox) = std::max({x(s, c, 2 * oy, 2 * ox), x(s, c, 2 * oy, 2 * ox + 1),
                                      x(s, c, 2 * oy + 1, 2 * ox), x(s, c, 2 * oy + 1, 2 * ox + 1)});
        }
      }
    }
  }
  return y;
}

FTensor MaxPool2::train_forward(const FTensor& x) {
  in_h_ = x.h();
  in_w_ = x.w();
  FTensor y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  argmax_.resize(y.size());
  std::size_t o = 0;
  for (std::size_t s = 0; s < x.n(); ++s) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const std::size_t base = (s * x.c() + c) * x.plane();
      for (std::size_t oy = 0; oy < y.h(); ++oy) {
        for (std::size_t ox = 0; ox < y.w(); ++ox, ++o) {
          std::size_t best = base + 2 * oy * x.w() + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = base + (2 * oy + dy) * x.w() + 2 * ox + dx;
              if (x.data()[idx] > x.data()[best]) best = idx;
            }
          }
          argmax_[o] = best;
          y.data()[o] = x.data()[best];
        }
      }
    }
  }
  return y;
}

FTensor MaxPool2::backward(const FTensor& dy) const {
  FTensor dx(dy.n(), dy.c(), in_h_, in_w_);
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data()[argmax_[o]] += dy.data()[o];
  return dx;
}

// --- SpatialDropout ---------------------------------------------------------

std::vector<float> SpatialDropout::draw_mask(std::size_t n, std::size_t c, Rng& rng) const {
  std::vector<float> mask(n * c);
  const auto keep_scale = static_cast<float>(1.0 / (1.0 - rate_));
  for (auto& m : mask) m = uniform01(rng) < rate_ ? 0.0f : keep_scale;
  return mask;
}

void SpatialDropout::apply(FTensor& x, const std::vector<float>& mask) {
  for (std::size_t s = 0; s < x.n(); ++s) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const float m = mask[s * x.c() + c];
      for (float& v : x.channel(s, c)) v *= m;
    }
  }
}

FTensor SpatialDropout::forward(FTensor x, Mode mode, Rng* rng) const {
  if (mode == Mode::Infer || rate_ <= 0.0) return x;
  if (!rng) throw UsageError("stochastic dropout requires an rng");
  apply(x, draw_mask(x.n(), x.c(), *rng));
  return x;
}

FTensor SpatialDropout::train_forward(FTensor x, Rng& rng) {
  if (rate_ <= 0.0) {
    mask_.assign(x.n() * x.c(), 1.0f);
    return x;
  }
  mask_ = draw_mask(x.n(), x.c(), rng);
  apply(x, mask_);
  return x;
}

FTensor SpatialDropout::backward(FTensor dy) const {
  apply(dy, mask_);
  return dy;
}

// --- composite blocks -------------------------------------------------------

ConvBnRelu::ConvBnRelu(const std::string& name, std::size_t in_channels,
                       std::size_t out_channels, std::uint64_t seed, float bn_momentum)
    : conv_(name + "/conv", in_channels, out_channels, 3, false, seed),
      bn_(name + "/bn", out_channels, bn_momentum) {}

FTensor ConvBnRelu::forward(const FTensor& x) const {
  return Relu::forward(bn_.forward(conv_.forward(x)));
}

FTensor ConvBnRelu::train_forward(const FTensor& x) {
  return relu_.train_forward(bn_.train_forward(conv_.train_forward(x)));
}

FTensor ConvBnRelu::backward(const FTensor& dy) {
  return conv_.backward(bn_.backward(relu_.backward(dy)));
}

void ConvBnRelu::collect(std::vector<Parameter*>& out) {
  conv_.collect(out);
  bn_.collect(out);
}

void ConvBnRelu::collect(std::vector<const Parameter*>& out) const {
  conv_.collect(out);
  bn_.collect(out);
}

DeconvBnRelu::DeconvBnRelu(const std::string& name, std::size_t in_channels,
                           std::size_t out_channels, std::uint64_t seed, float bn_momentum)
    : deconv_(name + "/deconv", in_channels, out_channels, seed),
      bn_(name + "/bn", out_channels, bn_momentum) {}

FTensor DeconvBnRelu::forward(const FTensor& x) const {
  return Relu::forward(bn_.forward(deconv_.forward(x)));
}

FTensor DeconvBnRelu::train_forward(const FTensor& x) {
  return relu_.train_forward(bn_.train_forward(deconv_.train_forward(x)));
}

FTensor DeconvBnRelu::backward(const FTensor& dy) {
  return deconv_.backward(bn_.backward(relu_.backward(dy)));
}

void DeconvBnRelu::collect(std::vector<Parameter*>& out) {
  deconv_.collect(out);
  bn_.collect(out);
}

void DeconvBnRelu::collect(std::vector<const Parameter*>& out) const {
  deconv_.collect(out);
  bn_.collect(out);
}

// --- channel utilities ------------------------------------------------------

FTensor softmax_channels(const FTensor& logits) {
  FTensor p(logits.n(), logits.c(), logits.h(), logits.w());
  const std::size_t hw = logits.plane(), nc = logits.c();
  for (std::size_t s = 0; s < logits.n(); ++s) {
    const float* in = logits.sample(s).data();
    float* out = p.sample(s).data();
    for (std::size_t i = 0; i < hw; ++i) {
      float mx = in[i];
      for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, in[c * hw + i]);
      float sum = 0.0f;
      for (std::size_t c = 0; c < nc; ++c) {
        out[c * hw + i] = std::exp(in[c * hw + i] - mx);
        sum += out[c * hw + i];
      }
      for (std::size_t c = 0; c < nc; ++c) out[c * hw + i] /= sum;
    }
  }
  return p;
}

FTensor concat_channels(const FTensor& a, const FTensor& b) {
  FTensor y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (std::size_t s = 0; s < a.n(); ++s) {
    auto as = a.sample(s), bs = b.sample(s);
    auto ys = y.sample(s);
    std::copy(as.begin(), as.end(), ys.begin());
    std::copy(bs.begin(), bs.end(), ys.begin() + static_cast<long>(as.size()));
  }
  return y;
}

std::pair<FTensor, FTensor> split_channels(const FTensor& x, std::size_t first) {
  FTensor a(x.n(), first, x.h(), x.w()), b(x.n(), x.c() - first, x.h(), x.w());
  for (std::size_t s = 0; s < x.n(); ++s) {
    auto xs = x.sample(s);
    const auto cut = xs.begin() + static_cast<long>(first * x.plane());
    std::copy(xs.begin(), cut, a.sample(s).begin());
    std::copy(cut, xs.end(), b.sample(s).begin());
  }
  return {std::move(a), std::move(b)};
}

void add_into(FTensor& acc, const FTensor& x) {
  if (acc.empty()) {
    acc = x;
    return;
  }
  auto& a = acc.values();
  const auto& b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace incrseg
