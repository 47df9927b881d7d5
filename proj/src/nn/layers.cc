// Copyright 2026 The vprior Authors.
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

#include "vprior/nn/layers.h"

#include <cmath>
#include <cstring>

#include <Eigen/Core>

#include "vprior/errors.h"

namespace vprior::nn {
namespace {

using RowMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void Im2Col(const Tensor& x, int k, int stride, int pad, int ho, int wo,
            Tensor& col) {
  const int c = x.dim(0), n = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cols = static_cast<std::size_t>(n) * ho * wo;
  col = Tensor({c * k * k, static_cast<int>(cols)});
  float* dst = col.data();
  const float* src = x.data();
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = dst + (static_cast<std::size_t>((ci * k + ki) * k + kj)) * cols;
        for (int ni = 0; ni < n; ++ni) {
          const float* plane = src + (static_cast<std::size_t>(ci) * n + ni) * h * w;
          for (int oh = 0; oh < ho; ++oh) {
            float* out = row + (static_cast<std::size_t>(ni) * ho + oh) * wo;
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) {
              std::memset(out, 0, sizeof(float) * wo);
              continue;
            }
            const float* line = plane + static_cast<std::size_t>(ih) * w;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              out[ow] = (iw >= 0 && iw < w) ? line[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void Col2Im(const Tensor& col, int k, int stride, int pad, int ho, int wo,
            Tensor& dx) {
  const int c = dx.dim(0), n = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const std::size_t cols = static_cast<std::size_t>(n) * ho * wo;
  const float* src = col.data();
  float* dst = dx.data();
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row =
            src + (static_cast<std::size_t>((ci * k + ki) * k + kj)) * cols;
        for (int ni = 0; ni < n; ++ni) {
          float* plane = dst + (static_cast<std::size_t>(ci) * n + ni) * h * w;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            const float* in = row + (static_cast<std::size_t>(ni) * ho + oh) * wo;
            float* line = plane + static_cast<std::size_t>(ih) * w;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < w) line[iw] += in[ow];
            }
          }
        }
      }
    }
  }
}

void CheckRank(const Tensor& x, int rank, const char* who) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(who) + " expects rank " +
                     std::to_string(rank) + " input, got " +
                     ShapeString(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels,
               int kernel, int stride, int padding)
    : weight(name + ".weight", {out_channels, in_channels * kernel * kernel}),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding) {}

void Conv2d::Init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(out_) * k_ * k_));
  std::normal_distribution<double> normal(0.0, stddev);
  for (float& v : weight.value.values()) v = static_cast<float>(normal(rng));
}

Tensor Conv2d::Forward(const Tensor& x, Mode mode) {
  CheckRank(x, 4, "Conv2d");
  if (x.dim(0) != in_) {
    throw ShapeError(weight.name + ": expected " + std::to_string(in_) +
                     " input channels, got " + std::to_string(x.dim(0)));
  }
  const int n = x.dim(1);
  const int ho = OutputSize(x.dim(2));
  const int wo = OutputSize(x.dim(3));
  const int cols = n * ho * wo;

  Tensor col;
  const float* col_data;
  if (k_ == 1 && stride_ == 1 && pad_ == 0) {
    col_data = x.data();
    if (Records(mode)) col = x;
  } else {
    Im2Col(x, k_, stride_, pad_, ho, wo, col);
    col_data = col.data();
  }

  Tensor y({out_, n, ho, wo});
  ConstMatMap w(weight.value.data(), out_, in_ * k_ * k_);
  ConstMatMap c(col_data, in_ * k_ * k_, cols);
  MatMap(y.data(), out_, cols).noalias() = w * c;

  if (Records(mode)) {
    in_shape_ = x.shape();
    col_ = std::move(col);
  }
  return y;
}

Tensor Conv2d::Backward(const Tensor& dy, bool need_input_grad) {
  if (col_.empty()) throw Error(weight.name + ": Backward without Forward");
  const int cols = dy.dim(1) * dy.dim(2) * dy.dim(3);
  const int rows = in_ * k_ * k_;
  ConstMatMap g(dy.data(), out_, cols);
  ConstMatMap c(col_.data(), rows, cols);
  MatMap(weight.grad.data(), out_, rows).noalias() += g * c.transpose();

  Tensor dx;
  if (need_input_grad) {
    const int ho = dy.dim(2), wo = dy.dim(3);
    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
      dx = Tensor(in_shape_);
      MatMap(dx.data(), rows, cols).noalias() =
          ConstMatMap(weight.value.data(), out_, rows).transpose() * g;
    } else {
      Tensor dcol({rows, cols});
      MatMap(dcol.data(), rows, cols).noalias() =
          ConstMatMap(weight.value.data(), out_, rows).transpose() * g;
      dx = Tensor(in_shape_);
      Col2Im(dcol, k_, stride_, pad_, ho, wo, dx);
    }
  }
  col_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, int channels,
                         double momentum, double eps)
    : gamma(name + ".weight", {channels}),
      beta(name + ".bias", {channels}),
      running_mean({channels}, 0.0f),
      running_var({channels}, 1.0f),
      name_(name),
      momentum_(momentum),
      eps_(eps) {
  gamma.value.fill(1.0f);
}

void BatchNorm2d::CollectState(StateList& out) {
  out.push_back({gamma.name, &gamma.value});
  out.push_back({beta.name, &beta.value});
  out.push_back({name_ + ".running_mean", &running_mean});
  out.push_back({name_ + ".running_var", &running_var});
}

Tensor BatchNorm2d::Forward(const Tensor& x, Mode mode) {
  CheckRank(x, 4, "BatchNorm2d");
  const int c = x.dim(0);
  if (c != gamma.value.dim(0)) {
    throw ShapeError(name_ + ": channel count mismatch");
  }
  const std::size_t m = x.size() / static_cast<std::size_t>(c);
  Tensor y(x.shape());
  if (Records(mode)) {
    xhat_ = Tensor(x.shape());
    inv_std_.assign(static_cast<std::size_t>(c), 0.0);
  }
  for (int ci = 0; ci < c; ++ci) {
    const float* in = x.data() + ci * m;
    float* out = y.data() + ci * m;
    double mean, var;
    if (UsesBatchStats(mode)) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += in[i];
      mean = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = in[i] - mean;
        ss += d * d;
      }
      var = ss / static_cast<double>(m);
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      running_mean[ci] = static_cast<float>((1.0 - momentum_) * running_mean[ci] +
                                            momentum_ * mean);
      running_var[ci] = static_cast<float>((1.0 - momentum_) * running_var[ci] +
                                           momentum_ * unbiased);
    } else {
      mean = running_mean[ci];
      var = running_var[ci];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    const float scale = static_cast<float>(gamma.value[ci] * inv_std);
    const float shift =
        static_cast<float>(beta.value[ci] - gamma.value[ci] * mean * inv_std);
    for (std::size_t i = 0; i < m; ++i) out[i] = in[i] * scale + shift;
    if (Records(mode)) {
      inv_std_[ci] = inv_std;
      float* xh = xhat_.data() + ci * m;
      const float fmean = static_cast<float>(mean);
      const float finv = static_cast<float>(inv_std);
      for (std::size_t i = 0; i < m; ++i) xh[i] = (in[i] - fmean) * finv;
    }
  }
  return y;
}

Tensor BatchNorm2d::Backward(const Tensor& dy) {
  if (xhat_.empty()) throw Error(name_ + ": Backward without Forward");
  const int c = dy.dim(0);
  const std::size_t m = dy.size() / static_cast<std::size_t>(c);
  Tensor dx(dy.shape());
  for (int ci = 0; ci < c; ++ci) {
    const float* g = dy.data() + ci * m;
    const float* xh = xhat_.data() + ci * m;
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_g += g[i];
      sum_gx += static_cast<double>(g[i]) * xh[i];
    }
    gamma.grad[ci] += static_cast<float>(sum_gx);
    beta.grad[ci] += static_cast<float>(sum_g);
    const double k = gamma.value[ci] * inv_std_[ci] / static_cast<double>(m);
    const float a = static_cast<float>(k * static_cast<double>(m));
    const float b = static_cast<float>(k * sum_g);
    const float cc = static_cast<float>(k * sum_gx);
    float* out = dx.data() + ci * m;
    for (std::size_t i = 0; i < m; ++i) out[i] = a * g[i] - b - cc * xh[i];
  }
  xhat_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}),
      bias(name + ".bias", {out_features}) {}

void Linear::Init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (float& v : weight.value.values()) v = static_cast<float>(u(rng));
  for (float& v : bias.value.values()) v = static_cast<float>(u(rng));
}

void Linear::ZeroInit() {
  weight.value.fill(0.0f);
  bias.value.fill(0.0f);
}

Tensor Linear::Forward(const Tensor& x, Mode mode) {
  CheckRank(x, 2, "Linear");
  if (x.dim(1) != in_features()) {
    throw ShapeError(weight.name + ": expected " +
                     std::to_string(in_features()) + " features, got " +
                     std::to_string(x.dim(1)));
  }
  const int n = x.dim(0), in = in_features(), out = out_features();
  Tensor y({n, out});
  MatMap ym(y.data(), n, out);
  ym.noalias() = ConstMatMap(x.data(), n, in) *
                 ConstMatMap(weight.value.data(), out, in).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.value.data(), out);
  if (Records(mode)) input_ = x;
  return y;
}

Tensor Linear::Backward(const Tensor& dy) {
  if (input_.empty()) throw Error(weight.name + ": Backward without Forward");
  const int n = dy.dim(0), in = in_features(), out = out_features();
  ConstMatMap g(dy.data(), n, out);
  ConstMatMap x(input_.data(), n, in);
  MatMap(weight.grad.data(), out, in).noalias() += g.transpose() * x;
  Eigen::Map<Eigen::RowVectorXf>(bias.grad.data(), out) += g.colwise().sum();
  Tensor dx({n, in});
  MatMap(dx.data(), n, in).noalias() =
      g * ConstMatMap(weight.value.data(), out, in);
  input_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------------------
// Stateless ops

void ReluInPlace(Tensor& x) {
  for (float& v : x.values()) v = v > 0.0f ? v : 0.0f;
}

void ReluBackwardInPlace(const Tensor& y, Tensor& dy) {
  if (!y.same_shape(dy)) throw ShapeError("ReLU gradient shape mismatch");
  const float* yv = y.data();
  float* g = dy.data();
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(yv[i] > 0.0f)) g[i] = 0.0f;
  }
}

Tensor GlobalAvgPool(const Tensor& x) {
  CheckRank(x, 4, "GlobalAvgPool");
  const int c = x.dim(0), n = x.dim(1);
  const int hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (int ci = 0; ci < c; ++ci) {
    for (int ni = 0; ni < n; ++ni) {
      const float* p = x.data() + (static_cast<std::size_t>(ci) * n + ni) * hw;
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += p[i];
      y[static_cast<std::size_t>(ni) * c + ci] = static_cast<float>(s / hw);
    }
  }
  return y;
}

Tensor GlobalAvgPoolBackward(const Tensor& dy, const std::vector<int>& in_shape) {
  Tensor dx(in_shape);
  const int c = in_shape[0], n = in_shape[1];
  const int hw = in_shape[2] * in_shape[3];
  const float inv = 1.0f / static_cast<float>(hw);
  for (int ci = 0; ci < c; ++ci) {
    for (int ni = 0; ni < n; ++ni) {
      const float g = dy[static_cast<std::size_t>(ni) * c + ci] * inv;
      float* p = dx.data() + (static_cast<std::size_t>(ci) * n + ni) * hw;
      for (int i = 0; i < hw; ++i) p[i] = g;
    }
  }
  return dx;
}

Tensor L2NormalizeRows(const Tensor& x, std::vector<float>* norms) {
  CheckRank(x, 2, "L2NormalizeRows");
  const int n = x.dim(0), d = x.dim(1);
  Tensor y(x.shape());
  if (norms) norms->assign(static_cast<std::size_t>(n), 0.0f);
  for (int i = 0; i < n; ++i) {
    const float* in = x.data() + static_cast<std::size_t>(i) * d;
    double ss = 0.0;
    for (int j = 0; j < d; ++j) ss += static_cast<double>(in[j]) * in[j];
    const double norm = std::max(std::sqrt(ss), 1e-12);
    float* out = y.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) out[j] = static_cast<float>(in[j] / norm);
    if (norms) (*norms)[i] = static_cast<float>(norm);
  }
  return y;
}

Tensor L2NormalizeRowsBackward(const Tensor& y, const std::vector<float>& norms,
                               const Tensor& dy) {
  const int n = y.dim(0), d = y.dim(1);
  Tensor dx(y.shape());
  for (int i = 0; i < n; ++i) {
    const float* yr = y.data() + static_cast<std::size_t>(i) * d;
    const float* gr = dy.data() + static_cast<std::size_t>(i) * d;
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += static_cast<double>(yr[j]) * gr[j];
    float* out = dx.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      out[j] = static_cast<float>((gr[j] - yr[j] * dot) / norms[i]);
    }
  }
  return dx;
}

}  // namespace vprior::nn
