#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "czc/common.hpp"
#include "czc/tensor.hpp"

namespace czc::nn {

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> w;
  std::vector<float> g;
  std::vector<float> m1, m2;  // optimizer state, sized on first step

  size_t numel() const { return w.size(); }

  void init(std::string n, std::vector<int> s) {
    name = std::move(n);
    shape = std::move(s);
    size_t total = 1;
    for (int d : shape) total *= static_cast<size_t>(d);
    w.assign(total, 0.0f);
    g.assign(total, 0.0f);
  }

  void fill_normal(Rng& rng, float stddev) {
    for (auto& x : w) x = static_cast<float>(rng.normal()) * stddev;
  }
};

// ---------------------------------------------------------------------------
// im2col / col2im over the channel-major batched layout.
// src [C,B,H,W] -> col [(C*k*k), (B*ho*wo)], zero padding `pad`, stride `s`.

inline void im2col(const Fmap& src, int k, int s, int pad, int ho, int wo,
                   Mat& col) {
  col.rows = src.ch * k * k;
  col.cols = src.b * ho * wo;
  col.v.resize(static_cast<size_t>(col.rows) * col.cols);
  const int B = src.b, H = src.h, W = src.w;
  for (int c = 0; c < src.ch; ++c) {
    const float* srow = src.row(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* drow = col.row((c * k + ky) * k + kx);
        for (int bi = 0; bi < B; ++bi) {
          const float* simg = srow + static_cast<size_t>(bi) * H * W;
          float* dimg = drow + static_cast<size_t>(bi) * ho * wo;
          for (int y = 0; y < ho; ++y) {
            int sy = y * s + ky - pad;
            float* dline = dimg + static_cast<size_t>(y) * wo;
            if (sy < 0 || sy >= H) {
              std::fill(dline, dline + wo, 0.0f);
              continue;
            }
            const float* sline = simg + static_cast<size_t>(sy) * W;
            for (int x = 0; x < wo; ++x) {
              int sx = x * s + kx - pad;
              dline[x] = (sx >= 0 && sx < W) ? sline[sx] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col back into dst (dst must be pre-zeroed
// by the caller when accumulation is not wanted).
inline void col2im_add(const Mat& col, int k, int s, int pad, int ho, int wo,
                       Fmap& dst) {
  const int B = dst.b, H = dst.h, W = dst.w;
  for (int c = 0; c < dst.ch; ++c) {
    float* drow = dst.row(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* srow = col.row((c * k + ky) * k + kx);
        for (int bi = 0; bi < B; ++bi) {
          float* dimg = drow + static_cast<size_t>(bi) * H * W;
          const float* simg = srow + static_cast<size_t>(bi) * ho * wo;
          for (int y = 0; y < ho; ++y) {
            int dy = y * s + ky - pad;
            if (dy < 0 || dy >= H) continue;
            const float* sline = simg + static_cast<size_t>(y) * wo;
            float* dline = dimg + static_cast<size_t>(dy) * W;
            for (int x = 0; x < wo; ++x) {
              int dx = x * s + kx - pad;
              if (dx >= 0 && dx < W) dline[dx] += sline[x];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

struct Conv2d {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  Param w, b;
  Mat col;      // cached for backward
  int in_h = 0, in_w = 0, in_b = 0, out_h = 0, out_w = 0;

  void init(const std::string& name, int cin_, int cout_, int k_, int stride_,
            Rng& rng) {
    cin = cin_;
    cout = cout_;
    k = k_;
    stride = stride_;
    pad = k_ / 2;
    w.init(name + ".w", {cout, cin, k, k});
    w.fill_normal(rng, std::sqrt(2.0f / (static_cast<float>(cin) * k * k)));
    b.init(name + ".b", {cout});
  }

  Fmap forward(const Fmap& x) {
    in_h = x.h;
    in_w = x.w;
    in_b = x.b;
    out_h = (x.h + 2 * pad - k) / stride + 1;
    out_w = (x.w + 2 * pad - k) / stride + 1;
    im2col(x, k, stride, pad, out_h, out_w, col);
    Fmap y(cout, x.b, out_h, out_w);
    gemm_nn(cout, col.cols, col.rows, w.w.data(), col.v.data(), y.v.data());
    for (int c = 0; c < cout; ++c) {
      float* row = y.row(c);
      float bias = b.w[static_cast<size_t>(c)];
      for (int i = 0; i < y.cols(); ++i) row[i] += bias;
    }
    return y;
  }

  Fmap backward(const Fmap& dy) {
    gemm_nt(cout, col.rows, col.cols, dy.v.data(), col.v.data(), w.g.data());
    for (int c = 0; c < cout; ++c) {
      const float* row = dy.row(c);
      double s = 0;
      for (int i = 0; i < dy.cols(); ++i) s += row[i];
      b.g[static_cast<size_t>(c)] = static_cast<float>(s);
    }
    Mat dcol(col.rows, col.cols);
    gemm_tn(col.rows, col.cols, cout, w.w.data(), dy.v.data(), dcol.v.data());
    Fmap dx(cin, in_b, in_h, in_w);
    col2im_add(dcol, k, stride, pad, out_h, out_w, dx);
    return dx;
  }

  void params(std::vector<Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Transposed convolution, output dims = in * stride. With k=5/s=2 the
// implied pad of 2 makes the upsample an exact 2x; with s=1 it is
// shape-preserving like a same-padded convolution.
struct ConvTranspose2d {
  int cin = 0, cout = 0, k = 5, stride = 2, pad = 2;
  Param w, b;  // w shape [cin][cout*k*k]
  Fmap x_cache;
  int in_h = 0, in_w = 0, in_b = 0, out_h = 0, out_w = 0;

  void init(const std::string& name, int cin_, int cout_, int k_, int stride_,
            Rng& rng) {
    cin = cin_;
    cout = cout_;
    k = k_;
    stride = stride_;
    pad = k_ / 2;
    w.init(name + ".w", {cin, cout, k, k});
    w.fill_normal(rng, std::sqrt(2.0f / (static_cast<float>(cin) * k * k)));
    b.init(name + ".b", {cout});
  }

  Fmap forward(const Fmap& x) {
    in_h = x.h;
    in_w = x.w;
    in_b = x.b;
    out_h = x.h * stride;
    out_w = x.w * stride;
    x_cache = x;
    Mat colbuf(cout * k * k, x.b * x.h * x.w);
    gemm_tn(cout * k * k, colbuf.cols, cin, w.w.data(), x.v.data(),
            colbuf.v.data());
    Fmap y(cout, x.b, out_h, out_w);
    col2im_add(colbuf, k, stride, pad, x.h, x.w, y);
    for (int c = 0; c < cout; ++c) {
      float* row = y.row(c);
      float bias = b.w[static_cast<size_t>(c)];
      for (int i = 0; i < y.cols(); ++i) row[i] += bias;
    }
    return y;
  }

  Fmap backward(const Fmap& dy) {
    Mat dcol;
    im2col(dy, k, stride, pad, in_h, in_w, dcol);
    gemm_nt(cin, cout * k * k, dcol.cols, x_cache.v.data(), dcol.v.data(),
            w.g.data());
    for (int c = 0; c < cout; ++c) {
      const float* row = dy.row(c);
      double s = 0;
      for (int i = 0; i < dy.cols(); ++i) s += row[i];
      b.g[static_cast<size_t>(c)] = static_cast<float>(s);
    }
    Fmap dx(cin, in_b, in_h, in_w);
    gemm_nn(cin, dcol.cols, cout * k * k, w.w.data(), dcol.v.data(),
            dx.v.data());
    return dx;
  }

  void params(std::vector<Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct BatchNorm2d {
  int ch = 0;
  float eps = 1e-5f, momentum = 0.1f;
  Param gamma, beta;
  std::vector<float> running_mean, running_var;
  // caches
  std::vector<float> mean_, invstd_;
  Fmap xhat_;

  void init(const std::string& name, int ch_) {
    ch = ch_;
    gamma.init(name + ".gamma", {ch});
    std::fill(gamma.w.begin(), gamma.w.end(), 1.0f);
    beta.init(name + ".beta", {ch});
    running_mean.assign(static_cast<size_t>(ch), 0.0f);
    running_var.assign(static_cast<size_t>(ch), 1.0f);
  }

  Fmap forward(const Fmap& x, bool train) {
    Fmap y(x.ch, x.b, x.h, x.w);
    const int n = x.cols();
    if (train) {
      mean_.resize(static_cast<size_t>(ch));
      invstd_.resize(static_cast<size_t>(ch));
      xhat_ = Fmap(x.ch, x.b, x.h, x.w);
      for (int c = 0; c < ch; ++c) {
        const float* row = x.row(c);
        double s = 0;
        for (int i = 0; i < n; ++i) s += row[i];
        float m = static_cast<float>(s / n);
        double v = 0;
        for (int i = 0; i < n; ++i) {
          double d = row[i] - m;
          v += d * d;
        }
        float var = static_cast<float>(v / n);
        mean_[static_cast<size_t>(c)] = m;
        float istd = 1.0f / std::sqrt(var + eps);
        invstd_[static_cast<size_t>(c)] = istd;
        float* xh = xhat_.row(c);
        float* yr = y.row(c);
        float g = gamma.w[static_cast<size_t>(c)], bt = beta.w[static_cast<size_t>(c)];
        for (int i = 0; i < n; ++i) {
          xh[i] = (row[i] - m) * istd;
          yr[i] = g * xh[i] + bt;
        }
        float unbiased = n > 1 ? var * static_cast<float>(n) / (n - 1) : var;
        running_mean[static_cast<size_t>(c)] =
            (1 - momentum) * running_mean[static_cast<size_t>(c)] + momentum * m;
        running_var[static_cast<size_t>(c)] =
            (1 - momentum) * running_var[static_cast<size_t>(c)] + momentum * unbiased;
      }
    } else {
      for (int c = 0; c < ch; ++c) {
        const float* row = x.row(c);
        float* yr = y.row(c);
        float m = running_mean[static_cast<size_t>(c)];
        float istd = 1.0f / std::sqrt(running_var[static_cast<size_t>(c)] + eps);
        float g = gamma.w[static_cast<size_t>(c)], bt = beta.w[static_cast<size_t>(c)];
        for (int i = 0; i < n; ++i) yr[i] = g * (row[i] - m) * istd + bt;
      }
    }
    return y;
  }

  Fmap backward(const Fmap& dy) {
    const int n = dy.cols();
    Fmap dx(dy.ch, dy.b, dy.h, dy.w);
    for (int c = 0; c < ch; ++c) {
      const float* dyr = dy.row(c);
      const float* xh = xhat_.row(c);
      double sum_dy = 0, sum_dy_xh = 0;
      for (int i = 0; i < n; ++i) {
        sum_dy += dyr[i];
        sum_dy_xh += dyr[i] * xh[i];
      }
      gamma.g[static_cast<size_t>(c)] = static_cast<float>(sum_dy_xh);
      beta.g[static_cast<size_t>(c)] = static_cast<float>(sum_dy);
      float g = gamma.w[static_cast<size_t>(c)];
      float istd = invstd_[static_cast<size_t>(c)];
      float* dxr = dx.row(c);
      float a = static_cast<float>(sum_dy / n);
      float bq = static_cast<float>(sum_dy_xh / n);
      for (int i = 0; i < n; ++i) {
        dxr[i] = g * istd * (dyr[i] - a - xh[i] * bq);
      }
    }
    return dx;
  }

  void params(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

struct LeakyRelu {
  float slope = 0.01f;
  Fmap y_;

  Fmap forward(const Fmap& x) {
    Fmap y(x.ch, x.b, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i)
      y.v[i] = x.v[i] > 0 ? x.v[i] : slope * x.v[i];
    y_ = y;
    return y;
  }
  Fmap backward(const Fmap& dy) {
    Fmap dx(dy.ch, dy.b, dy.h, dy.w);
    for (size_t i = 0; i < dy.v.size(); ++i)
      dx.v[i] = y_.v[i] > 0 ? dy.v[i] : slope * dy.v[i];
    return dx;
  }
};

struct Relu {
  Fmap y_;
  Fmap forward(const Fmap& x) {
    Fmap y(x.ch, x.b, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > 0 ? x.v[i] : 0;
    y_ = y;
    return y;
  }
  Fmap backward(const Fmap& dy) {
    Fmap dx(dy.ch, dy.b, dy.h, dy.w);
    for (size_t i = 0; i < dy.v.size(); ++i)
      dx.v[i] = y_.v[i] > 0 ? dy.v[i] : 0;
    return dx;
  }
};

struct Linear {
  int in = 0, out = 0;
  Param w, b;  // w [out, in]
  Mat x_cache;

  void init(const std::string& name, int in_, int out_, Rng& rng) {
    in = in_;
    out = out_;
    w.init(name + ".w", {out, in});
    w.fill_normal(rng, std::sqrt(1.0f / static_cast<float>(in)));
    b.init(name + ".b", {out});
  }

  Mat forward(const Mat& x) {
    x_cache = x;
    Mat y(x.rows, out);
    gemm_nt(x.rows, out, in, x.v.data(), w.w.data(), y.v.data());
    for (int r = 0; r < y.rows; ++r)
      for (int c = 0; c < out; ++c) y.at(r, c) += b.w[static_cast<size_t>(c)];
    return y;
  }

  Mat backward(const Mat& dy) {
    gemm_tn(out, in, dy.rows, dy.v.data(), x_cache.v.data(), w.g.data());
    for (int c = 0; c < out; ++c) {
      double s = 0;
      for (int r = 0; r < dy.rows; ++r) s += dy.at(r, c);
      b.g[static_cast<size_t>(c)] = static_cast<float>(s);
    }
    Mat dx(dy.rows, in);
    gemm_nn(dy.rows, in, out, dy.v.data(), w.w.data(), dx.v.data());
    return dx;
  }

  void params(std::vector<Param*>& out_list) {
    out_list.push_back(&w);
    out_list.push_back(&b);
  }
};

// Global average pooling: [C, B, H, W] -> [B, C].
inline Mat global_avg_pool(const Fmap& x) {
  Mat y(x.b, x.ch);
  const int hw = x.h * x.w;
  for (int c = 0; c < x.ch; ++c) {
    const float* row = x.row(c);
    for (int bi = 0; bi < x.b; ++bi) {
      const float* img = row + static_cast<size_t>(bi) * hw;
      double s = 0;
      for (int i = 0; i < hw; ++i) s += img[i];
      y.at(bi, c) = static_cast<float>(s / hw);
    }
  }
  return y;
}

inline Fmap global_avg_pool_backward(const Mat& dy, int ch, int b, int h,
                                     int w) {
  Fmap dx(ch, b, h, w);
  const float inv = 1.0f / static_cast<float>(h * w);
  for (int c = 0; c < ch; ++c) {
    float* row = dx.row(c);
    for (int bi = 0; bi < b; ++bi) {
      float v = dy.at(bi, c) * inv;
      float* img = row + static_cast<size_t>(bi) * h * w;
      std::fill(img, img + h * w, v);
    }
  }
  return dx;
}

// Softmax cross-entropy; returns mean loss, writes dlogits (already /B).
inline double softmax_ce(const Mat& logits, const std::vector<int>& labels,
                         Mat& dlogits) {
  const int B = logits.rows, K = logits.cols;
  dlogits = Mat(B, K);
  double loss = 0;
  for (int bi = 0; bi < B; ++bi) {
    const float* row = logits.row(bi);
    float mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
    double logz = std::log(z) + mx;
    loss += logz - row[labels[static_cast<size_t>(bi)]];
    float* drow = dlogits.row(bi);
    for (int k = 0; k < K; ++k) {
      double p = std::exp(static_cast<double>(row[k]) - logz);
      drow[k] = static_cast<float>(p / B);
    }
    drow[labels[static_cast<size_t>(bi)]] -= 1.0f / static_cast<float>(B);
  }
  return loss / B;
}

// Distillation: KL between teacher and student softened over the first
// K_old logits, temperature-squared scaled. Adds `weight`-scaled gradient
// into dlogits.
inline double distill_kl(const Mat& student, const Mat& teacher, double temp,
                         double weight, Mat& dlogits) {
  const int B = student.rows, Kold = teacher.cols;
  double loss = 0;
  std::vector<double> ps(static_cast<size_t>(Kold)), pt(static_cast<size_t>(Kold));
  for (int bi = 0; bi < B; ++bi) {
    const float* srow = student.row(bi);
    const float* trow = teacher.row(bi);
    double smx = -1e30, tmx = -1e30;
    for (int k = 0; k < Kold; ++k) {
      smx = std::max(smx, static_cast<double>(srow[k]) / temp);
      tmx = std::max(tmx, static_cast<double>(trow[k]) / temp);
    }
    double sz = 0, tz = 0;
    for (int k = 0; k < Kold; ++k) {
      ps[static_cast<size_t>(k)] = std::exp(srow[k] / temp - smx);
      pt[static_cast<size_t>(k)] = std::exp(trow[k] / temp - tmx);
      sz += ps[static_cast<size_t>(k)];
      tz += pt[static_cast<size_t>(k)];
    }
    for (int k = 0; k < Kold; ++k) {
      ps[static_cast<size_t>(k)] /= sz;
      pt[static_cast<size_t>(k)] /= tz;
      double p = pt[static_cast<size_t>(k)];
      if (p > 1e-12)
        loss += p * (std::log(p) - std::log(std::max(ps[static_cast<size_t>(k)], 1e-12)));
    }
    float* drow = dlogits.row(bi);
    for (int k = 0; k < Kold; ++k) {
      drow[k] += static_cast<float>(weight * temp *
                                    (ps[static_cast<size_t>(k)] - pt[static_cast<size_t>(k)]) / B);
    }
  }
  return weight * temp * temp * loss / B;
}

// ---------------------------------------------------------------------------

struct Sgd {
  float lr = 0.1f;
  float momentum = 0.9f;

  void step(const std::vector<Param*>& ps) {
    for (Param* p : ps) {
      if (p->m1.size() != p->w.size()) p->m1.assign(p->w.size(), 0.0f);
      for (size_t i = 0; i < p->w.size(); ++i) {
        p->m1[i] = momentum * p->m1[i] + p->g[i];
        p->w[i] -= lr * p->m1[i];
      }
    }
  }
};

struct Adam {
  float lr = 1e-4f;
  float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
  int64_t t = 0;

  void step(const std::vector<Param*>& ps) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Param* p : ps) {
      if (p->m1.size() != p->w.size()) {
        p->m1.assign(p->w.size(), 0.0f);
        p->m2.assign(p->w.size(), 0.0f);
      }
      for (size_t i = 0; i < p->w.size(); ++i) {
        float g = p->g[i];
        p->m1[i] = beta1 * p->m1[i] + (1 - beta1) * g;
        p->m2[i] = beta2 * p->m2[i] + (1 - beta2) * g * g;
        double mhat = p->m1[i] / bc1;
        double vhat = p->m2[i] / bc2;
        p->w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

}  // namespace czc::nn
