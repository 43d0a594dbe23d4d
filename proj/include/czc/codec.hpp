#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "czc/common.hpp"
#include "czc/entropy.hpp"
#include "czc/image.hpp"
#include "czc/nn.hpp"
#include "czc/rangecoder.hpp"
#include "czc/tensor.hpp"

namespace czc {

// ---------------------------------------------------------------------------
// Bitstream container. Byte layout (little-endian):
//   "CZC1" | version u8 | frozen-digest u64 | orig_h u16 | orig_w u16 |
//   pad_h u16 | pad_w u16 | hyper_len u32 | hyper | main_len u32 | main

struct Bitstream {
  uint8_t version = 1;
  uint64_t frozen_digest = 0;
  uint16_t orig_h = 0, orig_w = 0;
  uint16_t pad_h = 0, pad_w = 0;
  std::vector<uint8_t> hyper;
  std::vector<uint8_t> main;

  static constexpr size_t kHeaderBytes = 4 + 1 + 8 + 4 * 2 + 4 + 4;

  uint64_t total_bits() const {
    return static_cast<uint64_t>(kHeaderBytes + hyper.size() + main.size()) * 8;
  }

  std::vector<uint8_t> serialize() const {
    ByteWriter w;
    w.bytes("CZC1", 4);
    w.u8(version);
    w.u64(frozen_digest);
    w.u16(orig_h);
    w.u16(orig_w);
    w.u16(pad_h);
    w.u16(pad_w);
    w.u32(static_cast<uint32_t>(hyper.size()));
    w.bytes(hyper.data(), hyper.size());
    w.u32(static_cast<uint32_t>(main.size()));
    w.bytes(main.data(), main.size());
    return std::move(w.buf);
  }

  static Bitstream deserialize(const uint8_t* data, size_t size) {
    ByteReader r(data, size);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "CZC1", 4) != 0) throw CorruptStreamError("bad bitstream magic");
    Bitstream bs;
    bs.version = r.u8();
    if (bs.version != 1) throw CorruptStreamError("unsupported bitstream version");
    bs.frozen_digest = r.u64();
    bs.orig_h = r.u16();
    bs.orig_w = r.u16();
    bs.pad_h = r.u16();
    bs.pad_w = r.u16();
    uint32_t hlen = r.u32();
    bs.hyper.resize(hlen);
    if (hlen) r.bytes(bs.hyper.data(), hlen);
    uint32_t mlen = r.u32();
    bs.main.resize(mlen);
    if (mlen) r.bytes(bs.main.data(), mlen);
    return bs;
  }

  static Bitstream deserialize(const std::vector<uint8_t>& buf) {
    return deserialize(buf.data(), buf.size());
  }
};

inline double measure_bpp(const Bitstream& bs) {
  return static_cast<double>(bs.total_bits()) /
         (static_cast<double>(bs.orig_h) * static_cast<double>(bs.orig_w));
}

struct RdReport {
  double rate = 0;        // bits per image, -log2 p of the quantized latents
  double distortion = 0;  // MSE in [0,1] pixel space
  double loss = 0;        // rate + lambda * distortion
};

// ---------------------------------------------------------------------------

struct CodecModel {
  static constexpr int kN = 64;       // transform width
  static constexpr int kM = 128;      // latent channels
  static constexpr int kH = 96;       // hyper-latent channels
  static constexpr int kFactor = 32;  // total downsampling (16 main x 2 hyper)
  static constexpr float kScaleFloor = 0.04f;

  float lambda = 16384.0f;
  bool trained = false;
  bool frozen = false;

  // Analysis / synthesis transforms (4 stages, factor 16).
  nn::Conv2d e1, e2, e3, e4;
  nn::ConvTranspose2d d1, d2, d3, d4;
  // Hyper transforms (1 extra factor-2 stage).
  nn::Conv2d h1, h2;
  nn::ConvTranspose2d u1;
  nn::Conv2d u2;
  // Factorized prior over the hyper-latent: per-channel logistic.
  nn::Param prior_loc, prior_ls;

  nn::LeakyRelu ea1, ea2, ea3, ha1, da1, da2, da3, ua1;

  mutable uint64_t digest_cache_ = 0;
  mutable bool digest_valid_ = false;

  void init(uint64_t seed, float lambda_) {
    lambda = lambda_;
    if (lambda <= 0) throw ConfigError("lambda must be positive");
    Rng rng(mix_seed(seed, 0xC0DECULL));
    e1.init("e1", 3, kN, 5, 2, rng);
    e2.init("e2", kN, kN, 5, 2, rng);
    e3.init("e3", kN, kN, 5, 2, rng);
    e4.init("e4", kN, kM, 5, 2, rng);
    d1.init("d1", kM, kN, 5, 2, rng);
    d2.init("d2", kN, kN, 5, 2, rng);
    d3.init("d3", kN, kN, 5, 2, rng);
    d4.init("d4", kN, 3, 5, 2, rng);
    h1.init("h1", kM, kH, 3, 1, rng);
    h2.init("h2", kH, kH, 5, 2, rng);
    u1.init("u1", kH, kH, 5, 2, rng);
    u2.init("u2", kH, 2 * kM, 3, 1, rng);
    prior_loc.init("prior.loc", {kH});
    prior_ls.init("prior.ls", {kH});
  }

  std::vector<nn::Param*> encoder_params() {
    std::vector<nn::Param*> ps;
    e1.params(ps);
    e2.params(ps);
    e3.params(ps);
    e4.params(ps);
    h1.params(ps);
    h2.params(ps);
    return ps;
  }

  std::vector<nn::Param*> frozen_side_params() {
    std::vector<nn::Param*> ps;
    d1.params(ps);
    d2.params(ps);
    d3.params(ps);
    d4.params(ps);
    u1.params(ps);
    u2.params(ps);
    ps.push_back(&prior_loc);
    ps.push_back(&prior_ls);
    return ps;
  }

  std::vector<nn::Param*> all_params() {
    auto ps = encoder_params();
    auto fs = frozen_side_params();
    ps.insert(ps.end(), fs.begin(), fs.end());
    return ps;
  }

  uint64_t frozen_digest() const {
    if (frozen && digest_valid_) return digest_cache_;
    auto* self = const_cast<CodecModel*>(this);
    ByteWriter w;
    for (nn::Param* p : self->frozen_side_params())
      w.bytes(p->w.data(), p->w.size() * sizeof(float));
    uint64_t d = fnv1a64(w.buf.data(), w.buf.size());
    if (frozen) {
      digest_cache_ = d;
      digest_valid_ = true;
    }
    return d;
  }

  Fmap enc_forward(const Fmap& x) {
    return e4.forward(ea3.forward(e3.forward(ea2.forward(e2.forward(ea1.forward(e1.forward(x)))))));
  }
  Fmap hyper_forward(const Fmap& y) { return h2.forward(ha1.forward(h1.forward(y))); }
  Fmap hyperdec_forward(const Fmap& z) { return u2.forward(ua1.forward(u1.forward(z))); }
  Fmap dec_forward(const Fmap& y) {
    return d4.forward(da3.forward(d3.forward(da2.forward(d2.forward(da1.forward(d1.forward(y)))))));
  }

  // Per-channel logistic prior, floored like the conditional scales.
  float prior_scale(int c) const {
    float ls = std::min(prior_ls.w[static_cast<size_t>(c)], 8.0f);
    return std::max(std::exp(ls), kScaleFloor);
  }
};

// ---------------------------------------------------------------------------
// Shared helpers.

namespace codec_detail {

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

// Image -> [0,1] float map at padded dims, symmetric reflection padding.
inline Fmap to_padded_fmap(const Image& img, int pad_h, int pad_w) {
  Fmap x(3, 1, pad_h, pad_w);
  for (int c = 0; c < 3; ++c) {
    float* row = x.row(c);
    for (int y = 0; y < pad_h; ++y) {
      int sy = reflect_index(y, img.h);
      for (int xx = 0; xx < pad_w; ++xx) {
        int sx = reflect_index(xx, img.w);
        row[static_cast<size_t>(y) * pad_w + xx] = img.pixel(sy, sx)[c] / 255.0f;
      }
    }
  }
  return x;
}

inline Image to_image(const Fmap& x, int orig_h, int orig_w) {
  Image img(orig_h, orig_w);
  for (int c = 0; c < 3; ++c) {
    const float* row = x.row(c);
    for (int y = 0; y < orig_h; ++y)
      for (int xx = 0; xx < orig_w; ++xx) {
        float v = row[static_cast<size_t>(y) * x.w + xx];
        v = std::min(std::max(v, 0.0f), 1.0f);
        img.pixel(y, xx)[c] = static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  }
  return img;
}

inline int ceil_multiple(int v, int m) { return (v + m - 1) / m * m; }

// sigma = max(exp(min(raw, 8)), floor); returns d sigma / d raw as well.
inline float scale_from_raw(float raw, float& dgrad) {
  float e = std::exp(std::min(raw, 8.0f));
  if (e <= CodecModel::kScaleFloor || raw >= 8.0f) {
    dgrad = 0.0f;
    return std::max(e, CodecModel::kScaleFloor);
  }
  dgrad = e;
  return e;
}

}  // namespace codec_detail

// ---------------------------------------------------------------------------
// Training.

struct CodecTrainLog {
  std::vector<double> epoch_loss;  // mean per-image loss per epoch
  std::vector<double> epoch_rate;
  std::vector<double> epoch_mse;
};

namespace codec_detail {

// One noisy-quantization RD step over a batch held in x. Fills gradients for
// every parameter the forward pass touches; the caller picks which to update.
inline void rd_step(CodecModel& m, const Fmap& x, Rng& rng, double& bits_out, double& mse_out) {
  const int B = x.b;
  Fmap y = m.enc_forward(x);
  Fmap z = m.hyper_forward(y);

  Fmap zt(z.ch, z.b, z.h, z.w);
  for (size_t i = 0; i < z.v.size(); ++i)
    zt.v[i] = z.v[i] + static_cast<float>(rng.real01() - 0.5);
  Fmap params = m.hyperdec_forward(zt);

  Fmap yt(y.ch, y.b, y.h, y.w);
  for (size_t i = 0; i < y.v.size(); ++i)
    yt.v[i] = y.v[i] + static_cast<float>(rng.real01() - 0.5);
  Fmap xhat = m.dec_forward(yt);

  // Rate: conditional Gaussian on yt.
  const int spatial = y.b * y.h * y.w;
  Fmap dyt(y.ch, y.b, y.h, y.w);
  Fmap dparams(params.ch, params.b, params.h, params.w);
  double bits = 0;
  const float invB = 1.0f / static_cast<float>(B);
  for (int c = 0; c < CodecModel::kM; ++c) {
    const float* yrow = yt.row(c);
    const float* murow = params.row(c);
    const float* srow = params.row(c + CodecModel::kM);
    float* dy = dyt.row(c);
    float* dmu = dparams.row(c);
    float* ds = dparams.row(c + CodecModel::kM);
    for (int i = 0; i < spatial; ++i) {
      float dgrad;
      float sigma = scale_from_raw(srow[i], dgrad);
      double dv, dm, dsg;
      bits += entropy::gaussian_bits_grad(yrow[i], murow[i], sigma, dv, dm, dsg);
      dy[i] = static_cast<float>(dv) * invB;
      dmu[i] = static_cast<float>(dm) * invB;
      ds[i] = static_cast<float>(dsg) * dgrad * invB;
    }
  }
  // Rate: factorized logistic on zt.
  const int zspatial = z.b * z.h * z.w;
  Fmap dzt(z.ch, z.b, z.h, z.w);
  std::fill(m.prior_loc.g.begin(), m.prior_loc.g.end(), 0.0f);
  std::fill(m.prior_ls.g.begin(), m.prior_ls.g.end(), 0.0f);
  for (int c = 0; c < CodecModel::kH; ++c) {
    float loc = m.prior_loc.w[static_cast<size_t>(c)];
    float lsr = m.prior_ls.w[static_cast<size_t>(c)];
    float dsgrad;
    float s = scale_from_raw(lsr, dsgrad);
    const float* zrow = zt.row(c);
    float* dz = dzt.row(c);
    double dloc_acc = 0, ds_acc = 0;
    for (int i = 0; i < zspatial; ++i) {
      double dv, dl, dsg;
      bits += entropy::logistic_bits_grad(zrow[i], loc, s, dv, dl, dsg);
      dz[i] = static_cast<float>(dv) * invB;
      dloc_acc += dl;
      ds_acc += dsg;
    }
    m.prior_loc.g[static_cast<size_t>(c)] = static_cast<float>(dloc_acc) * invB;
    m.prior_ls.g[static_cast<size_t>(c)] = static_cast<float>(ds_acc) * dsgrad * invB;
  }

  // Distortion.
  double se = 0;
  Fmap dxhat(xhat.ch, xhat.b, xhat.h, xhat.w);
  const float dscale = 2.0f * m.lambda / static_cast<float>(x.v.size());
  for (size_t i = 0; i < x.v.size(); ++i) {
    float d = xhat.v[i] - x.v[i];
    se += static_cast<double>(d) * d;
    dxhat.v[i] = dscale * d;
  }
  double mse = se / static_cast<double>(x.v.size());

  // Backward.
  Fmap dyt_dec = m.d1.backward(m.da1.backward(
      m.d2.backward(m.da2.backward(m.d3.backward(m.da3.backward(m.d4.backward(dxhat)))))));
  for (size_t i = 0; i < dyt.v.size(); ++i) dyt.v[i] += dyt_dec.v[i];

  Fmap dzt_u = m.u1.backward(m.ua1.backward(m.u2.backward(dparams)));
  for (size_t i = 0; i < dzt.v.size(); ++i) dzt.v[i] += dzt_u.v[i];

  Fmap dy_h = m.h1.backward(m.ha1.backward(m.h2.backward(dzt)));
  for (size_t i = 0; i < dyt.v.size(); ++i) dyt.v[i] += dy_h.v[i];

  m.e1.backward(m.ea1.backward(
      m.e2.backward(m.ea2.backward(m.e3.backward(m.ea3.backward(m.e4.backward(dyt)))))));

  bits_out = bits / B;
  mse_out = mse;
}

// 32x32 training tile: random crop when the source is larger, reflection
// pad when smaller.
inline void fill_tile(const Image& img, Rng& rng, Fmap& batch, int bi) {
  const int T = 32;
  int off_y = img.h > T ? static_cast<int>(rng.below(static_cast<uint64_t>(img.h - T + 1))) : 0;
  int off_x = img.w > T ? static_cast<int>(rng.below(static_cast<uint64_t>(img.w - T + 1))) : 0;
  for (int c = 0; c < 3; ++c) {
    float* row = batch.row(c) + static_cast<size_t>(bi) * T * T;
    for (int y = 0; y < T; ++y)
      for (int x = 0; x < T; ++x) {
        int sy = reflect_index(off_y + y, img.h);
        int sx = reflect_index(off_x + x, img.w);
        row[static_cast<size_t>(y) * T + x] = img.pixel(sy, sx)[c] / 255.0f;
      }
  }
}

struct ParamSnapshot {
  std::vector<std::vector<float>> w;
  void capture(const std::vector<nn::Param*>& ps) {
    w.resize(ps.size());
    for (size_t i = 0; i < ps.size(); ++i) w[i] = ps[i]->w;
  }
  void restore(const std::vector<nn::Param*>& ps) const {
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->w = w[i];
  }
};

// Epoch loop shared by initial training and fine-tuning. Divergence policy:
// restore the best checkpoint and halve the step once; a second non-finite
// loss aborts.
inline std::vector<double> train_epochs(CodecModel& m, const std::vector<LabeledImage>& images,
                                        int epochs, int batch_size, nn::Adam& opt,
                                        const std::vector<nn::Param*>& update_set, uint64_t seed,
                                        CodecTrainLog* log) {
  if (images.empty()) throw DataError("codec training requires a non-empty image collection");
  Rng rng(mix_seed(seed, 0x7261696EULL));
  std::vector<int> order(images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  auto all = m.all_params();
  ParamSnapshot best;
  best.capture(all);
  double best_loss = std::numeric_limits<double>::infinity();
  bool halved = false;
  std::vector<double> losses;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double ep_loss = 0, ep_rate = 0, ep_mse = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
      int bs = static_cast<int>(std::min(static_cast<size_t>(batch_size), order.size() - start));
      Fmap x(3, bs, 32, 32);
      for (int i = 0; i < bs; ++i)
        fill_tile(images[static_cast<size_t>(order[start + static_cast<size_t>(i)])].image, rng, x, i);
      double bits, mse;
      rd_step(m, x, rng, bits, mse);
      double loss = bits + m.lambda * mse;
      if (!std::isfinite(loss)) {
        best.restore(all);
        if (halved) throw DivergenceError("codec training diverged twice; aborting");
        halved = true;
        opt.lr *= 0.5f;
        continue;
      }
      opt.step(update_set);
      ep_loss += loss;
      ep_rate += bits;
      ep_mse += mse;
      ++batches;
    }
    if (batches == 0) continue;
    ep_loss /= batches;
    ep_rate /= batches;
    ep_mse /= batches;
    losses.push_back(ep_loss);
    if (log) {
      log->epoch_loss.push_back(ep_loss);
      log->epoch_rate.push_back(ep_rate);
      log->epoch_mse.push_back(ep_mse);
    }
    if (ep_loss < best_loss) {
      best_loss = ep_loss;
      best.capture(all);
    }
  }
  return losses;
}

}  // namespace codec_detail

inline CodecModel train_initial(const std::vector<LabeledImage>& images, float lambda, int epochs,
                                uint64_t seed, CodecTrainLog* log = nullptr) {
  if (images.empty()) throw DataError("train_initial: empty image collection");
  CodecModel m;
  m.init(seed, lambda);
  nn::Adam opt;
  opt.lr = 1e-4f;
  auto update = m.all_params();
  codec_detail::train_epochs(m, images, epochs, 32, opt, update, seed, log);
  m.trained = true;
  m.frozen = false;
  return m;
}

inline void freeze_decoder_side(CodecModel& m) {
  if (!m.trained) throw ContractError("freeze_decoder_side: model was never trained");
  m.frozen = true;
  m.digest_valid_ = false;
  m.frozen_digest();  // prime the cache
}

inline std::vector<double> finetune_encoder(CodecModel& m, const std::vector<LabeledImage>& images,
                                            int epochs, uint64_t seed,
                                            CodecTrainLog* log = nullptr) {
  if (!m.frozen) throw ContractError("finetune_encoder requires a frozen decoder side");
  if (epochs == 0) return {};
  nn::Adam opt;
  opt.lr = 2e-5f;
  auto update = m.encoder_params();
  return codec_detail::train_epochs(m, images, epochs, 32, opt, update, seed, log);
}

// ---------------------------------------------------------------------------
// Inference: hard rounding + range coding.

namespace codec_detail {

inline Fmap round_fmap(const Fmap& x) {
  Fmap q(x.ch, x.b, x.h, x.w);
  for (size_t i = 0; i < x.v.size(); ++i)
    q.v[i] = static_cast<float>(std::lround(static_cast<double>(x.v[i])));
  return q;
}

}  // namespace codec_detail

// Encodes an image; when est_bits is non-null it receives the model's rate
// estimate (-log2 p of the rounded latents) for consistency checks.
inline Bitstream encode(CodecModel& m, const Image& img, double* est_bits = nullptr) {
  if (img.h <= 0 || img.w <= 0) throw DataError("encode: zero-area image");
  if (img.h > 0xFFFF || img.w > 0xFFFF) throw DataError("encode: image dims exceed u16 header");
  const int pad_h = codec_detail::ceil_multiple(img.h, CodecModel::kFactor);
  const int pad_w = codec_detail::ceil_multiple(img.w, CodecModel::kFactor);
  Fmap x = codec_detail::to_padded_fmap(img, pad_h, pad_w);

  Fmap y = m.enc_forward(x);
  Fmap z = m.hyper_forward(y);
  Fmap zq = codec_detail::round_fmap(z);
  Fmap params = m.hyperdec_forward(zq);
  Fmap yq = codec_detail::round_fmap(y);

  Bitstream bs;
  bs.frozen_digest = m.frozen_digest();
  bs.orig_h = static_cast<uint16_t>(img.h);
  bs.orig_w = static_cast<uint16_t>(img.w);
  bs.pad_h = static_cast<uint16_t>(pad_h);
  bs.pad_w = static_cast<uint16_t>(pad_w);

  double est = 0;
  {
    rc::RangeEncoder enc;
    const int zs = zq.h * zq.w;
    for (int c = 0; c < CodecModel::kH; ++c) {
      double loc = m.prior_loc.w[static_cast<size_t>(c)];
      double s = m.prior_scale(c);
      rc::QuantizedCdf cdf = entropy::logistic_qcdf(loc, s);
      const float* row = zq.row(c);
      for (int i = 0; i < zs; ++i) {
        int v = static_cast<int>(row[i]);
        cdf.encode_symbol(enc, v);
        est += entropy::logistic_bits(v, loc, s);
      }
    }
    bs.hyper = enc.finish();
  }
  {
    rc::RangeEncoder enc;
    const int ys = yq.h * yq.w;
    for (int c = 0; c < CodecModel::kM; ++c) {
      const float* row = yq.row(c);
      const float* murow = params.row(c);
      const float* srow = params.row(c + CodecModel::kM);
      for (int i = 0; i < ys; ++i) {
        float dg;
        double sigma = codec_detail::scale_from_raw(srow[i], dg);
        rc::QuantizedCdf cdf = entropy::gaussian_qcdf(murow[i], sigma);
        int v = static_cast<int>(row[i]);
        cdf.encode_symbol(enc, v);
        est += entropy::gaussian_bits(v, murow[i], sigma);
      }
    }
    bs.main = enc.finish();
  }
  if (est_bits) *est_bits = est;
  return bs;
}

inline Image decode(CodecModel& m, const Bitstream& bs) {
  if (bs.frozen_digest != m.frozen_digest())
    throw IncompatibleModelError("bitstream was produced by a different frozen decoder");
  if (bs.pad_h % CodecModel::kFactor != 0 || bs.pad_w % CodecModel::kFactor != 0 ||
      bs.pad_h < bs.orig_h || bs.pad_w < bs.orig_w || bs.orig_h == 0 || bs.orig_w == 0)
    throw CorruptStreamError("inconsistent bitstream dims");

  const int yh = bs.pad_h / 16, yw = bs.pad_w / 16;
  const int zh = yh / 2, zw = yw / 2;

  Fmap zq(CodecModel::kH, 1, zh, zw);
  {
    rc::RangeDecoder dec(bs.hyper.data(), bs.hyper.size());
    const int zs = zh * zw;
    for (int c = 0; c < CodecModel::kH; ++c) {
      double loc = m.prior_loc.w[static_cast<size_t>(c)];
      double s = m.prior_scale(c);
      rc::QuantizedCdf cdf = entropy::logistic_qcdf(loc, s);
      float* row = zq.row(c);
      for (int i = 0; i < zs; ++i) row[i] = static_cast<float>(cdf.decode_symbol(dec));
    }
  }
  Fmap params = m.hyperdec_forward(zq);
  Fmap yq(CodecModel::kM, 1, yh, yw);
  {
    rc::RangeDecoder dec(bs.main.data(), bs.main.size());
    const int ys = yh * yw;
    for (int c = 0; c < CodecModel::kM; ++c) {
      float* row = yq.row(c);
      const float* murow = params.row(c);
      const float* srow = params.row(c + CodecModel::kM);
      for (int i = 0; i < ys; ++i) {
        float dg;
        double sigma = codec_detail::scale_from_raw(srow[i], dg);
        rc::QuantizedCdf cdf = entropy::gaussian_qcdf(murow[i], sigma);
        row[i] = static_cast<float>(cdf.decode_symbol(dec));
      }
    }
  }
  Fmap xhat = m.dec_forward(yq);
  return codec_detail::to_image(xhat, bs.orig_h, bs.orig_w);
}

// Inference-mode RD numbers (hard rounding, no entropy coding).
inline RdReport rd_report(CodecModel& m, const Image& img) {
  double est = 0;
  Bitstream bs = encode(m, img, &est);
  Image rec = decode(m, bs);
  double se = 0;
  for (size_t i = 0; i < img.px.size(); ++i) {
    double d = (img.px[i] - rec.px[i]) / 255.0;
    se += d * d;
  }
  RdReport r;
  r.rate = est;
  r.distortion = se / static_cast<double>(img.px.size());
  r.loss = r.rate + m.lambda * r.distortion;
  return r;
}

inline double psnr(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w) throw DataError("psnr: dim mismatch");
  double se = 0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    double d = (a.px[i] - b.px[i]) / 255.0;
    se += d * d;
  }
  double mse = se / static_cast<double>(a.px.size());
  if (mse <= 0) return 99.0;
  return -10.0 * std::log10(mse);
}

// ---------------------------------------------------------------------------
// Checkpoint: "CZCM" | version u8 | trained u8 | frozen u8 | lambda f32 |
// block count u32 | blocks { name_len u16 | name | numel u64 | f32 data }.

inline void save_codec(const CodecModel& m, const std::string& path) {
  auto params = const_cast<CodecModel&>(m).all_params();
  ByteWriter w;
  w.bytes("CZCM", 4);
  w.u8(1);
  w.u8(m.trained ? 1 : 0);
  w.u8(m.frozen ? 1 : 0);
  uint32_t lam_bits;
  std::memcpy(&lam_bits, &m.lambda, 4);
  w.u32(lam_bits);
  w.u32(static_cast<uint32_t>(params.size()));
  for (nn::Param* p : params) {
    w.u16(static_cast<uint16_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.u64(p->w.size());
    w.bytes(p->w.data(), p->w.size() * sizeof(float));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw IoError("short write on checkpoint: " + path);
}

inline CodecModel load_codec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(buf.data(), buf.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "CZCM", 4) != 0) throw CorruptStreamError("bad checkpoint magic");
  if (r.u8() != 1) throw CorruptStreamError("unsupported checkpoint version");
  uint8_t trained = r.u8();
  uint8_t frozen = r.u8();
  uint32_t lam_bits = r.u32();
  float lambda;
  std::memcpy(&lambda, &lam_bits, 4);
  CodecModel m;
  m.init(0, lambda);
  auto params = m.all_params();
  uint32_t count = r.u32();
  if (count != params.size()) throw CorruptStreamError("checkpoint block count mismatch");
  for (nn::Param* p : params) {
    uint16_t nlen = r.u16();
    std::string name(nlen, '\0');
    r.bytes(name.data(), nlen);
    if (name != p->name) throw CorruptStreamError("checkpoint block order mismatch: " + name);
    uint64_t numel = r.u64();
    if (numel != p->w.size()) throw CorruptStreamError("checkpoint block size mismatch: " + name);
    r.bytes(p->w.data(), p->w.size() * sizeof(float));
  }
  m.trained = trained != 0;
  m.frozen = frozen != 0;
  return m;
}

}  // namespace czc
