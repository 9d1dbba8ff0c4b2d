#include <algorithm>
#include <cmath>
#include <limits>

#include "pcam/ops.hpp"

namespace pcam {

namespace {

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

struct ConvDims {
  std::size_t cin, h, w, s;
  std::size_t cout, k;
  std::size_t oh, ow, os;
  std::size_t stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, std::size_t stride,
                   std::size_t pad) {
  if (x.rank() != 4)
    throw DimensionError("conv3d: input must be rank 4, got " +
                         shape_str(x.shape()));
  if (weight.rank() != 5)
    throw DimensionError("conv3d: weight must be rank 5, got " +
                         shape_str(weight.shape()));
  ConvDims d;
  d.cin = x.extent(0);
  d.h = x.extent(1);
  d.w = x.extent(2);
  d.s = x.extent(3);
  d.cout = weight.extent(0);
  d.k = weight.extent(2);
  if (weight.extent(1) != d.cin)
    throw DimensionError("conv3d: weight expects " +
                         std::to_string(weight.extent(1)) +
                         " input channels, input has " + std::to_string(d.cin));
  if (weight.extent(3) != d.k || weight.extent(4) != d.k)
    throw DimensionError("conv3d: kernel must be cubic, got " +
                         shape_str(weight.shape()));
  if (d.k % 2 == 0) throw DimensionError("conv3d: kernel extent must be odd");
  if (stride == 0) throw DimensionError("conv3d: stride must be positive");
  d.stride = stride;
  d.pad = pad;
  const auto out_extent = [&](std::size_t n) -> std::size_t {
    const std::size_t padded = n + 2 * pad;
    if (padded < d.k)
      throw DimensionError("conv3d: kernel larger than padded input");
    return (padded - d.k) / stride + 1;
  };
  d.oh = out_extent(d.h);
  d.ow = out_extent(d.w);
  d.os = out_extent(d.s);
  return d;
}

// Stride-1 forward: shift-and-accumulate, contiguous runs along s.
void conv_forward_s1(const double* xv, const double* wv, const double* bias,
                     double* out, const ConvDims& d) {
  const long pad = static_cast<long>(d.pad);
  for (std::size_t co = 0; co < d.cout; ++co) {
    double* och = out + co * d.oh * d.ow * d.os;
    const double b = bias ? bias[co] : 0.0;
    std::fill(och, och + d.oh * d.ow * d.os, b);
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      const double* xch = xv + ci * d.h * d.w * d.s;
      const double* wch = wv + (co * d.cin + ci) * d.k * d.k * d.k;
      for (std::size_t kh = 0; kh < d.k; ++kh)
        for (std::size_t kw = 0; kw < d.k; ++kw)
          for (std::size_t ks = 0; ks < d.k; ++ks) {
            const double wt = wch[(kh * d.k + kw) * d.k + ks];
            if (wt == 0.0) continue;
            const long dh = static_cast<long>(kh) - pad;
            const long dw = static_cast<long>(kw) - pad;
            const long ds = static_cast<long>(ks) - pad;
            const std::size_t oh0 = dh < 0 ? static_cast<std::size_t>(-dh) : 0;
            const std::size_t oh1 = std::min<long>(d.oh, d.h - dh);
            const std::size_t ow0 = dw < 0 ? static_cast<std::size_t>(-dw) : 0;
            const std::size_t ow1 = std::min<long>(d.ow, d.w - dw);
            const std::size_t os0 = ds < 0 ? static_cast<std::size_t>(-ds) : 0;
            const std::size_t os1 = std::min<long>(d.os, d.s - ds);
            if (oh1 <= oh0 || ow1 <= ow0 || os1 <= os0) continue;
            const std::size_t run = os1 - os0;
            for (std::size_t oh = oh0; oh < oh1; ++oh)
              for (std::size_t ow = ow0; ow < ow1; ++ow) {
                const double* src =
                    xch + ((oh + dh) * d.w + (ow + dw)) * d.s + os0 + ds;
                double* dst = och + (oh * d.ow + ow) * d.os + os0;
                for (std::size_t i = 0; i < run; ++i) dst[i] += wt * src[i];
              }
          }
    }
  }
}

void conv_forward_generic(const double* xv, const double* wv,
                          const double* bias, double* out, const ConvDims& d) {
  const long pad = static_cast<long>(d.pad);
  for (std::size_t co = 0; co < d.cout; ++co)
    for (std::size_t oh = 0; oh < d.oh; ++oh)
      for (std::size_t ow = 0; ow < d.ow; ++ow)
        for (std::size_t os = 0; os < d.os; ++os) {
          double acc = bias ? bias[co] : 0.0;
          for (std::size_t ci = 0; ci < d.cin; ++ci)
            for (std::size_t kh = 0; kh < d.k; ++kh) {
              const long ih = static_cast<long>(oh * d.stride + kh) - pad;
              if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
              for (std::size_t kw = 0; kw < d.k; ++kw) {
                const long iw = static_cast<long>(ow * d.stride + kw) - pad;
                if (iw < 0 || iw >= static_cast<long>(d.w)) continue;
                for (std::size_t ks = 0; ks < d.k; ++ks) {
                  const long is = static_cast<long>(os * d.stride + ks) - pad;
                  if (is < 0 || is >= static_cast<long>(d.s)) continue;
                  acc += wv[(((co * d.cin + ci) * d.k + kh) * d.k + kw) * d.k +
                            ks] *
                         xv[((ci * d.h + ih) * d.w + iw) * d.s + is];
                }
              }
            }
          out[((co * d.oh + oh) * d.ow + ow) * d.os + os] = acc;
        }
}

std::vector<double> conv_backward_x(const double* gv, const double* wv,
                                    const ConvDims& d) {
  std::vector<double> dx(d.cin * d.h * d.w * d.s, 0.0);
  const long pad = static_cast<long>(d.pad);
  if (d.stride == 1) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      double* dxch = dx.data() + ci * d.h * d.w * d.s;
      for (std::size_t co = 0; co < d.cout; ++co) {
        const double* gch = gv + co * d.oh * d.ow * d.os;
        const double* wch = wv + (co * d.cin + ci) * d.k * d.k * d.k;
        for (std::size_t kh = 0; kh < d.k; ++kh)
          for (std::size_t kw = 0; kw < d.k; ++kw)
            for (std::size_t ks = 0; ks < d.k; ++ks) {
              const double wt = wch[(kh * d.k + kw) * d.k + ks];
              if (wt == 0.0) continue;
              const long dh = static_cast<long>(kh) - pad;
              const long dw = static_cast<long>(kw) - pad;
              const long ds = static_cast<long>(ks) - pad;
              // ih = oh + dh, so dx[ih] picks up g[ih - dh].
              const std::size_t ih0 = dh > 0 ? static_cast<std::size_t>(dh) : 0;
              const std::size_t ih1 = std::min<long>(d.h, d.oh + dh);
              const std::size_t iw0 = dw > 0 ? static_cast<std::size_t>(dw) : 0;
              const std::size_t iw1 = std::min<long>(d.w, d.ow + dw);
              const std::size_t is0 = ds > 0 ? static_cast<std::size_t>(ds) : 0;
              const std::size_t is1 = std::min<long>(d.s, d.os + ds);
              if (ih1 <= ih0 || iw1 <= iw0 || is1 <= is0) continue;
              const std::size_t run = is1 - is0;
              for (std::size_t ih = ih0; ih < ih1; ++ih)
                for (std::size_t iw = iw0; iw < iw1; ++iw) {
                  const double* src =
                      gch + ((ih - dh) * d.ow + (iw - dw)) * d.os + is0 - ds;
                  double* dst = dxch + (ih * d.w + iw) * d.s + is0;
                  for (std::size_t i = 0; i < run; ++i) dst[i] += wt * src[i];
                }
            }
      }
    }
    return dx;
  }
  for (std::size_t co = 0; co < d.cout; ++co)
    for (std::size_t oh = 0; oh < d.oh; ++oh)
      for (std::size_t ow = 0; ow < d.ow; ++ow)
        for (std::size_t os = 0; os < d.os; ++os) {
          const double g = gv[((co * d.oh + oh) * d.ow + ow) * d.os + os];
          if (g == 0.0) continue;
          for (std::size_t ci = 0; ci < d.cin; ++ci)
            for (std::size_t kh = 0; kh < d.k; ++kh) {
              const long ih = static_cast<long>(oh * d.stride + kh) - pad;
              if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
              for (std::size_t kw = 0; kw < d.k; ++kw) {
                const long iw = static_cast<long>(ow * d.stride + kw) - pad;
                if (iw < 0 || iw >= static_cast<long>(d.w)) continue;
                for (std::size_t ks = 0; ks < d.k; ++ks) {
                  const long is = static_cast<long>(os * d.stride + ks) - pad;
                  if (is < 0 || is >= static_cast<long>(d.s)) continue;
                  dx[((ci * d.h + ih) * d.w + iw) * d.s + is] +=
                      g * wv[(((co * d.cin + ci) * d.k + kh) * d.k + kw) * d.k +
                             ks];
                }
              }
            }
        }
  return dx;
}

std::vector<double> conv_backward_w(const double* gv, const double* xv,
                                    const ConvDims& d) {
  std::vector<double> dw(d.cout * d.cin * d.k * d.k * d.k, 0.0);
  const long pad = static_cast<long>(d.pad);
  if (d.stride == 1) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      const double* gch = gv + co * d.oh * d.ow * d.os;
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const double* xch = xv + ci * d.h * d.w * d.s;
        double* dwch = dw.data() + (co * d.cin + ci) * d.k * d.k * d.k;
        for (std::size_t kh = 0; kh < d.k; ++kh)
          for (std::size_t kw = 0; kw < d.k; ++kw)
            for (std::size_t ks = 0; ks < d.k; ++ks) {
              const long dh = static_cast<long>(kh) - pad;
              const long dwo = static_cast<long>(kw) - pad;
              const long ds = static_cast<long>(ks) - pad;
              const std::size_t oh0 = dh < 0 ? static_cast<std::size_t>(-dh) : 0;
              const std::size_t oh1 = std::min<long>(d.oh, d.h - dh);
              const std::size_t ow0 = dwo < 0 ? static_cast<std::size_t>(-dwo) : 0;
              const std::size_t ow1 = std::min<long>(d.ow, d.w - dwo);
              const std::size_t os0 = ds < 0 ? static_cast<std::size_t>(-ds) : 0;
              const std::size_t os1 = std::min<long>(d.os, d.s - ds);
              if (oh1 <= oh0 || ow1 <= ow0 || os1 <= os0) continue;
              const std::size_t run = os1 - os0;
              double acc = 0.0;
              for (std::size_t oh = oh0; oh < oh1; ++oh)
                for (std::size_t ow = ow0; ow < ow1; ++ow) {
                  const double* grow = gch + (oh * d.ow + ow) * d.os + os0;
                  const double* xrow =
                      xch + ((oh + dh) * d.w + (ow + dwo)) * d.s + os0 + ds;
                  for (std::size_t i = 0; i < run; ++i)
                    acc += grow[i] * xrow[i];
                }
              dwch[(kh * d.k + kw) * d.k + ks] = acc;
            }
      }
    }
    return dw;
  }
  for (std::size_t co = 0; co < d.cout; ++co)
    for (std::size_t oh = 0; oh < d.oh; ++oh)
      for (std::size_t ow = 0; ow < d.ow; ++ow)
        for (std::size_t os = 0; os < d.os; ++os) {
          const double g = gv[((co * d.oh + oh) * d.ow + ow) * d.os + os];
          if (g == 0.0) continue;
          for (std::size_t ci = 0; ci < d.cin; ++ci)
            for (std::size_t kh = 0; kh < d.k; ++kh) {
              const long ih = static_cast<long>(oh * d.stride + kh) - pad;
              if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
              for (std::size_t kw = 0; kw < d.k; ++kw) {
                const long iw = static_cast<long>(ow * d.stride + kw) - pad;
                if (iw < 0 || iw >= static_cast<long>(d.w)) continue;
                for (std::size_t ks = 0; ks < d.k; ++ks) {
                  const long is = static_cast<long>(os * d.stride + ks) - pad;
                  if (is < 0 || is >= static_cast<long>(d.s)) continue;
                  dw[(((co * d.cin + ci) * d.k + kh) * d.k + kw) * d.k + ks] +=
                      g * xv[((ci * d.h + ih) * d.w + iw) * d.s + is];
                }
              }
            }
        }
  return dw;
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  const ConvDims d = conv_dims(x, weight, stride, padding);
  const double* bias_ptr = nullptr;
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.extent(0) != d.cout)
      throw DimensionError("conv3d: bias must have one value per output "
                           "channel, got " +
                           shape_str(bias.shape()));
    bias_ptr = bias.values().data();
  }
  std::vector<double> out(d.cout * d.oh * d.ow * d.os);
  if (stride == 1)
    conv_forward_s1(x.values().data(), weight.values().data(), bias_ptr,
                    out.data(), d);
  else
    conv_forward_generic(x.values().data(), weight.values().data(), bias_ptr,
                         out.data(), d);
  const bool needs = x.requires_grad() || weight.requires_grad() ||
                     (bias.defined() && bias.requires_grad());
  Tensor y(Shape{d.cout, d.oh, d.ow, d.os}, std::move(out), needs);
  if (needs && GradTape::active()) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    GradTape::active()->record(
        {"conv3d", y.id(), inputs,
         [x, weight, has_bias = bias.defined(), d](const Tensor& g) {
           const double* gptr = g.values().data();
           std::vector<Tensor> grads;
           if (x.requires_grad()) {
             grads.emplace_back(
                 x.shape(), conv_backward_x(gptr, weight.values().data(), d));
           } else {
             grads.emplace_back();
           }
           if (weight.requires_grad()) {
             grads.emplace_back(weight.shape(),
                                conv_backward_w(gptr, x.values().data(), d));
           } else {
             grads.emplace_back();
           }
           if (has_bias) {
             std::vector<double> db(d.cout, 0.0);
             const std::size_t plane = d.oh * d.ow * d.os;
             for (std::size_t co = 0; co < d.cout; ++co) {
               double acc = 0.0;
               const double* gch = gptr + co * plane;
               for (std::size_t i = 0; i < plane; ++i) acc += gch[i];
               db[co] = acc;
             }
             grads.emplace_back(Shape{d.cout}, std::move(db));
           }
           return grads;
         }});
  }
  return y;
}

Tensor conv3d(const Tensor& x, const Tensor& weight, std::size_t stride,
              std::size_t padding) {
  return conv3d(x, weight, Tensor{}, stride, padding);
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps) {
  if (x.rank() != 4)
    throw DimensionError("instance_norm: input must be rank 4, got " +
                         shape_str(x.shape()));
  const std::size_t c = x.extent(0);
  const std::size_t m = x.extent(1) * x.extent(2) * x.extent(3);
  if (m < 2)
    throw DimensionError(
        "instance_norm: needs at least 2 voxels per channel to normalize");
  if (gamma.rank() != 1 || gamma.extent(0) != c || beta.rank() != 1 ||
      beta.extent(0) != c)
    throw DimensionError("instance_norm: affine parameters must have one "
                         "value per channel");

  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> xhat(x.size());
  std::vector<double> istd(c);
  std::vector<double> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * m;
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += src[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double dlt = src[i] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    istd[ch] = is;
    double* xh = xhat.data() + ch * m;
    double* o = out.data() + ch * m;
    for (std::size_t i = 0; i < m; ++i) {
      xh[i] = (src[i] - mean) * is;
      o[i] = gv[ch] * xh[i] + bv[ch];
    }
  }
  const bool needs =
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor y(x.shape(), std::move(out), needs);
  if (needs && GradTape::active()) {
    GradTape::active()->record(
        {"instance_norm", y.id(), {x, gamma, beta},
         [x, gamma, beta, xhat = std::move(xhat), istd = std::move(istd), c,
          m](const Tensor& g) {
           const auto& gr = g.values();
           const auto& gam = gamma.values();
           Tensor dx, dgamma, dbeta;
           if (gamma.requires_grad() || beta.requires_grad() ||
               x.requires_grad()) {
             std::vector<double> dg(c, 0.0), db(c, 0.0);
             for (std::size_t ch = 0; ch < c; ++ch) {
               const double* grow = gr.data() + ch * m;
               const double* xh = xhat.data() + ch * m;
               double sg = 0.0, sgx = 0.0;
               for (std::size_t i = 0; i < m; ++i) {
                 sg += grow[i];
                 sgx += grow[i] * xh[i];
               }
               dg[ch] = sgx;
               db[ch] = sg;
             }
             if (x.requires_grad()) {
               std::vector<double> d(x.size());
               for (std::size_t ch = 0; ch < c; ++ch) {
                 const double* grow = gr.data() + ch * m;
                 const double* xh = xhat.data() + ch * m;
                 // dxhat = g * gamma; subtract its per-channel mean and the
                 // xhat-projected mean, then rescale.
                 const double mean_dxhat =
                     gam[ch] * db[ch] / static_cast<double>(m);
                 const double mean_dxhat_xhat =
                     gam[ch] * dg[ch] / static_cast<double>(m);
                 double* drow = d.data() + ch * m;
                 for (std::size_t i = 0; i < m; ++i)
                   drow[i] = istd[ch] * (gam[ch] * grow[i] - mean_dxhat -
                                         xh[i] * mean_dxhat_xhat);
               }
               dx = Tensor(x.shape(), std::move(d));
             }
             if (gamma.requires_grad()) dgamma = Tensor(Shape{c}, std::move(dg));
             if (beta.requires_grad()) dbeta = Tensor(Shape{c}, std::move(db));
           }
           return std::vector<Tensor>{dx, dgamma, dbeta};
         }});
  }
  return y;
}

Tensor maxpool3d(const Tensor& x, const std::size_t window[3],
                 const std::size_t stride[3]) {
  if (x.rank() != 4)
    throw DimensionError("maxpool3d: input must be rank 4, got " +
                         shape_str(x.shape()));
  const std::size_t c = x.extent(0);
  const std::size_t in_ext[3] = {x.extent(1), x.extent(2), x.extent(3)};
  std::size_t out_ext[3];
  for (int a = 0; a < 3; ++a) {
    if (window[a] == 0 || stride[a] == 0)
      throw DimensionError("maxpool3d: window and stride must be positive");
    if (in_ext[a] < window[a] || (in_ext[a] - window[a]) % stride[a] != 0)
      throw DimensionError("maxpool3d: window/stride do not tile extent " +
                           std::to_string(in_ext[a]));
    out_ext[a] = (in_ext[a] - window[a]) / stride[a] + 1;
  }
  const std::size_t out_plane = out_ext[0] * out_ext[1] * out_ext[2];
  const std::size_t in_plane = in_ext[0] * in_ext[1] * in_ext[2];
  std::vector<double> out(c * out_plane);
  std::vector<std::size_t> argmax(c * out_plane);
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * in_plane;
    for (std::size_t oh = 0; oh < out_ext[0]; ++oh)
      for (std::size_t ow = 0; ow < out_ext[1]; ++ow)
        for (std::size_t os = 0; os < out_ext[2]; ++os) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t kh = 0; kh < window[0]; ++kh)
            for (std::size_t kw = 0; kw < window[1]; ++kw)
              for (std::size_t ks = 0; ks < window[2]; ++ks) {
                const std::size_t ih = oh * stride[0] + kh;
                const std::size_t iw = ow * stride[1] + kw;
                const std::size_t is = os * stride[2] + ks;
                const std::size_t idx = (ih * in_ext[1] + iw) * in_ext[2] + is;
                if (src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                }
              }
          const std::size_t oidx =
              (oh * out_ext[1] + ow) * out_ext[2] + os;
          out[ch * out_plane + oidx] = best;
          argmax[ch * out_plane + oidx] = ch * in_plane + best_idx;
        }
  }
  Tensor y(Shape{c, out_ext[0], out_ext[1], out_ext[2]}, std::move(out),
           x.requires_grad());
  if (recording({&x})) {
    GradTape::active()->record(
        {"maxpool3d", y.id(), {x},
         [argmax = std::move(argmax), in_shape = x.shape()](const Tensor& g) {
           std::vector<double> d(shape_numel(in_shape), 0.0);
           const auto& gv = g.values();
           for (std::size_t i = 0; i < gv.size(); ++i) d[argmax[i]] += gv[i];
           return std::vector<Tensor>{Tensor(in_shape, std::move(d))};
         }});
  }
  return y;
}

Tensor maxpool3d(const Tensor& x, std::size_t window, std::size_t stride) {
  const std::size_t w[3] = {window, window, window};
  const std::size_t s[3] = {stride, stride, stride};
  return maxpool3d(x, w, s);
}

namespace {

// Voxel-center aligned sample positions for 2x upsampling: output voxel d
// samples input coordinate d/2 - 1/4, clamped at the borders.
struct LinAxis {
  std::vector<std::size_t> lo, hi;
  std::vector<double> t;
};

LinAxis upsample_axis(std::size_t n) {
  LinAxis ax;
  const std::size_t out_n = 2 * n;
  ax.lo.resize(out_n);
  ax.hi.resize(out_n);
  ax.t.resize(out_n);
  for (std::size_t dpos = 0; dpos < out_n; ++dpos) {
    const double f = 0.5 * static_cast<double>(dpos) - 0.25;
    const double fl = std::floor(f);
    const long lo = static_cast<long>(fl);
    ax.t[dpos] = f - fl;
    ax.lo[dpos] = static_cast<std::size_t>(
        std::clamp<long>(lo, 0, static_cast<long>(n) - 1));
    ax.hi[dpos] = static_cast<std::size_t>(
        std::clamp<long>(lo + 1, 0, static_cast<long>(n) - 1));
  }
  return ax;
}

}  // namespace

Tensor trilinear_upsample2(const Tensor& x) {
  if (x.rank() != 4)
    throw DimensionError("trilinear_upsample2: input must be rank 4, got " +
                         shape_str(x.shape()));
  const std::size_t c = x.extent(0);
  const std::size_t h = x.extent(1), w = x.extent(2), s = x.extent(3);
  const LinAxis ah = upsample_axis(h), aw = upsample_axis(w),
                as = upsample_axis(s);
  const std::size_t oh = 2 * h, ow = 2 * w, os = 2 * s;
  std::vector<double> out(c * oh * ow * os);
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * h * w * s;
    double* dst = out.data() + ch * oh * ow * os;
    for (std::size_t ph = 0; ph < oh; ++ph) {
      const std::size_t h0 = ah.lo[ph], h1 = ah.hi[ph];
      const double th = ah.t[ph];
      for (std::size_t pw = 0; pw < ow; ++pw) {
        const std::size_t w0 = aw.lo[pw], w1 = aw.hi[pw];
        const double tw = aw.t[pw];
        const double* r00 = src + (h0 * w + w0) * s;
        const double* r01 = src + (h0 * w + w1) * s;
        const double* r10 = src + (h1 * w + w0) * s;
        const double* r11 = src + (h1 * w + w1) * s;
        double* orow = dst + (ph * ow + pw) * os;
        for (std::size_t ps = 0; ps < os; ++ps) {
          const std::size_t s0 = as.lo[ps], s1 = as.hi[ps];
          const double ts = as.t[ps];
          const double v00 = (1.0 - ts) * r00[s0] + ts * r00[s1];
          const double v01 = (1.0 - ts) * r01[s0] + ts * r01[s1];
          const double v10 = (1.0 - ts) * r10[s0] + ts * r10[s1];
          const double v11 = (1.0 - ts) * r11[s0] + ts * r11[s1];
          const double v0 = (1.0 - tw) * v00 + tw * v01;
          const double v1 = (1.0 - tw) * v10 + tw * v11;
          orow[ps] = (1.0 - th) * v0 + th * v1;
        }
      }
    }
  }
  Tensor y(Shape{c, oh, ow, os}, std::move(out), x.requires_grad());
  if (recording({&x})) {
    GradTape::active()->record(
        {"trilinear_upsample2", y.id(), {x},
         [ah, aw, as, in_shape = x.shape(), c, h, w, s](const Tensor& g) {
           std::vector<double> d(shape_numel(in_shape), 0.0);
           const auto& gv = g.values();
           const std::size_t oh = 2 * h, ow = 2 * w, os = 2 * s;
           for (std::size_t ch = 0; ch < c; ++ch) {
             double* dch = d.data() + ch * h * w * s;
             const double* gch = gv.data() + ch * oh * ow * os;
             for (std::size_t ph = 0; ph < oh; ++ph) {
               const std::size_t h0 = ah.lo[ph], h1 = ah.hi[ph];
               const double th = ah.t[ph];
               for (std::size_t pw = 0; pw < ow; ++pw) {
                 const std::size_t w0 = aw.lo[pw], w1 = aw.hi[pw];
                 const double tw = aw.t[pw];
                 const double* grow = gch + (ph * ow + pw) * os;
                 for (std::size_t ps = 0; ps < os; ++ps) {
                   const std::size_t s0 = as.lo[ps], s1 = as.hi[ps];
                   const double ts = as.t[ps];
                   const double gval = grow[ps];
                   dch[(h0 * w + w0) * s + s0] +=
                       gval * (1.0 - th) * (1.0 - tw) * (1.0 - ts);
                   dch[(h0 * w + w0) * s + s1] +=
                       gval * (1.0 - th) * (1.0 - tw) * ts;
                   dch[(h0 * w + w1) * s + s0] +=
                       gval * (1.0 - th) * tw * (1.0 - ts);
                   dch[(h0 * w + w1) * s + s1] += gval * (1.0 - th) * tw * ts;
                   dch[(h1 * w + w0) * s + s0] +=
                       gval * th * (1.0 - tw) * (1.0 - ts);
                   dch[(h1 * w + w0) * s + s1] += gval * th * (1.0 - tw) * ts;
                   dch[(h1 * w + w1) * s + s0] += gval * th * tw * (1.0 - ts);
                   dch[(h1 * w + w1) * s + s1] += gval * th * tw * ts;
                 }
               }
             }
           }
           return std::vector<Tensor>{Tensor(in_shape, std::move(d))};
         }});
  }
  return y;
}

}  // namespace pcam
