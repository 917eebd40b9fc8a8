#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dfa/errors.hpp"
#include "dfa/tensor.hpp"

// Forward/backward kernels shared by the autodiff graph and the plain
// evaluation paths. Keeping one implementation of each kernel guarantees the
// two paths produce bit-identical forward values.
namespace dfa::nn {

// ---------------------------------------------------------------------------
// Convolution, stride 1, symmetric zero padding.
// ---------------------------------------------------------------------------

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                             std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4) throw DimensionError("conv2d: expects rank-4 x and w");
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Cin) throw DimensionError("conv2d: channel mismatch");
  if (b.size() != Cout) throw DimensionError("conv2d: bias size mismatch");
  if (H + 2 * pad < kh || W + 2 * pad < kw) throw DimensionError("conv2d: kernel larger than input");
  const std::size_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;

  Tensor y({B, Cout, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t u = 0; u < kh; ++u) {
              const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(pad);
              if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pad);
                if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += x.at4(n, ci, static_cast<std::size_t>(xi), static_cast<std::size_t>(xj)) *
                       w.at4(co, ci, u, v);
              }
            }
          y.at4(n, co, i, j) = acc;
        }
  return y;
}

// Null output pointers skip the corresponding gradient.
inline void conv2d_backward(const Tensor& x, const Tensor& w, std::size_t pad,
                            const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = gy.dim(2), Wo = gy.dim(3);

  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const double g = gy.at4(n, co, i, j);
          if (g == 0.0) continue;
          if (gb) (*gb)[co] += g;
          if (!gx && !gw) continue;
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t u = 0; u < kh; ++u) {
              const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(i + u) - static_cast<std::ptrdiff_t>(pad);
              if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + v) - static_cast<std::ptrdiff_t>(pad);
                if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t si = static_cast<std::size_t>(xi), sj = static_cast<std::size_t>(xj);
                if (gx) gx->at4(n, ci, si, sj) += g * w.at4(co, ci, u, v);
                if (gw) gw->at4(co, ci, u, v) += g * x.at4(n, ci, si, sj);
              }
            }
        }
}

// ---------------------------------------------------------------------------
// 2x2 average pooling.
// ---------------------------------------------------------------------------

inline Tensor avgpool2_forward(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("avgpool2: expects rank-4 input");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw DimensionError("avgpool2: spatial dims must be even");
  Tensor y({B, C, H / 2, W / 2});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H / 2; ++i)
        for (std::size_t j = 0; j < W / 2; ++j)
          y.at4(n, c, i, j) = 0.25 * (x.at4(n, c, 2 * i, 2 * j) + x.at4(n, c, 2 * i, 2 * j + 1) +
                                      x.at4(n, c, 2 * i + 1, 2 * j) + x.at4(n, c, 2 * i + 1, 2 * j + 1));
  return y;
}

inline void avgpool2_backward(const Tensor& gy, Tensor& gx) {
  const std::size_t B = gy.dim(0), C = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const double g = 0.25 * gy.at4(n, c, i, j);
          gx.at4(n, c, 2 * i, 2 * j) += g;
          gx.at4(n, c, 2 * i, 2 * j + 1) += g;
          gx.at4(n, c, 2 * i + 1, 2 * j) += g;
          gx.at4(n, c, 2 * i + 1, 2 * j + 1) += g;
        }
}

// ---------------------------------------------------------------------------
// Dense layer: y = x W^T + b with w stored [out, in].
// ---------------------------------------------------------------------------

inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2) throw DimensionError("dense: expects rank-2 x and w");
  const std::size_t B = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
  if (w.dim(1) != Din) throw DimensionError("dense: input dim mismatch");
  if (b.size() != Dout) throw DimensionError("dense: bias size mismatch");
  Tensor y({B, Dout});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Dout; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < Din; ++i) acc += x.at2(n, i) * w.at2(o, i);
      y.at2(n, o) = acc;
    }
  return y;
}

inline void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                           Tensor* gx, Tensor* gw, Tensor* gb) {
  const std::size_t B = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Dout; ++o) {
      const double g = gy.at2(n, o);
      if (g == 0.0) continue;
      if (gb) (*gb)[o] += g;
      for (std::size_t i = 0; i < Din; ++i) {
        if (gx) gx->at2(n, i) += g * w.at2(o, i);
        if (gw) gw->at2(o, i) += g * x.at2(n, i);
      }
    }
}

// ---------------------------------------------------------------------------
// Pointwise activations.
// ---------------------------------------------------------------------------

inline Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

inline Tensor tanh_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

// ---------------------------------------------------------------------------
// Row normalization onto a fixed-radius sphere: y_b = radius * x_b / (|x_b| + eps).
// ---------------------------------------------------------------------------

inline Tensor normalize_rows_forward(const Tensor& x, double radius, double eps) {
  if (x.rank() != 2) throw DimensionError("normalize_rows: expects rank-2 input");
  const std::size_t B = x.dim(0), D = x.dim(1);
  Tensor y({B, D});
  for (std::size_t b = 0; b < B; ++b) {
    double n = 0.0;
    for (std::size_t d = 0; d < D; ++d) n += x.at2(b, d) * x.at2(b, d);
    n = std::sqrt(n);
    const double c = radius / (n + eps);
    for (std::size_t d = 0; d < D; ++d) y.at2(b, d) = c * x.at2(b, d);
  }
  return y;
}

inline void normalize_rows_backward(const Tensor& x, double radius, double eps, const Tensor& gy,
                                    Tensor& gx) {
  const std::size_t B = x.dim(0), D = x.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    double n = 0.0, xg = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      n += x.at2(b, d) * x.at2(b, d);
      xg += x.at2(b, d) * gy.at2(b, d);
    }
    n = std::sqrt(n);
    const double q = n + eps;
    const double c2 = (n > 0.0) ? radius * xg / (n * q * q) : 0.0;
    for (std::size_t d = 0; d < D; ++d)
      gx.at2(b, d) += radius * gy.at2(b, d) / q - c2 * x.at2(b, d);
  }
}

// ---------------------------------------------------------------------------
// Cosine scores against a fixed weight matrix: s[b,k] = w_k.v_b / (|w_k||v_b| + eps).
// eps stabilizes zero-norm embeddings in the differentiable path.
// ---------------------------------------------------------------------------

inline Tensor cosine_forward(const Tensor& v, const Tensor& w, double eps) {
  if (v.rank() != 2 || w.rank() != 2) throw DimensionError("cosine: expects rank-2 v and w");
  const std::size_t B = v.dim(0), D = v.dim(1), n = w.dim(0);
  if (w.dim(1) != D) throw DimensionError("cosine: embedding dim " + std::to_string(D) +
                                          " does not match head dim " + std::to_string(w.dim(1)));
  Tensor s({B, n});
  for (std::size_t bi = 0; bi < B; ++bi) {
    double nv = 0.0;
    for (std::size_t d = 0; d < D; ++d) nv += v.at2(bi, d) * v.at2(bi, d);
    nv = std::sqrt(nv);
    for (std::size_t k = 0; k < n; ++k) {
      double d_ = 0.0, nw = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        d_ += w.at2(k, d) * v.at2(bi, d);
        nw += w.at2(k, d) * w.at2(k, d);
      }
      nw = std::sqrt(nw);
      s.at2(bi, k) = d_ / (nw * nv + eps);
    }
  }
  return s;
}

inline void cosine_backward_v(const Tensor& v, const Tensor& w, double eps,
                              const Tensor& gs, Tensor& gv) {
  const std::size_t B = v.dim(0), D = v.dim(1), n = w.dim(0);
  for (std::size_t bi = 0; bi < B; ++bi) {
    double nv = 0.0;
    for (std::size_t d = 0; d < D; ++d) nv += v.at2(bi, d) * v.at2(bi, d);
    nv = std::sqrt(nv);
    for (std::size_t k = 0; k < n; ++k) {
      const double g = gs.at2(bi, k);
      if (g == 0.0) continue;
      double d_ = 0.0, nw = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        d_ += w.at2(k, d) * v.at2(bi, d);
        nw += w.at2(k, d) * w.at2(k, d);
      }
      nw = std::sqrt(nw);
      const double q = nw * nv + eps;
      const double c2 = (nv > 0.0) ? d_ * nw / (nv * q * q) : 0.0;
      for (std::size_t d = 0; d < D; ++d)
        gv.at2(bi, d) += g * (w.at2(k, d) / q - c2 * v.at2(bi, d));
    }
  }
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy over score rows.
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const std::vector<double>& s) {
  double m = s.empty() ? 0.0 : *std::max_element(s.begin(), s.end());
  std::vector<double> p(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    p[i] = std::exp(s[i] - m);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

inline Tensor softmax_rows(const Tensor& s) {
  const std::size_t B = s.dim(0), n = s.dim(1);
  Tensor p({B, n});
  for (std::size_t bi = 0; bi < B; ++bi) {
    double m = s.at2(bi, 0);
    for (std::size_t k = 1; k < n; ++k) m = std::max(m, s.at2(bi, k));
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      p.at2(bi, k) = std::exp(s.at2(bi, k) - m);
      z += p.at2(bi, k);
    }
    for (std::size_t k = 0; k < n; ++k) p.at2(bi, k) /= z;
  }
  return p;
}

// Mean over rows of CE(t_b, softmax(s_b)), computed in log-sum-exp form.
// Valid when every target row sums to 1.
inline double ce_with_logits_mean(const Tensor& s, const Tensor& t) {
  check_same_shape(s, t, "cross-entropy");
  const std::size_t B = s.dim(0), n = s.dim(1);
  double total = 0.0;
  for (std::size_t bi = 0; bi < B; ++bi) {
    double m = s.at2(bi, 0);
    for (std::size_t k = 1; k < n; ++k) m = std::max(m, s.at2(bi, k));
    double z = 0.0, tdot = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      z += std::exp(s.at2(bi, k) - m);
      tdot += t.at2(bi, k) * s.at2(bi, k);
    }
    total += m + std::log(z) - tdot;
  }
  return total / static_cast<double>(B);
}

inline void ce_with_logits_backward(const Tensor& s, const Tensor& t, double gloss,
                                    Tensor& gs) {
  const std::size_t B = s.dim(0), n = s.dim(1);
  const Tensor p = softmax_rows(s);
  const double scale = gloss / static_cast<double>(B);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t k = 0; k < n; ++k)
      gs.at2(bi, k) += scale * (p.at2(bi, k) - t.at2(bi, k));
}

// Plain cross-entropy between two probability vectors, -sum t_k log p_k,
// with the 0*log 0 = 0 convention. Used by oracle-style evaluations.
inline double cross_entropy(const std::vector<double>& target, const std::vector<double>& pred) {
  if (target.size() != pred.size()) throw DimensionError("cross_entropy: length mismatch");
  double ce = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0.0) continue;
    ce -= target[i] * std::log(pred[i]);
  }
  return ce;
}

}  // namespace dfa::nn
