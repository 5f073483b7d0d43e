#include "wmseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "wmseg/error.hpp"

namespace wmseg::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
void require_rank4(const Tensor<T>& t, const char* what) {
  if (!t.defined() || t.rank() != 4) throw ShapeError(std::string(what) + " must be a rank-4 tensor [N,C,H,W]");
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// col[r, n*P + p] with r = (ci*k + ki)*k + kj; out-of-image taps read 0.
template <class T>
void im2col(const T* x, int64_t N, int64_t C, int64_t H, int64_t W, int k, int pad, int64_t Ho, int64_t Wo, T* col) {
  const int64_t P = Ho * Wo;
  const int64_t cols = N * P;
  const int64_t rows = C * k * k;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t ci = r / (k * k);
    const int ki = static_cast<int>((r / k) % k);
    const int kj = static_cast<int>(r % k);
    const int64_t ow0 = std::max<int64_t>(0, pad - kj);
    const int64_t ow1 = std::min<int64_t>(Wo, W + pad - kj);
    T* dst_row = col + r * cols;
    for (int64_t n = 0; n < N; ++n) {
      const T* plane = x + (n * C + ci) * H * W;
      for (int64_t oh = 0; oh < Ho; ++oh) {
        T* dst = dst_row + n * P + oh * Wo;
        const int64_t ih = oh + ki - pad;
        if (ih < 0 || ih >= H || ow1 <= ow0) {
          std::fill(dst, dst + Wo, T(0));
          continue;
        }
        std::fill(dst, dst + ow0, T(0));
        const T* src = plane + ih * W + (ow0 + kj - pad);
        std::copy(src, src + (ow1 - ow0), dst + ow0);
        std::fill(dst + ow1, dst + Wo, T(0));
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int64_t N, int64_t C, int64_t H, int64_t W, int k, int pad, int64_t Ho, int64_t Wo, T* dx) {
  const int64_t P = Ho * Wo;
  const int64_t cols = N * P;
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < C; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int64_t r = (ci * k + ki) * k + kj;
        const int64_t ow0 = std::max<int64_t>(0, pad - kj);
        const int64_t ow1 = std::min<int64_t>(Wo, W + pad - kj);
        if (ow1 <= ow0) continue;
        const T* src_row = col + r * cols;
        for (int64_t n = 0; n < N; ++n) {
          T* plane = dx + (n * C + ci) * H * W;
          for (int64_t oh = 0; oh < Ho; ++oh) {
            const int64_t ih = oh + ki - pad;
            if (ih < 0 || ih >= H) continue;
            const T* src = src_row + n * P + oh * Wo + ow0;
            T* dst = plane + ih * W + (ow0 + kj - pad);
            for (int64_t i = 0; i < ow1 - ow0; ++i) dst[i] += src[i];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int pad) {
  require_rank4(input, "conv2d input");
  require_rank4(kernel, "conv2d kernel");
  const int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t Cout = kernel.dim(0);
  const int k = static_cast<int>(kernel.dim(2));
  if (kernel.dim(1) != Cin) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                     std::to_string(Cin));
  }
  if (kernel.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (pad < 0) throw ShapeError("conv2d: negative padding");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.numel() != Cout)) throw ShapeError("conv2d: bias length must equal output channels");
  const int64_t Ho = H + 2 * pad - k + 1;
  const int64_t Wo = W + 2 * pad - k + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  const int64_t P = Ho * Wo;
  const int64_t rows = Cin * k * k;
  // Samples are processed in chunks whose column buffer stays cache-sized;
  // the backward pass rebuilds the columns instead of keeping them.
  const int64_t chunk = std::clamp<int64_t>((int64_t{1} << 18) / std::max<int64_t>(1, rows * P), 1, N);
  const int64_t in_plane = Cin * H * W;
  const int64_t out_plane = Cout * P;

  Tensor<T> out(Shape{N, Cout, Ho, Wo});
  {
    std::vector<T> col(static_cast<size_t>(rows * chunk * P));
    std::vector<T> y(chunk > 1 ? static_cast<size_t>(Cout * chunk * P) : 0);
    const T* xv = input.values().data();
    T* ov = out.values().data();
    const T* bv = has_bias ? bias.values().data() : nullptr;
    ConstMapMat<T> Wm(kernel.values().data(), Cout, rows);
    for (int64_t n0 = 0; n0 < N; n0 += chunk) {
      const int64_t nb = std::min(chunk, N - n0);
      im2col(xv + n0 * in_plane, nb, Cin, H, W, k, pad, Ho, Wo, col.data());
      ConstMapMat<T> Cm(col.data(), rows, nb * P);
      T* ydst = nb == 1 ? ov + n0 * out_plane : y.data();
      MapMat<T> Ym(ydst, Cout, nb * P);
      Ym.noalias() = Wm * Cm;
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t n = 0; n < nb; ++n) {
        for (int64_t co = 0; co < Cout; ++co) {
          const T b = bv ? bv[co] : T(0);
          const T* src = ydst + co * nb * P + n * P;
          T* dst = ov + (n0 + n) * out_plane + co * P;
          if (nb == 1) {
            if (b != T(0))
              for (int64_t p = 0; p < P; ++p) dst[p] += b;
          } else {
            for (int64_t p = 0; p < P; ++p) dst[p] = src[p] + b;
          }
        }
      }
    }
  }

  const bool record =
      tape != nullptr && (input.requires_grad() || kernel.requires_grad() || (has_bias && bias.requires_grad()));
  if (record) {
    out.set_requires_grad(true);
    tape->record({input, kernel, bias}, out,
                 [input, kernel, bias, out, N, Cin, H, W, Cout, k, pad, Ho, Wo, P, rows, chunk, in_plane,
                  out_plane]() mutable {
                   const T* g = out.grad().data();
                   const T* xv = input.values().data();
                   std::vector<T> col(static_cast<size_t>(rows * chunk * P));
                   std::vector<T> gm(chunk > 1 ? static_cast<size_t>(Cout * chunk * P) : 0);
                   std::vector<double> db(static_cast<size_t>(Cout), 0.0);
                   ConstMapMat<T> Wm(kernel.values().data(), Cout, rows);
                   for (int64_t n0 = 0; n0 < N; n0 += chunk) {
                     const int64_t nb = std::min(chunk, N - n0);
                     const int64_t cols = nb * P;
                     const T* gsrc = g + n0 * out_plane;
                     if (nb > 1) {
                       for (int64_t n = 0; n < nb; ++n)
                         for (int64_t co = 0; co < Cout; ++co)
                           std::copy_n(gsrc + n * out_plane + co * P, P, gm.data() + co * cols + n * P);
                       gsrc = gm.data();
                     }
                     ConstMapMat<T> G(gsrc, Cout, cols);
                     if (kernel.requires_grad()) {
                       im2col(xv + n0 * in_plane, nb, Cin, H, W, k, pad, Ho, Wo, col.data());
                       MapMat<T> dW(kernel.ensure_grad().data(), Cout, rows);
                       ConstMapMat<T> Cm(col.data(), rows, cols);
                       dW.noalias() += G * Cm.transpose();
                     }
                     if (bias.defined() && bias.requires_grad()) {
                       for (int64_t co = 0; co < Cout; ++co) {
                         double acc = 0.0;
                         const T* row = gsrc + co * cols;
                         for (int64_t j = 0; j < cols; ++j) acc += row[j];
                         db[static_cast<size_t>(co)] += acc;
                       }
                     }
                     if (input.requires_grad()) {
                       MapMat<T> dC(col.data(), rows, cols);
                       dC.noalias() = Wm.transpose() * G;
                       col2im_add(col.data(), nb, Cin, H, W, k, pad, Ho, Wo, input.ensure_grad().data() + n0 * in_plane);
                     }
                   }
                   if (bias.defined() && bias.requires_grad()) {
                     auto dbias = bias.ensure_grad();
                     for (int64_t co = 0; co < Cout; ++co) dbias[co] += static_cast<T>(db[static_cast<size_t>(co)]);
                   }
                 });
  }
  return out;
}

template <class T>
Tensor<T> pool2x(Tape<T>* tape, const Tensor<T>& input) {
  require_rank4(input, "pool2x input");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("pool2x: spatial dims must be even, got " + shape_string(input.shape()));
  const int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  const bool record = should_record(tape, {&input});
  auto argmax = record ? std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel())) : nullptr;
  const T* xv = input.values().data();
  T* ov = out.values().data();
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xv + nc * H * W;
    for (int64_t i = 0; i < Ho; ++i) {
      for (int64_t j = 0; j < Wo; ++j) {
        const int64_t base = (2 * i) * W + 2 * j;
        const int64_t cand[4] = {base, base + 1, base + W, base + W + 1};
        int64_t best = cand[0];
        for (int q = 1; q < 4; ++q) {
          if (plane[cand[q]] > plane[best]) best = cand[q];
        }
        const int64_t o = (nc * Ho + i) * Wo + j;
        ov[o] = plane[best];
        if (argmax) (*argmax)[static_cast<size_t>(o)] = nc * H * W + best;
      }
    }
  }
  if (record) {
    out.set_requires_grad(true);
    tape->record({input}, out, [input, out, argmax]() mutable {
      auto g = out.grad();
      auto dx = input.ensure_grad();
      for (size_t o = 0; o < argmax->size(); ++o) dx[static_cast<size_t>((*argmax)[o])] += g[o];
    });
  }
  return out;
}

template <class T>
Tensor<T> upconv2x(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernel) {
  require_rank4(input, "upconv2x input");
  require_rank4(kernel, "upconv2x kernel");
  const int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (kernel.dim(0) != Cin || kernel.dim(2) != 2 || kernel.dim(3) != 2) {
    throw ShapeError("upconv2x: kernel must be [Cin,Cout,2,2] with Cin=" + std::to_string(Cin) + ", got " +
                     shape_string(kernel.shape()));
  }
  const int64_t Cout = kernel.dim(1);
  const int64_t P = H * W;
  const int64_t cols = N * P;
  auto xp = std::make_shared<std::vector<T>>(static_cast<size_t>(Cin * cols));
  const T* xv = input.values().data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t ci = 0; ci < Cin; ++ci) std::copy_n(xv + (n * Cin + ci) * P, P, xp->data() + ci * cols + n * P);
  }
  std::vector<T> y(static_cast<size_t>(Cout * 4 * cols));
  {
    ConstMapMat<T> K(kernel.values().data(), Cin, Cout * 4);
    ConstMapMat<T> X(xp->data(), Cin, cols);
    MapMat<T> Y(y.data(), Cout * 4, cols);
    Y.noalias() = K.transpose() * X;
  }
  Tensor<T> out(Shape{N, Cout, 2 * H, 2 * W});
  T* ov = out.values().data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t co = 0; co < Cout; ++co) {
      T* dst = ov + (n * Cout + co) * 4 * P;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const T* src = y.data() + (co * 4 + a * 2 + b) * cols + n * P;
          for (int64_t i = 0; i < H; ++i) {
            T* drow = dst + (2 * i + a) * 2 * W + b;
            const T* srow = src + i * W;
            for (int64_t j = 0; j < W; ++j) drow[2 * j] = srow[j];
          }
        }
      }
    }
  }
  if (should_record(tape, {&input, &kernel})) {
    out.set_requires_grad(true);
    tape->record({input, kernel}, out, [input, kernel, out, xp, N, Cin, Cout, H, W, P, cols]() mutable {
      auto g = out.grad();
      std::vector<T> gm(static_cast<size_t>(Cout * 4 * cols));
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Cout; ++co) {
          const T* src = g.data() + (n * Cout + co) * 4 * P;
          for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
              T* dst = gm.data() + (co * 4 + a * 2 + b) * cols + n * P;
              for (int64_t i = 0; i < H; ++i) {
                const T* srow = src + (2 * i + a) * 2 * W + b;
                for (int64_t j = 0; j < W; ++j) dst[i * W + j] = srow[2 * j];
              }
            }
          }
        }
      }
      ConstMapMat<T> G(gm.data(), Cout * 4, cols);
      if (kernel.requires_grad()) {
        MapMat<T> dK(kernel.ensure_grad().data(), Cin, Cout * 4);
        ConstMapMat<T> X(xp->data(), Cin, cols);
        dK.noalias() += X * G.transpose();
      }
      if (input.requires_grad()) {
        ConstMapMat<T> K(kernel.values().data(), Cin, Cout * 4);
        MapMat<T> dX(xp->data(), Cin, cols);
        dX.noalias() = K * G;
        auto dx = input.ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const T* src = xp->data() + ci * cols + n * P;
            T* dst = dx.data() + (n * Cin + ci) * P;
            for (int64_t p = 0; p < P; ++p) dst[p] += src[p];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  auto x = input.values();
  auto o = out.values();
  for (size_t i = 0; i < x.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
  if (should_record(tape, {&input})) {
    out.set_requires_grad(true);
    tape->record({input}, out, [input, out]() mutable {
      auto g = out.grad();
      auto y = out.values();
      auto dx = input.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (y[i] > T(0)) dx[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  auto x = input.values();
  auto o = out.values();
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  for (size_t i = 0; i < x.size(); ++i) {
    T s;
    if (x[i] >= T(0)) {
      s = T(1) / (T(1) + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      s = e / (T(1) + e);
    }
    o[i] = std::clamp(s, lo, hi);
  }
  if (should_record(tape, {&input})) {
    out.set_requires_grad(true);
    tape->record({input}, out, [input, out]() mutable {
      auto g = out.grad();
      auto y = out.values();
      auto dx = input.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }
  return out;
}

template <class T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& input, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must lie in [0,1)");
  if (!training || p == 0.0) return input;
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(input.numel()));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::bernoulli_distribution keep(1.0 - p);
  for (auto& m : *mask) m = keep(rng) ? keep_scale : T(0);
  Tensor<T> out(input.shape());
  auto x = input.values();
  auto o = out.values();
  for (size_t i = 0; i < x.size(); ++i) o[i] = x[i] * (*mask)[i];
  if (should_record(tape, {&input})) {
    out.set_requires_grad(true);
    tape->record({input}, out, [input, out, mask]() mutable {
      auto g = out.grad();
      auto dx = input.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a, "concat_channels a");
  require_rank4(b, "concat_channels b");
  const int64_t N = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int64_t Cb = b.dim(1);
  if (b.dim(0) != N || b.dim(2) != H || b.dim(3) != W) {
    throw ShapeError("concat_channels: mismatched " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const int64_t P = H * W;
  Tensor<T> out(Shape{N, Ca + Cb, H, W});
  auto o = out.values();
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(a.values().data() + n * Ca * P, Ca * P, o.data() + n * (Ca + Cb) * P);
    std::copy_n(b.values().data() + n * Cb * P, Cb * P, o.data() + (n * (Ca + Cb) + Ca) * P);
  }
  if (should_record(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out, N, Ca, Cb, P]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto da = a.ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          const T* src = g.data() + n * (Ca + Cb) * P;
          T* dst = da.data() + n * Ca * P;
          for (int64_t i = 0; i < Ca * P; ++i) dst[i] += src[i];
        }
      }
      if (b.requires_grad()) {
        auto db = b.ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          const T* src = g.data() + (n * (Ca + Cb) + Ca) * P;
          T* dst = db.data() + n * Cb * P;
          for (int64_t i = 0; i < Cb * P; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> bce_loss(Tape<T>* tape, const Tensor<T>& o, const Tensor<T>& t, double eps) {
  require_same_shape(o, t, "bce_loss");
  if (!(eps > 0.0 && eps < 0.5)) throw ParameterError("bce_loss eps must lie in (0, 0.5)");
  auto ov = o.values();
  auto tv = t.values();
  const auto n = static_cast<double>(ov.size());
  double acc = 0.0;
  for (size_t i = 0; i < ov.size(); ++i) {
    const double oc = std::clamp(static_cast<double>(ov[i]), eps, 1.0 - eps);
    const double ti = tv[i];
    // Binary targets need only one logarithm; the value is unchanged.
    if (ti == 1.0) {
      acc += std::log(oc);
    } else if (ti == 0.0) {
      acc += std::log(1.0 - oc);
    } else {
      acc += ti * std::log(oc) + (1.0 - ti) * std::log(1.0 - oc);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(n > 0 ? -acc / n : 0.0));
  if (should_record(tape, {&o, &t})) {
    out.set_requires_grad(true);
    tape->record({o, t}, out, [o, t, out, eps, n]() mutable {
      const double g = out.grad()[0];
      auto ov = o.values();
      auto tv = t.values();
      if (o.requires_grad()) {
        auto d = o.ensure_grad();
        for (size_t i = 0; i < ov.size(); ++i) {
          const double oc = std::clamp(static_cast<double>(ov[i]), eps, 1.0 - eps);
          const double ti = tv[i];
          d[i] += static_cast<T>(-g * (ti / oc - (1.0 - ti) / (1.0 - oc)) / n);
        }
      }
      if (t.requires_grad()) {
        auto d = t.ensure_grad();
        for (size_t i = 0; i < ov.size(); ++i) {
          const double oc = std::clamp(static_cast<double>(ov[i]), eps, 1.0 - eps);
          d[i] += static_cast<T>(-g * (std::log(oc) - std::log(1.0 - oc)) / n);
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (should_record(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (auto& d : x.ensure_grad()) d += g;
    });
  }
  return out;
}

template <class T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.values();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] + b.values()[i];
  if (should_record(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto d = a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (b.requires_grad()) {
        auto d = b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.values();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] * b.values()[i];
  if (should_record(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto d = a.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b.values()[i];
      }
      if (b.requires_grad()) {
        auto d = b.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a.values()[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto o = out.values();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x.values()[i] * factor;
  if (should_record(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, factor]() mutable {
      auto g = out.grad();
      auto d = x.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
    });
  }
  return out;
}

#define WMSEG_INSTANTIATE_OPS(T)                                                                       \
  template Tensor<T> conv2d<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);     \
  template Tensor<T> pool2x<T>(Tape<T>*, const Tensor<T>&);                                              \
  template Tensor<T> upconv2x<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                                                \
  template Tensor<T> sigmoid<T>(Tape<T>*, const Tensor<T>&);                                             \
  template Tensor<T> dropout<T>(Tape<T>*, const Tensor<T>&, double, bool, Rng&);                         \
  template Tensor<T> concat_channels<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> bce_loss<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, double);                  \
  template Tensor<T> sum<T>(Tape<T>*, const Tensor<T>&);                                                 \
  template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale<T>(Tape<T>*, const Tensor<T>&, T);

WMSEG_INSTANTIATE_OPS(float)
WMSEG_INSTANTIATE_OPS(double)

}  // namespace wmseg::nn
