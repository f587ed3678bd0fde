#include "pfseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>
#include <vector>

// Determinism contract for every kernel here: each output (or grad) element is
// produced by exactly one thread via a fixed-order serial loop, so results are
// bit-identical for any thread count. Backward kernels are written in gather
// form (or scatter into thread-owned rows / provably disjoint slots); wide
// reductions accumulate serially in double.

namespace pfseg {
namespace {

template <typename T>
Tensor<T> make_result(Shape shape, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs) {
  auto n = detail::new_node<T>(std::move(shape), op);
  if (detail::grad_enabled()) {
    bool any = false;
    for (const Tensor<T>* t : inputs) any = any || t->requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const Tensor<T>* t : inputs) n->parents.push_back(t->node());
    }
  }
  return Tensor<T>(std::move(n));
}

// Output coords o with 0 <= o*stride + koff - pad < in_extent, as [lo, hi).
struct AxisRange {
  std::int64_t lo, hi;
};

AxisRange valid_out_range(std::int64_t in_extent, std::int64_t out_extent,
                          std::int64_t koff, std::int64_t stride, std::int64_t pad) {
  const std::int64_t a = pad - koff;                  // o*stride >= a
  const std::int64_t b = in_extent - 1 + pad - koff;  // o*stride <= b
  std::int64_t lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  std::int64_t hi = b < 0 ? 0 : b / stride + 1;
  if (hi > out_extent) hi = out_extent;
  if (lo > hi) lo = hi;
  return {lo, hi};
}

// Solves i == o*stride + koff - pad for o; false when no valid output coord.
bool out_coord(std::int64_t i, std::int64_t koff, std::int64_t pad, std::int64_t stride,
               std::int64_t out_extent, std::int64_t* o) {
  const std::int64_t t = i + pad - koff;
  if (t < 0 || t % stride != 0) return false;
  const std::int64_t v = t / stride;
  if (v >= out_extent) return false;
  *o = v;
  return true;
}

template <typename T>
bool is_scalar(const Tensor<T>& t) {
  return t.size() == 1;
}

template <typename T>
void require_elementwise(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!same_shape(a.shape(), b.shape()) && !is_scalar(a) && !is_scalar(b))
    throw ShapeError(std::string(op) + ": shapes " + dims_str(a.shape()) + " and " +
                     dims_str(b.shape()) + " differ and neither is scalar");
}

template <typename T>
double serial_sum(const std::vector<T>& v) {
  double acc = 0.0;
  for (T x : v) acc += static_cast<double>(x);
  return acc;
}

template <typename T>
struct Tap {
  std::int64_t i0, i1;
  T w1;  // weight of i1; i0 carries 1 - w1
};

template <typename T>
std::vector<Tap<T>> make_taps(std::int64_t n_in, int factor) {
  std::vector<Tap<T>> taps(static_cast<std::size_t>(n_in * factor));
  for (std::int64_t o = 0; o < n_in * factor; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    const double f = std::floor(src);
    const std::int64_t x0 = static_cast<std::int64_t>(f);
    const double w1 = src - f;
    Tap<T>& t = taps[static_cast<std::size_t>(o)];
    t.i0 = std::clamp<std::int64_t>(x0, 0, n_in - 1);
    t.i1 = std::clamp<std::int64_t>(x0 + 1, 0, n_in - 1);
    t.w1 = static_cast<T>(w1);
  }
  return taps;
}

// Per input coord: the output coords (and weights) that read it.
template <typename T>
std::vector<std::vector<std::pair<std::int64_t, T>>> reverse_taps(
    const std::vector<Tap<T>>& taps, std::int64_t n_in) {
  std::vector<std::vector<std::pair<std::int64_t, T>>> rev(
      static_cast<std::size_t>(n_in));
  for (std::int64_t o = 0; o < static_cast<std::int64_t>(taps.size()); ++o) {
    const Tap<T>& t = taps[static_cast<std::size_t>(o)];
    rev[static_cast<std::size_t>(t.i0)].emplace_back(o, T(1) - t.w1);
    rev[static_cast<std::size_t>(t.i1)].emplace_back(o, t.w1);
  }
  return rev;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 5 || bias.rank() != 1)
    throw ShapeError("conv3d expects input rank 4, kernel rank 5, bias rank 1; got " +
                     dims_str(input.shape()) + ", " + dims_str(kernel.shape()) + ", " +
                     dims_str(bias.shape()));
  const std::int64_t Ci = input.extent(0), W = input.extent(1), H = input.extent(2),
                     D = input.extent(3);
  const std::int64_t Co = kernel.extent(0), k = kernel.extent(2);
  if (kernel.extent(1) != Ci)
    throw ShapeError("conv3d kernel expects " + std::to_string(Ci) +
                     " input channels, got " + dims_str(kernel.shape()));
  if (kernel.extent(3) != k || kernel.extent(4) != k || k < 1)
    throw ShapeError("conv3d kernel must be cubic, got " + dims_str(kernel.shape()));
  if (bias.extent(0) != Co)
    throw ShapeError("conv3d bias length " + std::to_string(bias.extent(0)) +
                     " != output channels " + std::to_string(Co));
  if (stride < 1 || padding < 0)
    throw ValidationError("conv3d needs stride >= 1 and padding >= 0");
  const std::int64_t s = stride, p = padding;
  if (W + 2 * p < k || H + 2 * p < k || D + 2 * p < k)
    throw ShapeError("conv3d kernel side " + std::to_string(k) +
                     " exceeds padded input " + dims_str(input.shape()));
  const std::int64_t Wo = (W + 2 * p - k) / s + 1;
  const std::int64_t Ho = (H + 2 * p - k) / s + 1;
  const std::int64_t Do = (D + 2 * p - k) / s + 1;

  if (OpProbe::active()) {
    OpProbe::count_conv();
    OpProbe::record_kernel(kernel.id());
  }

  Tensor<T> out = make_result<T>({Co, Wo, Ho, Do}, "conv3d", {&input, &kernel, &bias});

  std::vector<AxisRange> xr(static_cast<std::size_t>(k));
  for (std::int64_t kx = 0; kx < k; ++kx)
    xr[static_cast<std::size_t>(kx)] = valid_out_range(W, Wo, kx, s, p);

  {
    const T* in = input.data().data();
    const T* ker = kernel.data().data();
    const T* bs = bias.data().data();
    T* op_ = out.data().data();
#pragma omp parallel for collapse(2) schedule(static) num_threads(worker_threads())
    for (std::int64_t co = 0; co < Co; ++co)
      for (std::int64_t oz = 0; oz < Do; ++oz)
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          T* orow = op_ + ((co * Do + oz) * Ho + oy) * Wo;
          std::fill(orow, orow + Wo, bs[co]);
          for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t kz = 0; kz < k; ++kz) {
              const std::int64_t iz = oz * s + kz - p;
              if (iz < 0 || iz >= D) continue;
              for (std::int64_t ky = 0; ky < k; ++ky) {
                const std::int64_t iy = oy * s + ky - p;
                if (iy < 0 || iy >= H) continue;
                const T* irow = in + ((ci * D + iz) * H + iy) * W;
                const T* krow = ker + (((co * Ci + ci) * k + kz) * k + ky) * k;
                for (std::int64_t kx = 0; kx < k; ++kx) {
                  const T w = krow[kx];
                  const AxisRange r = xr[static_cast<std::size_t>(kx)];
                  const std::int64_t n = r.hi - r.lo;
                  if (n <= 0) continue;
                  const T* ip = irow + (r.lo * s + kx - p);
                  T* ob = orow + r.lo;
                  if (s == 1) {
                    for (std::int64_t i = 0; i < n; ++i) ob[i] += w * ip[i];
                  } else {
                    for (std::int64_t i = 0; i < n; ++i) ob[i] += w * ip[i * s];
                  }
                }
              }
            }
        }
  }
  detail::debug_check_finite(*out.node(), "conv3d");

  if (out.requires_grad()) {
    auto inN = input.node();
    auto kerN = kernel.node();
    auto biasN = bias.node();
    out.node()->backward_fn = [inN, kerN, biasN, Ci, W, H, D, Co, k, s, p, Wo, Ho, Do,
                               xr](TensorNode<T>& self) {
      const T* g = self.grad.data();
      const T* in = inN->data.data();
      const T* ker = kerN->data.data();

      if (biasN->requires_grad) {
        biasN->ensure_grad();
        T* gb = biasN->grad.data();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
        for (std::int64_t co = 0; co < Co; ++co) {
          double acc = 0.0;
          const T* gc = g + co * Do * Ho * Wo;
          const std::int64_t n = Do * Ho * Wo;
          for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(gc[i]);
          gb[co] += static_cast<T>(acc);
        }
      }

      if (kerN->requires_grad) {
        kerN->ensure_grad();
        T* gk = kerN->grad.data();
#pragma omp parallel for collapse(2) schedule(static) num_threads(worker_threads())
        for (std::int64_t co = 0; co < Co; ++co)
          for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t kz = 0; kz < k; ++kz) {
              const AxisRange zr = valid_out_range(D, Do, kz, s, p);
              for (std::int64_t ky = 0; ky < k; ++ky) {
                const AxisRange yr = valid_out_range(H, Ho, ky, s, p);
                for (std::int64_t kx = 0; kx < k; ++kx) {
                  const AxisRange r = xr[static_cast<std::size_t>(kx)];
                  const std::int64_t n = r.hi - r.lo;
                  if (n <= 0) continue;
                  double acc = 0.0;
                  for (std::int64_t oz = zr.lo; oz < zr.hi; ++oz) {
                    const std::int64_t iz = oz * s + kz - p;
                    for (std::int64_t oy = yr.lo; oy < yr.hi; ++oy) {
                      const std::int64_t iy = oy * s + ky - p;
                      const T* grow = g + ((co * Do + oz) * Ho + oy) * Wo + r.lo;
                      const T* ip = in + ((ci * D + iz) * H + iy) * W +
                                    (r.lo * s + kx - p);
                      if (s == 1) {
                        for (std::int64_t i = 0; i < n; ++i)
                          acc += static_cast<double>(grow[i]) *
                                 static_cast<double>(ip[i]);
                      } else {
                        for (std::int64_t i = 0; i < n; ++i)
                          acc += static_cast<double>(grow[i]) *
                                 static_cast<double>(ip[i * s]);
                      }
                    }
                  }
                  gk[(((co * Ci + ci) * k + kz) * k + ky) * k + kx] +=
                      static_cast<T>(acc);
                }
              }
            }
      }

      if (inN->requires_grad) {
        inN->ensure_grad();
        T* gi = inN->grad.data();
#pragma omp parallel for collapse(2) schedule(static) num_threads(worker_threads())
        for (std::int64_t ci = 0; ci < Ci; ++ci)
          for (std::int64_t iz = 0; iz < D; ++iz)
            for (std::int64_t iy = 0; iy < H; ++iy) {
              T* grow = gi + ((ci * D + iz) * H + iy) * W;
              for (std::int64_t co = 0; co < Co; ++co)
                for (std::int64_t kz = 0; kz < k; ++kz) {
                  std::int64_t oz;
                  if (!out_coord(iz, kz, p, s, Do, &oz)) continue;
                  for (std::int64_t ky = 0; ky < k; ++ky) {
                    std::int64_t oy;
                    if (!out_coord(iy, ky, p, s, Ho, &oy)) continue;
                    const T* gorow = g + ((co * Do + oz) * Ho + oy) * Wo;
                    const T* krow = ker + (((co * Ci + ci) * k + kz) * k + ky) * k;
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                      const T w = krow[kx];
                      const AxisRange r = xr[static_cast<std::size_t>(kx)];
                      const std::int64_t n = r.hi - r.lo;
                      if (n <= 0) continue;
                      T* gp = grow + (r.lo * s + kx - p);
                      const T* gb = gorow + r.lo;
                      if (s == 1) {
                        for (std::int64_t i = 0; i < n; ++i) gp[i] += w * gb[i];
                      } else {
                        for (std::int64_t i = 0; i < n; ++i) gp[i * s] += w * gb[i];
                      }
                    }
                  }
                }
            }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& input, int factor) {
  if (input.rank() != 4)
    throw ShapeError("upsample_trilinear expects rank 4, got " + dims_str(input.shape()));
  if (factor < 2) throw ValidationError("upsample_trilinear needs factor >= 2");
  const std::int64_t C = input.extent(0), W = input.extent(1), H = input.extent(2),
                     D = input.extent(3);
  const std::int64_t Wo = W * factor, Ho = H * factor, Do = D * factor;
  Tensor<T> out = make_result<T>({C, Wo, Ho, Do}, "upsample_trilinear", {&input});

  auto tx = make_taps<T>(W, factor);
  auto ty = make_taps<T>(H, factor);
  auto tz = make_taps<T>(D, factor);

  {
    const T* in = input.data().data();
    T* op_ = out.data().data();
#pragma omp parallel for collapse(2) schedule(static) num_threads(worker_threads())
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t zo = 0; zo < Do; ++zo) {
        const Tap<T>& az = tz[static_cast<std::size_t>(zo)];
        const T wz1 = az.w1, wz0 = T(1) - az.w1;
        const T* pc = in + c * D * H * W;
        for (std::int64_t yo = 0; yo < Ho; ++yo) {
          const Tap<T>& ay = ty[static_cast<std::size_t>(yo)];
          const T wy1 = ay.w1, wy0 = T(1) - ay.w1;
          const T* r00 = pc + (az.i0 * H + ay.i0) * W;
          const T* r01 = pc + (az.i0 * H + ay.i1) * W;
          const T* r10 = pc + (az.i1 * H + ay.i0) * W;
          const T* r11 = pc + (az.i1 * H + ay.i1) * W;
          T* orow = op_ + ((c * Do + zo) * Ho + yo) * Wo;
          for (std::int64_t xo = 0; xo < Wo; ++xo) {
            const Tap<T>& ax = tx[static_cast<std::size_t>(xo)];
            const T wx1 = ax.w1, wx0 = T(1) - ax.w1;
            const T v00 = wx0 * r00[ax.i0] + wx1 * r00[ax.i1];
            const T v01 = wx0 * r01[ax.i0] + wx1 * r01[ax.i1];
            const T v10 = wx0 * r10[ax.i0] + wx1 * r10[ax.i1];
            const T v11 = wx0 * r11[ax.i0] + wx1 * r11[ax.i1];
            orow[xo] = wz0 * (wy0 * v00 + wy1 * v01) + wz1 * (wy0 * v10 + wy1 * v11);
          }
        }
      }
  }

  if (out.requires_grad()) {
    auto inN = input.node();
    out.node()->backward_fn = [inN, C, W, H, D, Wo, Ho, Do, tx, ty,
                               tz](TensorNode<T>& self) {
      if (!inN->requires_grad) return;
      inN->ensure_grad();
      const T* g = self.grad.data();
      T* gi = inN->grad.data();
      const auto rx = reverse_taps(tx, W);
      const auto ry = reverse_taps(ty, H);
      const auto rz = reverse_taps(tz, D);
#pragma omp parallel for collapse(2) schedule(static) num_threads(worker_threads())
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t zi = 0; zi < D; ++zi)
          for (std::int64_t yi = 0; yi < H; ++yi) {
            T* grow = gi + ((c * D + zi) * H + yi) * W;
            for (const auto& [zo, wz] : rz[static_cast<std::size_t>(zi)])
              for (const auto& [yo, wy] : ry[static_cast<std::size_t>(yi)]) {
                const T wzy = wz * wy;
                const T* gorow = g + ((c * Do + zo) * Ho + yo) * Wo;
                for (std::int64_t xi = 0; xi < W; ++xi) {
                  T acc = T(0);
                  for (const auto& [xo, wx] : rx[static_cast<std::size_t>(xi)])
                    acc += wx * gorow[xo];
                  grow[xi] += wzy * acc;
                }
              }
          }
    };
  }
  return out;
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma,
                        const Tensor<T>& beta, T eps) {
  if (input.rank() != 4 || gamma.rank() != 1 || beta.rank() != 1)
    throw ShapeError("instance_norm expects input rank 4 with rank-1 gamma/beta, got " +
                     dims_str(input.shape()));
  const std::int64_t C = input.extent(0);
  const std::int64_t N = input.extent(1) * input.extent(2) * input.extent(3);
  if (gamma.extent(0) != C || beta.extent(0) != C)
    throw ShapeError("instance_norm gamma/beta must have " + std::to_string(C) +
                     " channels");
  if (N < 2)
    throw ShapeError("instance_norm needs at least 2 spatial elements, got " +
                     dims_str(input.shape()));
  if (!(eps > T(0))) throw ValidationError("instance_norm needs eps > 0");

  Tensor<T> out = make_result<T>(input.shape(), "instance_norm", {&input, &gamma, &beta});
  std::vector<T> xhat(static_cast<std::size_t>(input.size()));
  std::vector<double> istd(static_cast<std::size_t>(C));

  {
    const T* in = input.data().data();
    const T* gm = gamma.data().data();
    const T* bt = beta.data().data();
    T* op_ = out.data().data();
    T* xh = xhat.data();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t c = 0; c < C; ++c) {
      const T* xc = in + c * N;
      double m = 0.0;
      for (std::int64_t i = 0; i < N; ++i) m += static_cast<double>(xc[i]);
      m /= static_cast<double>(N);
      double v = 0.0;
      for (std::int64_t i = 0; i < N; ++i) {
        const double d = static_cast<double>(xc[i]) - m;
        v += d * d;
      }
      v /= static_cast<double>(N);
      const double is = 1.0 / std::sqrt(v + static_cast<double>(eps));
      istd[static_cast<std::size_t>(c)] = is;
      const T gc = gm[c], bc = bt[c];
      T* oc = op_ + c * N;
      T* xhc = xh + c * N;
      for (std::int64_t i = 0; i < N; ++i) {
        const T h = static_cast<T>((static_cast<double>(xc[i]) - m) * is);
        xhc[i] = h;
        oc[i] = gc * h + bc;
      }
    }
  }
  detail::debug_check_finite(*out.node(), "instance_norm");

  if (out.requires_grad()) {
    auto inN = input.node();
    auto gmN = gamma.node();
    auto btN = beta.node();
    out.node()->backward_fn = [inN, gmN, btN, C, N, xhat = std::move(xhat),
                               istd = std::move(istd)](TensorNode<T>& self) {
      const T* g = self.grad.data();
      const T* xh = xhat.data();
      const bool need_in = inN->requires_grad;
      const bool need_gm = gmN->requires_grad;
      const bool need_bt = btN->requires_grad;
      if (need_in) inN->ensure_grad();
      if (need_gm) gmN->ensure_grad();
      if (need_bt) btN->ensure_grad();
      const T* gm = gmN->data.data();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t c = 0; c < C; ++c) {
        const T* gc = g + c * N;
        const T* xhc = xh + c * N;
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t i = 0; i < N; ++i) {
          s1 += static_cast<double>(gc[i]);
          s2 += static_cast<double>(gc[i]) * static_cast<double>(xhc[i]);
        }
        if (need_bt) btN->grad[static_cast<std::size_t>(c)] += static_cast<T>(s1);
        if (need_gm) gmN->grad[static_cast<std::size_t>(c)] += static_cast<T>(s2);
        if (need_in) {
          const double gi = static_cast<double>(gm[c]) * istd[static_cast<std::size_t>(c)];
          const double m1 = s1 / static_cast<double>(N);
          const double m2 = s2 / static_cast<double>(N);
          T* gx = inN->grad.data() + c * N;
          for (std::int64_t i = 0; i < N; ++i)
            gx[i] += static_cast<T>(
                gi * (static_cast<double>(gc[i]) - m1 - static_cast<double>(xhc[i]) * m2));
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
  Tensor<T> out = make_result<T>(input.shape(), "leaky_relu", {&input});
  {
    const T* in = input.data().data();
    T* op_ = out.data().data();
    const std::int64_t n = input.size();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) op_[i] = in[i] > T(0) ? in[i] : slope * in[i];
  }
  if (out.requires_grad()) {
    auto inN = input.node();
    out.node()->backward_fn = [inN, slope](TensorNode<T>& self) {
      if (!inN->requires_grad) return;
      inN->ensure_grad();
      const T* g = self.grad.data();
      const T* in = inN->data.data();
      T* gi = inN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gi[i] += in[i] > T(0) ? g[i] : slope * g[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out = make_result<T>(input.shape(), "sigmoid", {&input});
  {
    const T* in = input.data().data();
    T* op_ = out.data().data();
    const std::int64_t n = input.size();
    // Clamp to the open interval so saturated tails stay strictly inside (0,1).
    const T hi = std::nextafter(T(1), T(0));
    const T lo = std::numeric_limits<T>::min();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(in[i]);
      const double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
      op_[i] = std::min(hi, std::max(lo, static_cast<T>(y)));
    }
  }
  if (out.requires_grad()) {
    auto inN = input.node();
    out.node()->backward_fn = [inN](TensorNode<T>& self) {
      if (!inN->requires_grad) return;
      inN->ensure_grad();
      const T* g = self.grad.data();
      const T* y = self.data.data();
      T* gi = inN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gi[i] += g[i] * y[i] * (T(1) - y[i]);
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4)
    throw ShapeError("concat_channels expects rank 4 inputs, got " + dims_str(a.shape()) +
                     " and " + dims_str(b.shape()));
  for (int ax = 1; ax < 4; ++ax)
    if (a.extent(ax) != b.extent(ax))
      throw ShapeError("concat_channels spatial mismatch: " + dims_str(a.shape()) +
                       " vs " + dims_str(b.shape()));
  const std::int64_t Ca = a.extent(0), Cb = b.extent(0);
  Shape os = a.shape();
  os[0] = Ca + Cb;
  Tensor<T> out = make_result<T>(std::move(os), "concat_channels", {&a, &b});
  const std::int64_t na = a.size(), nb = b.size();
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + na);
  if (out.requires_grad()) {
    auto aN = a.node();
    auto bN = b.node();
    out.node()->backward_fn = [aN, bN, na, nb](TensorNode<T>& self) {
      const T* g = self.grad.data();
      if (aN->requires_grad) {
        aN->ensure_grad();
        T* ga = aN->grad.data();
        for (std::int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (bN->requires_grad) {
        bN->ensure_grad();
        T* gb = bN->grad.data();
        for (std::int64_t i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t first, std::int64_t count) {
  if (x.rank() != 4)
    throw ShapeError("slice_channels expects rank 4, got " + dims_str(x.shape()));
  if (first < 0 || count < 1 || first + count > x.extent(0))
    throw ValidationError("slice_channels range [" + std::to_string(first) + ", " +
                          std::to_string(first + count) + ") outside " +
                          dims_str(x.shape()));
  Shape os = x.shape();
  os[0] = count;
  Tensor<T> out = make_result<T>(std::move(os), "slice_channels", {&x});
  const std::int64_t per = x.extent(1) * x.extent(2) * x.extent(3);
  std::copy(x.data().begin() + first * per, x.data().begin() + (first + count) * per,
            out.data().begin());
  if (out.requires_grad()) {
    auto xN = x.node();
    const std::int64_t off = first * per, n = count * per;
    out.node()->backward_fn = [xN, off, n](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      T* gx = xN->grad.data() + off;
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  if (x.rank() != 4)
    throw ShapeError("max_pool2 expects rank 4, got " + dims_str(x.shape()));
  const std::int64_t C = x.extent(0), W = x.extent(1), H = x.extent(2), D = x.extent(3);
  if (W % 2 || H % 2 || D % 2 || W < 2 || H < 2 || D < 2)
    throw ShapeError("max_pool2 needs even spatial extents, got " + dims_str(x.shape()));
  const std::int64_t Wo = W / 2, Ho = H / 2, Do = D / 2;
  Tensor<T> out = make_result<T>({C, Wo, Ho, Do}, "max_pool2", {&x});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()));
  {
    const T* in = x.data().data();
    T* op_ = out.data().data();
    std::int64_t* am = argmax.data();
#pragma omp parallel for collapse(2) schedule(static) num_threads(worker_threads())
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t oz = 0; oz < Do; ++oz)
        for (std::int64_t oy = 0; oy < Ho; ++oy)
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t bi = -1;
            for (std::int64_t dz = 0; dz < 2; ++dz)
              for (std::int64_t dy = 0; dy < 2; ++dy)
                for (std::int64_t dx = 0; dx < 2; ++dx) {
                  const std::int64_t idx =
                      ((c * D + 2 * oz + dz) * H + 2 * oy + dy) * W + 2 * ox + dx;
                  if (in[idx] > best) {
                    best = in[idx];
                    bi = idx;
                  }
                }
            const std::int64_t o = ((c * Do + oz) * Ho + oy) * Wo + ox;
            op_[o] = best;
            am[o] = bi;
          }
  }
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN, argmax = std::move(argmax)](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      T* gx = xN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
      // Pool windows are disjoint, so these writes never collide.
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gx[argmax[static_cast<std::size_t>(i)]] += g[i];
    };
  }
  return out;
}

namespace {

// Elementwise binary op with scalar broadcast on either side.
template <typename T, typename FwdFn, typename BackA, typename BackB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, FwdFn fwd,
                    BackA back_a, BackB back_b) {
  require_elementwise(a, b, name);
  const Shape& os = is_scalar(a) ? b.shape() : a.shape();
  Tensor<T> out = make_result<T>(os, name, {&a, &b});
  const std::int64_t n = out.size();
  const bool sa = is_scalar(a) && n != 1, sb = is_scalar(b) && n != 1;
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data().data();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[sa ? 0 : i], pb[sb ? 0 : i]);
  }
  if (out.requires_grad()) {
    auto aN = a.node();
    auto bN = b.node();
    out.node()->backward_fn = [aN, bN, n, sa, sb, back_a, back_b](TensorNode<T>& self) {
      const T* g = self.grad.data();
      const T* pa = aN->data.data();
      const T* pb = bN->data.data();
      if (aN->requires_grad) {
        aN->ensure_grad();
        T* ga = aN->grad.data();
        if (sa) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < n; ++i)
            acc += static_cast<double>(back_a(g[i], pa[0], pb[sb ? 0 : i]));
          ga[0] += static_cast<T>(acc);
        } else {
#pragma omp parallel for schedule(static) num_threads(worker_threads())
          for (std::int64_t i = 0; i < n; ++i) ga[i] += back_a(g[i], pa[i], pb[sb ? 0 : i]);
        }
      }
      if (bN->requires_grad) {
        bN->ensure_grad();
        T* gb = bN->grad.data();
        if (sb) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < n; ++i)
            acc += static_cast<double>(back_b(g[i], pa[sa ? 0 : i], pb[0]));
          gb[0] += static_cast<T>(acc);
        } else {
#pragma omp parallel for schedule(static) num_threads(worker_threads())
          for (std::int64_t i = 0; i < n; ++i) gb[i] += back_b(g[i], pa[sa ? 0 : i], pb[i]);
        }
      }
    };
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  Tensor<T> out = make_result<T>(x.shape(), "square", {&x});
  {
    const T* in = x.data().data();
    T* po = out.data().data();
    const std::int64_t n = x.size();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) po[i] = in[i] * in[i];
  }
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      const T* in = xN->data.data();
      T* gx = xN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gx[i] += T(2) * in[i] * g[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out = make_result<T>(x.shape(), "scale", {&x});
  {
    const T* in = x.data().data();
    T* po = out.data().data();
    const std::int64_t n = x.size();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) po[i] = c * in[i];
  }
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN, c](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      T* gx = xN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gx[i] += c * g[i];
    };
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> reduce_impl(const Tensor<T>& x, bool mean) {
  Tensor<T> out = make_result<T>({1}, mean ? "reduce_mean" : "reduce_sum", {&x});
  const std::int64_t n = x.size();
  double acc = serial_sum(x.data());
  if (mean) acc /= static_cast<double>(n);
  out.data()[0] = static_cast<T>(acc);
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN, n, mean](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const double g0 = static_cast<double>(self.grad[0]);
      const T gv = static_cast<T>(mean ? g0 / static_cast<double>(n) : g0);
      T* gx = xN->grad.data();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gv;
    };
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
  return reduce_impl(x, false);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
  return reduce_impl(x, true);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw ShapeError("matmul expects [M,K] x [K,N], got " + dims_str(a.shape()) + " and " +
                     dims_str(b.shape()));
  const std::int64_t M = a.extent(0), K = a.extent(1), N = b.extent(1);
  Tensor<T> out = make_result<T>({M, N}, "matmul", {&a, &b});
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  {
    Eigen::Map<const Mat> A(a.data().data(), M, K), B(b.data().data(), K, N);
    Eigen::Map<Mat> Co(out.data().data(), M, N);
    Co.noalias() = A * B;
  }
  if (out.requires_grad()) {
    auto aN = a.node();
    auto bN = b.node();
    out.node()->backward_fn = [aN, bN, M, K, N](TensorNode<T>& self) {
      Eigen::Map<const Mat> G(self.grad.data(), M, N);
      Eigen::Map<const Mat> A(aN->data.data(), M, K), B(bN->data.data(), K, N);
      if (aN->requires_grad) {
        aN->ensure_grad();
        Eigen::Map<Mat> GA(aN->grad.data(), M, K);
        GA.noalias() += G * B.transpose();
      }
      if (bN->requires_grad) {
        bN->ensure_grad();
        Eigen::Map<Mat> GB(bN->grad.data(), K, N);
        GB.noalias() += A.transpose() * G;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  Tensor<T> out = make_result<T>(x.shape(), "reciprocal", {&x});
  {
    const T* in = x.data().data();
    T* po = out.data().data();
    const std::int64_t n = x.size();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) po[i] = T(1) / in[i];
  }
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      const T* y = self.data.data();
      T* gx = xN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gx[i] -= g[i] * y[i] * y[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (!(lo <= hi)) throw ValidationError("clamp bounds out of order");
  Tensor<T> out = make_result<T>(x.shape(), "clamp", {&x});
  {
    const T* in = x.data().data();
    T* po = out.data().data();
    const std::int64_t n = x.size();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::min(std::max(in[i], lo), hi);
  }
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN, lo, hi](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      const T* in = xN->data.data();
      T* gx = xN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i)
        if (in[i] >= lo && in[i] <= hi) gx[i] += g[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  {
    const T* in = x.data().data();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i)
      if (!(in[i] > T(0))) throw ValidationError("log requires positive inputs");
  }
  Tensor<T> out = make_result<T>(x.shape(), "log", {&x});
  {
    const T* in = x.data().data();
    T* po = out.data().data();
    const std::int64_t n = x.size();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t i = 0; i < n; ++i) po[i] = std::log(in[i]);
  }
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      const T* in = xN->data.data();
      T* gx = xN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] / in[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape.empty() || shape.size() > 8) throw ShapeError("reshape rank must be 1..8");
  std::int64_t total = 1;
  for (std::int64_t e : shape) {
    if (e <= 0) throw ShapeError("reshape extents must be positive");
    total *= e;
  }
  if (total != x.size())
    throw ShapeError("reshape size mismatch: " + dims_str(x.shape()) + " -> " + dims_str(shape));
  Tensor<T> out = make_result<T>(shape, "reshape", {&x});
  out.data() = x.data();
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      T* gx = xN->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(self.data.size());
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> transpose2(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose2 expects rank 2, got " + dims_str(x.shape()));
  const std::int64_t M = x.extent(0), N = x.extent(1);
  Tensor<T> out = make_result<T>({N, M}, "transpose2", {&x});
  {
    const T* in = x.data().data();
    T* po = out.data().data();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t j = 0; j < N; ++j)
      for (std::int64_t i = 0; i < M; ++i) po[j * M + i] = in[i * N + j];
  }
  if (out.requires_grad()) {
    auto xN = x.node();
    out.node()->backward_fn = [xN, M, N](TensorNode<T>& self) {
      if (!xN->requires_grad) return;
      xN->ensure_grad();
      const T* g = self.grad.data();
      T* gx = xN->grad.data();
#pragma omp parallel for schedule(static) num_threads(worker_threads())
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) gx[i * N + j] += g[j * M + i];
    };
  }
  return out;
}

#define PFSEG_INSTANTIATE_OPS(T)                                                      \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                               int, int);                                            \
  template Tensor<T> upsample_trilinear<T>(const Tensor<T>&, int);                   \
  template Tensor<T> instance_norm<T>(const Tensor<T>&, const Tensor<T>&,            \
                                      const Tensor<T>&, T);                          \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                             \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                   \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::int64_t, std::int64_t); \
  template Tensor<T> max_pool2<T>(const Tensor<T>&);                                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> square<T>(const Tensor<T>&);                                    \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> reduce_sum<T>(const Tensor<T>&);                                \
  template Tensor<T> reduce_mean<T>(const Tensor<T>&);                               \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> reciprocal<T>(const Tensor<T>&);                                \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                               \
  template Tensor<T> log<T>(const Tensor<T>&);                                       \
  template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                     \
  template Tensor<T> transpose2<T>(const Tensor<T>&);

PFSEG_INSTANTIATE_OPS(float)
PFSEG_INSTANTIATE_OPS(double)
#undef PFSEG_INSTANTIATE_OPS

}  // namespace pfseg
