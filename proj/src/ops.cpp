#include "deml/ops.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "deml/errors.hpp"

namespace deml {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

std::span<const double> out_grad(const detail::Node& self) { return self.grad; }

std::span<const double> input_value(const detail::Node& self, std::size_t k) {
  return self.inputs[k]->value;
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T, via a transposed copy of b so the
// inner loop runs over contiguous memory.
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, k, n, a, bt.data(), c);
}

// c[m x n] += a[k x m]^T * b[k x n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <class F, class G>
Tensor unary(const Tensor& x, F forward, G derivative) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [derivative](detail::Node& self) {
                       auto gx = input_grad(self, 0);
                       auto xv = input_value(self, 0);
                       auto g = out_grad(self);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx[i] += g[i] * derivative(xv[i], self.value[i]);
                       }
                     });
}

struct ConvGeometry {
  std::size_t batch, c_in, h, w, c_out, h_out, w_out, stride;
  bool batched;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, std::size_t stride) {
  if (stride != 1 && stride != 2) {
    throw ParameterError("conv2d: stride must be 1 or 2, got " +
                         std::to_string(stride));
  }
  if (k.ndim() != 4 || k.dim(2) != 3 || k.dim(3) != 3) {
    throw DimensionError("conv2d: kernels must be [C_out x C_in x 3 x 3], got " +
                         shape_string(k.shape()));
  }
  ConvGeometry g{};
  if (x.ndim() == 3) {
    g.batched = false;
    g.batch = 1;
    g.c_in = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
  } else if (x.ndim() == 4) {
    g.batched = true;
    g.batch = x.dim(0);
    g.c_in = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
  } else {
    throw DimensionError("conv2d: input must be [C x H x W] or [N x C x H x W], got " +
                         shape_string(x.shape()));
  }
  if (g.c_in != k.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(g.c_in) +
                         " channels, kernels expect " + std::to_string(k.dim(1)));
  }
  if (g.h < 3 || g.w < 3) {
    throw DimensionError("conv2d: spatial size must be at least 3x3, got " +
                         shape_string(x.shape()));
  }
  g.c_out = k.dim(0);
  g.stride = stride;
  g.h_out = (g.h + stride - 1) / stride;
  g.w_out = (g.w + stride - 1) / stride;
  return g;
}

// Unfolds one image into columns [C_in*9 x H_out*W_out]; consecutive rows of
// `col` are `ld` apart.
void im2col(const ConvGeometry& g, const double* img, double* col, std::size_t ld) {
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* dst = col + ((c * 3 + ky) * 3 + kx) * ld;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - 1;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - 1;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            dst[oy * g.w_out + ox] =
                inside ? img[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, std::size_t ld, double* img) {
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* src = col + ((c * 3 + ky) * 3 + kx) * ld;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + iy) * g.w + ix] += src[oy * g.w_out + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) +
                         " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  return make_result({m, n}, std::move(out), {a, b},
                     [m, k, n](detail::Node& self) {
                       auto g = out_grad(self);
                       auto av = input_value(self, 0);
                       auto bv = input_value(self, 1);
                       if (auto ga = input_grad(self, 0); !ga.empty()) {
                         gemm_nt(m, n, k, g.data(), bv.data(), ga.data());
                       }
                       if (auto gb = input_grad(self, 1); !gb.empty()) {
                         gemm_tn(k, m, n, av.data(), g.data(), gb.data());
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) {
    throw DimensionError("transpose: expected a matrix, got " +
                         shape_string(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    auto g = out_grad(self);
    auto ga = input_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  const bool vec = x.ndim() == 1;
  if (w.ndim() != 2 || (x.ndim() != 1 && x.ndim() != 2) ||
      x.shape().back() != w.dim(1)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) +
                         " does not match weights " + shape_string(w.shape()));
  }
  const std::size_t rows = vec ? 1 : x.dim(0);
  const std::size_t in = w.dim(1), out_dim = w.dim(0);
  std::vector<double> out(rows * out_dim, 0.0);
  gemm_nt(rows, in, out_dim, x.values().data(), w.values().data(), out.data());
  Shape shape = vec ? Shape{out_dim} : Shape{rows, out_dim};
  return make_result(std::move(shape), std::move(out), {x, w},
                     [rows, in, out_dim](detail::Node& self) {
                       auto g = out_grad(self);
                       if (auto gx = input_grad(self, 0); !gx.empty()) {
                         gemm_nn(rows, out_dim, in, g.data(),
                                 input_value(self, 1).data(), gx.data());
                       }
                       if (auto gw = input_grad(self, 1); !gw.empty()) {
                         gemm_tn(out_dim, rows, in, g.data(),
                                 input_value(self, 0).data(), gw.data());
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto g = out_grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto gi = input_grad(self, k); !gi.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto g = out_grad(self);
    if (auto ga = input_grad(self, 0); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = input_grad(self, 1); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto g = out_grad(self);
    auto av = input_value(self, 0), bv = input_value(self, 1);
    if (auto ga = input_grad(self, 0); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (auto gb = input_grad(self, 1); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result(a.shape(), std::move(out), {a},
                     [factor](detail::Node& self) {
                       auto g = out_grad(self);
                       auto ga = input_grad(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] += g[i] * factor;
                     });
}

Tensor sum(const Tensor& a) {
  auto av = a.values();
  double s = std::accumulate(av.begin(), av.end(), 0.0);
  return make_result({}, {s}, {a}, [](detail::Node& self) {
    const double g = self.grad[0];
    for (double& v : input_grad(self, 0)) v += g;
  });
}

Tensor sum_squares(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return make_result({}, {s}, {a}, [](detail::Node& self) {
    const double g = self.grad[0];
    auto av = input_value(self, 0);
    auto ga = input_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g * av[i];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return make_result({}, {s}, {a, b}, [](detail::Node& self) {
    const double g = self.grad[0];
    auto av = input_value(self, 0), bv = input_value(self, 1);
    if (auto ga = input_grad(self, 0); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
    if (auto gb = input_grad(self, 1); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      },
      [](double in, double) {
        if (in >= 0.0) return 1.0 / (1.0 + std::exp(-in));
        const double e = std::exp(in);
        return e / (1.0 + e);
      });
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride) {
  const ConvGeometry g = conv_geometry(x, kernels, stride);
  const std::size_t rows = g.c_in * 9;
  const std::size_t plane = g.h_out * g.w_out;
  const std::size_t in_size = g.c_in * g.h * g.w;
  const std::size_t out_size = g.c_out * plane;
  // The whole batch goes through one product: columns of image n occupy
  // [n*plane, (n+1)*plane) of a [rows x batch*plane] matrix.
  const std::size_t ld = g.batch * plane;

  auto xv = x.values();
  auto kv = kernels.values();
  std::vector<double> col(rows * ld);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, xv.data() + n * in_size, col.data() + n * plane, ld);
  }
  std::vector<double> wide(g.c_out * ld, 0.0);
  gemm_nn(g.c_out, rows, ld, kv.data(), col.data(), wide.data());
  std::vector<double> out(g.batch * out_size);
  for (std::size_t c = 0; c < g.c_out; ++c) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      std::copy_n(wide.data() + c * ld + n * plane, plane,
                  out.data() + n * out_size + c * plane);
    }
  }
  Shape shape = g.batched ? Shape{g.batch, g.c_out, g.h_out, g.w_out}
                          : Shape{g.c_out, g.h_out, g.w_out};
  return make_result(
      std::move(shape), std::move(out), {x, kernels},
      [g, rows, plane, in_size, out_size, ld](detail::Node& self) {
        auto grad = out_grad(self);
        auto xv = input_value(self, 0);
        auto kv = input_value(self, 1);
        auto gx = input_grad(self, 0);
        auto gk = input_grad(self, 1);
        std::vector<double> gw(g.c_out * ld);
        for (std::size_t c = 0; c < g.c_out; ++c) {
          for (std::size_t n = 0; n < g.batch; ++n) {
            std::copy_n(grad.data() + n * out_size + c * plane, plane,
                        gw.data() + c * ld + n * plane);
          }
        }
        if (!gk.empty()) {
          std::vector<double> col(rows * ld);
          for (std::size_t n = 0; n < g.batch; ++n) {
            im2col(g, xv.data() + n * in_size, col.data() + n * plane, ld);
          }
          gemm_nt(g.c_out, ld, rows, gw.data(), col.data(), gk.data());
        }
        if (!gx.empty()) {
          std::vector<double> dcol(rows * ld, 0.0);
          gemm_tn(rows, g.c_out, ld, kv.data(), gw.data(), dcol.data());
          for (std::size_t n = 0; n < g.batch; ++n) {
            col2im(g, dcol.data() + n * plane, ld, gx.data() + n * in_size);
          }
        }
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || x.ndim() < 3) {
    throw DimensionError("add_channel_bias: bad shapes " + shape_string(x.shape()) +
                         " and " + shape_string(bias.shape()));
  }
  const std::size_t c = x.shape()[x.ndim() - 3];
  if (c != bias.dim(0)) {
    throw DimensionError("add_channel_bias: " + std::to_string(c) +
                         " channels vs bias of " + std::to_string(bias.dim(0)));
  }
  const std::size_t plane = x.shape()[x.ndim() - 2] * x.shape()[x.ndim() - 1];
  const std::size_t batch = x.size() / (c * plane);
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) out[(n * c + ch) * plane + p] += bv[ch];
  return make_result(x.shape(), std::move(out), {x, bias},
                     [batch, c, plane](detail::Node& self) {
                       auto g = out_grad(self);
                       if (auto gx = input_grad(self, 0); !gx.empty())
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       if (auto gb = input_grad(self, 1); !gb.empty()) {
                         for (std::size_t n = 0; n < batch; ++n)
                           for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t p = 0; p < plane; ++p)
                               gb[ch] += g[(n * c + ch) * plane + p];
                       }
                     });
}

Tensor spatial_avg_pool(const Tensor& x) {
  if (x.ndim() != 3 && x.ndim() != 4) {
    throw DimensionError("spatial_avg_pool: expected [C x H x W] or [N x C x H x W], got " +
                         shape_string(x.shape()));
  }
  const bool batched = x.ndim() == 4;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t c = x.shape()[x.ndim() - 3];
  const std::size_t plane = x.shape()[x.ndim() - 2] * x.shape()[x.ndim() - 1];
  std::vector<double> out(batch * c, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < batch * c; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += xv[i * plane + p];
    out[i] = s / static_cast<double>(plane);
  }
  Shape shape = batched ? Shape{batch, c} : Shape{c};
  return make_result(std::move(shape), std::move(out), {x},
                     [plane](detail::Node& self) {
                       auto g = out_grad(self);
                       auto gx = input_grad(self, 0);
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         for (std::size_t p = 0; p < plane; ++p)
                           gx[i * plane + p] += g[i] * inv;
                     });
}

Tensor channel_scale(const Tensor& x, const Tensor& gates) {
  const bool ok = (x.ndim() == 3 && gates.ndim() == 1 && gates.dim(0) == x.dim(0)) ||
                  (x.ndim() == 4 && gates.ndim() == 2 && gates.dim(0) == x.dim(0) &&
                   gates.dim(1) == x.dim(1));
  if (!ok) {
    throw DimensionError("channel_scale: feature map " + shape_string(x.shape()) +
                         " does not match gates " + shape_string(gates.shape()));
  }
  const std::size_t channels = gates.size();
  const std::size_t plane = x.size() / channels;
  std::vector<double> out(x.size());
  auto xv = x.values(), gv = gates.values();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      out[c * plane + p] = xv[c * plane + p] * gv[c];
  return make_result(x.shape(), std::move(out), {x, gates},
                     [channels, plane](detail::Node& self) {
                       auto g = out_grad(self);
                       auto xv = input_value(self, 0);
                       auto gv = input_value(self, 1);
                       auto gx = input_grad(self, 0);
                       auto gg = input_grad(self, 1);
                       for (std::size_t c = 0; c < channels; ++c) {
                         double acc = 0.0;
                         for (std::size_t p = 0; p < plane; ++p) {
                           const std::size_t i = c * plane + p;
                           if (!gx.empty()) gx[i] += g[i] * gv[c];
                           acc += g[i] * xv[i];
                         }
                         if (!gg.empty()) gg[c] += acc;
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptyInputError("concat: no parts");
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  std::vector<Tensor> inputs;
  for (const Tensor& p : parts) {
    if (p.ndim() != 1) {
      throw DimensionError("concat: parts must be vectors, got " +
                           shape_string(p.shape()));
    }
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.size());
    inputs.push_back(p);
  }
  const std::size_t total = out.size();
  return make_result({total}, std::move(out), std::move(inputs),
                     [sizes](detail::Node& self) {
                       auto g = out_grad(self);
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         if (auto gi = input_grad(self, k); !gi.empty())
                           for (std::size_t i = 0; i < sizes[k]; ++i)
                             gi[i] += g[offset + i];
                         offset += sizes[k];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t offset, std::size_t length) {
  if (x.ndim() != 1 || offset + length > x.size()) {
    throw DimensionError("slice: range [" + std::to_string(offset) + ", " +
                         std::to_string(offset + length) + ") outside " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.values().begin() + offset,
                          x.values().begin() + offset + length);
  return make_result({length}, std::move(out), {x},
                     [offset](detail::Node& self) {
                       auto g = out_grad(self);
                       auto gx = input_grad(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " +
                         shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    auto g = out_grad(self);
    auto gx = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor row(const Tensor& x, std::size_t r) {
  if (x.ndim() != 2 || r >= x.dim(0)) {
    throw DimensionError("row: index " + std::to_string(r) + " invalid for " +
                         shape_string(x.shape()));
  }
  const std::size_t n = x.dim(1);
  std::vector<double> out(x.values().begin() + r * n, x.values().begin() + (r + 1) * n);
  return make_result({n}, std::move(out), {x}, [r, n](detail::Node& self) {
    auto g = out_grad(self);
    auto gx = input_grad(self, 0);
    for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g[i];
  });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw EmptyInputError("stack_rows: no rows");
  const std::size_t n = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  std::vector<Tensor> inputs;
  for (const Tensor& r : rows) {
    if (r.ndim() != 1 || r.size() != n) {
      throw DimensionError("stack_rows: rows must be vectors of length " +
                           std::to_string(n) + ", got " + shape_string(r.shape()));
    }
    out.insert(out.end(), r.values().begin(), r.values().end());
    inputs.push_back(r);
  }
  return make_result({rows.size(), n}, std::move(out), std::move(inputs),
                     [n](detail::Node& self) {
                       auto g = out_grad(self);
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         if (auto gi = input_grad(self, k); !gi.empty())
                           for (std::size_t i = 0; i < n; ++i) gi[i] += g[k * n + i];
                       }
                     });
}

Tensor l2_normalize(const Tensor& x) {
  if (x.ndim() != 1) {
    throw DimensionError("l2_normalize: expected a vector, got " +
                         shape_string(x.shape()));
  }
  double sq = 0.0;
  for (double v : x.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 1e-12)) {
    throw DegenerateVectorError("l2_normalize: vector norm " + std::to_string(norm) +
                                " is below 1e-12");
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] / norm;
  return make_result(x.shape(), std::move(out), {x}, [norm](detail::Node& self) {
    auto g = out_grad(self);
    auto gx = input_grad(self, 0);
    double proj = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) proj += g[i] * self.value[i];
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += (g[i] - proj * self.value[i]) / norm;
  });
}

Tensor normalize_rows(const Tensor& x) {
  if (x.ndim() != 2) {
    throw DimensionError("normalize_rows: expected a matrix, got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t v = x.dim(1);
  auto in = x.values();
  std::vector<double> norms(n);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < v; ++c) sq += in[r * v + c] * in[r * v + c];
    norms[r] = std::sqrt(sq);
    if (!(norms[r] > 1e-12)) {
      throw DegenerateVectorError("normalize_rows: row " + std::to_string(r) +
                                  " has norm below 1e-12");
    }
    for (std::size_t c = 0; c < v; ++c) out[r * v + c] = in[r * v + c] / norms[r];
  }
  return make_result(x.shape(), std::move(out), {x}, [norms, v](detail::Node& self) {
    auto g = out_grad(self);
    auto gx = input_grad(self, 0);
    for (std::size_t r = 0; r < norms.size(); ++r) {
      const double* y = self.value.data() + r * v;
      double proj = 0.0;
      for (std::size_t c = 0; c < v; ++c) proj += g[r * v + c] * y[c];
      for (std::size_t c = 0; c < v; ++c) gx[r * v + c] += (g[r * v + c] - proj * y[c]) / norms[r];
    }
  });
}

Tensor grad_reverse(const Tensor& x, double coefficient) {
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(x.shape(), std::move(out), {x},
                     [coefficient](detail::Node& self) {
                       auto g = out_grad(self);
                       auto gx = input_grad(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gx[i] -= coefficient * g[i];
                     });
}

}  // namespace deml
