#include "imudiff/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "imudiff/error.hpp"

namespace imudiff::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMatrix>;
using CMapM = Eigen::Map<const RowMatrix>;

std::vector<double>* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::contract, std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                  " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    fail(ErrorKind::contract, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  ", got shape " + shape_string(x.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F forward, D derivative) {
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [derivative](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& in = self.parents[0]->value;
    for (std::size_t i = 0; i < in.size(); ++i) {
      (*g)[i] += self.grad[i] * derivative(in[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

Tensor broadcast_add(const Tensor& x, const Tensor& v) {
  require_rank(x, 3, "broadcast_add");
  require_rank(v, 2, "broadcast_add");
  if (v.dim(0) != x.dim(0) || v.dim(1) != x.dim(1)) {
    fail(ErrorKind::contract, "broadcast_add: shape mismatch " + shape_string(x.shape()) + " vs " +
                                  shape_string(v.shape()));
  }
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t l = 0; l < len; ++l) out[r * len + l] = x.values()[r * len + l] + v.values()[r];
  }
  return make_result(x.shape(), std::move(out), {x, v}, [rows, len](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += self.grad[r * len + l];
        (*g)[r] += acc;
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double in, double) {
        const double cdf = 0.5 * (1.0 + std::erf(in / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * in * in) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + in * pdf;
      });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double out) { return 0.5 / out; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result({}, {acc}, {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (double& v : *g) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) fail(ErrorKind::contract, "mean of an empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double n = static_cast<double>(x.numel());
  return make_result({}, {acc / n}, {x}, [n](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      const double d = self.grad[0] / n;
      for (double& v : *g) v += d;
    }
  });
}

Tensor cumulative_sum(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) fail(ErrorKind::contract, "cumulative_sum: axis out of range");
  const auto s = split_at(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const std::size_t idx = (o * s.n + k) * s.inner + i;
        acc += in[idx];
        out[idx] = acc;
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        double acc = 0.0;
        for (std::size_t k = s.n; k-- > 0;) {
          const std::size_t idx = (o * s.n + k) * s.inner + i;
          acc += self.grad[idx];
          (*g)[idx] += acc;
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorKind::contract, "concat of no tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) fail(ErrorKind::contract, "concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t d = 0; ok && d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) ok = false;
    }
    if (!ok) {
      fail(ErrorKind::contract, "concat: shape mismatch " + shape_string(first) + " vs " +
                                    shape_string(p.shape()));
    }
    shape[axis] += p.dim(axis);
  }
  const auto total = split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total.n * total.inner + offset));
    }
    widths.push_back(w);
    offset += w;
  }
  return make_result(std::move(shape), std::move(out), parts, [total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t o = 0; o < total.outer; ++o) {
          const double* src = self.grad.data() + o * total.n * total.inner + offset;
          double* dst = g->data() + o * widths[p];
          for (std::size_t i = 0; i < widths[p]; ++i) dst[i] += src[i];
        }
      }
      offset += widths[p];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    fail(ErrorKind::contract, "slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                                  ") invalid for shape " + shape_string(x.shape()));
  }
  const auto s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t w = (end - begin) * s.inner;
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>((o * s.n + begin) * s.inner), w,
                out.begin() + static_cast<std::ptrdiff_t>(o * w));
  }
  return make_result(std::move(shape), std::move(out), {x}, [s, begin, w](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = g->data() + (o * s.n + begin) * s.inner;
      const double* src = self.grad.data() + o * w;
      for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    fail(ErrorKind::contract, "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) fail(ErrorKind::contract, "permute: order rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto o : order) {
    if (o >= rank || seen[o]) fail(ErrorKind::contract, "permute: invalid axis order");
    seen[o] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * x.dim(d);
  Shape shape(rank);
  std::vector<std::size_t> strides(rank);  // input stride for each output axis
  for (std::size_t d = 0; d < rank; ++d) {
    shape[d] = x.dim(order[d]);
    strides[d] = in_strides[order[d]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += strides[d];
      if (idx[d] < shape[d]) break;
      src -= strides[d] * shape[d];
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.values()[map[i]];
  return make_result(std::move(shape), std::move(out), {x}, [map = std::move(map)](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < map.size(); ++i) (*g)[map[i]] += self.grad[i];
    }
  });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    fail(ErrorKind::contract, "batched_matmul: shape mismatch " + shape_string(a.shape()) + " vs " +
                                  shape_string(b.shape()));
  }
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto p = static_cast<Eigen::Index>(b.dim(2));
  std::vector<double> out(static_cast<std::size_t>(n * m * p));
  for (Eigen::Index i = 0; i < n; ++i) {
    MapM(out.data() + i * m * p, m, p).noalias() =
        CMapM(a.values().data() + i * m * k, m, k) * CMapM(b.values().data() + i * k * p, k, p);
  }
  return make_result({a.dim(0), a.dim(1), b.dim(2)}, std::move(out), {a, b},
                     [n, m, k, p](Node& self) {
                       const double* av = self.parents[0]->value.data();
                       const double* bv = self.parents[1]->value.data();
                       auto* ga = grad_of(self, 0);
                       auto* gb = grad_of(self, 1);
                       for (Eigen::Index i = 0; i < n; ++i) {
                         CMapM dc(self.grad.data() + i * m * p, m, p);
                         if (ga) {
                           MapM(ga->data() + i * m * k, m, k).noalias() +=
                               dc * CMapM(bv + i * k * p, k, p).transpose();
                         }
                         if (gb) {
                           MapM(gb->data() + i * k * p, k, p).noalias() +=
                               CMapM(av + i * m * k, m, k).transpose() * dc;
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  if (x.rank() < 1 || x.shape().back() != weight.dim(1) || bias.dim(0) != weight.dim(0)) {
    fail(ErrorKind::contract, "linear: shape mismatch x " + shape_string(x.shape()) + " weight " +
                                  shape_string(weight.shape()) + " bias " +
                                  shape_string(bias.shape()));
  }
  const auto in = static_cast<Eigen::Index>(weight.dim(1));
  const auto outf = static_cast<Eigen::Index>(weight.dim(0));
  const auto rows = static_cast<Eigen::Index>(x.numel() / weight.dim(1));
  Shape shape = x.shape();
  shape.back() = weight.dim(0);
  std::vector<double> out(static_cast<std::size_t>(rows * outf));
  MapM y(out.data(), rows, outf);
  y.noalias() = CMapM(x.values().data(), rows, in) * CMapM(weight.values().data(), outf, in).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), outf);
  return make_result(std::move(shape), std::move(out), {x, weight, bias},
                     [rows, in, outf](Node& self) {
                       CMapM dy(self.grad.data(), rows, outf);
                       if (auto* g = grad_of(self, 0)) {
                         MapM(g->data(), rows, in).noalias() +=
                             dy * CMapM(self.parents[1]->value.data(), outf, in);
                       }
                       if (auto* g = grad_of(self, 1)) {
                         MapM(g->data(), outf, in).noalias() +=
                             dy.transpose() * CMapM(self.parents[0]->value.data(), rows, in);
                       }
                       if (auto* g = grad_of(self, 2)) {
                         Eigen::Map<Eigen::RowVectorXd>(g->data(), outf) += dy.colwise().sum();
                       }
                     });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "conv1d");
  require_rank(weight, 3, "conv1d");
  require_rank(bias, 1, "conv1d");
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = weight.dim(0), ksize = weight.dim(2);
  if (weight.dim(1) != cin || bias.dim(0) != cout || ksize % 2 == 0) {
    fail(ErrorKind::contract, "conv1d: shape mismatch x " + shape_string(x.shape()) + " weight " +
                                  shape_string(weight.shape()) + " bias " +
                                  shape_string(bias.shape()));
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ksize / 2);
  const auto L = static_cast<std::ptrdiff_t>(len);
  std::vector<double> out(batch * cout * len);
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* y = out.data() + (b * cout + co) * len;
      std::fill_n(y, len, bias.values()[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xs = xv + (b * cin + ci) * len;
        for (std::size_t k = 0; k < ksize; ++k) {
          const double w = wv[(co * cin + ci) * ksize + k];
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
          const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
          const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - shift);
          for (std::ptrdiff_t l = lo; l < hi; ++l) y[l] += w * xs[l + shift];
        }
      }
    }
  }
  return make_result(
      {batch, cout, len}, std::move(out), {x, weight, bias},
      [batch, cin, cout, len, ksize, pad, L](Node& self) {
        const double* xv = self.parents[0]->value.data();
        const double* wv = self.parents[1]->value.data();
        auto* gx = grad_of(self, 0);
        auto* gw = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < cout; ++co) {
            const double* dy = self.grad.data() + (b * cout + co) * len;
            if (gb) {
              double acc = 0.0;
              for (std::size_t l = 0; l < len; ++l) acc += dy[l];
              (*gb)[co] += acc;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double* xs = xv + (b * cin + ci) * len;
              for (std::size_t k = 0; k < ksize; ++k) {
                const std::size_t widx = (co * cin + ci) * ksize + k;
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
                const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - shift);
                if (gw) {
                  double acc = 0.0;
                  for (std::ptrdiff_t l = lo; l < hi; ++l) acc += dy[l] * xs[l + shift];
                  (*gw)[widx] += acc;
                }
                if (gx) {
                  const double w = wv[widx];
                  double* dx = gx->data() + (b * cin + ci) * len;
                  for (std::ptrdiff_t l = lo; l < hi; ++l) dx[l + shift] += w * dy[l];
                }
              }
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) fail(ErrorKind::contract, "softmax of a scalar");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(in[i] - mx);
      total += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= total;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += dy[i] * y[i];
      for (std::size_t i = 0; i < n; ++i) (*g)[r * n + i] += y[i] * (dy[i] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  if (x.rank() < 1 || x.shape().back() != gamma.dim(0) || beta.dim(0) != gamma.dim(0)) {
    fail(ErrorKind::contract, "layer_norm: shape mismatch x " + shape_string(x.shape()) +
                                  " gamma " + shape_string(gamma.shape()));
  }
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += in[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (in[i] - mu) * inv_std[r];
      out[r * d + i] = gamma.values()[i] * xhat[r * d + i] + beta.values()[i];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = self.parents[1]->value;
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gbeta = grad_of(self, 2);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * d;
          const double* xh = xhat.data() + r * d;
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            if (gg) (*gg)[i] += dy[i] * xh[i];
            if (gbeta) (*gbeta)[i] += dy[i];
            dxhat[i] = dy[i] * gv[i];
            s1 += dxhat[i];
            s2 += dxhat[i] * xh[i];
          }
          if (gx) {
            const double nd = static_cast<double>(d);
            for (std::size_t i = 0; i < d; ++i) {
              (*gx)[r * d + i] += inv_std[r] / nd * (nd * dxhat[i] - s1 - xh[i] * s2);
            }
          }
        }
      });
}

Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormBuffers& buffers, bool training) {
  require_rank(x, 3, "batch_norm_1d");
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (gamma.numel() != ch || beta.numel() != ch || buffers.running_mean.numel() != ch ||
      buffers.running_var.numel() != ch) {
    fail(ErrorKind::contract, "batch_norm_1d: parameter shape mismatch for x " +
                                  shape_string(x.shape()) + " gamma " +
                                  shape_string(gamma.shape()));
  }
  const std::size_t count = batch * len;
  std::vector<double> mean(ch), inv_std(ch);
  const double* xv = x.values().data();
  if (training) {
    if (count < 2) fail(ErrorKind::contract, "batch_norm_1d: training needs >= 2 values per channel");
    auto rm = buffers.running_mean.mutable_values();
    auto rv = buffers.running_var.mutable_values();
    for (std::size_t c = 0; c < ch; ++c) {
      double mu = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t l = 0; l < len; ++l) mu += xv[(b * ch + c) * len + l];
      }
      mu /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t l = 0; l < len; ++l) {
          const double dv = xv[(b * ch + c) * len + l] - mu;
          var += dv * dv;
        }
      }
      const double biased = var / static_cast<double>(count);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(biased + kNormEps);
      rm[c] = (1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * mu;
      rv[c] = (1.0 - kBatchNormMomentum) * rv[c] +
              kBatchNormMomentum * var / static_cast<double>(count - 1);
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = buffers.running_mean.values()[c];
      inv_std[c] = 1.0 / std::sqrt(buffers.running_var.values()[c] + kNormEps);
    }
  }
  std::vector<double> out(x.numel()), xhat(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * len;
      for (std::size_t l = 0; l < len; ++l) {
        xhat[base + l] = (xv[base + l] - mean[c]) * inv_std[c];
        out[base + l] = gamma.values()[c] * xhat[base + l] + beta.values()[c];
      }
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [batch, ch, len, count, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = self.parents[1]->value;
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gbeta = grad_of(self, 2);
        for (std::size_t c = 0; c < ch; ++c) {
          double s1 = 0.0, s2 = 0.0;  // sum dy, sum dy * xhat
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * ch + c) * len;
            for (std::size_t l = 0; l < len; ++l) {
              s1 += self.grad[base + l];
              s2 += self.grad[base + l] * xhat[base + l];
            }
          }
          if (gg) (*gg)[c] += s2;
          if (gbeta) (*gbeta)[c] += s1;
          if (!gx) continue;
          const double scale_c = gv[c] * inv_std[c];
          const double n = static_cast<double>(count);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * ch + c) * len;
            for (std::size_t l = 0; l < len; ++l) {
              const double dy = self.grad[base + l];
              (*gx)[base + l] += training
                                     ? scale_c / n * (n * dy - s1 - xhat[base + l] * s2)
                                     : scale_c * dy;
            }
          }
        }
      });
}

Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads) {
  require_rank(x, 3, "multi_head_attention");
  const std::size_t batch = x.dim(0), len = x.dim(1), width = x.dim(2);
  if (heads == 0 || width % heads != 0) {
    fail(ErrorKind::contract, "multi_head_attention: width " + std::to_string(width) +
                                  " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = width / heads;
  auto split = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {batch, len, heads, head_dim}), {0, 2, 1, 3}),
                   {batch * heads, len, head_dim});
  };
  const Tensor q = split(linear(x, w.wq, w.bq));
  const Tensor k = split(linear(x, w.wk, w.bk));
  const Tensor v = split(linear(x, w.wv, w.bv));
  const Tensor scores =
      scale(batched_matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  const Tensor context = batched_matmul(softmax(scores), v);
  const Tensor merged = reshape(permute(reshape(context, {batch, heads, len, head_dim}), {0, 2, 1, 3}),
                                {batch, len, width});
  return linear(merged, w.wo, w.bo);
}

}  // namespace imudiff::ad
