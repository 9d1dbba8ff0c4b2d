#include <cmath>

#include "pcam/ops.hpp"

namespace pcam {

namespace {

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// C[m x n] = A[m x k] * B[k x n], accumulated over contiguous rows of B.
void matmul_values(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expects rank-2 operands, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1);
  if (b.extent(0) != k) {
    throw DimensionError("matmul: inner extents differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = b.extent(1);
  std::vector<double> out(m * n);
  matmul_values(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tensor y(Shape{m, n}, std::move(out),
           a.requires_grad() || b.requires_grad());
  if (recording({&a, &b})) {
    GradTape::active()->record(
        {"matmul", y.id(), {a, b}, [a, b, m, k, n](const Tensor& g) {
           const double* gv = g.values().data();
           Tensor da, db;
           if (a.requires_grad()) {
             // dA = g * B^T; row dots over contiguous rows of both.
             std::vector<double> d(m * k);
             const double* bv = b.values().data();
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t p = 0; p < k; ++p) {
                 const double* grow = gv + i * n;
                 const double* brow = bv + p * n;
                 double acc = 0.0;
                 for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                 d[i * k + p] = acc;
               }
             da = Tensor(Shape{m, k}, std::move(d));
           }
           if (b.requires_grad()) {
             // dB = A^T * g.
             std::vector<double> d(k * n, 0.0);
             const double* av = a.values().data();
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t p = 0; p < k; ++p) {
                 const double s = av[i * k + p];
                 const double* grow = gv + i * n;
                 double* drow = d.data() + p * n;
                 for (std::size_t j = 0; j < n; ++j) drow[j] += s * grow[j];
               }
             db = Tensor(Shape{k, n}, std::move(d));
           }
           return std::vector<Tensor>{da, db};
         }});
  }
  return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
  }
  const auto& xv = x.values();
  for (double v : xv) {
    if (!std::isfinite(v))
      throw NumericError("softmax: non-finite input");
  }
  std::size_t outer = 1, inner = 1;
  const std::size_t n = x.extent(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);

  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = xv[base];
      for (std::size_t j = 1; j < n; ++j)
        mx = std::max(mx, xv[base + j * inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= denom;
    }
  Tensor y(x.shape(), std::move(out), x.requires_grad());
  if (recording({&x})) {
    GradTape::active()->record(
        {"softmax", y.id(), {x}, [y, outer, n, inner](const Tensor& g) {
           // dx = y * (g - sum_axis(g * y))
           const auto& yv = y.values();
           const auto& gv = g.values();
           std::vector<double> d(yv.size());
           for (std::size_t o = 0; o < outer; ++o)
             for (std::size_t i = 0; i < inner; ++i) {
               const std::size_t base = o * n * inner + i;
               double dot = 0.0;
               for (std::size_t j = 0; j < n; ++j)
                 dot += gv[base + j * inner] * yv[base + j * inner];
               for (std::size_t j = 0; j < n; ++j) {
                 const std::size_t idx = base + j * inner;
                 d[idx] = yv[idx] * (gv[idx] - dot);
               }
             }
           return std::vector<Tensor>{Tensor(g.shape(), std::move(d))};
         }});
  }
  return y;
}

}  // namespace pcam
