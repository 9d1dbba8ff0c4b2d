#include <algorithm>
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

bool any_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
  }
}

// outer * n * inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor y(a.shape(), std::move(out), any_grad({&a, &b}));
  if (recording({&a, &b})) {
    GradTape::active()->record(
        {"add", y.id(), {a, b},
         [na = a.requires_grad(), nb = b.requires_grad()](const Tensor& g) {
           return std::vector<Tensor>{na ? g : Tensor{}, nb ? g : Tensor{}};
         }});
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor y(a.shape(), std::move(out), any_grad({&a, &b}));
  if (recording({&a, &b})) {
    GradTape::active()->record(
        {"sub", y.id(), {a, b},
         [na = a.requires_grad(), nb = b.requires_grad()](const Tensor& g) {
           Tensor db;
           if (nb) {
             std::vector<double> d(g.size());
             const auto& gv = g.values();
             for (std::size_t i = 0; i < d.size(); ++i) d[i] = -gv[i];
             db = Tensor(g.shape(), std::move(d));
           }
           return std::vector<Tensor>{na ? g : Tensor{}, db};
         }});
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor y(a.shape(), std::move(out), any_grad({&a, &b}));
  if (recording({&a, &b})) {
    GradTape::active()->record(
        {"mul", y.id(), {a, b},
         [a, b](const Tensor& g) {
           const auto& gv = g.values();
           Tensor da, db;
           if (a.requires_grad()) {
             std::vector<double> d(g.size());
             const auto& bv2 = b.values();
             for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * bv2[i];
             da = Tensor(g.shape(), std::move(d));
           }
           if (b.requires_grad()) {
             std::vector<double> d(g.size());
             const auto& av2 = a.values();
             for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * av2[i];
             db = Tensor(g.shape(), std::move(d));
           }
           return std::vector<Tensor>{da, db};
         }});
  }
  return y;
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape("divide", a, b);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  Tensor y(a.shape(), std::move(out), any_grad({&a, &b}));
  if (recording({&a, &b})) {
    GradTape::active()->record(
        {"divide", y.id(), {a, b},
         [a, b](const Tensor& g) {
           const auto& gv = g.values();
           const auto& av2 = a.values();
           const auto& bv2 = b.values();
           Tensor da, db;
           if (a.requires_grad()) {
             std::vector<double> d(g.size());
             for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] / bv2[i];
             da = Tensor(g.shape(), std::move(d));
           }
           if (b.requires_grad()) {
             std::vector<double> d(g.size());
             for (std::size_t i = 0; i < d.size(); ++i)
               d[i] = -gv[i] * av2[i] / (bv2[i] * bv2[i]);
             db = Tensor(g.shape(), std::move(d));
           }
           return std::vector<Tensor>{da, db};
         }});
  }
  return y;
}

Tensor scalar_mul(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  Tensor y(a.shape(), std::move(out), a.requires_grad());
  if (recording({&a})) {
    GradTape::active()->record({"scalar_mul", y.id(), {a},
                                [s](const Tensor& g) {
                                  std::vector<double> d(g.size());
                                  const auto& gv = g.values();
                                  for (std::size_t i = 0; i < d.size(); ++i)
                                    d[i] = gv[i] * s;
                                  return std::vector<Tensor>{
                                      Tensor(g.shape(), std::move(d))};
                                }});
  }
  return y;
}

Tensor scalar_add(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  Tensor y(a.shape(), std::move(out), a.requires_grad());
  if (recording({&a})) {
    GradTape::active()->record(
        {"scalar_add", y.id(), {a}, [](const Tensor& g) {
           return std::vector<Tensor>{g};
         }});
  }
  return y;
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(av[i] > 0.0)) {
      throw NumericError("log: input element " + std::to_string(i) +
                         " is not positive (" + std::to_string(av[i]) + ")");
    }
    out[i] = std::log(av[i]);
  }
  Tensor y(a.shape(), std::move(out), a.requires_grad());
  if (recording({&a})) {
    GradTape::active()->record({"log", y.id(), {a},
                                [a](const Tensor& g) {
                                  std::vector<double> d(g.size());
                                  const auto& gv = g.values();
                                  const auto& av2 = a.values();
                                  for (std::size_t i = 0; i < d.size(); ++i)
                                    d[i] = gv[i] / av2[i];
                                  return std::vector<Tensor>{
                                      Tensor(g.shape(), std::move(d))};
                                }});
  }
  return y;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
  Tensor y(x.shape(), std::move(out), x.requires_grad());
  if (recording({&x})) {
    GradTape::active()->record(
        {"leaky_relu", y.id(), {x}, [x, slope](const Tensor& g) {
           std::vector<double> d(g.size());
           const auto& gv = g.values();
           const auto& xv2 = x.values();
           for (std::size_t i = 0; i < d.size(); ++i)
             d[i] = xv2[i] >= 0.0 ? gv[i] : slope * gv[i];
           return std::vector<Tensor>{Tensor(g.shape(), std::move(d))};
         }});
  }
  return y;
}

// ---- reductions ----

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis("reduce_sum", x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* src = xv.data() + (o * s.n + j) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  Tensor y(drop_axis(x.shape(), axis), std::move(out), x.requires_grad());
  if (recording({&x})) {
    GradTape::active()->record(
        {"reduce_sum", y.id(), {x}, [s, shape = x.shape()](const Tensor& g) {
           std::vector<double> d(s.outer * s.n * s.inner);
           const auto& gv = g.values();
           for (std::size_t o = 0; o < s.outer; ++o)
             for (std::size_t j = 0; j < s.n; ++j) {
               double* dst = d.data() + (o * s.n + j) * s.inner;
               const double* src = gv.data() + o * s.inner;
               for (std::size_t i = 0; i < s.inner; ++i) dst[i] = src[i];
             }
           return std::vector<Tensor>{Tensor(shape, std::move(d))};
         }});
  }
  return y;
}

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis("reduce_mean", x.shape(), axis);
  Tensor summed = reduce_sum(x, axis);
  return scalar_mul(summed, 1.0 / static_cast<double>(s.n));
}

Tensor reduce_sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor y(Shape{1}, std::vector<double>{total}, x.requires_grad());
  if (recording({&x})) {
    GradTape::active()->record(
        {"reduce_sum_all", y.id(), {x}, [shape = x.shape()](const Tensor& g) {
           return std::vector<Tensor>{Tensor(shape, g.values()[0])};
         }});
  }
  return y;
}

Tensor reduce_mean_all(const Tensor& x) {
  return scalar_mul(reduce_sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---- shape ----

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(new_shape) + " changes the element count");
  }
  Tensor y = x.view_as(std::move(new_shape));
  if (recording({&x})) {
    GradTape::active()->record({"reshape", y.id(), {x}, [](const Tensor& g) {
                                  return std::vector<Tensor>{g};
                                }});
  }
  return y;
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;)
    strides[i - 1] = strides[i] * shape[i];
  return strides;
}

std::vector<double> permute_values(const std::vector<double>& src,
                                   const Shape& in_shape,
                                   const std::vector<std::size_t>& perm) {
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = row_major_strides(in_shape);
  const std::size_t rank = perm.size();
  std::vector<std::size_t> out_coord(rank, 0);
  std::vector<double> out(src.size());
  std::size_t in_flat = 0;
  for (std::size_t of = 0; of < out.size(); ++of) {
    out[of] = src[in_flat];
    // odometer increment over the output coordinates
    for (std::size_t d = rank; d-- > 0;) {
      out_coord[d]++;
      in_flat += in_strides[perm[d]];
      if (out_coord[d] < out_shape[d]) break;
      in_flat -= out_coord[d] * in_strides[perm[d]];
      out_coord[d] = 0;
    }
  }
  return out;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  if (perm.size() != x.rank()) {
    throw DimensionError("permute: order has " + std::to_string(perm.size()) +
                         " axes for " + shape_str(x.shape()));
  }
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p])
      throw DimensionError("permute: order is not a permutation");
    seen[p] = true;
  }
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.extent(perm[i]);
  Tensor y(out_shape, permute_values(x.values(), x.shape(), perm),
           x.requires_grad());
  if (recording({&x})) {
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    GradTape::active()->record(
        {"permute", y.id(), {x},
         [inverse, out_shape, in_shape = x.shape()](const Tensor& g) {
           return std::vector<Tensor>{Tensor(
               in_shape, permute_values(g.values(), out_shape, inverse))};
         }});
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size())
    throw DimensionError("concat: axis out of range for " + shape_str(first));
  std::size_t total_axis = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size())
      throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.extent(d) != first[d])
        throw DimensionError("concat: extent mismatch on axis " +
                             std::to_string(d));
    }
    total_axis += p.extent(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  const AxisSplit s = split_axis("concat", out_shape, axis);

  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;  // running position along the concat axis
  for (const Tensor& p : parts) {
    const std::size_t np = p.extent(axis);
    const auto& pv = p.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = pv.data() + o * np * s.inner;
      double* dst = out.data() + (o * s.n + offset) * s.inner;
      std::copy(src, src + np * s.inner, dst);
    }
    offset += np;
  }
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.requires_grad();
  Tensor y(out_shape, std::move(out), needs);
  if (needs && GradTape::active()) {
    GradTape::active()->record(
        {"concat", y.id(), parts, [parts, s, axis](const Tensor& g) {
           std::vector<Tensor> grads(parts.size());
           const auto& gv = g.values();
           std::size_t offset = 0;
           for (std::size_t pi = 0; pi < parts.size(); ++pi) {
             const std::size_t np = parts[pi].extent(axis);
             if (parts[pi].requires_grad()) {
               std::vector<double> d(parts[pi].size());
               for (std::size_t o = 0; o < s.outer; ++o) {
                 const double* src = gv.data() + (o * s.n + offset) * s.inner;
                 std::copy(src, src + np * s.inner,
                           d.data() + o * np * s.inner);
               }
               grads[pi] = Tensor(parts[pi].shape(), std::move(d));
             }
             offset += np;
           }
           return grads;
         }});
  }
  return y;
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  const AxisSplit s = split_axis("select", x.shape(), axis);
  if (index >= s.n)
    throw DimensionError("select: index " + std::to_string(index) +
                         " out of range for axis extent " + std::to_string(s.n));
  std::vector<double> out(s.outer * s.inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = xv.data() + (o * s.n + index) * s.inner;
    std::copy(src, src + s.inner, out.data() + o * s.inner);
  }
  Tensor y(drop_axis(x.shape(), axis), std::move(out), x.requires_grad());
  if (recording({&x})) {
    GradTape::active()->record(
        {"select", y.id(), {x},
         [s, index, shape = x.shape()](const Tensor& g) {
           std::vector<double> d(shape_numel(shape), 0.0);
           const auto& gv = g.values();
           for (std::size_t o = 0; o < s.outer; ++o) {
             const double* src = gv.data() + o * s.inner;
             std::copy(src, src + s.inner,
                       d.data() + (o * s.n + index) * s.inner);
           }
           return std::vector<Tensor>{Tensor(shape, std::move(d))};
         }});
  }
  return y;
}

}  // namespace pcam
