#include "etd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "etd/error.hpp"

namespace etd::ops {

namespace {

using detail::Buffer;
using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

bool wants_grad(const Node& self, std::size_t input) {
  return self.inputs[input]->requires_grad;
}

Buffer& input_grad(Node& self, std::size_t input) {
  return self.inputs[input]->grad_buffer();
}

const Buffer& input_data(const Node& self, std::size_t input) {
  return self.inputs[input]->data;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::dimension, std::string(op) + ": shape mismatch " +
                                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    fail(ErrorCode::dimension, std::string(op) + ": expected rank " + std::to_string(rank) +
                                   ", got " + shape_str(x.shape()));
  }
}

std::size_t product(const Shape& shape, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= shape[i];
  return n;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto x = a.data();
  auto y = b.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      auto& g = input_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto x = a.data();
  auto y = b.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      const auto& other = input_data(self, 1 - k);
      auto& g = input_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto in = x.data();
  Buffer out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
  return detail::make_result("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  auto in = x.data();
  double total = std::accumulate(in.begin(), in.end(), 0.0);
  return detail::make_result("sum", {1}, {total}, {x}, [](Node& self) {
    auto& g = input_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  auto in = x.data();
  const double n = static_cast<double>(in.size());
  double total = std::accumulate(in.begin(), in.end(), 0.0);
  return detail::make_result("mean", {1}, {total / n}, {x}, [n](Node& self) {
    auto& g = input_grad(self, 0);
    for (auto& v : g) v += self.grad[0] / n;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorCode::dimension, "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace {

// For every output element in row-major order, the flat offset of its source.
std::vector<std::size_t> permute_map(const Shape& in_shape, const std::vector<std::size_t>& order) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    stride[i] = in_stride[order[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      offset += stride[axis];
      if (++counter[axis] < out_shape[axis]) break;
      offset -= stride[axis] * out_shape[axis];
      counter[axis] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const auto& in_shape = x.shape();
  if (order.size() != in_shape.size()) {
    fail(ErrorCode::dimension, "permute: order rank does not match " + shape_str(in_shape));
  }
  std::vector<bool> used(order.size(), false);
  for (auto axis : order) {
    if (axis >= order.size() || used[axis]) fail(ErrorCode::dimension, "permute: invalid axis order");
    used[axis] = true;
  }
  Shape out_shape(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out_shape[i] = in_shape[order[i]];
  auto map = permute_map(in_shape, order);
  auto in = x.data();
  Buffer out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = in[map[i]];
  return detail::make_result("permute", std::move(out_shape), std::move(out), {x},
                             [map = std::move(map)](Node& self) {
                               auto& g = input_grad(self, 0);
                               for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += self.grad[i];
                             });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  return permute(x, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::dimension, "concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) fail(ErrorCode::dimension, "concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      fail(ErrorCode::dimension, "concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = product(first, 0, axis);
  const std::size_t inner = product(first, axis + 1, first.size());
  const std::size_t out_row = out_shape[axis] * inner;
  Buffer out(outer * out_row);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].data();
    const std::size_t chunk = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_row + col));
    }
    col += chunk;
  }
  return detail::make_result("concat", std::move(out_shape), std::move(out), parts,
                             [extents, outer, inner, out_row](Node& self) {
                               std::size_t col = 0;
                               for (std::size_t k = 0; k < extents.size(); ++k) {
                                 const std::size_t chunk = extents[k] * inner;
                                 if (wants_grad(self, k)) {
                                   auto& g = input_grad(self, k);
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     for (std::size_t i = 0; i < chunk; ++i) {
                                       g[o * chunk + i] += self.grad[o * out_row + col + i];
                                     }
                                   }
                                 }
                                 col += chunk;
                               }
                             });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    fail(ErrorCode::dimension, "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                   ") invalid on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t outer = product(s, 0, axis);
  const std::size_t inner = product(s, axis + 1, s.size());
  const std::size_t in_row = s[axis] * inner;
  const std::size_t chunk = (end - begin) * inner;
  const std::size_t start = begin * inner;
  auto in = x.data();
  Buffer out(outer * chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * in_row + start), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return detail::make_result("slice", std::move(out_shape), std::move(out), {x},
                             [outer, in_row, chunk, start](Node& self) {
                               auto& g = input_grad(self, 0);
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t i = 0; i < chunk; ++i) {
                                   g[o * in_row + start + i] += self.grad[o * chunk + i];
                                 }
                               }
                             });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 2) fail(ErrorCode::dimension, "flatten: need a batch axis, got " + shape_str(x.shape()));
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    fail(ErrorCode::dimension, "linear: cannot multiply " + shape_str(x.shape()) + " by " + shape_str(w.shape()));
  }
  const auto m = static_cast<Eigen::Index>(x.dim(0));
  const auto n = static_cast<Eigen::Index>(x.dim(1));
  const auto p = static_cast<Eigen::Index>(w.dim(1));
  if (bias && (bias->rank() != 1 || bias->dim(0) != w.dim(1))) {
    fail(ErrorCode::dimension, "linear: bias " + shape_str(bias->shape()) + " does not match weights " +
                                   shape_str(w.shape()));
  }
  Buffer out(static_cast<std::size_t>(m * p));
  MapMat o(out.data(), m, p);
  o.noalias() = ConstMapMat(x.data().data(), m, n) * ConstMapMat(w.data().data(), n, p);
  if (bias) {
    auto b = bias->data();
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) o(i, j) += b[static_cast<std::size_t>(j)];
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return detail::make_result("linear", {x.dim(0), w.dim(1)}, std::move(out), inputs, [m, n, p](Node& self) {
    ConstMapMat g(self.grad.data(), m, p);
    if (wants_grad(self, 0)) {
      MapMat gx(input_grad(self, 0).data(), m, n);
      gx.noalias() += g * ConstMapMat(input_data(self, 1).data(), n, p).transpose();
    }
    if (wants_grad(self, 1)) {
      MapMat gw(input_grad(self, 1).data(), n, p);
      gw.noalias() += ConstMapMat(input_data(self, 0).data(), m, n).transpose() * g;
    }
    if (self.inputs.size() > 2 && wants_grad(self, 2)) {
      auto& gb = input_grad(self, 2);
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) gb[static_cast<std::size_t>(j)] += g(i, j);
      }
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b, double alpha) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    fail(ErrorCode::dimension, std::string("bmm: cannot multiply ") + shape_str(a.shape()) + " by " +
                                   (transpose_b ? "transposed " : "") + shape_str(b.shape()));
  }
  const std::size_t groups = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto n = static_cast<Eigen::Index>(transpose_b ? b.dim(1) : b.dim(2));
  const auto a_size = static_cast<std::size_t>(m * k);
  const auto b_size = static_cast<std::size_t>(k * n);
  const auto c_size = static_cast<std::size_t>(m * n);
  Buffer out(groups * c_size);
  for (std::size_t g = 0; g < groups; ++g) {
    ConstMapMat av(a.data().data() + g * a_size, m, k);
    MapMat cv(out.data() + g * c_size, m, n);
    if (transpose_b) {
      cv.noalias() = alpha * (av * ConstMapMat(b.data().data() + g * b_size, n, k).transpose());
    } else {
      cv.noalias() = alpha * (av * ConstMapMat(b.data().data() + g * b_size, k, n));
    }
  }
  Shape shape{groups, static_cast<std::size_t>(m), static_cast<std::size_t>(n)};
  return detail::make_result(
      "bmm", std::move(shape), std::move(out), {a, b},
      [=](Node& self) {
        const bool grad_a = wants_grad(self, 0);
        const bool grad_b = wants_grad(self, 1);
        double* ga = grad_a ? input_grad(self, 0).data() : nullptr;
        double* gb = grad_b ? input_grad(self, 1).data() : nullptr;
        const double* ad = input_data(self, 0).data();
        const double* bd = input_data(self, 1).data();
        for (std::size_t g = 0; g < groups; ++g) {
          ConstMapMat gc(self.grad.data() + g * c_size, m, n);
          ConstMapMat av(ad + g * a_size, m, k);
          if (transpose_b) {
            ConstMapMat bv(bd + g * b_size, n, k);
            if (grad_a) MapMat(ga + g * a_size, m, k).noalias() += alpha * (gc * bv);
            if (grad_b) MapMat(gb + g * b_size, n, k).noalias() += alpha * (gc.transpose() * av);
          } else {
            ConstMapMat bv(bd + g * b_size, k, n);
            if (grad_a) MapMat(ga + g * a_size, m, k).noalias() += alpha * (gc * bv.transpose());
            if (grad_b) MapMat(gb + g * b_size, k, n).noalias() += alpha * (av.transpose() * gc);
          }
        }
      });
}

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t out_h, out_w;
  Conv2dOptions opt;

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

// Unfolds one batch item into rows (c, ki, kj) × output positions. Taps that
// fall into the padding read as zero.
void im2col(const double* x, const ConvGeometry& g, Buffer& col) {
  const std::size_t cols = g.cols();
  col.assign(g.rows() * cols, 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col.data() + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.opt.stride + ki * g.opt.dilation) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.opt.stride + kj * g.opt.dilation) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
            row[oh * g.out_w + ow] = plane[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t cols = g.cols();
  const auto pad = static_cast<std::ptrdiff_t>(g.opt.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = dx + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.opt.stride + ki * g.opt.dilation) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.opt.stride + kj * g.opt.dilation) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

// out[f][p] = sum over r of kernel[f][r] * col[r][p], accumulated in
// ascending r for every output so results match a direct nested loop
// exactly. Blocked over p to keep the column tile cache-resident.
void conv_forward_item(const double* kernel, const Buffer& col, const ConvGeometry& g,
                       double* out) {
  constexpr std::size_t kBlock = 256;
  const std::size_t rows = g.rows();
  const std::size_t cols = g.cols();
  for (std::size_t p0 = 0; p0 < cols; p0 += kBlock) {
    const std::size_t len = std::min(kBlock, cols - p0);
    std::size_t f = 0;
    for (; f + 4 <= g.filters; f += 4) {
      double* o0 = out + f * cols + p0;
      double* o1 = o0 + cols;
      double* o2 = o1 + cols;
      double* o3 = o2 + cols;
      std::fill_n(o0, len, 0.0);
      std::fill_n(o1, len, 0.0);
      std::fill_n(o2, len, 0.0);
      std::fill_n(o3, len, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double k0 = kernel[f * rows + r];
        const double k1 = kernel[(f + 1) * rows + r];
        const double k2 = kernel[(f + 2) * rows + r];
        const double k3 = kernel[(f + 3) * rows + r];
        const double* c = col.data() + r * cols + p0;
        for (std::size_t p = 0; p < len; ++p) {
          o0[p] += k0 * c[p];
          o1[p] += k1 * c[p];
          o2[p] += k2 * c[p];
          o3[p] += k3 * c[p];
        }
      }
    }
    for (; f < g.filters; ++f) {
      double* o = out + f * cols + p0;
      std::fill_n(o, len, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double kv = kernel[f * rows + r];
        const double* c = col.data() + r * cols + p0;
        for (std::size_t p = 0; p < len; ++p) o[p] += kv * c[p];
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dOptions options) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", kernel, 4);
  if (options.stride < 1 || options.dilation < 1) {
    fail(ErrorCode::dimension, "conv2d: stride and dilation must be at least 1");
  }
  if (kernel.dim(1) != x.dim(1)) {
    fail(ErrorCode::dimension, "conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                                   shape_str(x.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0, options};
  const auto span_h = static_cast<std::ptrdiff_t>(g.height + 2 * options.padding) -
                      static_cast<std::ptrdiff_t>(options.dilation * (g.kh - 1) + 1);
  const auto span_w = static_cast<std::ptrdiff_t>(g.width + 2 * options.padding) -
                      static_cast<std::ptrdiff_t>(options.dilation * (g.kw - 1) + 1);
  if (span_h < 0 || span_w < 0) {
    fail(ErrorCode::dimension, "conv2d: output extent < 1 for input " + shape_str(x.shape()) + " and kernel " +
                                   shape_str(kernel.shape()));
  }
  g.out_h = static_cast<std::size_t>(span_h) / options.stride + 1;
  g.out_w = static_cast<std::size_t>(span_w) / options.stride + 1;

  const std::size_t in_item = g.channels * g.height * g.width;
  const std::size_t out_item = g.filters * g.cols();
  Buffer out(g.batch * out_item);
  Buffer col;
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.data().data() + b * in_item, g, col);
    conv_forward_item(kernel.data().data(), col, g, out.data() + b * out_item);
  }
  Shape shape{g.batch, g.filters, g.out_h, g.out_w};
  return detail::make_result("conv2d", std::move(shape), std::move(out), {x, kernel}, [g](Node& self) {
    const bool grad_x = wants_grad(self, 0);
    const bool grad_k = wants_grad(self, 1);
    const auto rows = static_cast<Eigen::Index>(g.rows());
    const auto cols = static_cast<Eigen::Index>(g.cols());
    const auto filters = static_cast<Eigen::Index>(g.filters);
    const std::size_t in_item = g.channels * g.height * g.width;
    const std::size_t out_item = g.filters * g.cols();
    const double* xd = input_data(self, 0).data();
    ConstMapMat kmat(input_data(self, 1).data(), filters, rows);
    Buffer col;
    Buffer dcol(g.rows() * g.cols());
    for (std::size_t b = 0; b < g.batch; ++b) {
      ConstMapMat gout(self.grad.data() + b * out_item, filters, cols);
      if (grad_k) {
        im2col(xd + b * in_item, g, col);
        MapMat(input_grad(self, 1).data(), filters, rows).noalias() +=
            gout * ConstMapMat(col.data(), rows, cols).transpose();
      }
      if (grad_x) {
        MapMat(dcol.data(), rows, cols).noalias() = kmat.transpose() * gout;
        col2im_add(dcol.data(), g, input_grad(self, 0).data() + b * in_item);
      }
    }
  });
}

Tensor channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    fail(ErrorCode::dimension, "channel_bias: bias " + shape_str(bias.shape()) + " does not match " +
                                   shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.numel() / (batch * channels);
  auto in = x.data();
  auto b = bias.data();
  Buffer out(in.begin(), in.end());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* o = out.data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) o[i] += b[c];
    }
  }
  return detail::make_result("channel_bias", x.shape(), std::move(out), {x, bias},
                             [batch, channels, inner](Node& self) {
                               if (wants_grad(self, 0)) {
                                 auto& g = input_grad(self, 0);
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                               }
                               if (wants_grad(self, 1)) {
                                 auto& gb = input_grad(self, 1);
                                 for (std::size_t n = 0; n < batch; ++n) {
                                   for (std::size_t c = 0; c < channels; ++c) {
                                     const double* gr = self.grad.data() + (n * channels + c) * inner;
                                     double acc = 0.0;
                                     for (std::size_t i = 0; i < inner; ++i) acc += gr[i];
                                     gb[c] += acc;
                                   }
                                 }
                               }
                             });
}

Tensor softmax(const Tensor& x) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  auto in = x.data();
  Buffer out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = in.data() + r * width;
    double* yi = out.data() + r * width;
    double peak = xi[0];
    for (std::size_t j = 0; j < width; ++j) {
      if (std::isnan(xi[j])) fail(ErrorCode::numeric, "softmax: NaN input");
      peak = std::max(peak, xi[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      yi[j] = std::exp(xi[j] - peak);
      total += yi[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < width; ++j) yi[j] *= inv;
  }
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, [rows, width](Node& self) {
    auto& g = input_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * width;
      const double* gy = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += gy[j] * y[j];
      double* gx = g.data() + r * width;
      for (std::size_t j = 0; j < width; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
}

namespace {

// p ← row-softmax(scale · q kᵀ)
template <class Out>
void attention_weights(const ConstMapMat& q, const ConstMapMat& k, double scale, Out&& p) {
  p.noalias() = scale * (q * k.transpose());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    auto row = p.row(r).array();
    row = (row - row.maxCoeff()).exp();
    const double total = row.sum();
    if (!std::isfinite(total)) fail(ErrorCode::numeric, "attention: non-finite score");
    row *= 1.0 / total;
  }
}

}  // namespace

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  require_rank("attention", q, 3);
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    fail(ErrorCode::dimension, "attention: q, k, v shapes differ: " + shape_str(q.shape()) + ", " +
                                   shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t groups = q.dim(0);
  const auto len = static_cast<Eigen::Index>(q.dim(1));
  const auto width = static_cast<Eigen::Index>(q.dim(2));
  const auto block = static_cast<std::size_t>(len * width);
  const auto square = static_cast<std::size_t>(len * len);
  const bool recording = grad_mode_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());

  // The weights are kept for the backward pass only when it will happen.
  auto weights = std::make_shared<Buffer>(recording ? groups * square : square);
  Buffer out(q.numel());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t at = g * block;
    MapMat p(weights->data() + (recording ? g * square : 0), len, len);
    attention_weights(ConstMapMat(q.data().data() + at, len, width), ConstMapMat(k.data().data() + at, len, width),
                      scale, p);
    MapMat(out.data() + at, len, width).noalias() = p * ConstMapMat(v.data().data() + at, len, width);
  }
  if (!recording) weights.reset();
  return detail::make_result(
      "scaled_dot_attention", q.shape(), std::move(out), {q, k, v}, [=](Node& self) {
        const bool gq = wants_grad(self, 0), gk = wants_grad(self, 1), gv = wants_grad(self, 2);
        double* dq = gq ? input_grad(self, 0).data() : nullptr;
        double* dk = gk ? input_grad(self, 1).data() : nullptr;
        double* dv = gv ? input_grad(self, 2).data() : nullptr;
        const double* qd = input_data(self, 0).data();
        const double* kd = input_data(self, 1).data();
        const double* vd = input_data(self, 2).data();
        RowMat dp(len, len);
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t at = g * block;
          ConstMapMat qm(qd + at, len, width), km(kd + at, len, width), vm(vd + at, len, width);
          ConstMapMat dout(self.grad.data() + at, len, width);
          ConstMapMat p(weights->data() + g * square, len, len);
          if (gv) MapMat(dv + at, len, width).noalias() += p.transpose() * dout;
          if (!gq && !gk) continue;
          dp.noalias() = dout * vm.transpose();
          for (Eigen::Index r = 0; r < len; ++r) {
            auto d = dp.row(r).array();
            const auto pr = p.row(r).array();
            d = pr * (d - (d * pr).sum());
          }
          if (gq) MapMat(dq + at, len, width).noalias() += scale * (dp * km);
          if (gk) MapMat(dk + at, len, width).noalias() += scale * (dp.transpose() * qm);
        }
      });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  const std::size_t n_slopes = slope.numel();
  std::size_t channels = 1;
  std::size_t inner = x.numel();
  if (n_slopes != 1) {
    if (x.rank() < 2 || x.dim(1) != n_slopes) {
      fail(ErrorCode::dimension, "prelu: slope " + shape_str(slope.shape()) + " does not match " +
                                     shape_str(x.shape()));
    }
    channels = n_slopes;
    inner = x.numel() / (x.dim(0) * channels);
  }
  // slope index of flat element i: (i / inner) % channels
  auto in = x.data();
  auto a = slope.data();
  Buffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double s = a[(i / inner) % channels];
    out[i] = in[i] >= 0.0 ? in[i] : s * in[i];
  }
  return detail::make_result("prelu", x.shape(), std::move(out), {x, slope}, [channels, inner](Node& self) {
    const auto& xin = input_data(self, 0);
    const auto& a = input_data(self, 1);
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += xin[i] >= 0.0 ? self.grad[i] : a[(i / inner) % channels] * self.grad[i];
      }
    }
    if (wants_grad(self, 1)) {
      auto& ga = input_grad(self, 1);
      for (std::size_t i = 0; i < xin.size(); ++i) {
        if (xin[i] < 0.0) ga[(i / inner) % channels] += xin[i] * self.grad[i];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t begin_axis, double eps) {
  const Shape& s = x.shape();
  if (begin_axis >= s.size()) fail(ErrorCode::dimension, "layer_norm: begin axis out of range for " + shape_str(s));
  const Shape extent(s.begin() + static_cast<std::ptrdiff_t>(begin_axis), s.end());
  if (gain.shape() != extent || bias.shape() != extent) {
    fail(ErrorCode::dimension, "layer_norm: gain/bias must have shape " + shape_str(extent) + ", got " +
                                   shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const std::size_t width = shape_numel(extent);
  const std::size_t rows = x.numel() / width;
  auto in = x.data();
  auto ga = gain.data();
  auto be = bias.data();
  Buffer out(in.size());
  Buffer mean_of(rows), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = in.data() + r * width;
    double m = 0.0;
    for (std::size_t j = 0; j < width; ++j) m += xi[j];
    m /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (xi[j] - m) * (xi[j] - m);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean_of[r] = m;
    inv_std[r] = inv;
    double* yi = out.data() + r * width;
    for (std::size_t j = 0; j < width; ++j) yi[j] = (xi[j] - m) * inv * ga[j] + be[j];
  }
  return detail::make_result(
      "layer_norm", s, std::move(out), {x, gain, bias},
      [rows, width, mean_of = std::move(mean_of), inv_std = std::move(inv_std)](Node& self) {
        const auto& xin = input_data(self, 0);
        const auto& ga = input_data(self, 1);
        const bool grad_x = wants_grad(self, 0);
        double* gx = grad_x ? input_grad(self, 0).data() : nullptr;
        double* gg = wants_grad(self, 1) ? input_grad(self, 1).data() : nullptr;
        double* gb = wants_grad(self, 2) ? input_grad(self, 2).data() : nullptr;
        const double n = static_cast<double>(width);
        Buffer xhat(width), dxhat(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xi = xin.data() + r * width;
          const double* gy = self.grad.data() + r * width;
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            xhat[j] = (xi[j] - mean_of[r]) * inv_std[r];
            dxhat[j] = gy[j] * ga[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xhat[j];
            if (gg) gg[j] += gy[j] * xhat[j];
            if (gb) gb[j] += gy[j];
          }
          if (grad_x) {
            double* gxi = gx + r * width;
            for (std::size_t j = 0; j < width; ++j) {
              gxi[j] += inv_std[r] / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) {
    fail(ErrorCode::dimension, "cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                   shape_str(logits.shape()));
  }
  std::vector<int> y(labels.begin(), labels.end());
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      fail(ErrorCode::input, "cross_entropy: label " + std::to_string(label) + " out of range");
    }
  }
  auto z = logits.data();
  Buffer probs(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* zi = z.data() + i * classes;
    double peak = *std::max_element(zi, zi + classes);
    if (std::isnan(peak)) fail(ErrorCode::numeric, "cross_entropy: NaN logit");
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(zi[j] - peak);
    const double log_denom = std::log(denom) + peak;
    for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] = std::exp(zi[j] - log_denom);
    total += log_denom - zi[static_cast<std::size_t>(y[i])];
  }
  const double loss = total / static_cast<double>(batch);
  return detail::make_result("cross_entropy", {1}, {loss}, {logits},
                             [batch, classes, y = std::move(y), probs = std::move(probs)](Node& self) {
                               auto& g = input_grad(self, 0);
                               const double scale = self.grad[0] / static_cast<double>(batch);
                               for (std::size_t i = 0; i < batch; ++i) {
                                 for (std::size_t j = 0; j < classes; ++j) {
                                   const double target = static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0;
                                   g[i * classes + j] += scale * (probs[i * classes + j] - target);
                                 }
                               }
                             });
}

}  // namespace etd::ops
