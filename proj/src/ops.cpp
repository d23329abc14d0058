// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#include "rme/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace rme {

using detail::make_result;
using detail::Node;

namespace {

Buffer* input_grad(Node& self, std::size_t k, Tape& tape) {
  auto& in = *self.inputs[k];
  if (!in.requires_grad) return nullptr;
  return &tape.slot(in);
}

MatrixMap as_matrix(Buffer& v, std::size_t rows, std::size_t cols) {
  return MatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Shape with_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::dimension, std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                          " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols();
  if (b.rank() != 2 || b.dim(0) != k) {
    throw Error(ErrorKind::dimension,
                "matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t n = b.dim(1);
  Buffer out(m * n);
  as_matrix(out, m, n).noalias() = a.matrix() * b.matrix();
  return make_result(with_last(a.shape(), n), std::move(out), {&a, &b}, [m, k, n](Node& self, Tape& tape) {
    auto dc = as_matrix(self.grad, m, n);
    if (auto* ga = input_grad(self, 0, tape)) {
      as_matrix(*ga, m, k).noalias() += dc * as_matrix(self.inputs[1]->value, k, n).transpose();
    }
    if (auto* gb = input_grad(self, 1, tape)) {
      as_matrix(*gb, k, n).noalias() += as_matrix(self.inputs[0]->value, m, k).transpose() * dc;
    }
  });
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Buffer out(m * n);
  as_matrix(out, n, m) = a.matrix().transpose();
  return make_result({n, m}, std::move(out), {&a}, [m, n](Node& self, Tape& tape) {
    if (auto* ga = input_grad(self, 0, tape)) {
      as_matrix(*ga, m, n) += as_matrix(self.grad, n, m).transpose();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self, Tape& tape) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = input_grad(self, k, tape)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self, Tape& tape) {
    if (auto* g = input_grad(self, 0, tape)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = input_grad(self, 1, tape)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self, Tape& tape) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* g = input_grad(self, 0, tape)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = input_grad(self, 1, tape)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return make_result(a.shape(), std::move(out), {&a}, [s](Node& self, Tape& tape) {
    if (auto* g = input_grad(self, 0, tape)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
    }
  });
}

Tensor relu(const Tensor& x) {
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result(x.shape(), std::move(out), {&x}, [](Node& self, Tape& tape) {
    if (auto* g = input_grad(self, 0, tape)) {
      const auto& xv = self.inputs[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (xv[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t m = x.rows(), in = x.cols();
  if (weight.rank() != 2 || weight.dim(0) != in) {
    throw Error(ErrorKind::dimension, "linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                                          shape_string(weight.shape()));
  }
  const std::size_t out_dim = weight.dim(1);
  if (bias.size() != out_dim) {
    throw Error(ErrorKind::dimension, "linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                                          shape_string(weight.shape()));
  }
  Buffer out(m * out_dim);
  auto y = as_matrix(out, m, out_dim);
  y.noalias() = x.matrix() * weight.matrix();
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), static_cast<Eigen::Index>(out_dim));
  y.rowwise() += b;
  return make_result(with_last(x.shape(), out_dim), std::move(out), {&x, &weight, &bias},
                     [m, in, out_dim](Node& self, Tape& tape) {
                       auto dy = as_matrix(self.grad, m, out_dim);
                       if (auto* gx = input_grad(self, 0, tape)) {
                         as_matrix(*gx, m, in).noalias() +=
                             dy * as_matrix(self.inputs[1]->value, in, out_dim).transpose();
                       }
                       if (auto* gw = input_grad(self, 1, tape)) {
                         as_matrix(*gw, in, out_dim).noalias() +=
                             as_matrix(self.inputs[0]->value, m, in).transpose() * dy;
                       }
                       if (auto* gb = input_grad(self, 2, tape)) {
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < out_dim; ++c) (*gb)[c] += self.grad[r * out_dim + c];
                         }
                       }
                     });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Buffer out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = x.data().data() + r * n;
    double mx = row[0];
    for (std::size_t c = 0; c < n; ++c) {
      if (!std::isfinite(row[c])) throw Error(ErrorKind::numeric, "softmax_rows: non-finite input");
      mx = std::max(mx, row[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = std::exp(row[c] - mx);
      z += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return make_result(x.shape(), std::move(out), {&x}, [m, n](Node& self, Tape& tape) {
    auto* g = input_grad(self, 0, tape);
    if (!g) return;
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.cols();
  const std::size_t m = x.rows();
  if (gamma.size() != d || beta.size() != d) {
    throw Error(ErrorKind::dimension, "layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  auto xhat = std::make_shared<Buffer>(m * d);
  auto inv_std = std::make_shared<Buffer>(m);
  Buffer out(m * d);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double s = std::sqrt(var + eps);
    // zero spread collapses the row to beta
    const double inv = s > 0.0 ? 1.0 / s : 0.0;
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * inv;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gamma[c] + beta[c];
    }
  }
  return make_result(x.shape(), std::move(out), {&x, &gamma, &beta}, [m, d, xhat, inv_std](Node& self, Tape& tape) {
    const auto& gam = self.inputs[1]->value;
    if (auto* gx = input_grad(self, 0, tape)) {
      Buffer dh(d);
      for (std::size_t r = 0; r < m; ++r) {
        const double* dy = self.grad.data() + r * d;
        const double* h = xhat->data() + r * d;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          dh[c] = dy[c] * gam[c];
          mean_dh += dh[c];
          mean_dh_h += dh[c] * h[c];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        const double inv = (*inv_std)[r];
        for (std::size_t c = 0; c < d; ++c) (*gx)[r * d + c] += inv * (dh[c] - mean_dh - h[c] * mean_dh_h);
      }
    }
    if (auto* gg = input_grad(self, 1, tape)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < d; ++c) (*gg)[c] += self.grad[r * d + c] * (*xhat)[r * d + c];
      }
    }
    if (auto* gb = input_grad(self, 2, tape)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < d; ++c) (*gb)[c] += self.grad[r * d + c];
      }
    }
  });
}

namespace {

// im2col for stride-1 "same" convolution: rows are (channel, ky, kx),
// columns are output pixels.
void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = cols + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          for (std::size_t xo = 0; xo < w; ++xo) {
            const auto sx = static_cast<std::ptrdiff_t>(xo + kx) - pad;
            const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                                sx < static_cast<std::ptrdiff_t>(w);
            dst[y * w + xo] = inside ? x[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, double* x) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = cols + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t xo = 0; xo < w; ++xo) {
            const auto sx = static_cast<std::ptrdiff_t>(xo + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            x[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] += src[y * w + xo];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (x.rank() != 3) throw Error(ErrorKind::dimension, "conv2d: input must be C x H x W, got " + shape_string(x.shape()));
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw Error(ErrorKind::dimension, "conv2d: kernel must be C_out x C_in x k x k, got " + shape_string(kernel.shape()));
  }
  const std::size_t k = kernel.dim(2);
  if (k % 2 == 0) throw Error(ErrorKind::config, "conv2d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = kernel.dim(0);
  if (kernel.dim(1) != cin) {
    throw Error(ErrorKind::dimension,
                "conv2d: kernel " + shape_string(kernel.shape()) + " does not match input " + shape_string(x.shape()));
  }
  if (bias.size() != cout) throw Error(ErrorKind::dimension, "conv2d: bias must have C_out entries");

  const std::size_t patch = cin * k * k, hw = h * w;
  auto cols = std::make_shared<Buffer>(patch * hw);
  im2col(x.data().data(), cin, h, w, k, cols->data());
  Buffer out(cout * hw);
  auto y = as_matrix(out, cout, hw);
  y.noalias() = ConstMatrixMap(kernel.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch)) *
                as_matrix(*cols, patch, hw);
  for (std::size_t c = 0; c < cout; ++c) y.row(static_cast<Eigen::Index>(c)).array() += bias[c];

  return make_result({cout, h, w}, std::move(out), {&x, &kernel, &bias},
                     [cin, h, w, k, cout, patch, hw, cols](Node& self, Tape& tape) {
                       auto dy = as_matrix(self.grad, cout, hw);
                       if (auto* gk = input_grad(self, 1, tape)) {
                         as_matrix(*gk, cout, patch).noalias() += dy * as_matrix(*cols, patch, hw).transpose();
                       }
                       if (auto* gb = input_grad(self, 2, tape)) {
                         for (std::size_t c = 0; c < cout; ++c) (*gb)[c] += dy.row(static_cast<Eigen::Index>(c)).sum();
                       }
                       if (auto* gx = input_grad(self, 0, tape)) {
                         Buffer dcols(patch * hw);
                         as_matrix(dcols, patch, hw).noalias() =
                             as_matrix(self.inputs[1]->value, cout, patch).transpose() * dy;
                         col2im_add(dcols.data(), cin, h, w, k, gx->data());
                       }
                     });
}

Tensor concat_last_axis(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorKind::dimension, "concat_last_axis: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m || p.rank() != parts[0].rank()) {
      throw Error(ErrorKind::dimension, "concat_last_axis: leading shape mismatch " + shape_string(parts[0].shape()) +
                                            " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  Buffer out(m * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(p.data().data() + r * widths[i], widths[i], out.data() + r * total + offset);
    }
    offset += widths[i];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(with_last(parts[0].shape(), total), std::move(out), inputs,
                     [m, total, widths](Node& self, Tape& tape) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         if (auto* g = input_grad(self, i, tape)) {
                           for (std::size_t r = 0; r < m; ++r) {
                             for (std::size_t c = 0; c < widths[i]; ++c) {
                               (*g)[r * widths[i] + c] += self.grad[r * total + off + c];
                             }
                           }
                         }
                         off += widths[i];
                       }
                     });
}

Tensor concat_last_axis(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_last_axis(std::span<const Tensor>(parts));
}

Tensor slice_last_axis(const Tensor& x, std::size_t start, std::size_t width) {
  const std::size_t m = x.rows(), n = x.cols();
  if (width == 0 || start + width > n) {
    throw Error(ErrorKind::dimension, "slice_last_axis: [" + std::to_string(start) + ", " +
                                          std::to_string(start + width) + ") outside " + shape_string(x.shape()));
  }
  Buffer out(m * width);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(x.data().data() + r * n + start, width, out.data() + r * width);
  return make_result(with_last(x.shape(), width), std::move(out), {&x}, [m, n, start, width](Node& self, Tape& tape) {
    if (auto* g = input_grad(self, 0, tape)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < width; ++c) (*g)[r * n + start + c] += self.grad[r * width + c];
      }
    }
  });
}

Tensor gather_cells(const Tensor& features, std::span<const std::size_t> cells) {
  if (features.rank() != 3) {
    throw Error(ErrorKind::dimension, "gather_cells: feature map must be C x H x W, got " + shape_string(features.shape()));
  }
  const std::size_t c = features.dim(0), hw = features.dim(1) * features.dim(2);
  const std::size_t n = cells.size();
  if (n == 0) throw Error(ErrorKind::degenerate, "gather_cells: empty cell list");
  std::vector<std::size_t> idx(cells.begin(), cells.end());
  for (auto cell : idx) {
    if (cell >= hw) throw Error(ErrorKind::range, "gather_cells: cell index outside the feature map");
  }
  Buffer out(n * c);
  const double* f = features.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = f[ch * hw + idx[i]];
  }
  return make_result({n, c}, std::move(out), {&features}, [c, hw, idx = std::move(idx)](Node& self, Tape& tape) {
    if (auto* g = input_grad(self, 0, tape)) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) (*g)[ch * hw + idx[i]] += self.grad[i * c + ch];
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {&x}, [](Node& self, Tape& tape) {
    if (auto* g = input_grad(self, 0, tape)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mse_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorKind::dimension,
                "mse_loss: prediction " + shape_string(pred.shape()) + " vs truth " + shape_string(truth.shape()));
  }
  const std::size_t q = pred.size();
  double s = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return make_result({1}, {s / static_cast<double>(q)}, {&pred, &truth}, [q](Node& self, Tape& tape) {
    const auto& p = self.inputs[0]->value;
    const auto& t = self.inputs[1]->value;
    const double k = 2.0 * self.grad[0] / static_cast<double>(q);
    if (auto* g = input_grad(self, 0, tape)) {
      for (std::size_t i = 0; i < q; ++i) (*g)[i] += k * (p[i] - t[i]);
    }
    if (auto* g = input_grad(self, 1, tape)) {
      for (std::size_t i = 0; i < q; ++i) (*g)[i] -= k * (p[i] - t[i]);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw Error(ErrorKind::dimension, "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {&x}, [](Node& self, Tape& tape) {
    if (auto* g = input_grad(self, 0, tape)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

}  // namespace rme
