#include "gvit/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "gvit/errors.hpp"

namespace gvit {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MutMap = Eigen::Map<RowMatrix>;

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(x.shape()));
  }
}

MutMap as_matrix(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

detail::Node& parent(detail::Node& self, std::size_t i) { return *self.parents[i]; }

void accumulate(detail::Node& target, const std::vector<double>& delta) {
  if (!target.requires_grad) return;
  for (std::size_t i = 0; i < delta.size(); ++i) target.grad[i] += delta[i];
}

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const auto dout = as_matrix(self.grad, m, n);
    if (pa.requires_grad) {
      as_matrix(pa.grad, m, k).noalias() += dout * as_matrix(pb.value, k, n).transpose();
    }
    if (pb.requires_grad) {
      as_matrix(pb.grad, k, n).noalias() += as_matrix(pa.value, m, k).transpose() * dout;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  as_matrix(out, n, m) = as_matrix(x.node()->value, m, n).transpose();
  return make_result({n, m}, std::move(out), {x}, [m, n](detail::Node& self) {
    auto& px = parent(self, 0);
    as_matrix(px.grad, m, n) += as_matrix(self.grad, n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("sub: shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    accumulate(parent(self, 0), self.grad);
    auto& pb = parent(self, 1);
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor add_row_vector(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row_vector");
  const auto m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row_vector: bias " + shape_string(bias.shape()) +
                         " does not fit rows of " + shape_string(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  }
  return make_result(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
    accumulate(parent(self, 0), self.grad);
    auto& pb = parent(self, 1);
    if (pb.requires_grad) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) pb.grad[c] += self.grad[r * n + c];
      }
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    auto& px = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += factor * self.grad[i];
  });
}

Tensor scale_columns(const Tensor& x, const std::vector<double>& factors) {
  require_matrix(x, "scale_columns");
  const auto m = x.rows(), n = x.cols();
  if (factors.size() != n) {
    throw DimensionError("scale_columns: " + std::to_string(factors.size()) +
                         " factors for " + shape_string(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] *= factors[c];
  }
  return make_result(x.shape(), std::move(out), {x}, [m, n, factors](detail::Node& self) {
    auto& px = parent(self, 0);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) px.grad[r * n + c] += factors[c] * self.grad[r * n + c];
    }
  });
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCoeff * x * x * x)));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = std::max(v, 0.0);
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& px = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (px.value[i] > 0.0) px.grad[i] += self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = gelu_value(v);
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& px = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = px.value[i];
      const double inner = kSqrt2OverPi * (v + kGeluCoeff * v * v * v);
      const double t = std::tanh(inner);
      const double d_inner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner;
      px.grad[i] += d * self.grad[i];
    }
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  return kind == Activation::relu ? relu(x) : gelu(x);
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const auto m = x.rows(), n = x.cols();
  const auto in = x.values();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    double* dst = out.data() + r * n;
    const double peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      dst[c] = std::exp(row[c] - peak);
      total += dst[c];
    }
    for (std::size_t c = 0; c < n; ++c) dst[c] /= total;
  }
  return make_result({m, n}, std::move(out), {x}, [m, n](detail::Node& self) {
    auto& px = parent(self, 0);
    // dx = y ⊙ (dy − ⟨dy, y⟩) per row
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) px.grad[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layer_norm_rows");
  if (!(eps > 0.0)) throw DomainError("layer_norm_rows: eps must be positive");
  const auto m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm_rows: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match width of " +
                         shape_string(x.shape()));
  }
  const auto in = x.values();
  const auto g = gain.values();
  const auto b = bias.values();
  std::vector<double> normalized(m * n);
  std::vector<double> inv_std(m);
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double z = (row[c] - mean) * inv_std[r];
      normalized[r * n + c] = z;
      out[r * n + c] = z * g[c] + b[c];
    }
  }
  return make_result(
      {m, n}, std::move(out), {x, gain, bias},
      [m, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = parent(self, 0);
        auto& pg = parent(self, 1);
        auto& pb = parent(self, 2);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < m; ++r) {
          const double* dy = self.grad.data() + r * n;
          const double* z = normalized.data() + r * n;
          if (pg.requires_grad) {
            for (std::size_t c = 0; c < n; ++c) pg.grad[c] += dy[c] * z[c];
          }
          if (pb.requires_grad) {
            for (std::size_t c = 0; c < n; ++c) pb.grad[c] += dy[c];
          }
          if (px.requires_grad) {
            // dz = dy ⊙ gain; dx = inv_std (dz − mean(dz) − z mean(dz ⊙ z))
            double sum_dz = 0.0, sum_dz_z = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dz = dy[c] * pg.value[c];
              sum_dz += dz;
              sum_dz_z += dz * z[c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const double dz = dy[c] * pg.value[c];
              px.grad[r * n + c] += inv_std[r] * (dz - sum_dz * inv_n - z[c] * sum_dz_z * inv_n);
            }
          }
        }
      });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const auto m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ, " + shape_string(p.shape()));
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  return make_result({m, total}, std::move(out), parts, [m, total, widths](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& pk = parent(self, k);
      if (pk.requires_grad) {
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) {
            pk.grad[r * widths[k] + c] += self.grad[r * total + off + c];
          }
        }
      }
      off += widths[k];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const auto n = parts.front().cols();
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: widths differ, " + shape_string(p.shape()));
    sizes.push_back(p.size());
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result({rows, n}, std::move(out), parts, [sizes](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      auto& pk = parent(self, k);
      if (pk.requires_grad) {
        for (std::size_t i = 0; i < sizes[k]; ++i) pk.grad[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const auto m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) throw DimensionError("slice_cols: range out of bounds");
  const auto v = x.values();
  std::vector<double> out(m * count);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(v.data() + r * n + begin, count, out.data() + r * count);
  return make_result({m, count}, std::move(out), {x}, [m, n, begin, count](detail::Node& self) {
    auto& px = parent(self, 0);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < count; ++c) px.grad[r * n + begin + c] += self.grad[r * count + c];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const auto m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > m) throw DimensionError("slice_rows: range out of bounds");
  const auto v = x.values();
  std::vector<double> out(v.begin() + begin * n, v.begin() + (begin + count) * n);
  return make_result({count, n}, std::move(out), {x}, [n, begin](detail::Node& self) {
    auto& px = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[begin * n + i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1}, {total}, {x}, [](detail::Node& self) {
    auto& px = parent(self, 0);
    for (auto& g : px.grad) g += self.grad[0];
  });
}

}  // namespace gvit
