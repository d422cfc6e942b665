#include "spiro/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "spiro/errors.hpp"

namespace spiro::tc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::shape,
          std::string(op) + ": shapes " + a.value().shape_string() + " and " +
              b.value().shape_string() + " differ");
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& w = weight.value();
  require(w.rank() == 2, ErrorKind::shape,
          "linear: weight must be [out,in], got " + w.shape_string());
  const std::size_t out = w.dim(0);
  const std::size_t in = w.dim(1);
  const Tensor& xv = x.value();
  require(xv.rank() >= 1 && xv.shape().back() == in, ErrorKind::shape,
          "linear: input " + xv.shape_string() + " does not match weight " + w.shape_string());
  if (bias.defined()) {
    require(bias.value().rank() == 1 && bias.value().dim(0) == out, ErrorKind::shape,
            "linear: bias " + bias.value().shape_string() + " does not match weight " +
                w.shape_string());
  }
  const std::size_t rows = xv.size() / in;
  Shape out_shape = xv.shape();
  out_shape.back() = out;
  Tensor y(out_shape, 0.0);
  {
    MatMap ym = as_matrix(y, rows, out);
    ym.noalias() = as_matrix(xv, rows, in) * as_matrix(w, out, in).transpose();
    if (bias.defined()) ym.rowwise() += ConstVecMap(bias.value().data(), out).transpose();
  }
  std::vector<Var> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_node(std::move(y), parents, [rows, in, out](Node& self) {
    const auto gy = as_matrix(static_cast<const Tensor&>(self.grad), rows, out);
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    if (xn.requires_grad) {
      as_matrix(xn.ensure_grad(), rows, in).noalias() +=
          gy * as_matrix(static_cast<const Tensor&>(wn.value), out, in);
    }
    if (wn.requires_grad) {
      as_matrix(wn.ensure_grad(), out, in).noalias() +=
          gy.transpose() * as_matrix(static_cast<const Tensor&>(xn.value), rows, in);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      VecMap(self.parents[2]->ensure_grad().data(), out) += gy.colwise().sum().transpose();
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_node(std::move(y), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor y = x.value();
  for (double& v : y.storage()) v *= factor;
  return make_node(std::move(y), {x}, [factor](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var gelu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] / std::numbers::sqrt2));
  }
  return make_node(std::move(y), {x}, [](Node& self) {
    Node& xn = *self.parents[0];
    Tensor& g = xn.ensure_grad();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = xn.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
      g[i] += self.grad[i] * (cdf + z * pdf);
    }
  });
}

Var dropout(const Var& x, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, ErrorKind::parameter, "dropout probability must lie in [0, 1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = keep(rng) ? inv : 0.0;
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return make_node(std::move(y), {x}, [mask = std::move(mask)](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * self.grad[i];
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1 && xv.cols() >= 1, ErrorKind::shape, "layer_norm: empty last axis");
  const std::size_t d = xv.cols();
  const std::size_t rows = xv.rows();
  require(gain.value().size() == d && bias.value().size() == d, ErrorKind::shape,
          "layer_norm: gain/bias must have length " + std::to_string(d));
  Tensor y(xv.shape(), 0.0);
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * inv;
      xhat[r * d + j] = h;
      y[r * d + j] = gain.value()[j] * h + bias.value()[j];
    }
  }
  return make_node(std::move(y), {x, gain, bias},
                   [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                     Node& xn = *self.parents[0];
                     Node& gn = *self.parents[1];
                     Node& bn = *self.parents[2];
                     std::vector<double> dxhat(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* gy = self.grad.data() + r * d;
                       const double* h = xhat.data() + r * d;
                       if (gn.requires_grad) {
                         Tensor& gg = gn.ensure_grad();
                         for (std::size_t j = 0; j < d; ++j) gg[j] += gy[j] * h[j];
                       }
                       if (bn.requires_grad) {
                         Tensor& gb = bn.ensure_grad();
                         for (std::size_t j = 0; j < d; ++j) gb[j] += gy[j];
                       }
                       if (!xn.requires_grad) continue;
                       double mean_d = 0.0;
                       double mean_dh = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         dxhat[j] = gy[j] * gn.value[j];
                         mean_d += dxhat[j];
                         mean_dh += dxhat[j] * h[j];
                       }
                       mean_d /= static_cast<double>(d);
                       mean_dh /= static_cast<double>(d);
                       double* gx = xn.ensure_grad().data() + r * d;
                       for (std::size_t j = 0; j < d; ++j) {
                         gx[j] += inv_std[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
                       }
                     }
                   });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::shape, "concat_rows: no parts");
  const std::size_t d = parts.front().value().cols();
  std::size_t total_rows = 0;
  for (const Var& p : parts) {
    require(p.value().cols() == d && p.value().rank() <= 2, ErrorKind::shape,
            "concat_rows: part " + p.value().shape_string() + " does not have " +
                std::to_string(d) + " columns");
    total_rows += p.value().rows();
  }
  Tensor y(Shape{total_rows, d}, 0.0);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), y.data() + offset);
    offset += p.value().size();
  }
  return make_node(std::move(y), parts, [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  const Tensor& xv = x.value();
  require(xv.rank() == 2, ErrorKind::shape, "gather_rows: input must be a matrix");
  const std::size_t d = xv.dim(1);
  Tensor y(Shape{rows.size(), d}, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < xv.dim(0), ErrorKind::shape,
            "gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                xv.shape_string());
    std::copy_n(xv.data() + rows[i] * d, d, y.data() + i * d);
  }
  return make_node(std::move(y), {x}, [rows, d](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
    }
  });
}

Var row(const Var& x, std::size_t i) {
  const Tensor& xv = x.value();
  require(xv.rank() == 2 && i < xv.dim(0), ErrorKind::shape,
          "row: index " + std::to_string(i) + " out of range for " + xv.shape_string());
  const std::size_t d = xv.dim(1);
  Tensor y(Shape{d}, std::vector<double>(xv.data() + i * d, xv.data() + (i + 1) * d));
  return make_node(std::move(y), {x}, [i, d](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[j];
  });
}

AttentionResult masked_multi_head_attention(const Var& q, const Var& k, const Var& v,
                                            const std::vector<bool>& mask, std::size_t heads) {
  const Tensor& qv = q.value();
  require(qv.rank() == 2, ErrorKind::shape, "attention: Q must be [L,d], got " + qv.shape_string());
  require(k.shape() == qv.shape() && v.shape() == qv.shape(), ErrorKind::shape,
          "attention: Q " + qv.shape_string() + ", K " + k.value().shape_string() + ", V " +
              v.value().shape_string() + " must agree");
  const std::size_t len = qv.dim(0);
  const std::size_t d = qv.dim(1);
  require(heads >= 1 && d % heads == 0, ErrorKind::shape,
          "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
              " heads");
  require(mask.size() == len, ErrorKind::shape,
          "attention: mask length " + std::to_string(mask.size()) + " != sequence length " +
              std::to_string(len));
  std::size_t open_keys = 0;
  for (bool m : mask) open_keys += m ? 0 : 1;
  require(open_keys > 0, ErrorKind::degenerate, "attention: every key position is masked");

  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor attn(Shape{heads, len, len}, 0.0);
  Tensor out(Shape{len, d}, 0.0);
  const auto Q = as_matrix(qv, len, d);
  const auto K = as_matrix(k.value(), len, d);
  const auto V = as_matrix(v.value(), len, d);
  auto O = as_matrix(out, len, d);
  const auto L = static_cast<Eigen::Index>(len);
  const auto H = static_cast<Eigen::Index>(dh);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * dh);
    auto A = MatMap(attn.data() + h * len * len, L, L);
    A.noalias() = Q.middleCols(c0, H) * K.middleCols(c0, H).transpose();
    for (std::size_t i = 0; i < len; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        if (mask[j]) continue;
        A(i, j) *= inv_scale;
        row_max = std::max(row_max, A(i, j));
      }
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = mask[j] ? 0.0 : std::exp(A(i, j) - row_max);
        A(i, j) = e;
        total += e;
      }
      A.row(i) /= total;
    }
    O.middleCols(c0, H).noalias() = A * V.middleCols(c0, H);
  }

  AttentionResult result;
  result.attention = attn;
  result.output = make_node(
      std::move(out), {q, k, v},
      [attn = std::move(attn), len, d, dh, heads, inv_scale](Node& self) {
        Node& qn = *self.parents[0];
        Node& kn = *self.parents[1];
        Node& vn = *self.parents[2];
        const auto L = static_cast<Eigen::Index>(len);
        const auto H = static_cast<Eigen::Index>(dh);
        const auto G = as_matrix(static_cast<const Tensor&>(self.grad), len, d);
        const auto Q = as_matrix(static_cast<const Tensor&>(qn.value), len, d);
        const auto K = as_matrix(static_cast<const Tensor&>(kn.value), len, d);
        const auto V = as_matrix(static_cast<const Tensor&>(vn.value), len, d);
        RowMat dA(L, L);
        RowMat dS(L, L);
        for (std::size_t h = 0; h < heads; ++h) {
          const auto c0 = static_cast<Eigen::Index>(h * dh);
          const auto A = ConstMatMap(attn.data() + h * len * len, L, L);
          const auto Gh = G.middleCols(c0, H);
          if (vn.requires_grad) {
            as_matrix(vn.ensure_grad(), len, d).middleCols(c0, H).noalias() += A.transpose() * Gh;
          }
          if (!qn.requires_grad && !kn.requires_grad) continue;
          dA.noalias() = Gh * V.middleCols(c0, H).transpose();
          // Softmax Jacobian; masked entries have A = 0 and receive nothing.
          for (Eigen::Index i = 0; i < L; ++i) {
            const double dot = A.row(i).dot(dA.row(i));
            dS.row(i) = A.row(i).cwiseProduct((dA.row(i).array() - dot).matrix());
          }
          dS *= inv_scale;
          if (qn.requires_grad) {
            as_matrix(qn.ensure_grad(), len, d).middleCols(c0, H).noalias() +=
                dS * K.middleCols(c0, H);
          }
          if (kn.requires_grad) {
            as_matrix(kn.ensure_grad(), len, d).middleCols(c0, H).noalias() +=
                dS.transpose() * Q.middleCols(c0, H);
          }
        }
      });
  return result;
}

Var softmax_cross_entropy(const Var& logits, std::size_t label) {
  const Tensor& z = logits.value();
  const std::size_t c = z.size();
  require(c >= 2, ErrorKind::shape, "softmax_cross_entropy needs at least two classes");
  require(label < c, ErrorKind::parameter,
          "label " + std::to_string(label) + " out of range for " + std::to_string(c) +
              " classes");
  const double zmax = *std::max_element(z.storage().begin(), z.storage().end());
  double total = 0.0;
  for (double x : z.storage()) total += std::exp(x - zmax);
  const double lse = zmax + std::log(total);
  std::vector<double> prob(c);
  for (std::size_t i = 0; i < c; ++i) prob[i] = std::exp(z[i] - lse);
  return make_node(Tensor::scalar(lse - z[label]), {logits},
                   [prob = std::move(prob), label](Node& self) {
                     Tensor& g = self.parents[0]->ensure_grad();
                     const double up = self.grad[0];
                     for (std::size_t i = 0; i < prob.size(); ++i) {
                       g[i] += up * (prob[i] - (i == label ? 1.0 : 0.0));
                     }
                   });
}

Var sigmoid_cross_entropy(const Var& logit, int label) {
  require(logit.value().size() == 1, ErrorKind::shape,
          "sigmoid_cross_entropy expects one logit, got " + logit.value().shape_string());
  require(label == 0 || label == 1, ErrorKind::parameter, "binary label must be 0 or 1");
  const double z = logit.value()[0];
  const double y = label;
  // log(1 + e^z) - y z, arranged to avoid overflow.
  const double loss = std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
  const double grad = sigmoid(z) - y;
  return make_node(Tensor::scalar(loss), {logit}, [grad](Node& self) {
    self.parents[0]->ensure_grad()[0] += self.grad[0] * grad;
  });
}

Var sigmoid_cross_entropy_mean(const Var& logits, const std::vector<int>& labels) {
  const Tensor& z = logits.value();
  require(z.size() == labels.size() && !labels.empty(), ErrorKind::shape,
          "sigmoid_cross_entropy_mean: " + std::to_string(z.size()) + " logits vs " +
              std::to_string(labels.size()) + " labels");
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double loss = 0.0;
  std::vector<double> grad(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::parameter, "binary label must be 0 or 1");
    const double y = labels[i];
    loss += std::max(z[i], 0.0) - y * z[i] + std::log1p(std::exp(-std::abs(z[i])));
    grad[i] = (sigmoid(z[i]) - y) * inv_n;
  }
  return make_node(Tensor::scalar(loss * inv_n), {logits}, [grad = std::move(grad)](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < grad.size(); ++i) g[i] += self.grad[0] * grad[i];
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.size() == x.value().size(), ErrorKind::shape,
          "weighted_sum: weights " + weights.shape_string() + " vs input " +
              x.value().shape_string());
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.value()[i];
  return make_node(Tensor::scalar(s), {x}, [weights](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

}  // namespace spiro::tc
