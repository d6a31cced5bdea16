#include "bclab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "bclab/mixing.hpp"
#include "bclab/report.hpp"

namespace bclab {

void FeatureMatrix::validate() const {
  if (rows.rank() != 2) throw ShapeError("feature matrix must be 2-D, got " + shape_str(rows.shape()));
  if (rows.dim(0) != labels.size()) {
    throw ShapeError("feature matrix has " + std::to_string(rows.dim(0)) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
}

FeatureMatrix make_feature_matrix(std::vector<std::vector<double>> rows,
                                  std::vector<std::uint32_t> labels, Split split, std::string tap) {
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows[0].size() : 0;
  std::vector<double> flat;
  flat.reserve(n * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("feature rows have unequal lengths");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  FeatureMatrix f{Tensor64(Shape{n, d}, std::move(flat)), std::move(labels), split, std::move(tap)};
  f.validate();
  return f;
}

namespace {

template <typename Fn>
void for_each_batch(const Parameters<float>& params, std::span<const Tensor32> images,
                    std::size_t end_layer, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<Tensor32> chunk(images.begin() + start, images.begin() + end);
    fn(start, infer_range(params, stack(chunk), 0, end_layer));
  }
}

}  // namespace

FeatureMatrix extract_features(const Parameters<float>& params, std::span<const Tensor32> images,
                               std::span<const std::uint32_t> labels, const std::string& tap,
                               Split split, std::size_t batch_size) {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("extract_features: image and label counts differ");
  }
  const std::size_t boundary = params.config.tap_boundary(tap);
  const std::size_t d = shape_numel(params.config.boundary_shapes()[boundary]);
  FeatureMatrix f{Tensor64(Shape{images.size(), d}),
                  std::vector<std::uint32_t>(labels.begin(), labels.end()), split, tap};
  for_each_batch(params, images, boundary, batch_size, [&](std::size_t start, const Tensor32& act) {
    for (std::size_t j = 0; j < act.size(); ++j) f.rows[start * d + j] = act[j];
  });
  return f;
}

SymmetricEigen jacobi_eigen(const Tensor64& symmetric, double tolerance, std::size_t max_sweeps) {
  if (symmetric.rank() != 2 || symmetric.dim(0) != symmetric.dim(1)) {
    throw ShapeError("jacobi_eigen: expected a square matrix, got " + shape_str(symmetric.shape()));
  }
  const std::size_t n = symmetric.dim(0);
  Tensor64 a = symmetric;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = s;
      a(j, i) = s;
    }
  }
  Tensor64 v(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double total = 0.0;
  for (double x : a.data()) total += x * x;
  const double scale = std::sqrt(total);

  SymmetricEigen out;
  for (; out.sweeps < max_sweeps; ++out.sweeps) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * a(i, j) * a(i, j);
    if (std::sqrt(off) <= tolerance * scale) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  out.values.resize(n);
  out.vectors = Tensor64(Shape{n, n});
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

Tensor64 PcaModel::project(const Tensor64& rows) const {
  const std::size_t dims = components.dim(0), d = mean.size();
  if (rows.rank() != 2 || rows.dim(1) != d) {
    throw ShapeError("pca project: rows " + shape_str(rows.shape()) + " vs " + std::to_string(d) +
                     " features");
  }
  Tensor64 out(Shape{rows.dim(0), dims});
  for (std::size_t i = 0; i < rows.dim(0); ++i) {
    const auto p = project(std::span<const double>(rows.raw() + i * d, d));
    std::copy(p.begin(), p.end(), out.raw() + i * dims);
  }
  return out;
}

std::vector<double> PcaModel::project(std::span<const double> row) const {
  const std::size_t dims = components.dim(0), d = mean.size();
  if (row.size() != d) throw ShapeError("pca project: row length mismatch");
  std::vector<double> out(dims, 0.0);
  for (std::size_t c = 0; c < dims; ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += components(c, j) * (row[j] - mean[j]);
    out[c] = acc;
  }
  return out;
}

PcaModel pca_fit(const FeatureMatrix& f, std::size_t dims) {
  f.validate();
  const std::size_t n = f.count(), d = f.dim();
  if (dims == 0 || dims > d) {
    throw std::invalid_argument("pca: dims must lie in 1.." + std::to_string(d));
  }
  if (n < dims) {
    throw std::invalid_argument("pca: " + std::to_string(n) + " rows cannot support " +
                                std::to_string(dims) + " components");
  }
  PcaModel model;
  model.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += f.rows(i, j);
  for (auto& m : model.mean) m /= static_cast<double>(n);

  Tensor64 xc(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) xc(i, j) = f.rows(i, j) - model.mean[j];
  const double inv_n = 1.0 / static_cast<double>(n);

  model.components = Tensor64(Shape{dims, d});
  model.gram = d > n;
  if (!model.gram) {
    Tensor64 cov(Shape{d, d});
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += xc(i, a) * xc(i, b);
        cov(a, b) = cov(b, a) = acc * inv_n;
      }
    }
    for (std::size_t j = 0; j < d; ++j) model.total_variance += cov(j, j);
    const auto eig = jacobi_eigen(cov);
    for (std::size_t c = 0; c < dims; ++c) {
      model.eigenvalues.push_back(std::max(eig.values[c], 0.0));
      for (std::size_t j = 0; j < d; ++j) model.components(c, j) = eig.vectors(j, c);
    }
  } else {
    // Covariance and Gram matrix share their non-zero spectrum; a Gram
    // eigenvector u maps to the covariance eigenvector Xc^T u / sqrt(n lambda).
    Tensor64 gram(Shape{n, n});
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a; b < n; ++b) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += xc(a, j) * xc(b, j);
        gram(a, b) = gram(b, a) = acc * inv_n;
      }
    }
    for (std::size_t i = 0; i < n; ++i) model.total_variance += gram(i, i);
    const auto eig = jacobi_eigen(gram);
    for (std::size_t c = 0; c < dims; ++c) {
      const double lambda = std::max(eig.values[c], 0.0);
      model.eigenvalues.push_back(lambda);
      if (lambda <= 1e-14 * std::max(model.total_variance, 1e-300)) continue;
      std::vector<double> comp(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = eig.vectors(i, c);
        for (std::size_t j = 0; j < d; ++j) comp[j] += xc(i, j) * u;
      }
      double norm = 0.0;
      for (double x : comp) norm += x * x;
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < d; ++j) model.components(c, j) = comp[j] / norm;
    }
  }

  for (std::size_t c = 0; c < dims; ++c) {
    std::size_t big = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(model.components(c, j)) > std::abs(model.components(c, big))) big = j;
    }
    if (model.components(c, big) < 0) {
      for (std::size_t j = 0; j < d; ++j) model.components(c, j) = -model.components(c, j);
    }
    model.explained_ratio.push_back(
        model.total_variance > 0.0 ? model.eigenvalues[c] / model.total_variance : 0.0);
  }
  return model;
}

PcaProjection pca_project(const FeatureMatrix& f, std::size_t dims) {
  PcaProjection out{pca_fit(f, dims), {}};
  out.coords = out.model.project(f.rows);
  return out;
}

namespace {

// In-place Cholesky of a symmetric matrix; false if a pivot is not positive.
bool cholesky(Tensor64& a) {
  const std::size_t n = a.dim(0);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= a(j, k) * a(j, k);
    if (!(diag > 0.0)) return false;
    const double l = std::sqrt(diag);
    a(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
    }
  }
  return true;
}

std::vector<double> cholesky_solve(const Tensor64& l, std::vector<double> b) {
  const std::size_t n = l.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l(i, k) * b[k];
    b[i] /= l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= l(k, i) * b[k];
    b[i] /= l(i, i);
  }
  return b;
}

}  // namespace

FisherResult fisher_criterion(const FeatureMatrix& f, std::uint32_t c1, std::uint32_t c2) {
  f.validate();
  if (c1 == c2) throw std::invalid_argument("fisher: the two classes must differ");
  const std::size_t d = f.dim();
  std::vector<double> m1(d, 0.0), m2(d, 0.0);
  std::size_t n1 = 0, n2 = 0;
  for (std::size_t i = 0; i < f.count(); ++i) {
    if (f.labels[i] != c1 && f.labels[i] != c2) continue;
    auto& m = f.labels[i] == c1 ? m1 : m2;
    (f.labels[i] == c1 ? n1 : n2)++;
    const auto r = f.row(i);
    for (std::size_t j = 0; j < d; ++j) m[j] += r[j];
  }
  if (n1 < 2 || n2 < 2) {
    throw std::invalid_argument("fisher: classes " + std::to_string(c1) + " and " +
                                std::to_string(c2) + " need at least 2 examples each (have " +
                                std::to_string(n1) + ", " + std::to_string(n2) + ")");
  }
  for (auto& x : m1) x /= static_cast<double>(n1);
  for (auto& x : m2) x /= static_cast<double>(n2);

  Tensor64 sw(Shape{d, d});
  std::vector<double> dev(d);
  for (std::size_t i = 0; i < f.count(); ++i) {
    if (f.labels[i] != c1 && f.labels[i] != c2) continue;
    const auto& m = f.labels[i] == c1 ? m1 : m2;
    const auto r = f.row(i);
    for (std::size_t j = 0; j < d; ++j) dev[j] = r[j] - m[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) sw(a, b) += dev[a] * dev[b];
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < a; ++b) sw(a, b) = sw(b, a);

  std::vector<double> delta(d);
  bool same = true;
  for (std::size_t j = 0; j < d; ++j) {
    delta[j] = m1[j] - m2[j];
    if (delta[j] != 0.0) same = false;
  }

  FisherResult out;
  double trace = 0.0;
  for (std::size_t j = 0; j < d; ++j) trace += sw(j, j);
  out.lambda = 1e-6 * trace / static_cast<double>(d);
  {
    Tensor64 probe = sw;
    out.singular = !cholesky(probe);
  }
  if (same) return out;
  if (trace == 0.0) {
    out.singular = true;
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  Tensor64 reg = sw;
  for (std::size_t j = 0; j < d; ++j) reg(j, j) += out.lambda;
  if (!cholesky(reg)) throw NumericError("fisher: regularized scatter is not positive definite");
  const auto w = cholesky_solve(reg, delta);

  double num = 0.0;
  for (std::size_t j = 0; j < d; ++j) num += w[j] * delta[j];
  num *= num;
  double den = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < d; ++b) row += sw(a, b) * w[b];
    den += w[a] * row;
  }
  if (den <= 0.0) {
    out.singular = true;
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  out.value = num / den;
  return out;
}

MeanFisher mean_fisher(const FeatureMatrix& f) {
  f.validate();
  std::map<std::uint32_t, std::size_t> counts;
  for (auto l : f.labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("mean_fisher: need at least two classes");
  const std::size_t k = counts.rbegin()->first + 1;
  MeanFisher out;
  out.pair_values.assign(k, std::vector<double>(k, std::nan("")));
  double total = 0.0;
  for (auto a = counts.begin(); a != counts.end(); ++a) {
    for (auto b = std::next(a); b != counts.end(); ++b) {
      const auto r = fisher_criterion(f, a->first, b->first);
      out.pair_values[a->first][b->first] = out.pair_values[b->first][a->first] = r.value;
      total += r.value;
      out.any_singular = out.any_singular || r.singular;
      out.max_lambda = std::max(out.max_lambda, r.lambda);
      ++out.pairs;
    }
  }
  out.value = total / static_cast<double>(out.pairs);
  return out;
}

Tensor64 activation_matrix(const Tensor32& logits, std::span<const std::uint32_t> labels,
                           std::size_t num_classes) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(1) != num_classes) {
    throw ShapeError("activation_matrix: logits " + shape_str(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels and " + std::to_string(num_classes) +
                     " classes");
  }
  Tensor64 sums(Shape{num_classes, num_classes});
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const std::uint32_t j = labels[n];
    if (j >= num_classes) throw std::invalid_argument("activation_matrix: label out of range");
    ++counts[j];
    for (std::size_t i = 0; i < num_classes; ++i) sums(i, j) += logits(n, i);
  }
  for (std::size_t j = 0; j < num_classes; ++j) {
    if (counts[j] == 0) {
      throw std::invalid_argument("activation_matrix: class " + std::to_string(j) +
                                  " has no examples");
    }
    for (std::size_t i = 0; i < num_classes; ++i) sums(i, j) /= static_cast<double>(counts[j]);
  }
  return sums;
}

Tensor64 activation_matrix(const Parameters<float>& params, std::span<const Tensor32> images,
                           std::span<const std::uint32_t> labels, std::size_t batch_size) {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("activation_matrix: image and label counts differ");
  }
  const std::size_t k = params.config.num_classes;
  Tensor32 logits(Shape{images.size(), k});
  for_each_batch(params, images, params.config.layers.size(), batch_size,
                 [&](std::size_t start, const Tensor32& out) {
                   std::copy(out.raw(), out.raw() + out.size(), logits.raw() + start * k);
                 });
  return activation_matrix(logits, labels, k);
}

std::vector<std::vector<double>> mix_trajectory(const Parameters<float>& params,
                                                const Tensor32& x1, const Tensor32& x2,
                                                const std::string& tap, std::size_t steps,
                                                const PcaModel& basis) {
  if (steps < 2) throw std::invalid_argument("mix_trajectory: steps must be at least 2");
  const std::size_t boundary = params.config.tap_boundary(tap);
  std::vector<std::vector<double>> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const double r = static_cast<double>(s) / static_cast<double>(steps - 1);
    const Tensor32 mixed = mix_simple(x1, x2, r);
    const Tensor32 act = infer_range(params, stack(std::vector<Tensor32>{mixed}), 0, boundary);
    std::vector<double> row(act.data().begin(), act.data().end());
    out.push_back(basis.project(row));
  }
  return out;
}

std::string projection_csv(const Tensor64& coords, std::span<const std::uint32_t> labels,
                           Split split) {
  if (coords.rank() != 2 || coords.dim(0) != labels.size()) {
    throw ShapeError("projection_csv: coordinates do not match labels");
  }
  const std::string tag = split == Split::train ? "train" : "test";
  std::string out = csv_row({"x", "y", "z", "class", "split"});
  const std::size_t dims = coords.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::vector<std::string> cells;
    for (std::size_t c = 0; c < 3; ++c) cells.push_back(format_number(c < dims ? coords(i, c) : 0.0));
    cells.push_back(std::to_string(labels[i]));
    cells.push_back(tag);
    out += csv_row(cells);
  }
  return out;
}

}  // namespace bclab
