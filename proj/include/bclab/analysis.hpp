#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bclab/dataset.hpp"
#include "bclab/network.hpp"

namespace bclab {

struct FeatureMatrix {
  Tensor64 rows;  // examples x features
  std::vector<std::uint32_t> labels;
  Split split = Split::train;
  std::string tap;

  std::size_t count() const { return labels.size(); }
  std::size_t dim() const { return rows.rank() == 2 ? rows.dim(1) : 0; }
  std::span<const double> row(std::size_t i) const { return {rows.raw() + i * dim(), dim()}; }
  void validate() const;
};

FeatureMatrix make_feature_matrix(std::vector<std::vector<double>> rows,
                                  std::vector<std::uint32_t> labels, Split split = Split::train,
                                  std::string tap = {});

// Evaluation-mode activations at `tap`, one flattened row per image.
FeatureMatrix extract_features(const Parameters<float>& params, std::span<const Tensor32> images,
                               std::span<const std::uint32_t> labels, const std::string& tap,
                               Split split = Split::train, std::size_t batch_size = 256);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Tensor64 vectors;            // column j pairs with values[j]
  std::size_t sweeps = 0;
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
// `tolerance` times the matrix Frobenius norm.
SymmetricEigen jacobi_eigen(const Tensor64& symmetric, double tolerance = 1e-12,
                            std::size_t max_sweeps = 100);

struct PcaModel {
  std::vector<double> mean;
  Tensor64 components;               // dims x features, unit rows
  std::vector<double> eigenvalues;   // population covariance, descending
  std::vector<double> explained_ratio;
  double total_variance = 0.0;
  bool gram = false;                 // fitted through the examples x examples Gram matrix

  Tensor64 project(const Tensor64& rows) const;
  std::vector<double> project(std::span<const double> row) const;
};

// Population covariance. Each component's largest-magnitude entry is made
// positive (first such entry on ties).
PcaModel pca_fit(const FeatureMatrix& f, std::size_t dims);

struct PcaProjection {
  PcaModel model;
  Tensor64 coords;  // examples x dims
};

PcaProjection pca_project(const FeatureMatrix& f, std::size_t dims);

struct FisherResult {
  double value = 0.0;
  double lambda = 0.0;    // ridge added to the within-class scatter
  bool singular = false;  // within-class scatter was not positive definite
};

// Unnormalized within-class scatter, ridge 1e-6 * trace / d, optimal
// direction from a Cholesky solve.
FisherResult fisher_criterion(const FeatureMatrix& f, std::uint32_t c1, std::uint32_t c2);

struct MeanFisher {
  double value = 0.0;
  std::size_t pairs = 0;
  bool any_singular = false;
  double max_lambda = 0.0;
  std::vector<std::vector<double>> pair_values;  // K x K, NaN on the diagonal and for absent classes
};

MeanFisher mean_fisher(const FeatureMatrix& f);

// Entry (i, j): mean logit i over the examples of class j.
Tensor64 activation_matrix(const Tensor32& logits, std::span<const std::uint32_t> labels,
                           std::size_t num_classes);
Tensor64 activation_matrix(const Parameters<float>& params, std::span<const Tensor32> images,
                           std::span<const std::uint32_t> labels, std::size_t batch_size = 256);

// Simple mixtures r x1 + (1 - r) x2 for r = 0, 1/(steps-1), ..., 1, taken to
// `tap` and projected with `basis`. The first point belongs to x2.
std::vector<std::vector<double>> mix_trajectory(const Parameters<float>& params,
                                                const Tensor32& x1, const Tensor32& x2,
                                                const std::string& tap, std::size_t steps,
                                                const PcaModel& basis);

// x,y,z,class,split rows; missing coordinates are written as 0.
std::string projection_csv(const Tensor64& coords, std::span<const std::uint32_t> labels,
                           Split split);

}  // namespace bclab
