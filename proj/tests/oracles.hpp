#pragma once

// Test-only reference implementations, deliberately written as plain loops
// (long double accumulation, no shared code with the library) so they stay
// independent of the implementation paths they check.

#include "profeat/data.hpp"
#include "profeat/losses.hpp"

#include <functional>
#include <vector>

namespace oracles {

using profeat::Matrix;
using profeat::Vector;

// Per-sample brute-force defense loss: loops over rows and terms following
// the written definition (negative cosines, beta on adversarial terms,
// lambda-combination across spaces).
double defense_loss(const profeat::losses::DefenseLossSpec& spec,
                    const profeat::losses::RepSet& reps);

// Central finite differences of f along coordinate i of x.
double central_diff(const std::function<double(const Vector&)>& f,
                    const Vector& x, Eigen::Index i, double h = 1e-5);

// Full-batch gradient-descent logistic regression with L2 regularization,
// run to a tight gradient tolerance (the objective is strictly convex, so
// this is the global optimum). Returns test accuracy in percent.
double logistic_regression_accuracy(const Matrix& train_x,
                                    const std::vector<int>& train_y,
                                    const Matrix& test_x,
                                    const std::vector<int>& test_y,
                                    int num_classes, double l2);

// O(N^2) cosine-distance kNN with the documented tie rule (ties go to the
// class of the nearest neighbour among the tied classes).
int knn_predict(const Matrix& train_x, const std::vector<int>& train_y,
                int num_classes, const Vector& query, int k);

// Effective rank via eigenvalues of A^T A (a route independent of the SVD
// used by the implementation).
double effective_rank(const Matrix& a);

// NT-Xent by exhaustive enumeration of the 2N x 2N similarity matrix.
double ntxent(const Matrix& z1, const Matrix& z2, double temperature);

// TRADES loss in long double arithmetic.
double trades(const Matrix& logits_clean, const Matrix& logits_adv,
              const std::vector<int>& labels, double beta);

// Depth-0 nearest-centroid classifier accuracy (percent) on a dataset.
double nearest_centroid_accuracy(const profeat::data::LabeledDataset& ds);

// Exhaustive corner search for a 2-pixel image: maximizes f over the 9-point
// grid {x-eps, x, x+eps}^2 intersected with [0,1]^2.
double corner_max(const std::function<double(double, double)>& f, double x0,
                  double x1, double eps);

}  // namespace oracles
