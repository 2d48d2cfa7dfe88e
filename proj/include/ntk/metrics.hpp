#pragma once

#include <Eigen/Dense>
#include <filesystem>

#include "ntk/models.hpp"

namespace ntk {

enum class KernelScope { diagonal_only, full };

// Rank-four class kernel K in R^{C x C x N x N}. Diagonal blocks K_{c,c}
// are always present; off-diagonal blocks only when computed with the
// `full` scope (they are never needed for the specialization matrix).
struct ClassKernel {
  int C = 0;
  int N = 0;
  bool full = false;
  std::vector<Eigen::MatrixXd> blocks;  // diagonal_only: C blocks; full: C*C row-major
  std::vector<int> sample_ids;
  std::string source_id;
  int epoch = 0;

  const Eigen::MatrixXd& block(int c, int cp) const {
    if (c < 0 || c >= C || cp < 0 || cp >= C)
      throw std::out_of_range("ClassKernel: block index");
    if (full) return blocks[static_cast<size_t>(c) * C + cp];
    if (c != cp) throw std::logic_error("ClassKernel: off-diagonal block not computed");
    return blocks[static_cast<size_t>(c)];
  }
  const Eigen::MatrixXd& diag(int c) const { return block(c, c); }
};

struct KsmMatrix {
  Eigen::MatrixXd entries;  // C x C
  bool pm_one_labels = false;
};

// Empirical NTK at the snapshot's parameters with frozen batch-norm stats.
// K_{c,c'}[i,j] = grad_theta(f^c(x_i))^T grad_theta(f^{c'}(x_j)). Kernel
// arithmetic always runs in 64-bit. Diagonal blocks are symmetrized by
// averaging with their transpose; an asymmetry beyond tolerance is an error.
ClassKernel compute_ntk(const ModelSnapshot& snap, const Tensor& samples,
                        KernelScope scope = KernelScope::diagonal_only,
                        std::vector<int> sample_ids = {}, int epoch = 0);

// K-bar = (1/C) sum_c K_{c,c}.
Eigen::MatrixXd trace_kernel(const ClassKernel& k);

// S(K1,K2) = 1 - Tr(K1^T K2) / (|K1|_F |K2|_F).
double kernel_distance(const Eigen::MatrixXd& k1, const Eigen::MatrixXd& k2);

// Finite-difference velocity: value at epoch t_{i+1} is
// S(K_{t_i}, K_{t_{i+1}}) / (t_{i+1} - t_i). Epochs must strictly increase.
std::vector<std::pair<int, double>> kernel_velocity(
    const std::vector<std::pair<int, Eigen::MatrixXd>>& trace);

// S(K_t, K_final) per epoch; the final entry is exactly 0.
std::vector<std::pair<int, double>> distance_to_final(
    const std::vector<std::pair<int, Eigen::MatrixXd>>& trace);

// erank(K) = exp(-sum p_i log p_i), p_i = lambda_i / sum lambda; negative
// eigenvalues are clipped to zero. Errors when the clipped spectrum sums
// to zero or less.
double effective_rank(const Eigen::MatrixXd& k);

// A(K, y y^T) = 1 - S(K, y y^T) for an indicator vector y.
double alignment(const Eigen::MatrixXd& k, const std::vector<double>& y);

// KSM(c,c') = A(K^{c,c}, y_{c'} y_{c'}^T) / ((1/C) sum_d A(K^{d,d}, y_{c'} y_{c'}^T)).
// Labels are encoded as 0/1 indicators by default; pm_one switches to +-1.
KsmMatrix ksm(const ClassKernel& k, const std::vector<int>& labels,
              bool pm_one = false);

// Average of the KSM diagonal.
double mean_ksm(const KsmMatrix& m);

// Epoch-indexed kernel container: one-line JSON header + little-endian
// 64-bit row-major block payload; extension `.ntkk`.
void save_kernel(const std::filesystem::path& file, const ClassKernel& k,
                 const std::string& config_hash = "");
ClassKernel load_kernel(const std::filesystem::path& file);

}  // namespace ntk
