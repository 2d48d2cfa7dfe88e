#pragma once

#include "ntk/metrics.hpp"

namespace ntk {

struct EigvecFeature {
  int index = 0;           // rank in the descending eigenvalue order
  int class_index = 0;     // scalar output the kernel was built from
  double lambda = 0;
  Eigen::VectorXd u;       // kernel eigenvector, unit norm
  ParamVector v;           // parameter-space vector J^T u, unit-normalized
};

struct VizConfig {
  int iterations = 600;
  double alpha = 0.001;
  bool maximize = true;
  double init_value = 0.5;  // grey

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("viz: negative iterations");
    if (!(alpha > 0)) throw std::invalid_argument("viz: alpha must be positive");
  }
};

struct VizResult {
  Tensor image;               // final iterate, per-sample shape
  double cosine = 0;          // achieved cos(v, phi(x)) at the final iterate
  double initial_cosine = 0;  // cosine at the init image
  bool zero_norm_warning = false;
  // phi's input derivative comes from a dual (forward-over-reverse) pass,
  // i.e. the exact second-order mixed derivative, not finite differences
  std::string gradient_method = "forward_over_reverse";
};

// Top-k eigenpairs of the class-c diagonal kernel block and their
// parameter-space counterparts v_i = J^T u_i (one reverse pass per i with
// cotangent weights u_i over the sample batch), unit-normalized.
std::vector<EigvecFeature> extract_eigvec_features(const ModelSnapshot& snap,
                                                   const Tensor& samples,
                                                   int class_index, int top_k);

// Same, reusing an already computed kernel (must contain the class block).
std::vector<EigvecFeature> extract_eigvec_features(const ModelSnapshot& snap,
                                                   const Tensor& samples,
                                                   const ClassKernel& kernel,
                                                   int class_index, int top_k);

// Sign-gradient ascent/descent on cos(v, phi(x)) with phi(x) the parameter
// gradient of the class output, from a grey init, iterates clipped to [0,1].
VizResult visualize_eigvec(const ModelSnapshot& snap, const EigvecFeature& feat,
                           const VizConfig& cfg);

// 8-bit binary PGM (1 channel) / PPM (3 channels); values round(255*x).
void write_image(const std::filesystem::path& file, const Tensor& image);

// eig{c}_{i}_{max|min}.ppm (or .pgm for single-channel inputs)
std::string viz_file_name(int class_index, int eig_index, bool maximize,
                          int channels);

}  // namespace ntk
