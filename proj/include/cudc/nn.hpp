#pragma once

#include "cudc/autodiff.hpp"

#include <memory>
#include <string>
#include <vector>

namespace cudc {

enum class Activation { None, Relu, Tanh };

/// Optional trunk head appended after the last affine layer: a LayerNorm with
/// learnable scale/shift, optionally followed by tanh to bound the output.
enum class Head { None, LayerNorm, LayerNormTanh };

struct MlpSpec {
  std::vector<int> layer_sizes;         // [in, h1, ..., out], at least two entries
  std::vector<Activation> activations;  // one per affine layer
  Head head = Head::None;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  void validate() const;
};

/// Shorthand: `sizes` with ReLU between layers and `last` on the final one.
MlpSpec mlp_spec(std::vector<int> sizes, Activation last = Activation::None,
                 Head head = Head::None);

/// Collection of named parameters owned by one network (or one agent side).
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool congruent_with(const ParameterSet& other) const;
  void zero_grad();
  double grad_max_abs() const;

  std::vector<std::shared_ptr<Parameter>>& items() { return items_; }
  const std::vector<std::shared_ptr<Parameter>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  /// Append every parameter of `other` (shared, not copied).
  void absorb(ParameterSet& other);

 private:
  std::vector<std::shared_ptr<Parameter>> items_;
};

/// Multi-layer perceptron; weights orthogonal-initialized, biases zero.
struct Mlp {
  MlpSpec spec;
  ParameterSet params;

  Mlp() = default;
  Mlp(const std::string& name, MlpSpec s, Rng& rng);

  /// Taped forward pass. With frozen=true the weights enter as constants so
  /// no gradient reaches this network.
  Var forward(Tape& t, const Var& input, bool frozen = false) const;

  /// Tape-free forward pass for targets, momentum copies and rollouts.
  Matrix eval(const Matrix& input) const;

  /// Structural copy with identical values (fresh Adam state), used to spawn
  /// momentum/target copies.
  Mlp clone(const std::string& name) const;
};

/// Orthogonal matrix (rows x cols) via Householder QR with sign correction.
Matrix orthogonal_init(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// One standard Adam step with bias correction over every parameter in the
/// set; gradients are zeroed afterwards.
void adam_step(ParameterSet& params, double learning_rate, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

/// target <- rate * online + (1 - rate) * target, elementwise, pairwise over
/// the two sets. Rejects sets that are not shape-congruent.
void ema_update(ParameterSet& target, const ParameterSet& online, double rate);

/// One-hot rows for integer indices (constant, not differentiated).
Matrix one_hot_rows(const std::vector<int>& indices, int num_classes);

// ---- checkpoint io -------------------------------------------------------
// Binary format: magic "CUDC", u32 version, u64 parameter count, then per
// parameter: u32 name length, name bytes, u32 rank, u64 extents, row-major
// little-endian f64 values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParameterSet& params);
/// Loads by name into an existing congruent set (names and shapes must match).
void load_checkpoint(const std::string& path, ParameterSet& params);

}  // namespace cudc
