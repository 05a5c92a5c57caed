#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sc/ops.hpp"
#include "sc/rng.hpp"
#include "sc/sampler.hpp"
#include "sc/tensor.hpp"

namespace sc {

enum class LayerKind {
  conv,
  pool,
  bn,
  relu,
  leaky_relu,
  dropout,
  gap,
  affine,
  softmax_head,
  sc_tap
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind;
  int kernel = 0;    // conv
  int channels = 0;  // conv output channels
  int stride = 1;    // conv / pool
  int padding = 0;   // conv
  int window = 0;    // pool
  float p = 0.0f;    // dropout
  float slope = 0.0f;  // leaky_relu
  int units = 0;     // affine output

  static LayerSpec Conv(int kernel, int channels, int stride = 1, int padding = 0);
  static LayerSpec Pool(int window, int stride);
  static LayerSpec Bn();
  static LayerSpec Relu();
  static LayerSpec LeakyRelu(float slope);
  static LayerSpec Dropout(float p);
  static LayerSpec Gap();
  static LayerSpec Affine(int units);
  static LayerSpec SoftmaxHead();
  static LayerSpec ScTap();
};

// Declarative layer list with one marked SC insertion point. Trunk = layers
// before the (first) sc_tap, head = layers after it.
struct ModelSpec {
  std::string name;
  Shape input_shape;  // [H,W,C]
  std::vector<LayerSpec> layers;
  bool multi_tap = false;  // experimental: several taps, losses summed

  int tap_index() const;                 // first sc_tap
  std::vector<int> tap_indices() const;  // all taps (multi_tap mode)
  void validate() const;
  uint64_t hash() const;
};

// The three appendix architectures.
ModelSpec build_mnist_model();
ModelSpec build_cifar10_model(float leaky_slope = 0.1f);
ModelSpec build_stl10_model();

// Per-layer output shapes (excluding batch axis), index-aligned with layers.
// Marker layers (sc_tap, softmax_head) pass shapes through.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

// A built model: parameters + batch-norm state, registered by name in layer
// order ("L03.conv.w", "L05.bn.gamma", ...).
class Model {
 public:
  Model() = default;

  const ModelSpec& spec() const { return spec_; }
  uint64_t spec_hash() const { return spec_.hash(); }

  std::vector<std::pair<std::string, Tensor>> parameters() const;
  std::vector<std::pair<std::string, Tensor>> trunk_parameters() const;
  std::vector<std::pair<std::string, Tensor>> head_parameters() const;
  std::vector<std::pair<std::string, Tensor>> state_tensors() const;  // bn moments + counts
  Tensor find_parameter(const std::string& name) const;

  int64_t parameter_count() const;

  friend Model build_model(const ModelSpec& spec, Rng& init_rng);
  friend class Forward;

  struct Layer {
    Tensor conv_w, conv_b;
    Tensor gamma, beta;
    BatchNormState bn;
    Tensor aff_w, aff_b;
  };
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  ModelSpec spec_;
  std::vector<Layer> layers_;
};

// He-uniform fan-in init for conv/affine weights, gamma=1, beta=0, biases 0.
Model build_model(const ModelSpec& spec, Rng& init_rng);

// Runs layers up to the (first) sc_tap.
FeatureMap forward_trunk(Model& model, Tape* tape, const Tensor& input, Mode mode,
                         Rng* dropout_rng = nullptr);
// Runs every layer; returns logits.
Tensor forward_full(Model& model, Tape* tape, const Tensor& input, Mode mode,
                    Rng* dropout_rng = nullptr);
// Runs the layers after the tap on a trunk feature map.
Tensor forward_head(Model& model, Tape* tape, const FeatureMap& features, Mode mode,
                    Rng* dropout_rng = nullptr);
// Feature maps at every tap (multi-tap mode; single-tap returns one entry).
std::vector<FeatureMap> forward_taps(Model& model, Tape* tape, const Tensor& input, Mode mode,
                                     Rng* dropout_rng = nullptr);

}  // namespace sc
