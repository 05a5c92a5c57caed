#include "sc/models.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "sc/error.hpp"

namespace sc {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::pool: return "pool";
    case LayerKind::bn: return "bn";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::gap: return "gap";
    case LayerKind::affine: return "affine";
    case LayerKind::softmax_head: return "softmax_head";
    case LayerKind::sc_tap: return "sc_tap";
  }
  return "?";
}

LayerSpec LayerSpec::Conv(int kernel, int channels, int stride, int padding) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.kernel = kernel;
  l.channels = channels;
  l.stride = stride;
  l.padding = padding;
  return l;
}
LayerSpec LayerSpec::Pool(int window, int stride) {
  LayerSpec l;
  l.kind = LayerKind::pool;
  l.window = window;
  l.stride = stride;
  return l;
}
LayerSpec LayerSpec::Bn() {
  LayerSpec l;
  l.kind = LayerKind::bn;
  return l;
}
LayerSpec LayerSpec::Relu() {
  LayerSpec l;
  l.kind = LayerKind::relu;
  return l;
}
LayerSpec LayerSpec::LeakyRelu(float slope) {
  LayerSpec l;
  l.kind = LayerKind::leaky_relu;
  l.slope = slope;
  return l;
}
LayerSpec LayerSpec::Dropout(float p) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.p = p;
  return l;
}
LayerSpec LayerSpec::Gap() {
  LayerSpec l;
  l.kind = LayerKind::gap;
  return l;
}
LayerSpec LayerSpec::Affine(int units) {
  LayerSpec l;
  l.kind = LayerKind::affine;
  l.units = units;
  return l;
}
LayerSpec LayerSpec::SoftmaxHead() {
  LayerSpec l;
  l.kind = LayerKind::softmax_head;
  return l;
}
LayerSpec LayerSpec::ScTap() {
  LayerSpec l;
  l.kind = LayerKind::sc_tap;
  return l;
}

int ModelSpec::tap_index() const {
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::sc_tap) return static_cast<int>(i);
  throw Error("ModelSpec '" + name + "' has no sc_tap");
}

std::vector<int> ModelSpec::tap_indices() const {
  std::vector<int> idx;
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::sc_tap) idx.push_back(static_cast<int>(i));
  return idx;
}

void ModelSpec::validate() const {
  if (input_shape.size() != 3)
    throw ShapeError("ModelSpec '" + name + "': input shape must be [H,W,C], got " +
                     shape_str(input_shape));
  const auto taps = tap_indices();
  if (taps.empty()) throw Error("ModelSpec '" + name + "': no sc_tap layer");
  if (!multi_tap && taps.size() != 1)
    throw Error("ModelSpec '" + name + "': " + std::to_string(taps.size()) +
                " sc_tap layers without multi_tap mode");
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::conv:
        if (l.kernel < 1 || l.channels < 1 || l.stride < 1 || l.padding < 0)
          throw Error("ModelSpec '" + name + "': bad conv parameters");
        break;
      case LayerKind::pool:
        if (l.window < 1 || l.stride < 1) throw Error("ModelSpec '" + name + "': bad pool parameters");
        break;
      case LayerKind::dropout:
        if (!(l.p >= 0.0f && l.p < 1.0f)) throw Error("ModelSpec '" + name + "': bad dropout p");
        break;
      case LayerKind::leaky_relu:
        if (!(l.slope >= 0.0f && l.slope < 1.0f))
          throw Error("ModelSpec '" + name + "': bad leaky_relu slope");
        break;
      case LayerKind::affine:
        if (l.units < 1) throw Error("ModelSpec '" + name + "': bad affine units");
        break;
      default:
        break;
    }
  }
  infer_shapes(*this);  // throws on incompatible consecutive shapes
}

uint64_t ModelSpec::hash() const {
  uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 0x100000001B3ULL;
  };
  for (char c : name) mix(static_cast<uint64_t>(static_cast<unsigned char>(c)));
  for (int d : input_shape) mix(static_cast<uint64_t>(d) + 0x9E37ULL);
  for (const auto& l : layers) {
    mix(static_cast<uint64_t>(l.kind));
    mix(static_cast<uint64_t>(l.kernel));
    mix(static_cast<uint64_t>(l.channels));
    mix(static_cast<uint64_t>(l.stride));
    mix(static_cast<uint64_t>(l.padding));
    mix(static_cast<uint64_t>(l.window));
    uint32_t pb, sb;
    std::memcpy(&pb, &l.p, 4);
    std::memcpy(&sb, &l.slope, 4);
    mix(pb);
    mix(sb);
    mix(static_cast<uint64_t>(l.units));
  }
  mix(multi_tap ? 1 : 0);
  return h;
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  if (spec.input_shape.size() != 3)
    throw ShapeError("infer_shapes: input shape must be [H,W,C]");
  Shape cur = spec.input_shape;  // [H,W,C] or [D] after gap/flatten
  std::vector<Shape> out;
  out.reserve(spec.layers.size());
  int index = 0;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3)
          throw ShapeError("layer L" + std::to_string(index) + " (conv): needs spatial input, got " +
                           shape_str(cur));
        const int H = cur[0], W = cur[1];
        if (l.kernel > H + 2 * l.padding || l.kernel > W + 2 * l.padding)
          throw ShapeError("layer L" + std::to_string(index) + " (conv): kernel exceeds padded input");
        cur = {(H + 2 * l.padding - l.kernel) / l.stride + 1,
               (W + 2 * l.padding - l.kernel) / l.stride + 1, l.channels};
        break;
      }
      case LayerKind::pool: {
        if (cur.size() != 3)
          throw ShapeError("layer L" + std::to_string(index) + " (pool): needs spatial input");
        if (l.window > cur[0] || l.window > cur[1])
          throw ShapeError("layer L" + std::to_string(index) + " (pool): window larger than input " +
                           shape_str(cur));
        cur = {(cur[0] - l.window) / l.stride + 1, (cur[1] - l.window) / l.stride + 1, cur[2]};
        break;
      }
      case LayerKind::gap: {
        if (cur.size() != 3)
          throw ShapeError("layer L" + std::to_string(index) + " (gap): needs spatial input");
        cur = {cur[2]};
        break;
      }
      case LayerKind::affine: {
        int64_t d = 1;
        for (int v : cur) d *= v;
        cur = {static_cast<int>(l.units)};
        (void)d;
        break;
      }
      case LayerKind::bn:
        if (cur.size() != 3)
          throw ShapeError("layer L" + std::to_string(index) + " (bn): needs spatial input");
        break;
      default:
        break;  // activations, dropout, markers keep the shape
    }
    out.push_back(cur);
    ++index;
  }
  return out;
}

namespace {

ModelSpec with_tail(ModelSpec spec) {
  spec.validate();
  return spec;
}

}  // namespace

ModelSpec build_mnist_model() {
  ModelSpec m;
  m.name = "mnist";
  m.input_shape = {28, 28, 1};
  m.layers = {
      LayerSpec::Conv(5, 32, 1, 2), LayerSpec::Relu(),
      LayerSpec::Pool(2, 2),        LayerSpec::Bn(),
      LayerSpec::Conv(3, 64, 1, 1), LayerSpec::Bn(), LayerSpec::Relu(),
      LayerSpec::Conv(3, 64, 1, 1), LayerSpec::Bn(), LayerSpec::Relu(),
      LayerSpec::Pool(2, 2),        LayerSpec::Bn(),
      LayerSpec::ScTap(),
      LayerSpec::Conv(3, 128, 1, 1), LayerSpec::Bn(), LayerSpec::Relu(),
      LayerSpec::Conv(1, 10, 1, 0),  LayerSpec::Bn(), LayerSpec::Relu(),
      LayerSpec::Gap(),
      LayerSpec::SoftmaxHead(),
  };
  return with_tail(std::move(m));
}

ModelSpec build_cifar10_model(float leaky_slope) {
  ModelSpec m;
  m.name = "cifar10";
  m.input_shape = {32, 32, 3};
  auto block = [&](int channels) {
    return std::vector<LayerSpec>{LayerSpec::Conv(3, channels, 1, 1), LayerSpec::Bn(),
                                  LayerSpec::LeakyRelu(leaky_slope)};
  };
  auto push = [&](const std::vector<LayerSpec>& ls) {
    for (const auto& l : ls) m.layers.push_back(l);
  };
  push(block(96));
  push(block(96));
  push(block(96));
  m.layers.push_back(LayerSpec::Pool(2, 2));
  m.layers.push_back(LayerSpec::Bn());
  push(block(192));
  push(block(192));
  push(block(192));
  m.layers.push_back(LayerSpec::Pool(2, 2));
  m.layers.push_back(LayerSpec::Bn());
  m.layers.push_back(LayerSpec::ScTap());
  push(block(192));
  push({LayerSpec::Conv(1, 192, 1, 0), LayerSpec::Bn(), LayerSpec::LeakyRelu(leaky_slope)});
  push({LayerSpec::Conv(1, 10, 1, 0), LayerSpec::Bn(), LayerSpec::LeakyRelu(leaky_slope)});
  m.layers.push_back(LayerSpec::Gap());
  m.layers.push_back(LayerSpec::SoftmaxHead());
  return with_tail(std::move(m));
}

ModelSpec build_stl10_model() {
  ModelSpec m;
  m.name = "stl10";
  m.input_shape = {96, 96, 3};
  auto conv_bn_relu = [&](int kernel, int channels, int padding) {
    return std::vector<LayerSpec>{LayerSpec::Conv(kernel, channels, 1, padding), LayerSpec::Bn(),
                                  LayerSpec::Relu()};
  };
  auto push = [&](const std::vector<LayerSpec>& ls) {
    for (const auto& l : ls) m.layers.push_back(l);
  };
  push(conv_bn_relu(5, 64, 2));
  push(conv_bn_relu(1, 160, 0));
  push(conv_bn_relu(1, 96, 0));
  m.layers.push_back(LayerSpec::Pool(3, 2));
  push(conv_bn_relu(5, 192, 2));
  push(conv_bn_relu(1, 192, 0));
  push(conv_bn_relu(1, 192, 0));
  m.layers.push_back(LayerSpec::Pool(3, 2));
  push(conv_bn_relu(3, 192, 1));
  push(conv_bn_relu(1, 192, 0));
  push(conv_bn_relu(1, 192, 0));
  m.layers.push_back(LayerSpec::ScTap());
  m.layers.push_back(LayerSpec::Conv(3, 256, 1, 1));
  m.layers.push_back(LayerSpec::Relu());
  m.layers.push_back(LayerSpec::Pool(3, 2));
  m.layers.push_back(LayerSpec::Dropout(0.5f));
  m.layers.push_back(LayerSpec::Conv(3, 128, 1, 1));
  m.layers.push_back(LayerSpec::Relu());
  m.layers.push_back(LayerSpec::Dropout(0.5f));
  m.layers.push_back(LayerSpec::Affine(10));
  m.layers.push_back(LayerSpec::SoftmaxHead());
  return with_tail(std::move(m));
}

namespace {

std::string layer_prefix(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "L%02d", index);
  return buf;
}

Tensor he_uniform(Shape shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
  float* d = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) d[i] = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

Model build_model(const ModelSpec& spec, Rng& init_rng) {
  spec.validate();
  Model model;
  model.spec_ = spec;
  model.layers_.resize(spec.layers.size());

  const auto shapes = infer_shapes(spec);
  Shape cur = spec.input_shape;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    Model::Layer& rt = model.layers_[i];
    switch (l.kind) {
      case LayerKind::conv: {
        const int cin = cur[2];
        rt.conv_w = he_uniform({l.kernel, l.kernel, cin, l.channels}, l.kernel * l.kernel * cin,
                               init_rng);
        rt.conv_b = Tensor::zeros({l.channels}, true);
        break;
      }
      case LayerKind::bn: {
        const int c = cur[2];
        rt.gamma = Tensor::full({c}, 1.0f, true);
        rt.beta = Tensor::zeros({c}, true);
        rt.bn = BatchNormState::make(c);
        break;
      }
      case LayerKind::affine: {
        int64_t d = 1;
        for (int v : cur) d *= v;
        rt.aff_w = he_uniform({static_cast<int>(d), l.units}, static_cast<int>(d), init_rng);
        rt.aff_b = Tensor::zeros({l.units}, true);
        break;
      }
      default:
        break;
    }
    cur = shapes[i];
  }
  return model;
}

namespace {

void collect_params(const Model& model, int lo, int hi,
                    std::vector<std::pair<std::string, Tensor>>& out) {
  const auto& layers = model.spec().layers;
  for (int i = lo; i < hi; ++i) {
    const auto& rt = model.layers()[static_cast<size_t>(i)];
    const std::string pref = layer_prefix(i);
    switch (layers[static_cast<size_t>(i)].kind) {
      case LayerKind::conv:
        out.emplace_back(pref + ".conv.w", rt.conv_w);
        out.emplace_back(pref + ".conv.b", rt.conv_b);
        break;
      case LayerKind::bn:
        out.emplace_back(pref + ".bn.gamma", rt.gamma);
        out.emplace_back(pref + ".bn.beta", rt.beta);
        break;
      case LayerKind::affine:
        out.emplace_back(pref + ".affine.w", rt.aff_w);
        out.emplace_back(pref + ".affine.b", rt.aff_b);
        break;
      default:
        break;
    }
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> Model::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect_params(*this, 0, static_cast<int>(spec_.layers.size()), out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::trunk_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect_params(*this, 0, spec_.tap_index(), out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::head_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect_params(*this, spec_.tap_index() + 1, static_cast<int>(spec_.layers.size()), out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::state_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < spec_.layers.size(); ++i) {
    if (spec_.layers[i].kind != LayerKind::bn) continue;
    const std::string pref = layer_prefix(static_cast<int>(i));
    out.emplace_back(pref + ".bn.running_mean", layers_[i].bn.running_mean);
    out.emplace_back(pref + ".bn.running_var", layers_[i].bn.running_var);
    out.emplace_back(pref + ".bn.count", layers_[i].bn.count);
  }
  return out;
}

Tensor Model::find_parameter(const std::string& name) const {
  for (const auto& [n, t] : parameters())
    if (n == name) return t;
  throw Error("Model: no parameter named '" + name + "'");
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

namespace {

// Applies layers [lo, hi). Shape problems surface with the layer index.
Tensor run_layers(Model& model, Tape* tape, Tensor x, Mode mode, Rng* dropout_rng, int lo, int hi,
                  std::vector<FeatureMap>* taps) {
  const auto& layers = model.spec().layers;
  for (int i = lo; i < hi; ++i) {
    const LayerSpec& l = layers[static_cast<size_t>(i)];
    Model::Layer& rt = model.layers()[static_cast<size_t>(i)];
    try {
      switch (l.kind) {
        case LayerKind::conv:
          x = conv2d(tape, x, rt.conv_w, rt.conv_b, l.stride, l.padding);
          break;
        case LayerKind::pool:
          x = maxpool2d(tape, x, l.window, l.stride);
          break;
        case LayerKind::bn:
          x = batchnorm(tape, x, rt.gamma, rt.beta, mode, rt.bn);
          break;
        case LayerKind::relu:
          x = relu(tape, x);
          break;
        case LayerKind::leaky_relu:
          x = leaky_relu(tape, x, l.slope);
          break;
        case LayerKind::dropout: {
          if (mode == Mode::train && !dropout_rng)
            throw Error("dropout layer needs an rng stream in train mode");
          static Rng unused(0);
          x = dropout(tape, x, l.p, mode, mode == Mode::train ? *dropout_rng : unused);
          break;
        }
        case LayerKind::gap:
          x = global_avg_pool(tape, x);
          break;
        case LayerKind::affine:
          if (x.rank() != 2) x = flatten2d(tape, x);
          x = affine(tape, x, rt.aff_w, rt.aff_b);
          break;
        case LayerKind::sc_tap:
          if (taps) taps->push_back(FeatureMap{x});
          break;
        case LayerKind::softmax_head:
          break;  // logits out; the loss applies log-softmax
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer L" + std::to_string(i) + " (" + layer_kind_name(l.kind) +
                       "): " + e.what());
    }
  }
  return x;
}

void check_input(const Model& model, const Tensor& input) {
  const Shape& want = model.spec().input_shape;
  if (input.rank() != 4 || input.dim(1) != want[0] || input.dim(2) != want[1] ||
      input.dim(3) != want[2])
    throw ShapeError("forward: input " + shape_str(input.shape()) + " does not match declared [N," +
                     std::to_string(want[0]) + "," + std::to_string(want[1]) + "," +
                     std::to_string(want[2]) + "]");
}

}  // namespace

FeatureMap forward_trunk(Model& model, Tape* tape, const Tensor& input, Mode mode,
                         Rng* dropout_rng) {
  check_input(model, input);
  Tensor x = run_layers(model, tape, input, mode, dropout_rng, 0, model.spec().tap_index(), nullptr);
  return FeatureMap{x};
}

Tensor forward_full(Model& model, Tape* tape, const Tensor& input, Mode mode, Rng* dropout_rng) {
  check_input(model, input);
  return run_layers(model, tape, input, mode, dropout_rng, 0,
                    static_cast<int>(model.spec().layers.size()), nullptr);
}

Tensor forward_head(Model& model, Tape* tape, const FeatureMap& features, Mode mode,
                    Rng* dropout_rng) {
  return run_layers(model, tape, features.values, mode, dropout_rng,
                    model.spec().tap_index() + 1, static_cast<int>(model.spec().layers.size()),
                    nullptr);
}

std::vector<FeatureMap> forward_taps(Model& model, Tape* tape, const Tensor& input, Mode mode,
                                     Rng* dropout_rng) {
  check_input(model, input);
  std::vector<FeatureMap> taps;
  const auto idx = model.spec().tap_indices();
  const int last_tap = idx.back();
  run_layers(model, tape, input, mode, dropout_rng, 0, last_tap + 1, &taps);
  return taps;
}

}  // namespace sc
