#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "trk/distributions.hpp"

namespace trk {

/// f(x) = weights * x + bias with weights of shape (out, in).
struct AffineModel {
  Matrix weights;
  Vector bias;

  AffineModel() = default;
  AffineModel(Matrix w, Vector b);

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
  Vector apply(const Vector& x) const;
  /// Each row of `xs` is one input.
  Matrix apply_rows(const Matrix& xs) const;
};

enum class Activation { identity, relu, sigmoid };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

/// Fully connected net; the activation runs between layers, never after the last one.
struct MlpModel {
  std::vector<AffineModel> layers;
  Activation activation = Activation::relu;

  MlpModel() = default;
  MlpModel(std::vector<AffineModel> layers, Activation activation);

  Eigen::Index in_dim() const { return layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.back().out_dim(); }
  Matrix apply_rows(const Matrix& xs) const;
};

class TransportMap {
public:
  struct Identity {
    Eigen::Index dim;
  };
  struct Projection {
    Eigen::Index input_dim;
    std::vector<Eigen::Index> kept;
  };
  enum class Kind { identity, projection, affine, mlp };

  static TransportMap identity(Eigen::Index dim);
  /// Keeps the listed coordinates in the given order.
  static TransportMap projection(Eigen::Index input_dim, std::vector<Eigen::Index> kept);
  /// Keeps the first `kept` coordinates, i.e. (I | 0).
  static TransportMap leading_projection(Eigen::Index input_dim, Eigen::Index kept);
  static TransportMap affine(AffineModel model);
  static TransportMap mlp(MlpModel model);

  Kind kind() const { return static_cast<Kind>(repr_.index()); }
  Eigen::Index in_dim() const;
  Eigen::Index out_dim() const;

  Vector apply(const Vector& x) const;
  Matrix apply_rows(const Matrix& xs) const;

  /// Exact affine form for identity, projection and affine maps.
  std::optional<AffineModel> as_affine() const;

  const std::variant<Identity, Projection, AffineModel, MlpModel>& repr() const { return repr_; }

private:
  explicit TransportMap(std::variant<Identity, Projection, AffineModel, MlpModel> r) : repr_(std::move(r)) {}
  std::variant<Identity, Projection, AffineModel, MlpModel> repr_;
};

/// What the output transport map reads: (x, source output), source output alone, or x alone.
enum class OutputMode { xy, y_only, x_only };

std::string to_string(OutputMode m);
OutputMode parse_output_mode(const std::string& s);

/// f_ST(x) = T^Y(x, f_S(T^X(x))) with the argument of T^Y selected by `mode`.
class TransportPair {
public:
  /// Throws DimensionMismatch unless the composition type-checks end to end.
  TransportPair(TransportMap input_map, TransportMap source_model, TransportMap output_map,
                OutputMode mode = OutputMode::y_only);

  /// T^X = identity, T^Y = identity on the source output.
  static TransportPair plain(const TransportMap& source_model);

  const TransportMap& input_map() const { return input_map_; }
  const TransportMap& source_model() const { return source_model_; }
  const TransportMap& output_map() const { return output_map_; }
  OutputMode mode() const { return mode_; }

  Eigen::Index target_input_dim() const { return input_map_.in_dim(); }
  Eigen::Index target_output_dim() const { return output_map_.out_dim(); }

  /// Input of T^Y for each row of `xs`.
  Matrix output_map_inputs(const Matrix& xs) const;
  Matrix predict_rows(const Matrix& xs) const;
  Vector predict(const Vector& x) const;

  std::optional<AffineModel> as_affine() const;

private:
  TransportMap input_map_;
  TransportMap source_model_;
  TransportMap output_map_;
  OutputMode mode_;
};

/// Either a sample-based law or a closed-form gaussian one.
using Law = std::variant<EmpiricalDistribution, GaussianND>;

Eigen::Index law_dim(const Law& law);

/// Law of f(X). Gaussian laws need an affine-representable map.
Law pushforward(const TransportMap& map, const Law& law);
Law pushforward(const TransportPair& pair, const Law& law);

}  // namespace trk
