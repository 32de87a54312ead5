#include "trk/transport_map.hpp"

#include <cmath>

#include "trk/errors.hpp"

namespace trk {

AffineModel::AffineModel(Matrix w, Vector b) : weights(std::move(w)), bias(std::move(b)) {
  if (weights.rows() != bias.size())
    throw DimensionMismatch("affine model: weights have " + std::to_string(weights.rows()) + " rows but bias has " +
                            std::to_string(bias.size()) + " entries");
  if (weights.rows() < 1 || weights.cols() < 1) throw InvalidArgument("affine model needs nonempty weights");
  if (!weights.allFinite() || !bias.allFinite()) throw InvalidArgument("affine model has non-finite entries");
}

Vector AffineModel::apply(const Vector& x) const {
  if (x.size() != in_dim()) throw DimensionMismatch("affine model: input dimension");
  return weights * x + bias;
}

Matrix AffineModel::apply_rows(const Matrix& xs) const {
  if (xs.cols() != in_dim()) throw DimensionMismatch("affine model: input dimension");
  return (xs * weights.transpose()).rowwise() + bias.transpose();
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw InvalidArgument("unknown activation '" + s + "'");
}

MlpModel::MlpModel(std::vector<AffineModel> ls, Activation act) : layers(std::move(ls)), activation(act) {
  if (layers.empty()) throw InvalidArgument("mlp needs at least one layer");
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i].in_dim() != layers[i - 1].out_dim())
      throw DimensionMismatch("mlp: layer " + std::to_string(i) + " input does not match previous output");
}

Matrix MlpModel::apply_rows(const Matrix& xs) const {
  Matrix h = layers.front().apply_rows(xs);
  for (std::size_t i = 1; i < layers.size(); ++i) {
    switch (activation) {
      case Activation::identity: break;
      case Activation::relu: h = h.cwiseMax(0.0); break;
      case Activation::sigmoid: h = (1.0 + (-h.array()).exp()).inverse().matrix(); break;
    }
    h = layers[i].apply_rows(h);
  }
  return h;
}

TransportMap TransportMap::identity(Eigen::Index dim) {
  if (dim < 1) throw InvalidArgument("identity map needs dimension >= 1");
  return TransportMap(Identity{dim});
}

TransportMap TransportMap::projection(Eigen::Index input_dim, std::vector<Eigen::Index> kept) {
  if (kept.empty()) throw InvalidArgument("projection keeps no coordinates");
  for (Eigen::Index k : kept)
    if (k < 0 || k >= input_dim) throw DimensionMismatch("projection index out of range");
  return TransportMap(Projection{input_dim, std::move(kept)});
}

TransportMap TransportMap::leading_projection(Eigen::Index input_dim, Eigen::Index kept) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(kept));
  for (Eigen::Index i = 0; i < kept; ++i) idx[static_cast<std::size_t>(i)] = i;
  return projection(input_dim, std::move(idx));
}

TransportMap TransportMap::affine(AffineModel model) {
  if (model.weights.size() == 0) throw InvalidArgument("affine map needs weights");
  return TransportMap(std::move(model));
}

TransportMap TransportMap::mlp(MlpModel model) {
  if (model.layers.empty()) throw InvalidArgument("mlp map needs layers");
  return TransportMap(std::move(model));
}

Eigen::Index TransportMap::in_dim() const {
  return std::visit(
      [](const auto& m) -> Eigen::Index {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Identity>) return m.dim;
        else if constexpr (std::is_same_v<T, Projection>) return m.input_dim;
        else return m.in_dim();
      },
      repr_);
}

Eigen::Index TransportMap::out_dim() const {
  return std::visit(
      [](const auto& m) -> Eigen::Index {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Identity>) return m.dim;
        else if constexpr (std::is_same_v<T, Projection>) return static_cast<Eigen::Index>(m.kept.size());
        else return m.out_dim();
      },
      repr_);
}

Matrix TransportMap::apply_rows(const Matrix& xs) const {
  if (xs.cols() != in_dim())
    throw DimensionMismatch("transport map expects dimension " + std::to_string(in_dim()) + ", got " +
                            std::to_string(xs.cols()));
  return std::visit(
      [&](const auto& m) -> Matrix {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Identity>) {
          return xs;
        } else if constexpr (std::is_same_v<T, Projection>) {
          Matrix out(xs.rows(), static_cast<Eigen::Index>(m.kept.size()));
          for (std::size_t c = 0; c < m.kept.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = xs.col(m.kept[c]);
          return out;
        } else {
          return m.apply_rows(xs);
        }
      },
      repr_);
}

Vector TransportMap::apply(const Vector& x) const { return apply_rows(x.transpose()).row(0).transpose(); }

std::optional<AffineModel> TransportMap::as_affine() const {
  return std::visit(
      [](const auto& m) -> std::optional<AffineModel> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Identity>) {
          return AffineModel(Matrix::Identity(m.dim, m.dim), Vector::Zero(m.dim));
        } else if constexpr (std::is_same_v<T, Projection>) {
          Matrix w = Matrix::Zero(static_cast<Eigen::Index>(m.kept.size()), m.input_dim);
          for (std::size_t r = 0; r < m.kept.size(); ++r) w(static_cast<Eigen::Index>(r), m.kept[r]) = 1.0;
          return AffineModel(std::move(w), Vector::Zero(static_cast<Eigen::Index>(m.kept.size())));
        } else if constexpr (std::is_same_v<T, AffineModel>) {
          return m;
        } else {
          return std::nullopt;
        }
      },
      repr_);
}

std::string to_string(OutputMode m) {
  switch (m) {
    case OutputMode::xy: return "xy";
    case OutputMode::y_only: return "y_only";
    case OutputMode::x_only: return "x_only";
  }
  return "y_only";
}

OutputMode parse_output_mode(const std::string& s) {
  if (s == "xy") return OutputMode::xy;
  if (s == "y_only") return OutputMode::y_only;
  if (s == "x_only") return OutputMode::x_only;
  throw InvalidArgument("unknown output mode '" + s + "'");
}

TransportPair::TransportPair(TransportMap input_map, TransportMap source_model, TransportMap output_map,
                             OutputMode mode)
    : input_map_(std::move(input_map)),
      source_model_(std::move(source_model)),
      output_map_(std::move(output_map)),
      mode_(mode) {
  const auto kind = source_model_.kind();
  if (kind != TransportMap::Kind::affine && kind != TransportMap::Kind::mlp)
    throw InvalidArgument("source model must be an affine model or an mlp");
  if (input_map_.out_dim() != source_model_.in_dim())
    throw DimensionMismatch("input transport map lands in dimension " + std::to_string(input_map_.out_dim()) +
                            " but the source model expects " + std::to_string(source_model_.in_dim()));
  Eigen::Index expected = 0;
  switch (mode_) {
    case OutputMode::xy: expected = input_map_.in_dim() + source_model_.out_dim(); break;
    case OutputMode::y_only: expected = source_model_.out_dim(); break;
    case OutputMode::x_only: expected = input_map_.in_dim(); break;
  }
  if (output_map_.in_dim() != expected)
    throw DimensionMismatch("output transport map expects dimension " + std::to_string(output_map_.in_dim()) +
                            " but mode " + to_string(mode_) + " supplies " + std::to_string(expected));
}

TransportPair TransportPair::plain(const TransportMap& source_model) {
  return TransportPair(TransportMap::identity(source_model.in_dim()), source_model,
                       TransportMap::identity(source_model.out_dim()), OutputMode::y_only);
}

Matrix TransportPair::output_map_inputs(const Matrix& xs) const {
  if (mode_ == OutputMode::x_only) {
    if (xs.cols() != target_input_dim()) throw DimensionMismatch("target input dimension");
    return xs;
  }
  const Matrix ys = source_model_.apply_rows(input_map_.apply_rows(xs));
  if (mode_ == OutputMode::y_only) return ys;
  Matrix z(xs.rows(), xs.cols() + ys.cols());
  z << xs, ys;
  return z;
}

Matrix TransportPair::predict_rows(const Matrix& xs) const { return output_map_.apply_rows(output_map_inputs(xs)); }

Vector TransportPair::predict(const Vector& x) const { return predict_rows(x.transpose()).row(0).transpose(); }

std::optional<AffineModel> TransportPair::as_affine() const {
  const auto out = output_map_.as_affine();
  if (!out) return std::nullopt;
  const Eigen::Index d = target_input_dim();
  if (mode_ == OutputMode::x_only) return out;
  const auto in = input_map_.as_affine();
  const auto src = source_model_.as_affine();
  if (!in || !src) return std::nullopt;
  // z = A x + c is the input of T^Y
  Matrix a = src->weights * in->weights;
  Vector c = src->weights * in->bias + src->bias;
  if (mode_ == OutputMode::xy) {
    Matrix ax(d + a.rows(), d);
    ax << Matrix::Identity(d, d), a;
    Vector cx(d + c.size());
    cx << Vector::Zero(d), c;
    a = std::move(ax);
    c = std::move(cx);
  }
  return AffineModel(out->weights * a, out->weights * c + out->bias);
}

Eigen::Index law_dim(const Law& law) {
  return std::visit([](const auto& l) { return l.dim(); }, law);
}

namespace {

Law pushforward_affine(const std::optional<AffineModel>& aff, const GaussianND& law, const char* what) {
  if (!aff) throw InvalidArgument(std::string("no closed-form gaussian pushforward through ") + what);
  return law.affine_pushforward(aff->weights, aff->bias);
}

}  // namespace

Law pushforward(const TransportMap& map, const Law& law) {
  if (law_dim(law) != map.in_dim())
    throw DimensionMismatch("pushforward: law has dimension " + std::to_string(law_dim(law)) + ", map expects " +
                            std::to_string(map.in_dim()));
  if (const auto* e = std::get_if<EmpiricalDistribution>(&law))
    return EmpiricalDistribution(map.apply_rows(e->points()), e->weights());
  return pushforward_affine(map.as_affine(), std::get<GaussianND>(law), "a non-affine map");
}

Law pushforward(const TransportPair& pair, const Law& law) {
  if (law_dim(law) != pair.target_input_dim())
    throw DimensionMismatch("pushforward: law has dimension " + std::to_string(law_dim(law)) +
                            ", intermediate model expects " + std::to_string(pair.target_input_dim()));
  if (const auto* e = std::get_if<EmpiricalDistribution>(&law))
    return EmpiricalDistribution(pair.predict_rows(e->points()), e->weights());
  return pushforward_affine(pair.as_affine(), std::get<GaussianND>(law), "an intermediate model with non-affine parts");
}

}  // namespace trk
