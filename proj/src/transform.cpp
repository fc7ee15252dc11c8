#include "alignlab/transform.hpp"

#include <fstream>
#include <limits>

#include "alignlab/binary_io.hpp"
#include "alignlab/errors.hpp"

namespace alignlab {

namespace {

constexpr char kMagic[4] = {'P', 'H', 'I', '1'};
constexpr std::uint8_t kVersion = 1;

double condition_number(const MatrixXd& w) {
  const Eigen::JacobiSVD<MatrixXd> svd(w);
  const auto& s = svd.singularValues();
  const double smallest = s(s.size() - 1);
  if (smallest <= 0.0 || !std::isfinite(smallest)) return std::numeric_limits<double>::infinity();
  return s(0) / smallest;
}

}  // namespace

TransformNet::TransformNet(std::vector<TransformLayer> layers, double max_condition)
    : layers_(std::move(layers)), max_condition_(max_condition) {
  if (layers_.empty()) throw ConfigError("transform depth must be at least 1");
  const Index d = layers_.front().weight.rows();
  if (d == 0) throw ShapeError("transform dim must be positive");
  for (const auto& layer : layers_) {
    if (layer.weight.rows() != d || layer.weight.cols() != d || layer.bias.size() != d)
      throw ShapeError("transform layers must be square and share one dim");
    if (!(layer.negative_slope > 0.0)) throw ConfigError("activation slope must be positive");
  }
}

bool operator==(const TransformNet& a, const TransformNet& b) {
  if (a.depth() != b.depth()) return false;
  for (std::size_t l = 0; l < a.depth(); ++l) {
    const auto& la = a.layers_[l];
    const auto& lb = b.layers_[l];
    if (la.weight != lb.weight || la.bias != lb.bias || la.negative_slope != lb.negative_slope)
      return false;
  }
  return true;
}

TransformNet sample_transform(Index dim, std::size_t depth, Rng& rng) {
  if (dim <= 0) throw ShapeError("transform dim must be positive");
  if (depth == 0) throw ConfigError("transform depth must be at least 1");
  std::vector<TransformLayer> layers;
  layers.reserve(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const MatrixXd g = rng.gaussian(dim, dim);
    const Eigen::HouseholderQR<MatrixXd> qr(g);
    MatrixXd q = qr.householderQ();
    // Sign fix makes Q Haar-distributed.
    const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < dim; ++j)
      if (r(j, j) < 0.0) q.col(j) *= -1.0;
    VectorXd bias(dim);
    for (Index j = 0; j < dim; ++j) bias(j) = rng.normal();
    layers.push_back({std::move(q), std::move(bias), 0.2});
  }
  return TransformNet(std::move(layers));
}

MatrixXd apply_transform(const TransformNet& net, const MatrixXd& x) {
  if (x.cols() != net.dim()) throw ShapeError("input columns do not match transform dim");
  MatrixXd h = x;
  for (const auto& layer : net.layers()) {
    h = (h * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    const double slope = layer.negative_slope;
    h = h.unaryExpr([slope](double t) { return t >= 0.0 ? t : slope * t; });
  }
  return h;
}

MatrixXd invert_transform(const TransformNet& net, const MatrixXd& z) {
  if (z.cols() != net.dim()) throw ShapeError("input columns do not match transform dim");
  MatrixXd h = z;
  const auto& layers = net.layers();
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (condition_number(it->weight) > net.max_condition())
      throw InvertibilityError("transform layer is singular or ill-conditioned");
    const double inv_slope = 1.0 / it->negative_slope;
    h = h.unaryExpr([inv_slope](double t) { return t >= 0.0 ? t : inv_slope * t; });
    h.rowwise() -= it->bias.transpose();
    const Eigen::PartialPivLU<MatrixXd> lu(it->weight);
    h = lu.solve(h.transpose()).transpose();
  }
  return h;
}

void TransformNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 4);
  binary::write_u8(out, kVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(depth()));
  binary::write_u32(out, static_cast<std::uint32_t>(dim()));
  for (const auto& layer : layers_) {
    binary::write_matrix_f64(out, layer.weight);
    for (Index j = 0; j < layer.bias.size(); ++j) binary::write_f64(out, layer.bias(j));
    binary::write_f64(out, layer.negative_slope);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TransformNet TransformNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  std::uint8_t version = 0;
  std::uint32_t depth = 0;
  std::uint32_t dim = 0;
  if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kMagic, 4))
    throw UnknownFormatError(path.string() + " is not a transform file");
  if (!binary::read_u8(in, version) || version != kVersion)
    throw UnknownFormatError("unsupported transform file version");
  if (!binary::read_u32(in, depth) || !binary::read_u32(in, dim))
    throw DimensionMismatchError("truncated transform header");
  std::vector<TransformLayer> layers(depth);
  for (auto& layer : layers) {
    layer.weight.resize(dim, dim);
    layer.bias.resize(dim);
    bool ok = binary::read_matrix_f64(in, layer.weight);
    for (Index j = 0; ok && j < layer.bias.size(); ++j) ok = binary::read_f64(in, layer.bias(j));
    ok = ok && binary::read_f64(in, layer.negative_slope);
    if (!ok) throw DimensionMismatchError("truncated transform payload");
  }
  return TransformNet(std::move(layers));
}

}  // namespace alignlab
