#include "alignlab/tinynet.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "alignlab/binary_io.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/random.hpp"

namespace alignlab {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'P', '1'};
constexpr std::uint8_t kVersion = 1;

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Pre-activations are not kept: for the rectifier, a > 0 iff z > 0.
struct Cache {
  std::vector<MatrixXd> activations;
  VectorXd logits;
};

Cache forward_cache(const Mlp& m, const MatrixXd& x) {
  if (x.cols() != m.in_dim()) throw ShapeError("input columns do not match encoder in_dim");
  Cache c;
  c.activations.reserve(m.depth());
  const MatrixXd* prev = &x;
  for (std::size_t l = 0; l < m.depth(); ++l) {
    MatrixXd z = (*prev * m.weight(l).transpose()).rowwise() + m.bias(l).transpose();
    c.activations.push_back(z.cwiseMax(0.0));
    prev = &c.activations.back();
  }
  c.logits = (*prev * m.head_weight().transpose()).col(0).array() + m.head_bias();
  return c;
}

double mean_bce(const VectorXd& logits, const VectorXd& y) {
  double total = 0.0;
  for (Index i = 0; i < logits.size(); ++i) total += softplus(logits(i)) - y(i) * logits(i);
  return total / static_cast<double>(logits.size());
}

double accuracy_of(const VectorXd& logits, const VectorXd& y) {
  Index hits = 0;
  for (Index i = 0; i < logits.size(); ++i) hits += ((logits(i) > 0.0) == (y(i) > 0.5)) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(logits.size());
}

void check_labels(const MatrixXd& x, const VectorXd& y) {
  if (x.rows() != y.size()) throw ShapeError("label count does not match sample count");
}

// Gradient of mean BCE given a forward cache; writes into `grad`.
void backprop(const Mlp& m, const MatrixXd& x, const VectorXd& y, const Cache& c, VectorXd& grad) {
  const auto n = static_cast<double>(x.rows());
  grad.setZero(m.parameter_count());
  VectorXd dlogits(c.logits.size());
  for (Index i = 0; i < dlogits.size(); ++i) dlogits(i) = (sigmoid(c.logits(i)) - y(i)) / n;

  const MatrixXd& last = m.depth() == 0 ? x : c.activations.back();
  const Index width = m.width();
  Eigen::Map<MatrixXd>(grad.data() + m.head_offset(), 1, width) = dlogits.transpose() * last;
  grad(grad.size() - 1) = dlogits.sum();

  MatrixXd upstream = dlogits * m.head_weight();  // n x width
  for (std::size_t l = m.depth(); l-- > 0;) {
    const MatrixXd& a = c.activations[l];
    const MatrixXd dz = upstream.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    const MatrixXd& input = l == 0 ? x : c.activations[l - 1];
    const auto w = m.weight(l);
    Eigen::Map<MatrixXd>(grad.data() + m.weight_offset(l), w.rows(), w.cols()) = dz.transpose() * input;
    Eigen::Map<VectorXd>(grad.data() + m.bias_offset(l), w.rows()) = dz.colwise().sum().transpose();
    if (l > 0) upstream = dz * w;
  }
}

}  // namespace

Mlp::Mlp(Index in_dim, std::size_t depth, Index width) : in_dim_(in_dim), width_(width), depth_(depth) {
  if (depth < 1 || depth > kMaxDepth) throw ConfigError("encoder depth must be in [1, 10]");
  if (in_dim <= 0 || width <= 0) throw ShapeError("encoder dims must be positive");
  Index count = 0;
  for (std::size_t l = 0; l < depth; ++l) count += layer_in(l) * width + width;
  count += width + 1;
  params_ = VectorXd::Zero(count);
}

Index Mlp::weight_offset(std::size_t layer) const {
  Index offset = 0;
  for (std::size_t l = 0; l < layer; ++l) offset += layer_in(l) * width_ + width_;
  return offset;
}

Index Mlp::bias_offset(std::size_t layer) const { return weight_offset(layer) + layer_in(layer) * width_; }

Index Mlp::head_offset() const { return weight_offset(depth_); }

Eigen::Map<MatrixXd> Mlp::weight(std::size_t layer) {
  return {params_.data() + weight_offset(layer), width_, layer_in(layer)};
}
Eigen::Map<const MatrixXd> Mlp::weight(std::size_t layer) const {
  return {params_.data() + weight_offset(layer), width_, layer_in(layer)};
}
Eigen::Map<VectorXd> Mlp::bias(std::size_t layer) { return {params_.data() + bias_offset(layer), width_}; }
Eigen::Map<const VectorXd> Mlp::bias(std::size_t layer) const {
  return {params_.data() + bias_offset(layer), width_};
}
Eigen::Map<MatrixXd> Mlp::head_weight() { return {params_.data() + head_offset(), 1, width_}; }
Eigen::Map<const MatrixXd> Mlp::head_weight() const { return {params_.data() + head_offset(), 1, width_}; }

Mlp init_mlp(Index in_dim, std::size_t depth, std::uint64_t seed, Index width) {
  Mlp m(in_dim, depth, width);
  Rng rng(seed);
  auto fill = [&rng](Eigen::Map<MatrixXd> w, double bound) {
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
  };
  for (std::size_t l = 0; l < depth; ++l) {
    auto w = m.weight(l);
    fill(w, std::sqrt(6.0 / static_cast<double>(w.cols())));
  }
  fill(m.head_weight(), std::sqrt(3.0 / static_cast<double>(width)));
  return m;
}

ForwardResult forward_activations(const Mlp& m, const MatrixXd& x) {
  Cache c = forward_cache(m, x);
  return {std::move(c.logits), std::move(c.activations)};
}

double loss(const Mlp& m, const MatrixXd& x, const VectorXd& y) {
  check_labels(x, y);
  if (x.rows() == 0) throw EmptyDatasetError("loss of an empty batch");
  return mean_bce(forward_cache(m, x).logits, y);
}

VectorXd grad_loss(const Mlp& m, const MatrixXd& x, const VectorXd& y) {
  check_labels(x, y);
  if (x.rows() == 0) throw EmptyDatasetError("gradient of an empty batch");
  const Cache c = forward_cache(m, x);
  VectorXd grad;
  backprop(m, x, y, c, grad);
  return grad;
}

double evaluate_accuracy(const Mlp& m, const MatrixXd& x, const VectorXd& y) {
  check_labels(x, y);
  if (x.rows() == 0) throw EmptyDatasetError("accuracy of an empty split");
  return accuracy_of(forward_cache(m, x).logits, y);
}

TrainResult train_model(const Mlp& init, const MatrixXd& x_train, const VectorXd& y_train,
                        const MatrixXd& x_val, const VectorXd& y_val, const TrainConfig& cfg) {
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw ConfigError("epochs and batch size must be positive");
  check_labels(x_train, y_train);
  check_labels(x_val, y_val);
  if (x_train.rows() == 0) throw EmptyDatasetError("empty training split");

  Mlp model = init;
  VectorXd& theta = model.parameters();
  VectorXd first_moment = VectorXd::Zero(theta.size());
  VectorXd second_moment = VectorXd::Zero(theta.size());
  VectorXd grad;
  Rng rng(cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(x_train.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t step = 0;

  TrainResult result{model, {}, 0, -1.0};
  result.history.reserve(cfg.epochs);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<Index>(order));
    double loss_sum = 0.0;
    double hit_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      const MatrixXd xb = x_train(idx, Eigen::all);
      const VectorXd yb = y_train(idx);
      const Cache c = forward_cache(model, xb);
      const double batch_loss = mean_bce(c.logits, yb);
      if (!std::isfinite(batch_loss))
        throw DivergedTrainingError(epoch, "non-finite loss at epoch " + std::to_string(epoch));
      const auto rows = static_cast<double>(idx.size());
      loss_sum += batch_loss * rows;
      hit_sum += accuracy_of(c.logits, yb) * rows;
      backprop(model, xb, yb, c, grad);

      ++step;
      first_moment = cfg.beta1 * first_moment + (1.0 - cfg.beta1) * grad;
      second_moment = cfg.beta2 * second_moment + (1.0 - cfg.beta2) * grad.cwiseAbs2();
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      theta *= 1.0 - cfg.learning_rate * cfg.weight_decay;
      theta.array() -= cfg.learning_rate * (first_moment.array() / bc1) /
                       ((second_moment.array() / bc2).sqrt() + cfg.epsilon);
    }
    const auto n = static_cast<double>(order.size());
    EpochMetrics metrics{epoch, loss_sum / n, hit_sum / n, evaluate_accuracy(model, x_val, y_val)};
    if (!std::isfinite(metrics.train_loss) || !theta.allFinite())
      throw DivergedTrainingError(epoch, "non-finite parameters at epoch " + std::to_string(epoch));
    result.history.push_back(metrics);
    if (metrics.val_acc > result.best_val_acc) {
      result.best_val_acc = metrics.val_acc;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

void append_history_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << "epoch,train_loss,train_acc,val_acc\n";
  out.precision(17);
  for (const auto& e : history)
    out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_acc << '\n';
}

void Mlp::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 4);
  binary::write_u8(out, kVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(in_dim_));
  binary::write_u32(out, static_cast<std::uint32_t>(depth_));
  binary::write_u32(out, static_cast<std::uint32_t>(width_));
  for (std::size_t l = 0; l < depth_; ++l) {
    binary::write_matrix_f64(out, weight(l));
    const auto b = bias(l);
    for (Index j = 0; j < b.size(); ++j) binary::write_f64(out, b(j));
  }
  binary::write_matrix_f64(out, head_weight());
  binary::write_f64(out, head_bias());
  if (!out) throw IoError("write failed for " + path.string());
}

Mlp Mlp::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  std::uint8_t version = 0;
  std::uint32_t in_dim = 0;
  std::uint32_t depth = 0;
  std::uint32_t width = 0;
  if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kMagic, 4))
    throw UnknownFormatError(path.string() + " is not an encoder checkpoint");
  if (!binary::read_u8(in, version) || version != kVersion)
    throw UnknownFormatError("unsupported checkpoint version");
  if (!binary::read_u32(in, in_dim) || !binary::read_u32(in, depth) || !binary::read_u32(in, width))
    throw DimensionMismatchError("truncated checkpoint header");
  Mlp m(in_dim, depth, width);
  bool ok = true;
  for (std::size_t l = 0; ok && l < depth; ++l) {
    MatrixXd w(width, l == 0 ? in_dim : width);
    ok = binary::read_matrix_f64(in, w);
    m.weight(l) = w;
    auto b = m.bias(l);
    for (Index j = 0; ok && j < b.size(); ++j) ok = binary::read_f64(in, b(j));
  }
  MatrixXd head(1, width);
  ok = ok && binary::read_matrix_f64(in, head);
  ok = ok && binary::read_f64(in, m.head_bias());
  if (!ok) throw DimensionMismatchError("truncated checkpoint payload");
  m.head_weight() = head;
  return m;
}

}  // namespace alignlab
