#include "alignlab/synthgen.hpp"

#include <fstream>
#include <vector>

#include "alignlab/errors.hpp"
#include "alignlab/text_format.hpp"

namespace alignlab {

std::string_view to_string(LabelFn fn) {
  switch (fn) {
    case LabelFn::MajorityTiebreak:
      return "majority";
    case LabelFn::Or:
      return "or";
    case LabelFn::Parity:
      return "parity";
  }
  return "majority";
}

LabelFn parse_label_fn(std::string_view name) {
  if (name == "majority") return LabelFn::MajorityTiebreak;
  if (name == "or") return LabelFn::Or;
  if (name == "parity") return LabelFn::Parity;
  throw ConfigError("unknown label function '" + std::string(name) + "'");
}

void GenConfig::validate() const {
  if (redundant_dim == 0 || unique_dim == 0) throw ConfigError("block dims must be positive");
  if (redundant + unique != task_features)
    throw ConfigError("R + U must equal the task-feature budget " + std::to_string(task_features));
  if (redundant > redundant_dim) throw ConfigError("R exceeds redundant_dim");
  if ((unique + 1) / 2 > unique_dim) throw ConfigError("ceil(U/2) exceeds unique_dim");
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw EmptyDatasetError("every split needs at least one sample");
}

std::size_t TaskMasks::selected() const {
  auto count = [](const BitVector& v) { return static_cast<std::size_t>(v.cast<int>().sum()); };
  return count(m_r) + count(m_u1) + count(m_u2);
}

BitComponents sample_components(const GenConfig& cfg, std::size_t n, Rng& rng) {
  if (n == 0) throw EmptyDatasetError("cannot sample an empty dataset");
  if (cfg.redundant_dim == 0 || cfg.unique_dim == 0) throw ConfigError("block dims must be positive");
  const auto rows = static_cast<Index>(n);
  BitComponents comp{BitMatrix(rows, static_cast<Index>(cfg.redundant_dim)),
                     BitMatrix(rows, static_cast<Index>(cfg.unique_dim)),
                     BitMatrix(rows, static_cast<Index>(cfg.unique_dim))};
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < comp.x_r.cols(); ++j) comp.x_r(i, j) = rng.bit();
    for (Index j = 0; j < comp.x_u1.cols(); ++j) comp.x_u1(i, j) = rng.bit();
    for (Index j = 0; j < comp.x_u2.cols(); ++j) comp.x_u2(i, j) = rng.bit();
  }
  return comp;
}

TaskMasks build_masks(std::size_t redundant, std::size_t unique, std::size_t redundant_dim,
                      std::size_t unique_dim) {
  const std::size_t u1 = (unique + 1) / 2;
  const std::size_t u2 = unique / 2;
  if (redundant > redundant_dim) throw ConfigError("R exceeds redundant_dim");
  if (u1 > unique_dim) throw ConfigError("ceil(U/2) exceeds unique_dim");
  auto prefix = [](std::size_t len, std::size_t ones) {
    BitVector v = BitVector::Zero(static_cast<Index>(len));
    v.head(static_cast<Index>(ones)).setOnes();
    return v;
  };
  return {prefix(redundant_dim, redundant), prefix(unique_dim, u1), prefix(unique_dim, u2)};
}

BitVector compute_labels(const BitComponents& comp, const TaskMasks& masks, LabelFn label_fn) {
  if (masks.m_r.size() != comp.x_r.cols() || masks.m_u1.size() != comp.x_u1.cols() ||
      masks.m_u2.size() != comp.x_u2.cols())
    throw ShapeError("task masks do not match component dims");
  if (masks.selected() == 0) throw ConfigError("no task-relevant features selected");

  // (block, column) pairs in selection order.
  std::vector<std::pair<const BitMatrix*, Index>> selected;
  auto collect = [&](const BitMatrix& block, const BitVector& mask) {
    for (Index j = 0; j < mask.size(); ++j)
      if (mask(j) != 0) selected.emplace_back(&block, j);
  };
  collect(comp.x_r, masks.m_r);
  collect(comp.x_u1, masks.m_u1);
  collect(comp.x_u2, masks.m_u2);

  const Index n = comp.rows();
  const auto total = static_cast<int>(selected.size());
  BitVector y(n);
  for (Index i = 0; i < n; ++i) {
    int ones = 0;
    for (const auto& [block, j] : selected) ones += (*block)(i, j);
    std::uint8_t label = 0;
    switch (label_fn) {
      case LabelFn::MajorityTiebreak:
        if (2 * ones == total)
          label = (*selected.front().first)(i, selected.front().second);
        else
          label = 2 * ones > total ? 1 : 0;
        break;
      case LabelFn::Or:
        label = ones > 0 ? 1 : 0;
        break;
      case LabelFn::Parity:
        label = static_cast<std::uint8_t>(ones & 1);
        break;
    }
    y(i) = label;
  }
  return y;
}

namespace {

Split make_split(const GenConfig& cfg, const TaskMasks& masks, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const BitComponents comp = sample_components(cfg, n, rng);
  const BitVector y = compute_labels(comp, masks, cfg.label_fn);
  const Index rows = comp.rows();
  const Index rd = comp.x_r.cols();
  const Index ud = comp.x_u1.cols();
  Split split;
  split.x1.resize(rows, rd + ud);
  split.x2.resize(rows, rd + ud);
  split.x1 << comp.x_r.cast<double>(), comp.x_u1.cast<double>();
  split.x2 << comp.x_r.cast<double>(), comp.x_u2.cast<double>();
  split.y = y.cast<double>();
  return split;
}

}  // namespace

SyntheticDataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  const TaskMasks masks = build_masks(cfg.redundant, cfg.unique, cfg.redundant_dim, cfg.unique_dim);
  SyntheticDataset ds;
  ds.config = cfg;
  ds.train = make_split(cfg, masks, cfg.n_train, mix_seed({cfg.seed, 1}));
  ds.val = make_split(cfg, masks, cfg.n_val, mix_seed({cfg.seed, 2}));
  ds.test = make_split(cfg, masks, cfg.n_test, mix_seed({cfg.seed, 3}));
  return ds;
}

void export_dataset_csv(const SyntheticDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const Index d1 = ds.train.x1.cols();
  const Index d2 = ds.train.x2.cols();
  out << "split";
  for (Index j = 0; j < d1; ++j) out << ",x1_" << j;
  for (Index j = 0; j < d2; ++j) out << ",x2_" << j;
  out << ",y\n";
  auto write = [&](std::string_view name, const Split& s) {
    for (Index i = 0; i < s.rows(); ++i) {
      out << name;
      for (Index j = 0; j < d1; ++j) out << ',' << format_double(s.x1(i, j));
      for (Index j = 0; j < d2; ++j) out << ',' << format_double(s.x2(i, j));
      out << ',' << static_cast<int>(s.y(i)) << '\n';
    }
  };
  write("train", ds.train);
  write("val", ds.val);
  write("test", ds.test);
  if (!out) throw IoError("write failed for " + path.string());

  const auto& c = ds.config;
  std::ofstream meta(path.string() + ".meta");
  if (!meta) throw IoError("cannot write metadata sidecar for " + path.string());
  meta << "# alignlab synthetic dataset metadata\n"
       << "n_train = " << c.n_train << "\n"
       << "n_val = " << c.n_val << "\n"
       << "n_test = " << c.n_test << "\n"
       << "redundant_dim = " << c.redundant_dim << "\n"
       << "unique_dim = " << c.unique_dim << "\n"
       << "redundant = " << c.redundant << "\n"
       << "unique = " << c.unique << "\n"
       << "task_features = " << c.task_features << "\n"
       << "label_fn = " << to_string(c.label_fn) << "\n"
       << "seed = " << c.seed << "\n"
       << "d_phi = " << ds.d_phi << "\n";
}

}  // namespace alignlab
