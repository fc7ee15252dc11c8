#include "alignlab/embedio.hpp"

#include <fstream>
#include <sstream>

#include "alignlab/binary_io.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/text_format.hpp"

namespace alignlab {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr char kMetaMagic[4] = {'M', 'E', 'T', 'A'};
constexpr std::uint8_t kVersion = 1;

void apply_meta(EmbeddingMeta& meta, const std::string& key, const std::string& value) {
  if (key == "model") {
    meta.model = value;
  } else if (key == "layer") {
    const auto layer = parse_int(value);
    if (!layer) throw UnknownFormatError("layer metadata is not an integer");
    meta.layer = static_cast<int>(*layer);
  }
}

std::string meta_text(const EmbeddingMeta& meta) {
  std::string text;
  if (meta.model) text += "model = " + *meta.model + "\n";
  if (meta.layer) text += "layer = " + std::to_string(*meta.layer) + "\n";
  return text;
}

void require_finite(const MatrixXd& m) {
  if (!m.allFinite()) throw NonFiniteError("embedding file contains non-finite values");
}

EmbeddingFile load_binary(std::istream& in) {
  std::uint8_t version = 0;
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  if (!binary::read_u8(in, version) || version != kVersion)
    throw UnknownFormatError("unsupported embedding file version");
  if (!binary::read_u32(in, n) || !binary::read_u32(in, d))
    throw DimensionMismatchError("truncated embedding header");
  EmbeddingFile file;
  file.format = EmbeddingFormat::Binary;
  file.matrix.values.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      float v = 0.0F;
      if (!binary::read_f32(in, v))
        throw DimensionMismatchError("payload shorter than the declared " + std::to_string(n) + "x" +
                                     std::to_string(d));
      file.matrix.values(i, j) = static_cast<double>(v);
    }
  }
  char tag[4] = {};
  if (in.read(tag, 4)) {
    std::uint32_t len = 0;
    if (std::string_view(tag, 4) != std::string_view(kMetaMagic, 4) || !binary::read_u32(in, len))
      throw DimensionMismatchError("payload longer than the declared dimensions");
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw DimensionMismatchError("truncated metadata trailer");
    for (const auto& [key, value] : parse_key_values(text)) apply_meta(file.meta, key, value);
  } else if (in.gcount() != 0) {
    throw DimensionMismatchError("payload longer than the declared dimensions");
  }
  require_finite(file.matrix.values);
  return file;
}

EmbeddingFile load_text(const std::string& text) {
  EmbeddingFile file;
  file.format = EmbeddingFormat::Text;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::pair<std::int64_t, std::int64_t>> shape;
  while (!shape && std::getline(lines, line)) {
    ++line_no;
    auto view = trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      view.remove_prefix(1);
      if (const auto eq = view.find('='); eq != std::string_view::npos)
        apply_meta(file.meta, std::string(trim(view.substr(0, eq))), std::string(trim(view.substr(eq + 1))));
      continue;
    }
    std::istringstream header{std::string(view)};
    std::string a;
    std::string b;
    std::string extra;
    header >> a >> b;
    const auto n = parse_int(a);
    const auto d = parse_int(b);
    if (!n || !d || *n < 0 || *d < 0 || (header >> extra))
      throw UnknownFormatError("line " + std::to_string(line_no) + ": expected an 'n d' header");
    shape.emplace(*n, *d);
  }
  if (!shape) throw UnknownFormatError("missing 'n d' header");
  const auto [n, d] = *shape;
  file.matrix.values.resize(n, d);
  std::int64_t count = 0;
  std::string token;
  while (lines >> token) {
    const auto v = parse_double(token);
    if (!v) {
      if (token == "inf" || token == "-inf") throw NonFiniteError("embedding file contains non-finite values");
      throw UnknownFormatError("non-numeric token '" + token + "'");
    }
    if (!std::isfinite(*v)) throw NonFiniteError("embedding file contains non-finite values");
    if (count >= n * d) throw DimensionMismatchError("payload longer than the declared dimensions");
    file.matrix.values(count / d, count % d) = *v;
    ++count;
  }
  if (count != n * d)
    throw DimensionMismatchError("payload has " + std::to_string(count) + " values, expected " +
                                 std::to_string(n * d));
  return file;
}

}  // namespace

EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::string_view(magic, 4) == std::string_view(kMagic, 4)) return load_binary(in);
  in.clear();
  in.seekg(0);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_text(buffer.str());
}

void save_embeddings(const MatrixXd& values, const std::filesystem::path& path, EmbeddingFormat format,
                     const EmbeddingMeta& meta) {
  if (values.size() == 0) throw ShapeError("refusing to save an empty embedding matrix");
  if (!values.allFinite()) throw NonFiniteError("embedding contains non-finite values");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  if (format == EmbeddingFormat::Binary) {
    out.write(kMagic, 4);
    binary::write_u8(out, kVersion);
    binary::write_u32(out, static_cast<std::uint32_t>(values.rows()));
    binary::write_u32(out, static_cast<std::uint32_t>(values.cols()));
    for (Index i = 0; i < values.rows(); ++i)
      for (Index j = 0; j < values.cols(); ++j) binary::write_f32(out, static_cast<float>(values(i, j)));
    if (const auto text = meta_text(meta); !text.empty()) {
      out.write(kMetaMagic, 4);
      binary::write_u32(out, static_cast<std::uint32_t>(text.size()));
      out.write(text.data(), static_cast<std::streamsize>(text.size()));
    }
  } else {
    if (meta.model) out << "# model = " << *meta.model << '\n';
    if (meta.layer) out << "# layer = " << *meta.layer << '\n';
    out << values.rows() << ' ' << values.cols() << '\n';
    for (Index i = 0; i < values.rows(); ++i) {
      for (Index j = 0; j < values.cols(); ++j) out << (j ? " " : "") << format_double(values(i, j));
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

double align_files(const std::filesystem::path& path1, const std::filesystem::path& path2, Metric metric,
                   const AlignFilesOptions& options) {
  const auto a = load_embeddings(path1);
  const auto b = load_embeddings(path2);
  if (a.matrix.values.rows() != b.matrix.values.rows())
    throw ShapeError("embedding files have different sample counts");
  Index rows = a.matrix.values.rows();
  if (options.batch) {
    if (*options.batch < 1 || *options.batch > rows) throw ConfigError("batch must be in [1, n]");
    rows = *options.batch;
  }
  return evaluate_metric(metric, a.matrix.values.topRows(rows), b.matrix.values.topRows(rows), options.params);
}

}  // namespace alignlab
