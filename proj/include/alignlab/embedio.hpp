#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "alignlab/common.hpp"
#include "alignlab/metrics.hpp"

namespace alignlab {

// Two interchangeable layouts for an n x d embedding matrix.
//
// Text:   optional "# key = value" metadata lines (keys `model`, `layer`),
//         a header line "n d", then n*d whitespace-separated decimals in
//         row-major order.
// Binary: "EMB1", u8 version (1), u32 n, u32 d, n*d little-endian f32 in
//         row-major order, then optionally "META", u32 byte count and the
//         same key = value metadata as text.

enum class EmbeddingFormat { Text, Binary };

struct EmbeddingMeta {
  std::optional<std::string> model;
  std::optional<int> layer;
};

struct EmbeddingFile {
  EmbeddingFormat format = EmbeddingFormat::Text;
  EmbeddingMatrix matrix;
  EmbeddingMeta meta;
};

/// Format is detected from the leading magic bytes.
EmbeddingFile load_embeddings(const std::filesystem::path& path);

void save_embeddings(const MatrixXd& values, const std::filesystem::path& path, EmbeddingFormat format,
                     const EmbeddingMeta& meta = {});

struct AlignFilesOptions {
  MetricParams params{.knn_k = 10, .mknn_preprocess = true};
  /// Use only the first `batch` rows of both files.
  std::optional<Index> batch;
};

/// Scores two embedding files of the same samples.
double align_files(const std::filesystem::path& path1, const std::filesystem::path& path2, Metric metric,
                   const AlignFilesOptions& options = {});

}  // namespace alignlab
