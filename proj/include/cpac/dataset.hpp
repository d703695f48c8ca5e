#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpac/common.hpp"

namespace cpac {

struct ImageShape {
  int height = 0;
  int width = 0;
};

struct DataMatrix {
  Matrix values;
  std::optional<std::vector<Index>> labels;
  std::optional<ImageShape> image_shape;
  /// Coordinates the connectivity graph is built on, when they differ from
  /// `values` (corrupted-graph experiments). Same shape as `values`.
  std::optional<Matrix> graph_points;

  const Matrix& graph_source() const { return graph_points ? *graph_points : values; }

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  /// Throws when values are non-finite or labels have the wrong length.
  void validate() const;
};

enum class DataFormat { kAuto, kCsv, kBinary };

DataFormat parse_format(const std::string& text);  // "auto" | "csv" | "bin"

/// CSV: one sample per line, comma-separated numbers, optional header line of
/// non-numeric names. Binary: "CPACMAT1", u32 rows, u32 cols, row-major f64.
/// kAuto picks binary when the file starts with the magic.
DataMatrix load_dataset(const std::string& path, DataFormat format = DataFormat::kAuto,
                        const std::string& labels_path = "");

Matrix read_csv_matrix(std::istream& in);
Matrix read_binary_matrix(std::istream& in);
void write_binary_matrix(std::ostream& out, const Matrix& m);
void write_csv_matrix(std::ostream& out, const Matrix& m);

/// One integer per line.
std::vector<Index> read_labels(std::istream& in);
void write_labels(std::ostream& out, const std::vector<Index>& labels);

void save_dataset(const std::string& path, const DataMatrix& data, DataFormat format);

ImageShape parse_image_shape(const std::string& text);  // "HxW"

/// Isotropic unit-variance Gaussian blobs. Centers sit at pairwise distance
/// >= separation; labels are blob ids, assigned round-robin.
DataMatrix synth_blobs(Index n, Index d, Index clusters, double separation, std::uint64_t seed);

/// synth_blobs plus membership noise that pollutes the graph: `noise` of the
/// points are assigned a wrong blob and graph_points moves them there, so the
/// mutual-KNN graph links them into that blob. values and labels stay clean,
/// which makes those links false positives that are long in the data.
DataMatrix synth_corrupted_blobs(Index n, Index d, Index clusters, double separation, std::uint64_t seed,
                                 double noise);

/// Per-feature zero mean / unit variance (constant features are only centered).
Matrix standardize(const Matrix& m);

}  // namespace cpac
