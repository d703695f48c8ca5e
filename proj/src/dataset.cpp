#include "cpac/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "cpac/binary_io.hpp"

namespace cpac {

namespace {

constexpr std::string_view kMatMagic = "CPACMAT1";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_double(const std::string& cell, double& out) {
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

void DataMatrix::validate() const {
  for (Index r = 0; r < values.rows(); ++r)
    for (Index c = 0; c < values.cols(); ++c)
      if (!std::isfinite(values(r, c)))
        throw ParseError("non-finite value at row " + std::to_string(r) + ", column " + std::to_string(c));
  if (graph_points && (graph_points->rows() != values.rows() || graph_points->cols() != values.cols()))
    throw ParseError("graph coordinates must have the same shape as the data");
  if (graph_points && !graph_points->allFinite()) throw ParseError("non-finite value in graph coordinates");
  if (labels && static_cast<Index>(labels->size()) != values.rows())
    throw ParseError("label count " + std::to_string(labels->size()) + " does not match row count " +
                     std::to_string(values.rows()));
}

DataFormat parse_format(const std::string& text) {
  if (text == "auto") return DataFormat::kAuto;
  if (text == "csv") return DataFormat::kCsv;
  if (text == "bin" || text == "binary") return DataFormat::kBinary;
  throw ParameterError("unknown data format '" + text + "' (expected auto, csv or bin)");
}

Matrix read_csv_matrix(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    std::vector<double> row(cells.size());
    bool numeric = true;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_double(cells[c], row[c])) {
        numeric = false;
        if (rows.empty() && line_no == 1) break;  // header line
        throw ParseError("line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                         ": cannot parse '" + cells[c] + "' as a number");
      }
      if (!std::isfinite(row[c]))
        throw ParseError("line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                         ": non-finite value '" + cells[c] + "'");
    }
    if (!numeric) continue;
    if (rows.empty()) cols = row.size();
    if (row.size() != cols)
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols) + " fields, got " +
                       std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return m;
}

Matrix read_binary_matrix(std::istream& in) {
  io::expect_magic(in, kMatMagic);
  const auto rows = io::read_u32(in, "row count");
  const auto cols = io::read_u32(in, "column count");
  Matrix m = io::read_matrix_payload(in, rows, cols, "matrix payload");
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      if (!std::isfinite(m(r, c))) {
        const auto offset = 16 + 8 * (r * m.cols() + c);
        throw ParseError("non-finite value at row " + std::to_string(r) + ", column " + std::to_string(c) +
                         " (byte offset " + std::to_string(offset) + ")");
      }
  return m;
}

void write_binary_matrix(std::ostream& out, const Matrix& m) {
  io::write_magic(out, kMatMagic);
  io::write_matrix(out, m);
}

void write_csv_matrix(std::ostream& out, const Matrix& m) {
  out << std::setprecision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
}

std::vector<Index> read_labels(std::istream& in) {
  std::vector<Index> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    Index v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size())
      throw ParseError("labels line " + std::to_string(line_no) + ": '" + t + "' is not an integer");
    labels.push_back(v);
  }
  return labels;
}

void write_labels(std::ostream& out, const std::vector<Index>& labels) {
  for (Index l : labels) out << l << '\n';
}

DataMatrix load_dataset(const std::string& path, DataFormat format, const std::string& labels_path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset " + path);
  if (format == DataFormat::kAuto) {
    char head[8] = {};
    in.read(head, 8);
    format = (in.gcount() == 8 && std::string_view(head, 8) == kMatMagic) ? DataFormat::kBinary : DataFormat::kCsv;
    in.clear();
    in.seekg(0);
  }
  DataMatrix data;
  data.values = format == DataFormat::kBinary ? read_binary_matrix(in) : read_csv_matrix(in);
  if (!labels_path.empty()) {
    std::ifstream lin(labels_path);
    if (!lin) throw ParseError("cannot open labels " + labels_path);
    data.labels = read_labels(lin);
  }
  data.validate();
  return data;
}

void save_dataset(const std::string& path, const DataMatrix& data, DataFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  if (format == DataFormat::kCsv)
    write_csv_matrix(out, data.values);
  else
    write_binary_matrix(out, data.values);
}

ImageShape parse_image_shape(const std::string& text) {
  const auto x = text.find_first_of("xX");
  ImageShape s;
  if (x != std::string::npos) {
    const auto h = text.substr(0, x), w = text.substr(x + 1);
    const auto rh = std::from_chars(h.data(), h.data() + h.size(), s.height);
    const auto rw = std::from_chars(w.data(), w.data() + w.size(), s.width);
    if (rh.ec == std::errc() && rw.ec == std::errc() && rh.ptr == h.data() + h.size() &&
        rw.ptr == w.data() + w.size() && s.height > 0 && s.width > 0)
      return s;
  }
  throw ParameterError("image shape must look like HxW, got '" + text + "'");
}

namespace {

Matrix blob_centers(Index d, Index clusters, double separation, Rng& rng) {
  Matrix centers = Matrix::Zero(clusters, d);
  if (clusters <= d) {
    // Scaled orthonormal basis vectors: every pair is exactly `separation` apart.
    for (Index k = 0; k < clusters; ++k) centers(k, k) = separation / std::sqrt(2.0);
  } else if (separation > 0.0) {
    for (int attempt = 0;; ++attempt) {
      for (Index k = 0; k < clusters; ++k)
        for (Index c = 0; c < d; ++c) centers(k, c) = standard_normal(rng) * separation * (1.0 + attempt * 0.1);
      double closest = std::numeric_limits<double>::infinity();
      for (Index a = 0; a < clusters; ++a)
        for (Index b = a + 1; b < clusters; ++b) closest = std::min(closest, (centers.row(a) - centers.row(b)).norm());
      if (closest >= separation) break;
    }
  }
  return centers;
}

DataMatrix blobs_with_centers(Index n, Index d, Index clusters, double separation, Rng& rng, Matrix& centers) {
  if (clusters < 1) throw ParameterError("synth_blobs: clusters must be >= 1");
  if (n < 1 || d < 1) throw ParameterError("synth_blobs: n and d must be >= 1");
  if (separation < 0.0) throw ParameterError("synth_blobs: separation must be >= 0");
  centers = blob_centers(d, clusters, separation, rng);
  DataMatrix data;
  data.values.resize(n, d);
  std::vector<Index> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index k = i % clusters;
    labels[static_cast<std::size_t>(i)] = k;
    for (Index c = 0; c < d; ++c) data.values(i, c) = centers(k, c) + standard_normal(rng);
  }
  data.labels = std::move(labels);
  return data;
}

}  // namespace

DataMatrix synth_blobs(Index n, Index d, Index clusters, double separation, std::uint64_t seed) {
  Rng rng = make_stream(seed, "synth");
  Matrix centers;
  return blobs_with_centers(n, d, clusters, separation, rng, centers);
}

DataMatrix synth_corrupted_blobs(Index n, Index d, Index clusters, double separation, std::uint64_t seed,
                                 double noise) {
  if (noise < 0.0 || noise > 1.0) throw ParameterError("synth_corrupted_blobs: noise must lie in [0, 1]");
  Rng rng = make_stream(seed, "synth");
  Matrix centers;
  DataMatrix data = blobs_with_centers(n, d, clusters, separation, rng, centers);
  Matrix moved = data.values;
  if (clusters > 1) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    shuffle(order, rng);
    const auto count = static_cast<std::size_t>(std::llround(noise * static_cast<double>(n)));
    for (std::size_t t = 0; t < count; ++t) {
      const Index i = order[t];
      const Index own = (*data.labels)[static_cast<std::size_t>(i)];
      const auto shift = 1 + static_cast<Index>(uniform01(rng) * static_cast<double>(clusters - 1));
      const Index wrong = (own + std::min(shift, clusters - 1)) % clusters;
      moved.row(i) += centers.row(wrong) - centers.row(own);
    }
  }
  data.graph_points = std::move(moved);
  return data;
}

Matrix standardize(const Matrix& m) {
  if (m.rows() == 0) return m;
  Matrix out = m.rowwise() - m.colwise().mean();
  for (Index c = 0; c < out.cols(); ++c) {
    const double sd = std::sqrt(out.col(c).squaredNorm() / static_cast<double>(out.rows()));
    if (sd > 0.0) out.col(c) /= sd;
  }
  return out;
}

}  // namespace cpac
