#include <filesystem>
#include <fstream>
#include <sstream>

#include "cpac/dataset.hpp"
#include "cpac/metrics.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cpac;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cpac_dataset_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("CSV parsing") {
  std::stringstream s("1,2\n3,4\n");
  Matrix expected(2, 2);
  expected << 1, 2, 3, 4;
  CHECK(read_csv_matrix(s) == expected);

  std::stringstream header("a,b\n1.5,-2e3\n");
  const Matrix h = read_csv_matrix(header);
  CHECK(h.rows() == 1);
  CHECK(h(0, 1) == -2000.0);

  std::stringstream nan_cell("1,2\n3,nan\n");
  try {
    read_csv_matrix(nan_cell);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
  }
  std::stringstream ragged("1,2\n3\n");
  CHECK_THROWS_AS(read_csv_matrix(ragged), ParseError);
  std::stringstream junk("1,2\n3,x4\n");
  CHECK_THROWS_AS(read_csv_matrix(junk), ParseError);
}

TEST_CASE("binary round trip is byte-identical") {
  Rng rng = make_stream(1, "bin");
  DataMatrix d;
  d.values = oracle::random_matrix(13, 7, rng);
  const auto path = scratch("m.bin");
  save_dataset(path.string(), d, DataFormat::kBinary);
  const DataMatrix back = load_dataset(path.string());
  CHECK(back.values == d.values);
  const auto again = scratch("m2.bin");
  save_dataset(again.string(), back, DataFormat::kBinary);
  CHECK(slurp(path) == slurp(again));
  CHECK(slurp(path).substr(0, 8) == "CPACMAT1");
}

TEST_CASE("CSV round trip keeps every bit") {
  Rng rng = make_stream(2, "csv");
  DataMatrix d;
  d.values = oracle::random_matrix(9, 4, rng);
  d.labels = std::vector<Index>{0, 1, 2, 0, 1, 2, 0, 1, 2};
  const auto path = scratch("m.csv");
  const auto labels = scratch("m.labels");
  save_dataset(path.string(), d, DataFormat::kCsv);
  {
    std::ofstream out(labels);
    write_labels(out, *d.labels);
  }
  const DataMatrix back = load_dataset(path.string(), DataFormat::kCsv, labels.string());
  CHECK(back.values == d.values);
  CHECK(back.labels == d.labels);

  std::ofstream short_labels(labels);
  short_labels << "0\n1\n";
  short_labels.close();
  CHECK_THROWS_AS(load_dataset(path.string(), DataFormat::kCsv, labels.string()), ParseError);
  CHECK_THROWS_AS(load_dataset(scratch("missing.csv").string()), ParseError);
}

TEST_CASE("small parsers") {
  CHECK(parse_format("bin") == DataFormat::kBinary);
  CHECK_THROWS_AS(parse_format("xml"), ParameterError);
  const auto shape = parse_image_shape("16x16");
  CHECK(shape.height == 16);
  CHECK(shape.width == 16);
  CHECK_THROWS_AS(parse_image_shape("16"), ParameterError);
  std::stringstream labels("1\n-2\n\n3\n");
  CHECK(read_labels(labels) == std::vector<Index>{1, -2, 3});
}

TEST_CASE("synthetic blobs") {
  SUBCASE("one cluster") {
    const auto d = synth_blobs(20, 3, 1, 10.0, 0);
    CHECK(std::all_of(d.labels->begin(), d.labels->end(), [](Index l) { return l == 0; }));
  }
  SUBCASE("separation 0: coordinates carry no label information") {
    const auto d = synth_blobs(400, 10, 4, 0.0, 1);
    // All centers coincide at the origin.
    CHECK(d.values.colwise().mean().norm() < 0.5);
    CHECK(nmi(*d.labels, std::vector<Index>(400, 0)) == 0.0);
  }
  SUBCASE("nearest-center classification recovers the labels") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto d = synth_blobs(400, 10, 4, 10.0, seed);
      Matrix centers = Matrix::Zero(4, 10);
      for (Index i = 0; i < 400; ++i) centers.row((*d.labels)[static_cast<std::size_t>(i)]) += d.values.row(i) / 100.0;
      std::vector<Index> pred(400);
      for (Index i = 0; i < 400; ++i) {
        Index best = 0;
        for (Index k = 1; k < 4; ++k)
          if ((d.values.row(i) - centers.row(k)).norm() < (d.values.row(i) - centers.row(best)).norm()) best = k;
        pred[static_cast<std::size_t>(i)] = best;
      }
      CHECK(acc(*d.labels, pred) >= 0.999);
    }
  }
  SUBCASE("graph corruption moves the requested fraction into another blob") {
    const auto clean = synth_blobs(400, 10, 4, 10.0, 3);
    const auto noisy = synth_corrupted_blobs(400, 10, 4, 10.0, 3, 0.05);
    CHECK(noisy.values == clean.values);
    CHECK(noisy.labels == clean.labels);
    REQUIRE(noisy.graph_points);
    std::size_t moved = 0;
    for (Index i = 0; i < 400; ++i) {
      const double shift = (noisy.graph_points->row(i) - clean.values.row(i)).norm();
      if (shift > 0) {
        ++moved;
        CHECK(shift == doctest::Approx(10.0));
      }
    }
    CHECK(moved == 20);
    CHECK(synth_corrupted_blobs(400, 10, 4, 10.0, 3, 0.0).graph_points == clean.values);
    CHECK_THROWS_AS(synth_corrupted_blobs(10, 2, 2, 1.0, 0, 1.5), ParameterError);
  }
  SUBCASE("deterministic") { CHECK(synth_blobs(50, 4, 3, 5.0, 9).values == synth_blobs(50, 4, 3, 5.0, 9).values); }
  SUBCASE("bad arguments") {
    CHECK_THROWS_AS(synth_blobs(10, 2, 0, 1.0, 0), ParameterError);
    CHECK_THROWS_AS(synth_blobs(10, 2, 2, -1.0, 0), ParameterError);
  }
}

TEST_CASE("standardize") {
  Matrix m(4, 2);
  m << 1, 5, 2, 5, 3, 5, 4, 5;
  const Matrix s = standardize(m);
  CHECK(s.col(0).mean() == doctest::Approx(0.0));
  CHECK(std::sqrt(s.col(0).squaredNorm() / 4) == doctest::Approx(1.0));
  CHECK(s.col(1).isZero(0));
}
