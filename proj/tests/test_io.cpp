#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "mskrig/io.hpp"

using namespace mskrig;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    const fs::path p = fs::temp_directory_path() / "mskrig_io_tests";
    fs::create_directories(p);
    return p;
}

std::string path_of(const char* name) { return (scratch() / name).string(); }

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    f.write(content.data(), static_cast<long>(content.size()));
    REQUIRE(bool(f));
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("doubles are formatted with 17 significant digits and round-trip") {
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(2.5) == "2.5");
    CHECK(format_double(0.1) == "0.10000000000000001");

    const double vals[] = {0.1,    1.0 / 3.0, -2.7e-15, 1e300, 5e-324,
                           -0.0,   3.141592653589793,   0.0,   123456789.123456789};
    for (const double v : vals) {
        const std::string s = format_double(v);
        const double back = std::strtod(s.c_str(), nullptr);
        std::uint64_t bv, bb;
        std::memcpy(&bv, &v, 8);
        std::memcpy(&bb, &back, 8);
        CHECK(bv == bb);
    }
}

TEST_CASE("points CSV round-trips exactly and rejects malformed input") {
    PointSet data;
    data.points = {Point{0.1, 1.0 / 3.0}, Point{-2.7e-15, 1e300}, Point{0.0, -0.0}};
    data.values = Eigen::VectorXd(3);
    data.values << 1.5, -0.1, 2.7182818284590452;

    const std::string p = path_of("pts.csv");
    write_points_csv(p, data);
    const PointSet back = read_points_csv(p);
    REQUIRE(back.n() == 3);
    for (long i = 0; i < 3; ++i) {
        CHECK(back.points[static_cast<size_t>(i)].x == data.points[static_cast<size_t>(i)].x);
        CHECK(back.points[static_cast<size_t>(i)].y == data.points[static_cast<size_t>(i)].y);
        CHECK(back.values[i] == data.values[i]);
    }

    // Blank lines and CRLF endings are tolerated.
    spit(path_of("crlf.csv"), "x,y,value\r\n1,2,3\r\n\r\n4,5,6\r\n");
    CHECK(read_points_csv(path_of("crlf.csv")).n() == 2);

    spit(path_of("bad_header.csv"), "a,b,c\n1,2,3\n");
    CHECK_THROWS_AS(read_points_csv(path_of("bad_header.csv")), IoError);
    spit(path_of("two_fields.csv"), "x,y,value\n1,2\n");
    CHECK_THROWS_AS(read_points_csv(path_of("two_fields.csv")), IoError);
    spit(path_of("four_fields.csv"), "x,y,value\n1,2,3,4\n");
    CHECK_THROWS_AS(read_points_csv(path_of("four_fields.csv")), IoError);
    spit(path_of("bad_number.csv"), "x,y,value\n1,2,abc\n");
    CHECK_THROWS_AS(read_points_csv(path_of("bad_number.csv")), IoError);
    CHECK_THROWS_AS(read_points_csv(path_of("missing.csv")), IoError);
}

TEST_CASE("grid binaries round-trip bitwise, with and without variances") {
    Grid g = make_grid(5, 4);
    g.values.resize(20);
    for (size_t i = 0; i < 20; ++i) g.values[i] = -3.0 + 0.7 * static_cast<double>(i);
    g.values[3] = std::numeric_limits<double>::quiet_NaN();
    g.values[4] = 5e-324;
    g.values[5] = -0.0;
    std::vector<double> variances(20);
    for (size_t i = 0; i < 20; ++i) variances[i] = 0.01 * static_cast<double>(i);

    const std::string p = path_of("grid.bin");
    write_grid_bin(p, g, &variances);
    const GridBin back = read_grid_bin(p);
    CHECK(back.grid.nx == 5);
    CHECK(back.grid.ny == 4);
    CHECK(same_bits(back.grid.values, g.values));
    CHECK(same_bits(back.variances, variances));

    write_grid_bin(p, g); // no variances: zero-filled block
    const GridBin zeros = read_grid_bin(p);
    CHECK(same_bits(zeros.grid.values, g.values));
    CHECK(zeros.variances == std::vector<double>(20, 0.0));

    Grid empty = make_grid(2, 2);
    CHECK_THROWS_AS(write_grid_bin(path_of("nope.bin"), empty), ConfigError);
    std::vector<double> short_var(3, 0.0);
    CHECK_THROWS_AS(write_grid_bin(path_of("nope.bin"), g, &short_var), ConfigError);

    spit(path_of("trunc.bin"), std::string(16, '\0')); // nx = ny = 0
    CHECK_THROWS_AS(read_grid_bin(path_of("trunc.bin")), IoError);
    spit(path_of("short.bin"), std::string(8, '\0'));
    CHECK_THROWS_AS(read_grid_bin(path_of("short.bin")), IoError);
    {
        // Valid header claiming 1x1 but no payload.
        std::string h(16, '\0');
        h[0] = 1;
        h[8] = 1;
        spit(path_of("nopayload.bin"), h);
    }
    CHECK_THROWS_AS(read_grid_bin(path_of("nopayload.bin")), IoError);
}

TEST_CASE("vector binaries round-trip bitwise") {
    const std::string p = path_of("vec.bin");
    write_vector_bin(p, {});
    CHECK(read_vector_bin(p).empty());

    std::vector<double> v = {0.1, -1e300, 5e-324, 0.0, -0.0, 42.0,
                             std::numeric_limits<double>::infinity()};
    write_vector_bin(p, v);
    CHECK(same_bits(read_vector_bin(p), v));

    {
        std::string h(8, '\0');
        h[0] = 10; // claims 10 doubles, provides none
        spit(path_of("vtrunc.bin"), h);
    }
    CHECK_THROWS_AS(read_vector_bin(path_of("vtrunc.bin")), IoError);
    spit(path_of("vneg.bin"), std::string(8, '\xff')); // count = -1
    CHECK_THROWS_AS(read_vector_bin(path_of("vneg.bin")), IoError);
}

TEST_CASE("grid images use min-max bytes, flipped rows, and a scale sidecar") {
    Grid g = make_grid(3, 2);
    g.values = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0};
    const std::string p = path_of("grid.pgm");
    write_grid_pgm(p, g);

    const std::string raw = slurp(p);
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(raw.size() == header.size() + 6);
    CHECK(raw.substr(0, header.size()) == header);
    // Top image row is the j = 1 grid row; pixels are (v - lo) / span * 255.
    const unsigned char expect[6] = {153, 204, 255, 0, 51, 102};
    for (size_t i = 0; i < 6; ++i)
        CHECK(static_cast<unsigned char>(raw[header.size() + i]) == expect[i]);

    const auto side = parse_kv_file(p + ".scale.txt");
    REQUIRE(side.size() == 3);
    CHECK(side[0].first == "min");
    CHECK(side[0].second == "0");
    CHECK(side[1].first == "max");
    CHECK(side[1].second == "5");

    // A constant grid must not divide by zero; all pixels map to zero.
    Grid flat = make_grid(2, 2);
    flat.values = {1.5, 1.5, 1.5, 1.5};
    write_grid_pgm(path_of("flat.pgm"), flat);
    const std::string fraw = slurp(path_of("flat.pgm"));
    const std::string fheader = "P5\n2 2\n255\n";
    REQUIRE(fraw.size() == fheader.size() + 4);
    for (size_t i = 0; i < 4; ++i) CHECK(fraw[fheader.size() + i] == 0);
}

TEST_CASE("matrix-market output is the exact symmetric lower triangle") {
    const SparseSymMatrix D = diagonal_matrix(3, 2.0);
    const std::string p = path_of("mat.mm");
    write_matrix_market(p, D);
    CHECK(slurp(p) ==
          "%%MatrixMarket matrix coordinate real symmetric\n"
          "3 3 3\n"
          "1 1 2\n"
          "2 2 2\n"
          "3 3 2\n");
}

TEST_CASE("key-value parsing: comments, trimming, order, and duplicates") {
    const std::string text =
        "# full-line comment\n"
        "a = 1\n"
        "  b   =  two words \t\n"
        "c=3 # trailing comment\n"
        "\n"
        "d = x=y\n";
    const auto kv = parse_kv_text(text);
    REQUIRE(kv.size() == 4);
    CHECK(kv[0].first == "a");
    CHECK(kv[0].second == "1");
    CHECK(kv[1].first == "b");
    CHECK(kv[1].second == "two words");
    CHECK(kv[2].first == "c");
    CHECK(kv[2].second == "3");
    CHECK(kv[3].first == "d");
    CHECK(kv[3].second == "x=y"); // value keeps everything after the first '='

    CHECK_THROWS_AS(parse_kv_text("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_kv_text("just some text\n"), ConfigError);
    CHECK_THROWS_AS(parse_kv_text(" = value\n"), ConfigError);
    CHECK(parse_kv_text("a =\n")[0].second.empty()); // empty value is allowed

    const std::string p = path_of("conf.txt");
    spit(p, "x = 1\ny = 2\n");
    CHECK(parse_kv_file(p).size() == 2);
    CHECK_THROWS_AS(parse_kv_file(path_of("no_such_file.txt")), IoError);
}

TEST_CASE("diagnostic CSV writers pin their formats") {
    LassoPath path;
    path.lambdas = {0.5, 0.25};
    path.betas = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
    path.n_active = {0, 1};
    path.explained_variance = {0.0, 0.125};
    write_lasso_path_csv(path_of("path.csv"), path);
    CHECK(slurp(path_of("path.csv")) ==
          "lambda,n_active,explained_variance,cv_mean,cv_se\n"
          "0.5,0,0,nan,nan\n"
          "0.25,1,0.125,nan,nan\n");

    path.cv_mean = {1.5, 1.25};
    path.cv_se = {0.125, 0.25};
    write_lasso_path_csv(path_of("path_cv.csv"), path);
    CHECK(slurp(path_of("path_cv.csv")) ==
          "lambda,n_active,explained_variance,cv_mean,cv_se\n"
          "0.5,0,0,1.5,0.125\n"
          "0.25,1,0.125,1.25,0.25\n");

    EmpiricalVariogram v;
    v.lag = {0.0625, 0.1875};
    v.gamma = {0.5, std::numeric_limits<double>::quiet_NaN()};
    v.count = {12, 0};
    v.max_lag = 0.25;
    write_variogram_csv(path_of("vario.csv"), v);
    CHECK(slurp(path_of("vario.csv")) ==
          "lag,gamma,count\n"
          "0.0625,0.5,12\n"
          "0.1875,nan,0\n");

    std::vector<EMHistoryRow> rows(1);
    rows[0].iter = 1;
    rows[0].sigma2 = 0.5;
    rows[0].logdetB = -1.25;
    rows[0].criterion = 0.0078125;
    rows[0].loglik = -10.5;
    write_em_history_csv(path_of("em.csv"), rows);
    CHECK(slurp(path_of("em.csv")) ==
          "iter,sigma2,logdetB,criterion,loglik\n"
          "1,0.5,-1.25,0.0078125,-10.5\n");

    Dictionary d;
    d.atoms = {BasisAtom{KernelFamily::cubic, 0.5, 0.0, 2.0, Point{0.25, 0.75}}};
    write_dictionary_csv(path_of("dict.csv"), d);
    CHECK(slurp(path_of("dict.csv")) ==
          "index,family,range,angle,ratio,knot_x,knot_y\n"
          "0,cubic,0.5,0,2,0.25,0.75\n");
}

TEST_CASE("writers report unwritable paths") {
    PointSet data;
    data.points = {Point{0, 0}};
    data.values = Eigen::VectorXd::Zero(1);
    const std::string bad = (scratch() / "no_such_dir" / "f.csv").string();
    CHECK_THROWS_AS(write_points_csv(bad, data), IoError);
    CHECK_THROWS_AS(write_vector_bin(bad, {1.0}), IoError);
}
