#include "mskrig/io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mskrig {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path, bool binary = false) {
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) throw IoError("cannot open for reading: " + path);
    return f;
}

void finish(std::ofstream& f, const std::string& path) {
    f.flush();
    if (!f) throw IoError("write failed: " + path);
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

double parse_double(const std::string& s, const std::string& path, long line) {
    const char* c = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(c, &end);
    if (end == c || *end != '\0')
        throw IoError(path + ":" + std::to_string(line) + ": bad number '" + s + "'");
    return v;
}

} // namespace

PointSet read_points_csv(const std::string& path) {
    std::ifstream f = open_in(path);
    std::string line;
    if (!std::getline(f, line) || strip_cr(line) != "x,y,value")
        throw IoError(path + ": expected header 'x,y,value'");
    PointSet data;
    std::vector<double> values;
    long ln = 1;
    while (std::getline(f, line)) {
        ++ln;
        line = strip_cr(line);
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string fx, fy, fv;
        if (!std::getline(ss, fx, ',') || !std::getline(ss, fy, ',') ||
            !std::getline(ss, fv, ',') || ss.rdbuf()->in_avail() > 0)
            throw IoError(path + ":" + std::to_string(ln) + ": expected 3 fields");
        data.points.push_back(Point{parse_double(fx, path, ln), parse_double(fy, path, ln)});
        values.push_back(parse_double(fv, path, ln));
    }
    data.values = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                    static_cast<long>(values.size()));
    return data;
}

void write_points_csv(const std::string& path, const PointSet& data) {
    std::ofstream f = open_out(path);
    f << "x,y,value\n";
    for (long i = 0; i < data.n(); ++i)
        f << format_double(data.points[i].x) << ',' << format_double(data.points[i].y) << ','
          << format_double(data.values[i]) << '\n';
    finish(f, path);
}

void write_variogram_csv(const std::string& path, const EmpiricalVariogram& v) {
    std::ofstream f = open_out(path);
    f << "lag,gamma,count\n";
    for (size_t b = 0; b < v.lag.size(); ++b)
        f << format_double(v.lag[b]) << ',' << format_double(v.gamma[b]) << ',' << v.count[b]
          << '\n';
    finish(f, path);
}

void write_lasso_path_csv(const std::string& path, const LassoPath& p) {
    std::ofstream f = open_out(path);
    f << "lambda,n_active,explained_variance,cv_mean,cv_se\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (long k = 0; k < p.m(); ++k) {
        f << format_double(p.lambdas[k]) << ',' << p.n_active[k] << ','
          << format_double(p.explained_variance[k]) << ','
          << format_double(p.has_cv() ? p.cv_mean[k] : nan) << ','
          << format_double(p.has_cv() ? p.cv_se[k] : nan) << '\n';
    }
    finish(f, path);
}

void write_em_history_csv(const std::string& path, const std::vector<EMHistoryRow>& rows) {
    std::ofstream f = open_out(path);
    f << "iter,sigma2,logdetB,criterion,loglik\n";
    for (const EMHistoryRow& r : rows)
        f << r.iter << ',' << format_double(r.sigma2) << ',' << format_double(r.logdetB) << ','
          << format_double(r.criterion) << ',' << format_double(r.loglik) << '\n';
    finish(f, path);
}

void write_dictionary_csv(const std::string& path, const Dictionary& d) {
    std::ofstream f = open_out(path);
    f << "index,family,range,angle,ratio,knot_x,knot_y\n";
    for (long j = 0; j < d.p(); ++j) {
        const BasisAtom& a = d.atoms[j];
        f << j << ',' << to_string(a.family) << ',' << format_double(a.range) << ','
          << format_double(a.angle) << ',' << format_double(a.ratio) << ','
          << format_double(a.knot.x) << ',' << format_double(a.knot.y) << '\n';
    }
    finish(f, path);
}

namespace {

void put_i64(std::ofstream& f, std::int64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(buf), 8);
}

std::int64_t get_i64(std::ifstream& f, const std::string& path) {
    unsigned char buf[8];
    if (!f.read(reinterpret_cast<char*>(buf), 8)) throw IoError(path + ": truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<std::int64_t>(v);
}

void put_doubles(std::ofstream& f, const double* v, long n) {
    static_assert(sizeof(double) == 8);
    for (long i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &v[i], 8);
        unsigned char buf[8];
        for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
        f.write(reinterpret_cast<const char*>(buf), 8);
    }
}

void get_doubles(std::ifstream& f, double* v, long n, const std::string& path) {
    for (long i = 0; i < n; ++i) {
        unsigned char buf[8];
        if (!f.read(reinterpret_cast<char*>(buf), 8)) throw IoError(path + ": truncated data");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
        std::memcpy(&v[i], &bits, 8);
    }
}

} // namespace

void write_grid_bin(const std::string& path, const Grid& g, const std::vector<double>* variances) {
    if (g.values.size() != static_cast<size_t>(g.cells()))
        throw ConfigError("grid binary: values missing");
    if (variances && variances->size() != static_cast<size_t>(g.cells()))
        throw ConfigError("grid binary: variance size mismatch");
    std::ofstream f = open_out(path, true);
    put_i64(f, g.nx);
    put_i64(f, g.ny);
    put_doubles(f, g.values.data(), g.cells());
    if (variances) {
        put_doubles(f, variances->data(), g.cells());
    } else {
        const std::vector<double> zeros(static_cast<size_t>(g.cells()), 0.0);
        put_doubles(f, zeros.data(), g.cells());
    }
    finish(f, path);
}

GridBin read_grid_bin(const std::string& path) {
    std::ifstream f = open_in(path, true);
    GridBin out;
    const std::int64_t nx = get_i64(f, path);
    const std::int64_t ny = get_i64(f, path);
    if (nx < 1 || ny < 1) throw IoError(path + ": bad grid dimensions");
    out.grid = make_grid(nx, ny);
    out.grid.values.resize(static_cast<size_t>(nx * ny));
    out.variances.resize(static_cast<size_t>(nx * ny));
    get_doubles(f, out.grid.values.data(), nx * ny, path);
    get_doubles(f, out.variances.data(), nx * ny, path);
    return out;
}

void write_vector_bin(const std::string& path, const std::vector<double>& v) {
    std::ofstream f = open_out(path, true);
    put_i64(f, static_cast<std::int64_t>(v.size()));
    put_doubles(f, v.data(), static_cast<long>(v.size()));
    finish(f, path);
}

std::vector<double> read_vector_bin(const std::string& path) {
    std::ifstream f = open_in(path, true);
    const std::int64_t n = get_i64(f, path);
    if (n < 0) throw IoError(path + ": bad vector length");
    std::vector<double> v(static_cast<size_t>(n));
    get_doubles(f, v.data(), n, path);
    return v;
}

void write_grid_pgm(const std::string& path, const Grid& g) {
    if (g.values.size() != static_cast<size_t>(g.cells()))
        throw ConfigError("grid image: values missing");
    double lo = g.values[0], hi = g.values[0];
    for (const double v : g.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream f = open_out(path, true);
    f << "P5\n" << g.nx << " " << g.ny << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(g.nx));
    for (long j = g.ny - 1; j >= 0; --j) { // top image row = largest y
        for (long i = 0; i < g.nx; ++i) {
            const double t = (g.values[j * g.nx + i] - lo) / span;
            row[static_cast<size_t>(i)] = static_cast<unsigned char>(std::min(255.0, t * 255.0));
        }
        f.write(reinterpret_cast<const char*>(row.data()), g.nx);
    }
    finish(f, path);

    std::ofstream s = open_out(path + ".scale.txt");
    s << "min = " << format_double(lo) << "\n";
    s << "max = " << format_double(hi) << "\n";
    s << "orientation = top row is largest y\n";
    finish(s, path + ".scale.txt");
}

void write_matrix_market(const std::string& path, const SparseSymMatrix& A) {
    std::ofstream f = open_out(path);
    f << "%%MatrixMarket matrix coordinate real symmetric\n";
    f << A.size() << " " << A.size() << " " << A.nnz_lower() << "\n";
    const auto& L = A.lower();
    for (long j = 0; j < L.outerSize(); ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(L, j); it; ++it)
            f << (it.row() + 1) << " " << (it.col() + 1) << " " << format_double(it.value())
              << "\n";
    finish(f, path);
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

} // namespace

std::vector<std::pair<std::string, std::string>> parse_kv_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::set<std::string> seen;
    std::istringstream ss(text);
    std::string line;
    long ln = 0;
    while (std::getline(ss, line)) {
        ++ln;
        line = strip_cr(line);
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(ln) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(ln) + ": empty key");
        if (!seen.insert(key).second)
            throw ConfigError("config: duplicate key '" + key + "'");
        out.emplace_back(key, val);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path) {
    std::ifstream f = open_in(path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_kv_text(buf.str());
}

} // namespace mskrig
