#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mskrig/common.hpp"
#include "mskrig/dictionary.hpp"
#include "mskrig/em.hpp"
#include "mskrig/lasso.hpp"
#include "mskrig/simulate.hpp"
#include "mskrig/sparse.hpp"
#include "mskrig/variogram.hpp"

namespace mskrig {

// All writers format doubles as %.17g so reruns are byte-identical.
std::string format_double(double v);

// CSV with header `x,y,value`.
PointSet read_points_csv(const std::string& path);
void write_points_csv(const std::string& path, const PointSet& data);

void write_variogram_csv(const std::string& path, const EmpiricalVariogram& v);
void write_lasso_path_csv(const std::string& path, const LassoPath& p);
void write_em_history_csv(const std::string& path, const std::vector<EMHistoryRow>& rows);
void write_dictionary_csv(const std::string& path, const Dictionary& d);

// Raw little-endian grid: int64 nx, int64 ny, nx*ny means, nx*ny variances
// (zeros when not computed).
void write_grid_bin(const std::string& path, const Grid& g,
                    const std::vector<double>* variances = nullptr);
struct GridBin {
    Grid grid;
    std::vector<double> variances;
};
GridBin read_grid_bin(const std::string& path);

// Raw little-endian doubles with an int64 count prefix.
void write_vector_bin(const std::string& path, const std::vector<double>& v);
std::vector<double> read_vector_bin(const std::string& path);

// 8-bit binary PGM, linear min-max scaling, top row = largest y; the sidecar
// `<path>.scale.txt` records the scaling so values are recoverable.
void write_grid_pgm(const std::string& path, const Grid& g);

// MatrixMarket coordinate format, symmetric lower triangle.
void write_matrix_market(const std::string& path, const SparseSymMatrix& A);

// Flat `key = value` file with # comments. Returned in file order; duplicate
// keys are an error.
std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path);
std::vector<std::pair<std::string, std::string>> parse_kv_text(const std::string& text);

} // namespace mskrig
