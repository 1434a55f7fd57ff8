#pragma once

// Dense helpers shared between the conic front end and the solver core.

#include <vector>

#include "winrisk/conic.hpp"

namespace winrisk::conic_detail {

std::vector<double> block_matrix(const ConicProgram::Block& blk, const std::vector<double>& y);
double eig_min(int n, std::vector<double>& a);
void adjoint_accumulate(const ConicProgram::Block& blk, const double* M, double scale,
                        std::vector<double>& out);
double dot_row(const ConicProgram::Row& row, const std::vector<double>& y);

}  // namespace winrisk::conic_detail
