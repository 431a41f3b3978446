#pragma once

#include "steerbench/codec.hpp"
#include "steerbench/runtime/model.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace test_support {

using steerbench::codec::Matrix;
using steerbench::codec::Vector;

inline std::filesystem::path source_path(const std::string &rel) {
    return std::filesystem::path(STEERBENCH_SOURCE_DIR) / rel;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
    return random_matrix(n, 1, seed, scale).col(0);
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
    const auto p = std::filesystem::temp_directory_path() / ("steerbench_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline const steerbench::runtime::Model &tiny_model() {
    static const steerbench::runtime::Model m = steerbench::runtime::build_tiny_model(0);
    return m;
}

inline Vector to_vector(std::span<const float> row) {
    Vector v(static_cast<Eigen::Index>(row.size()));
    for (std::size_t i = 0; i < row.size(); ++i) v[static_cast<Eigen::Index>(i)] = row[i];
    return v;
}

} // namespace test_support
