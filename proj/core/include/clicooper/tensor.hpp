#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace clicooper {

/// Dense row-major tensor of 64-bit reals. Shapes use u32 dims so the
/// on-disk encoding (checkpoint/cache/wire) is unambiguous.
struct TensorF64 {
    std::vector<uint32_t> shape;
    std::vector<double> values;

    TensorF64() = default;
    TensorF64(std::vector<uint32_t> s, std::vector<double> v);
    static TensorF64 zeros(std::vector<uint32_t> s);

    size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    // 2-D accessors; throw on rank mismatch.
    uint32_t rows() const;
    uint32_t cols() const;
    double& at(size_t r, size_t c);
    double at(size_t r, size_t c) const;

    /// Copy of row r as a flat vector (rank-2 only).
    std::vector<double> row(size_t r) const;
    void set_row(size_t r, const std::vector<double>& v);

    /// Gather rows by index into a new (idx.size() x cols) tensor.
    TensorF64 gather_rows(const std::vector<size_t>& idx) const;

    bool all_finite() const;
    bool same_shape(const TensorF64& o) const { return shape == o.shape; }

    std::string shape_str() const;
};

size_t shape_product(const std::vector<uint32_t>& shape);

} // namespace clicooper
