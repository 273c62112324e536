#include "clicooper/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace clicooper {

size_t shape_product(const std::vector<uint32_t>& shape) {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
}

TensorF64::TensorF64(std::vector<uint32_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
    if (shape_product(shape) != values.size()) {
        throw std::invalid_argument("TensorF64: shape " + shape_str() + " does not match " +
                                    std::to_string(values.size()) + " values");
    }
}

TensorF64 TensorF64::zeros(std::vector<uint32_t> s) {
    size_t n = shape_product(s);
    TensorF64 t;
    t.shape = std::move(s);
    t.values.assign(n, 0.0);
    return t;
}

uint32_t TensorF64::rows() const {
    if (shape.size() != 2) throw std::logic_error("TensorF64: rows() needs rank 2, got " + shape_str());
    return shape[0];
}

uint32_t TensorF64::cols() const {
    if (shape.size() != 2) throw std::logic_error("TensorF64: cols() needs rank 2, got " + shape_str());
    return shape[1];
}

double& TensorF64::at(size_t r, size_t c) { return values[r * cols() + c]; }
double TensorF64::at(size_t r, size_t c) const { return values[r * cols() + c]; }

std::vector<double> TensorF64::row(size_t r) const {
    size_t w = cols();
    return std::vector<double>(values.begin() + r * w, values.begin() + (r + 1) * w);
}

void TensorF64::set_row(size_t r, const std::vector<double>& v) {
    size_t w = cols();
    if (v.size() != w) throw std::invalid_argument("TensorF64: set_row width mismatch");
    std::copy(v.begin(), v.end(), values.begin() + r * w);
}

TensorF64 TensorF64::gather_rows(const std::vector<size_t>& idx) const {
    size_t w = cols();
    TensorF64 out = zeros({static_cast<uint32_t>(idx.size()), static_cast<uint32_t>(w)});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows()) throw std::out_of_range("TensorF64: gather_rows index out of range");
        std::copy(values.begin() + idx[i] * w, values.begin() + (idx[i] + 1) * w,
                  out.values.begin() + i * w);
    }
    return out;
}

bool TensorF64::all_finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string TensorF64::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

} // namespace clicooper
