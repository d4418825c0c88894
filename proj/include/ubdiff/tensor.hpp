#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ubdiff {

// 64-byte aligned storage so vectorized kernels take the same code path on
// every allocation; this keeps results bit-reproducible run to run.
template <typename T, std::size_t A>
struct AlignedAllocator {
    using value_type = T;
    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, A>;
    };
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, A>&) {}
    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(A)));
    }
    void deallocate(T* p, std::size_t n) {
        ::operator delete(p, n * sizeof(T), std::align_val_t(A));
    }
    bool operator==(const AlignedAllocator&) const { return true; }
    bool operator!=(const AlignedAllocator&) const { return false; }
};

using FloatVec = std::vector<float, AlignedAllocator<float, 64>>;

// Dense row-major float tensor. Shapes are small (rank <= 4), data is owned.
struct Tensor {
    std::vector<int> shape;
    FloatVec v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel(shape), 0.0f) {}
    Tensor(std::vector<int> s, float fill) : shape(std::move(s)), v(numel(shape), fill) {}

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    float* data() { return v.data(); }
    const float* data() const { return v.data(); }

    float& operator[](std::size_t i) { return v[i]; }
    float operator[](std::size_t i) const { return v[i]; }

    float& at(int i, int j) {
        return v[static_cast<std::size_t>(i) * shape[1] + j];
    }
    const float& at(int i, int j) const {
        return v[static_cast<std::size_t>(i) * shape[1] + j];
    }
    float& at(int i, int j, int k) {
        return v[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    const float& at(int i, int j, int k) const {
        return v[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    float& at(int b, int c, int h, int w) {
        return v[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const float& at(int b, int c, int h, int w) const {
        return v[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    void fill(float x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    float min() const {
        float m = v.empty() ? 0.0f : v[0];
        for (float x : v) m = std::min(m, x);
        return m;
    }
    float max() const {
        float m = v.empty() ? 0.0f : v[0];
        for (float x : v) m = std::max(m, x);
        return m;
    }
    float max_abs() const {
        float m = 0.0f;
        for (float x : v) m = std::max(m, std::abs(x));
        return m;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    shape_str(a.shape) + " vs " + shape_str(b.shape));
}

inline double l2_norm(const Tensor& a) {
    double s = 0.0;
    for (float x : a.v) s += double(x) * double(x);
    return std::sqrt(s);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(double(a.v[i]) - double(b.v[i])));
    return m;
}

inline double mean_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mean_abs_diff");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a.v[i]) - double(b.v[i]));
    return a.size() ? s / double(a.size()) : 0.0;
}

inline double mean_sq_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mean_sq_diff");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = double(a.v[i]) - double(b.v[i]);
        s += d * d;
    }
    return a.size() ? s / double(a.size()) : 0.0;
}

}  // namespace ubdiff
