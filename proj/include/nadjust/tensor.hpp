#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace nadjust {

/// Dense NCHW tensor, row-major, double precision.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}

    size_t size() const { return data.size(); }

    size_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw;
    }

    double& at(int in, int ic, int ih, int iw) { return data[index(in, ic, ih, iw)]; }
    double at(int in, int ic, int ih, int iw) const { return data[index(in, ic, ih, iw)]; }

    /// Pointer to the (n, c) plane.
    double* plane(int in, int ic) { return data.data() + index(in, ic, 0, 0); }
    const double* plane(int in, int ic) const { return data.data() + index(in, ic, 0, 0); }

    void fill(double v) { data.assign(data.size(), v); }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const;
};

/// Raw binary tensor file, layout documented in docs/formats.md.
void write_tensor(const std::string& path, const Tensor4& t);
Tensor4 read_tensor(const std::string& path);

}  // namespace nadjust
