#pragma once

// Plain serial reference kernels. These mirror the OpenMP kernels in
// tensor.cpp and exist so tests and the benchmark can compare against an
// implementation with no parallel structure at all.

#include <cmath>
#include <cstddef>
#include <vector>

namespace adavit::ref {

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

inline std::vector<double> softmax_rows(const std::vector<double>& x, std::size_t rows,
                                        std::size_t cols) {
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = std::exp(x[r * cols + j] - mx);
      z += out[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= z;
  }
  return out;
}

// x[C,X,Y,Z], w[O,C,k,k,k], b[O], zero padding, arbitrary stride
inline std::vector<double> conv3d(const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& b, std::size_t cin, std::size_t X,
                                  std::size_t Y, std::size_t Z, std::size_t cout, std::size_t k,
                                  std::size_t stride, std::size_t pad) {
  const std::size_t ox = (X + 2 * pad - k) / stride + 1;
  const std::size_t oy = (Y + 2 * pad - k) / stride + 1;
  const std::size_t oz = (Z + 2 * pad - k) / stride + 1;
  std::vector<double> out(cout * ox * oy * oz);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < ox; ++i)
      for (std::size_t j = 0; j < oy; ++j)
        for (std::size_t l = 0; l < oz; ++l) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t kx = 0; kx < k; ++kx)
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kz = 0; kz < k; ++kz) {
                  const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(i * stride + kx) -
                                            static_cast<std::ptrdiff_t>(pad);
                  const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(j * stride + ky) -
                                            static_cast<std::ptrdiff_t>(pad);
                  const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(l * stride + kz) -
                                            static_cast<std::ptrdiff_t>(pad);
                  if (sx < 0 || sy < 0 || sz < 0 || sx >= static_cast<std::ptrdiff_t>(X) ||
                      sy >= static_cast<std::ptrdiff_t>(Y) || sz >= static_cast<std::ptrdiff_t>(Z))
                    continue;
                  acc += x[((ci * X + sx) * Y + sy) * Z + sz] *
                         w[(((co * cin + ci) * k + kx) * k + ky) * k + kz];
                }
          out[((co * ox + i) * oy + j) * oz + l] = acc;
        }
  return out;
}

// x[C,g,g,g], w[C,O,k,k,k], kernel == stride
inline std::vector<double> transposed_conv3d(const std::vector<double>& x,
                                             const std::vector<double>& w,
                                             const std::vector<double>& b, std::size_t cin,
                                             std::size_t gx, std::size_t gy, std::size_t gz,
                                             std::size_t cout, std::size_t k) {
  const std::size_t ox = gx * k, oy = gy * k, oz = gz * k;
  std::vector<double> out(cout * ox * oy * oz);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < gx; ++i)
      for (std::size_t j = 0; j < gy; ++j)
        for (std::size_t l = 0; l < gz; ++l)
          for (std::size_t kx = 0; kx < k; ++kx)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kz = 0; kz < k; ++kz) {
                double acc = b[co];
                for (std::size_t ci = 0; ci < cin; ++ci)
                  acc += x[((ci * gx + i) * gy + j) * gz + l] *
                         w[(((ci * cout + co) * k + kx) * k + ky) * k + kz];
                out[((co * ox + i * k + kx) * oy + j * k + ky) * oz + l * k + kz] = acc;
              }
  return out;
}

}  // namespace adavit::ref
