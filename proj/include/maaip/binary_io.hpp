#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "maaip/error.hpp"

namespace maaip::bin {

// Little-endian hosts only; the blob formats are not meant to travel across
// architectures.
template <typename T>
  requires std::is_trivially_copyable_v<T>
void write(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T read(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("binary blob truncated");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t max_len = 1u << 26) {
  const auto n = read<std::uint64_t>(is);
  if (n > max_len) throw ParseError("binary blob: string length out of range");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError("binary blob truncated");
  return s;
}

inline void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  write<std::uint64_t>(os, static_cast<std::uint64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline Eigen::VectorXd read_vector(std::istream& is) {
  const auto n = read<std::uint64_t>(is);
  if (n > (1u << 28)) throw ParseError("binary blob: vector length out of range");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  if (n > 0 && !is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw ParseError("binary blob truncated");
  }
  return v;
}

// Row-major payload regardless of Eigen storage order.
inline void write_matrix_rowmajor(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) write<double>(os, m(r, c));
  }
}

inline Eigen::MatrixXd read_matrix_rowmajor(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols);
  const auto bytes = static_cast<std::streamsize>(rows * cols * sizeof(double));
  if (bytes > 0 && !is.read(reinterpret_cast<char*>(m.data()), bytes)) throw ParseError("binary blob truncated");
  return m;
}

}  // namespace maaip::bin
