#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace offpoc {

// Hexfloat scalar/tensor text IO shared by the checkpoint and buffer
// snapshot formats. Hexfloats round-trip doubles bit-exactly.

inline void write_scalar(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  out << buf;
}

inline double read_scalar(std::istream& in) {
  std::string token;
  if (!(in >> token)) {
    throw std::runtime_error("tensor io: unexpected end of stream");
  }
  return std::strtod(token.c_str(), nullptr);
}

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      write_scalar(out, m(r, c));
    }
    out << '\n';
  }
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0) {
    throw std::runtime_error("tensor io: bad matrix header");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = read_scalar(in);
    }
  }
  return m;
}

inline void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  out << v.size() << '\n';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out << ' ';
    write_scalar(out, v[i]);
  }
  out << '\n';
}

inline Eigen::VectorXd read_vector(std::istream& in) {
  Eigen::Index n = 0;
  if (!(in >> n) || n < 0) {
    throw std::runtime_error("tensor io: bad vector header");
  }
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = read_scalar(in);
  return v;
}

inline void expect_token(std::istream& in, const std::string& expected) {
  std::string token;
  if (!(in >> token) || token != expected) {
    throw std::runtime_error("tensor io: expected '" + expected + "', got '" +
                             token + "'");
  }
}

}  // namespace offpoc
