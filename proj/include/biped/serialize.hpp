#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>

#include <Eigen/Core>

#include "biped/errors.hpp"

namespace biped {

/// Little helper for the checkpoint payload: raw little-endian PODs, length-prefixed blobs.
class BinaryWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    buffer_.append(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    buffer_.append(s.data(), s.size());
  }

  template <typename Derived>
  void put_matrix(const Eigen::DenseBase<Derived>& m) {
    put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) put<double>(m(r, c));
    }
  }

  const std::string& data() const { return buffer_; }

 private:
  std::string buffer_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string_view data) : data_(data) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  Eigen::MatrixXd get_matrix() {
    const auto rows = get<std::uint64_t>();
    const auto cols = get<std::uint64_t>();
    if (rows * cols * sizeof(double) > data_.size() - pos_) throw FormatError("matrix exceeds payload");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = get<double>();
    }
    return m;
  }

  /// Reads a matrix that must have the given shape.
  template <typename Derived>
  void get_into(Eigen::PlainObjectBase<Derived>& out) {
    Eigen::MatrixXd m = get_matrix();
    if (m.rows() != out.rows() || m.cols() != out.cols()) throw FormatError("matrix shape mismatch");
    out = m;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw FormatError("unexpected end of payload");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace biped
