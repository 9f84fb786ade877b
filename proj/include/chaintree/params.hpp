#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "chaintree/matrix.hpp"

namespace chaintree {

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

/// Named parameter tensors packed into one flat buffer. Gradient and
/// optimizer-state buffers share the same layout, so they are plain vectors
/// viewed through the same blocks.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), values_.size(), rows, cols});
    values_.resize(values_.size() + rows * cols, T{0});
    return blocks_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::size_t b) const { return blocks_[b]; }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  MatrixView<T> view(std::size_t b) { return view(values_, b); }
  ConstMatrixView<T> view(std::size_t b) const { return view(values_, b); }

  MatrixView<T> view(std::vector<T>& buffer, std::size_t b) const {
    const auto& blk = blocks_[b];
    return {buffer.data() + blk.offset, blk.rows, blk.cols};
  }
  ConstMatrixView<T> view(const std::vector<T>& buffer, std::size_t b) const {
    const auto& blk = blocks_[b];
    return {buffer.data() + blk.offset, blk.rows, blk.cols};
  }

  std::size_t find(std::string_view name) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      if (blocks_[b].name == name) return b;
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  }

 private:
  std::vector<ParamBlock> blocks_;
  std::vector<T> values_;
};

}  // namespace chaintree
