#pragma once

#include <cstddef>
#include <vector>

namespace sapg {

/// Contiguous index range [offset, offset + size) carrying one component of a
/// separable regulariser, with that component's homogeneity degree.
struct Block {
  std::size_t offset = 0;
  std::size_t size = 0;
  double alpha = 1.0;

  bool operator==(const Block&) const = default;
};

using BlockList = std::vector<Block>;

/// True when blocks are disjoint and together cover [0, dim).
bool blocks_partition(const BlockList& blocks, std::size_t dim);

}  // namespace sapg
