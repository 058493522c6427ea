#pragma once

#include <string>
#include <vector>

#include "wr/common.hpp"

namespace wr {

/// Global descriptor of one page.
struct PageEmbedding {
  std::string page_id;
  std::string writer_id;
  Vector vector;
};

using PageSet = std::vector<PageEmbedding>;

/// Stacks the page vectors into an n x dim matrix.
Matrix stack_vectors(const PageSet& pages);

}  // namespace wr
