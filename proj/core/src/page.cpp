#include "wr/page.hpp"

namespace wr {

Matrix stack_vectors(const PageSet& pages) {
  if (pages.empty()) return Matrix(0, 0);
  const Index dim = pages.front().vector.size();
  Matrix out(static_cast<Index>(pages.size()), dim);
  for (std::size_t i = 0; i < pages.size(); ++i) {
    require(pages[i].vector.size() == dim,
            "page " + pages[i].page_id + " has dimension " +
                std::to_string(pages[i].vector.size()) + ", expected " + std::to_string(dim));
    out.row(static_cast<Index>(i)) = pages[i].vector.transpose();
  }
  return out;
}

}  // namespace wr
