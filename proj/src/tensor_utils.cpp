#include "permakey/tensor_utils.hpp"

#include <cstring>
#include <sstream>

#include "permakey/errors.hpp"

namespace permakey {

void check_finite(const torch::Tensor& t, const std::string& what) {
  if (!t.defined()) return;
  auto bad = torch::logical_not(torch::isfinite(t.detach()));
  if (!bad.any().item<bool>()) return;
  int64_t index = 0;
  if (t.dim() > 0) {
    auto per_row = bad.reshape({t.size(0), -1}).any(1);
    index = per_row.nonzero().index({0, 0}).item<int64_t>();
  }
  throw NumericError("non-finite values in " + what, index);
}

std::string shape_string(c10::IntArrayRef sizes) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (i) os << ", ";
    os << sizes[i];
  }
  os << "]";
  return os.str();
}

void check_shape(const torch::Tensor& t, c10::IntArrayRef expected,
                 const std::string& what) {
  if (!t.defined() || t.sizes() != expected) {
    throw ShapeError(what + ": expected shape " + shape_string(expected) +
                     ", got " +
                     (t.defined() ? shape_string(t.sizes()) : "undefined"));
  }
}

std::vector<torch::Tensor> snapshot_parameters(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

bool bitwise_equal(const std::vector<torch::Tensor>& a,
                   const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].sizes() != b[i].sizes() || a[i].scalar_type() != b[i].scalar_type())
      return false;
    auto x = a[i].contiguous();
    auto y = b[i].contiguous();
    if (std::memcmp(x.data_ptr(), y.data_ptr(), x.nbytes()) != 0) return false;
  }
  return true;
}

}  // namespace permakey
