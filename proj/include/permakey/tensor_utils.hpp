#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

namespace permakey {

// Throws NumericError naming the first batch row (dim 0) holding a NaN/Inf.
void check_finite(const torch::Tensor& t, const std::string& what);

// Throws ShapeError unless t.sizes() == expected.
void check_shape(const torch::Tensor& t, c10::IntArrayRef expected,
                 const std::string& what);

std::string shape_string(c10::IntArrayRef sizes);

// Deep copies of a module's parameters/buffers, keyed by qualified name.
std::vector<torch::Tensor> snapshot_parameters(const torch::nn::Module& m);
bool bitwise_equal(const std::vector<torch::Tensor>& a,
                   const std::vector<torch::Tensor>& b);

}  // namespace permakey
